#include <doctest.h>

#include <cmath>

#include "tscn/errors.hpp"
#include "tscn/model.hpp"
#include "tscn/rng.hpp"

using namespace tscn;

namespace {

Eigen::MatrixXd random_matrix(Rng& rng, int rows, int cols) {
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

BaseModelParams random_params(Rng& rng, const ModelShape& s) {
  BaseModelParams p(s);
  for (Eigen::Index i = 0; i < p.data().size(); ++i) p.data()(i) = rng.uniform(-1.0, 1.0);
  return p;
}

}  // namespace

TEST_CASE("parameter layout") {
  const ModelShape s{3, 2, 4};
  BaseModelParams p(s);
  CHECK(p.data().size() == BaseModelParams::size_for(s));
  CHECK(p.data().size() == 3 * 2 * 3 + 2 + 2 + 1 + 4 * 2 + 4);
  p.data().setLinSpaced(p.data().size(), 0.0, static_cast<double>(p.data().size() - 1));
  CHECK(p.conv_tap(0)(0, 0) == 0.0);
  CHECK(p.conv_tap(0)(0, 1) == 1.0);  // row-major
  CHECK(p.conv_tap(1)(0, 0) == 6.0);
  CHECK(p.conv_b()(0) == 18.0);
  CHECK(p.attn_w()(1) == 21.0);
  CHECK(p.attn_b() == 22.0);
  CHECK(p.cls_w()(1, 0) == 25.0);
  CHECK(p.cls_b()(3) == 34.0);
}

TEST_CASE("init_params") {
  const ModelShape s{6, 5, 3};
  const auto a = init_params(s, 42);
  CHECK(a == init_params(s, 42));
  CHECK_FALSE(a == init_params(s, 43));
  CHECK(a.conv_b().isZero(0.0));
  CHECK(a.attn_b() == 0.0);
  CHECK(a.cls_b().isZero(0.0));
  const double conv_bound = 1.0 / std::sqrt(3.0 * 6.0);
  for (int k = 0; k < 3; ++k) CHECK(a.conv_tap(k).cwiseAbs().maxCoeff() <= conv_bound);
  CHECK(a.attn_w().cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(5.0));
  CHECK(a.cls_w().cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(5.0));
  CHECK(a.conv_tap(0).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("temporal conv by hand: [1,2,3] with all-ones kernel") {
  BaseModelParams p(ModelShape{1, 1, 1});
  for (int k = 0; k < 3; ++k) p.conv_tap(k)(0, 0) = 1.0;
  Eigen::MatrixXd f(3, 1);
  f << 1, 2, 3;
  const Eigen::MatrixXd y = temporal_conv(f, p);
  CHECK(y(0, 0) == 3.0);
  CHECK(y(1, 0) == 6.0);
  CHECK(y(2, 0) == 5.0);
}

TEST_CASE("temporal conv tap order: tap 0 reads the previous snippet") {
  BaseModelParams p(ModelShape{1, 1, 1});
  p.conv_tap(0)(0, 0) = 1.0;
  Eigen::MatrixXd f(3, 1);
  f << 1, 2, 3;
  const Eigen::MatrixXd y = temporal_conv(f, p);
  CHECK(y(0, 0) == 0.0);
  CHECK(y(1, 0) == 1.0);
  CHECK(y(2, 0) == 2.0);
}

TEST_CASE("center-tap identity kernel and T=1 padding") {
  Rng rng(5);
  BaseModelParams p(ModelShape{4, 4, 2});
  p.conv_tap(1) = RowMatrixXd::Identity(4, 4);
  const Eigen::MatrixXd f = random_matrix(rng, 6, 4);
  CHECK(temporal_conv(f, p) == f);

  BaseModelParams q = random_params(rng, ModelShape{4, 3, 2});
  const Eigen::MatrixXd one = random_matrix(rng, 1, 4);
  const Eigen::MatrixXd expect = (q.conv_tap(1) * one.transpose() + q.conv_b()).transpose();
  CHECK((temporal_conv(one, q) - expect).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("temporal conv is linear in the input") {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    BaseModelParams p = random_params(rng, ModelShape{5, 4, 3});
    p.conv_b().setZero();
    const Eigen::MatrixXd u = random_matrix(rng, 9, 5);
    const Eigen::MatrixXd v = random_matrix(rng, 9, 5);
    const double al = rng.normal();
    const double be = rng.normal();
    const Eigen::MatrixXd lhs = temporal_conv(al * u + be * v, p);
    const Eigen::MatrixXd rhs = al * temporal_conv(u, p) + be * temporal_conv(v, p);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("shape mismatch is rejected") {
  BaseModelParams p(ModelShape{3, 2, 2});
  CHECK_THROWS_AS(temporal_conv(Eigen::MatrixXd::Zero(4, 5), p), ValidationError);
  CHECK_THROWS_AS(forward(p, Eigen::MatrixXd::Zero(4, 2)), ValidationError);
}

TEST_CASE("attention head") {
  Eigen::MatrixXd x(3, 1);
  x << 1.0, -2.0, 0.5;
  Eigen::VectorXd w(1);
  w << 0.0;
  CHECK(attention_head(x, w, 0.0).isConstant(0.5));

  w << 1.0;
  x << std::log(3.0), 0.0, 0.0;
  CHECK(attention_head(x, w, 0.0)(0) == doctest::Approx(0.75).epsilon(1e-15));

  // Monotone in the bias.
  double prev = 0.0;
  for (double b = -30.0; b <= 30.0; b += 5.0) {
    const double a = attention_head(x, w, b)(1);
    CHECK(a > prev);
    CHECK(a < 1.0);
    prev = a;
  }
  CHECK(sigmoid(-800.0) >= 0.0);
  CHECK(std::isfinite(sigmoid(-800.0)));
}

TEST_CASE("attention and background pooling") {
  Eigen::MatrixXd x(2, 2);
  x << 1.0, 2.0, 5.0, -4.0;
  const Eigen::RowVector2d r1 = x.row(0), r2 = x.row(1);

  SUBCASE("uniform weights give the row mean") {
    const Eigen::VectorXd a = Eigen::VectorXd::Constant(2, 0.3);
    const Eigen::VectorXd mean = x.colwise().mean().transpose();
    CHECK((attention_pool(x, a) - mean).norm() < 1e-15);
    CHECK((background_pool(x, a) - mean).norm() < 1e-15);
  }
  SUBCASE("dominant weight") {
    Eigen::VectorXd a(2);
    a << 0.9, 1e-9;
    const Eigen::VectorXd fg = attention_pool(x, a);
    CHECK((fg - r1.transpose()).norm() / r1.norm() < 1e-8);
  }
  SUBCASE("background by hand") {
    Eigen::VectorXd a(2);
    a << 0.99, 0.01;
    const Eigen::VectorXd bg = background_pool(x, a);
    const Eigen::VectorXd expect = (0.01 * r1 + 0.99 * r2).transpose() / 1.0;
    CHECK((bg - expect).norm() < 1e-14);
  }
  SUBCASE("complement symmetry") {
    Eigen::VectorXd a(2);
    a << 0.2, 0.7;
    const Eigen::VectorXd comp = (1.0 - a.array()).matrix();
    CHECK((background_pool(x, a) - attention_pool(x, comp)).norm() < 1e-15);
  }
  SUBCASE("single snippet") {
    Eigen::VectorXd a(1);
    a << 0.37;
    CHECK((attention_pool(x.topRows(1), a) - r1.transpose()).norm() < 1e-15);
  }
}

TEST_CASE("classifier softmax") {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(2, 1);
  Eigen::VectorXd b(2);
  b << std::log(2.0), 0.0;
  Eigen::VectorXd x_fg = Eigen::VectorXd::Zero(1);
  const Eigen::VectorXd y = classify(x_fg, w, b);
  CHECK(y(0) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(y(1) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  const Eigen::VectorXd shifted = classify(x_fg, w, (b.array() + 123.0).matrix());
  CHECK((shifted - y).cwiseAbs().maxCoeff() < 1e-15);

  const Eigen::VectorXd uniform = classify(x_fg, w, Eigen::VectorXd::Zero(2));
  CHECK(uniform.isConstant(0.5));

  // Large logits stay finite.
  b << 1000.0, -1000.0;
  const Eigen::VectorXd big = classify(x_fg, w, b);
  CHECK(big.allFinite());
  CHECK(big(0) == 1.0);
}

TEST_CASE("forward on zero parameters") {
  const BaseModelParams p(ModelShape{3, 2, 2});
  Rng rng(1);
  const StreamOutput out = forward(p, random_matrix(rng, 4, 3));
  CHECK(out.x.rows() == 4);
  CHECK(out.x.cols() == 2);
  CHECK(out.a.size() == 4);
  CHECK(out.tcam.rows() == 4);
  CHECK(out.tcam.cols() == 2);
  CHECK(out.y_hat.size() == 2);
  CHECK(out.a.isConstant(0.5));
  CHECK(out.y_hat.isConstant(0.5));
  CHECK(out.tcam.isConstant(0.5));
}

TEST_CASE("forward invariants on random instances") {
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const ModelShape s{4, 3, 5, trial % 2 ? Activation::Relu : Activation::None};
    const BaseModelParams p = random_params(rng, s);
    const Eigen::MatrixXd f = 3.0 * random_matrix(rng, 1 + trial % 10, 4);
    const StreamOutput a = forward(p, f);
    CHECK(std::abs(a.y_hat.sum() - 1.0) < 1e-12);
    CHECK((a.tcam.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
    CHECK(a.a.minCoeff() > 0.0);
    CHECK(a.a.maxCoeff() < 1.0);
    if (s.activation == Activation::Relu) CHECK(a.x.minCoeff() >= 0.0);

    const StreamOutput b = forward(p, f);  // pure
    CHECK(a.a == b.a);
    CHECK(a.tcam == b.tcam);
    CHECK(a.y_hat == b.y_hat);
  }
}

TEST_CASE("identical snippets give identical T-CAM rows") {
  Rng rng(3);
  const BaseModelParams p = random_params(rng, ModelShape{3, 3, 4});
  const Eigen::MatrixXd x = Eigen::MatrixXd::Ones(5, 3) * 0.7;
  const Eigen::MatrixXd s = tcam(x, p.cls_w(), p.cls_b());
  for (int i = 1; i < 5; ++i) CHECK(s.row(i) == s.row(0));
}

TEST_CASE("activation names") {
  CHECK(to_string(Activation::Relu) == "relu");
  CHECK(activation_from_string("none") == Activation::None);
  CHECK_THROWS_AS(activation_from_string("tanh"), ValidationError);
}
