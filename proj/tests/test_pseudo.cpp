#include <doctest.h>

#include "tscn/errors.hpp"
#include "tscn/pseudo.hpp"
#include "tscn/rng.hpp"

using namespace tscn;

TEST_CASE("threshold is strict: the boundary goes to background") {
  Eigen::VectorXd a(3);
  a << 0.7, 0.5, 0.3;
  const PseudoGT g = make_pseudo_gt(a, 0.5, 2);
  CHECK(g.g(0) == 1.0);
  CHECK(g.g(1) == 0.0);
  CHECK(g.g(2) == 0.0);
  CHECK(g.source_iteration == 2);
  CHECK(make_pseudo_gt(a, 0.29).g.isOnes());
  CHECK(make_pseudo_gt(a, 0.7).g.isZero());
}

TEST_CASE("fusion endpoints and hand value") {
  Eigen::VectorXd rgb(2), flow(2);
  rgb << 1.0, 0.25;
  flow << 0.0, 0.75;
  CHECK(fuse(rgb, flow, 1.0) == rgb);
  CHECK(fuse(rgb, flow, 0.0) == flow);
  CHECK(fuse(rgb, flow, 0.6)(0) == doctest::Approx(0.6).epsilon(1e-15));

  // Same rule for matrices.
  Eigen::MatrixXd r = Eigen::MatrixXd::Constant(3, 2, 0.2), f = Eigen::MatrixXd::Constant(3, 2, 0.7);
  CHECK((fuse(r, f, 0.6).array() - (0.6 * 0.2 + 0.4 * 0.7)).abs().maxCoeff() < 1e-15);

  CHECK_THROWS_AS(fuse(rgb, Eigen::VectorXd(3), 0.5), ValidationError);
  CHECK_THROWS_AS(fuse(r, Eigen::MatrixXd(3, 3), 0.5), ValidationError);
}

TEST_CASE("fusion stays within the inputs; thresholds are antitone") {
  Rng rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    const int T = 1 + static_cast<int>(rng.below(30));
    Eigen::VectorXd r(T), f(T);
    for (int i = 0; i < T; ++i) {
      r(i) = rng.uniform();
      f(i) = rng.uniform();
    }
    const double beta = rng.uniform();
    const Eigen::VectorXd fused = fuse(r, f, beta);
    for (int i = 0; i < T; ++i) {
      CHECK(fused(i) >= std::min(r(i), f(i)) - 1e-15);
      CHECK(fused(i) <= std::max(r(i), f(i)) + 1e-15);
    }
    const double t1 = rng.uniform(0.01, 0.99), t2 = rng.uniform(0.01, 0.99);
    const Eigen::VectorXd g_lo = make_pseudo_gt(fused, std::min(t1, t2)).g;
    const Eigen::VectorXd g_hi = make_pseudo_gt(fused, std::max(t1, t2)).g;
    CHECK((g_hi.array() <= g_lo.array()).all());
    CHECK(((g_lo.array() == 0.0) || (g_lo.array() == 1.0)).all());
  }
}

TEST_CASE("fusion config validation") {
  FusionConfig c;
  CHECK(c.beta == 0.6);
  CHECK(c.theta == 0.5);
  CHECK_NOTHROW(c.validate());
  c.theta = 1.0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = {};
  c.beta = -0.1;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}
