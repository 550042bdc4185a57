#include "tscn/model.hpp"

#include "tscn/errors.hpp"
#include "tscn/rng.hpp"

namespace tscn {

std::string to_string(Activation act) { return act == Activation::Relu ? "relu" : "none"; }

Activation activation_from_string(const std::string& name) {
  if (name == "none") return Activation::None;
  if (name == "relu") return Activation::Relu;
  throw ValidationError("unknown activation '" + name + "' (expected none|relu)");
}

BaseModelParams::BaseModelParams(const ModelShape& shape)
    : shape_(shape), data_(Eigen::VectorXd::Zero(size_for(shape))) {
  if (shape.D <= 0 || shape.E <= 0 || shape.C <= 0) throw ValidationError("model dimensions must be positive");
}

BaseModelParams init_params(const ModelShape& shape, std::uint64_t seed) {
  BaseModelParams p(shape);
  Rng rng(seed);
  auto fill = [&rng](auto&& block, double fan_in) {
    const double bound = 1.0 / std::sqrt(fan_in);
    for (Eigen::Index i = 0; i < block.rows(); ++i) {
      for (Eigen::Index j = 0; j < block.cols(); ++j) block(i, j) = rng.uniform(-bound, bound);
    }
  };
  for (int k = 0; k < 3; ++k) fill(p.conv_tap(k), 3.0 * shape.D);
  fill(p.attn_w(), shape.E);
  fill(p.cls_w(), shape.E);
  return p;
}

Eigen::MatrixXd temporal_conv(const Eigen::MatrixXd& features, const BaseModelParams& p) {
  if (features.cols() != p.shape().D) {
    throw ValidationError("feature width " + std::to_string(features.cols()) + " does not match model D=" +
                          std::to_string(p.shape().D));
  }
  const Eigen::Index T = features.rows();
  Eigen::MatrixXd out = features * p.conv_tap(1).transpose();
  if (T > 1) {
    // tap 0 sees the previous snippet, tap 2 the next one
    out.bottomRows(T - 1).noalias() += features.topRows(T - 1) * p.conv_tap(0).transpose();
    out.topRows(T - 1).noalias() += features.bottomRows(T - 1) * p.conv_tap(2).transpose();
  }
  out.rowwise() += p.conv_b().transpose();
  return out;
}

Eigen::VectorXd attention_head(const Eigen::MatrixXd& x, const Eigen::VectorXd& attn_w, double attn_b) {
  Eigen::VectorXd logits = x * attn_w;
  logits.array() += attn_b;
  return sigmoid(logits);
}

StreamOutput forward(const BaseModelParams& params, const Eigen::MatrixXd& features) {
  if (features.rows() < 1) throw ValidationError("forward needs at least one snippet");
  StreamOutput out;
  out.pre = temporal_conv(features, params);
  out.x = params.shape().activation == Activation::Relu ? Eigen::MatrixXd(out.pre.cwiseMax(0.0)) : out.pre;
  out.a = attention_head(out.x, params.attn_w(), params.attn_b());
  out.x_fg = attention_pool(out.x, out.a);
  out.x_bg = background_pool(out.x, out.a);
  out.y_hat = classify(out.x_fg, params.cls_w(), params.cls_b());
  out.tcam = tcam(out.x, params.cls_w(), params.cls_b());
  return out;
}

}  // namespace tscn
