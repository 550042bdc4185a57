#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include <Eigen/Dense>

namespace tscn {

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Activation { None, Relu };

std::string to_string(Activation act);
Activation activation_from_string(const std::string& name);

/// Architecture of one stream: input width D, embedding width E, classes C.
struct ModelShape {
  int D = 0;
  int E = 0;
  int C = 0;
  Activation activation = Activation::None;  // applied after the embedding conv

  bool operator==(const ModelShape&) const = default;
};

/// Parameters of one stream, stored flat so that optimizers, averaging and
/// checkpoints can treat them as a single vector.
///
/// Layout (the checkpoint blob uses the same order):
///   conv_w   3 taps x E x D, row-major per tap; tap k multiplies snippet t+k-1
///   conv_b   E
///   attn_w   E
///   attn_b   1
///   cls_w    C x E, row-major (row c is w_c)
///   cls_b    C
class BaseModelParams {
 public:
  using Map = Eigen::Map<RowMatrixXd>;
  using ConstMap = Eigen::Map<const RowMatrixXd>;
  using VecMap = Eigen::Map<Eigen::VectorXd>;
  using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

  BaseModelParams() = default;
  explicit BaseModelParams(const ModelShape& shape);

  static Eigen::Index size_for(const ModelShape& s) {
    return 3 * Eigen::Index{s.E} * s.D + 2 * Eigen::Index{s.E} + 1 + Eigen::Index{s.C} * s.E + s.C;
  }

  const ModelShape& shape() const { return shape_; }
  Eigen::VectorXd& data() { return data_; }
  const Eigen::VectorXd& data() const { return data_; }

  Map conv_tap(int k) { return {data_.data() + k * tap_size(), shape_.E, shape_.D}; }
  ConstMap conv_tap(int k) const { return {data_.data() + k * tap_size(), shape_.E, shape_.D}; }
  VecMap conv_b() { return {data_.data() + conv_b_offset(), shape_.E}; }
  ConstVecMap conv_b() const { return {data_.data() + conv_b_offset(), shape_.E}; }
  VecMap attn_w() { return {data_.data() + conv_b_offset() + shape_.E, shape_.E}; }
  ConstVecMap attn_w() const { return {data_.data() + conv_b_offset() + shape_.E, shape_.E}; }
  double& attn_b() { return data_[attn_b_offset()]; }
  double attn_b() const { return data_[attn_b_offset()]; }
  Map cls_w() { return {data_.data() + attn_b_offset() + 1, shape_.C, shape_.E}; }
  ConstMap cls_w() const { return {data_.data() + attn_b_offset() + 1, shape_.C, shape_.E}; }
  VecMap cls_b() { return {data_.data() + cls_b_offset(), shape_.C}; }
  ConstVecMap cls_b() const { return {data_.data() + cls_b_offset(), shape_.C}; }

  bool operator==(const BaseModelParams& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  Eigen::Index tap_size() const { return Eigen::Index{shape_.E} * shape_.D; }
  Eigen::Index conv_b_offset() const { return 3 * tap_size(); }
  Eigen::Index attn_b_offset() const { return conv_b_offset() + 2 * shape_.E; }
  Eigen::Index cls_b_offset() const { return attn_b_offset() + 1 + Eigen::Index{shape_.C} * shape_.E; }

  ModelShape shape_;
  Eigen::VectorXd data_;
};

/// Gradients share the parameter layout.
using Gradients = BaseModelParams;

/// Per-video forward result of one stream.
struct StreamOutput {
  Eigen::MatrixXd pre;   // T x E, embedding before the activation
  Eigen::MatrixXd x;     // T x E, embedded snippet features
  Eigen::VectorXd a;     // T, attention in (0, 1)
  Eigen::VectorXd x_fg;  // E
  Eigen::VectorXd x_bg;  // E
  Eigen::VectorXd y_hat; // C, video-level class probabilities
  Eigen::MatrixXd tcam;  // T x C, each row a class distribution
};

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
BaseModelParams init_params(const ModelShape& shape, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Elementwise building blocks.

inline double sigmoid(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

template <typename Derived>
typename Derived::PlainObject sigmoid(const Eigen::MatrixBase<Derived>& u) {
  return u.unaryExpr([](double v) { return sigmoid(v); });
}

/// Softmax of a vector with max-logit subtraction.
template <typename Derived>
Eigen::VectorXd softmax(const Eigen::MatrixBase<Derived>& logits) {
  Eigen::VectorXd e = (logits.array() - logits.maxCoeff()).exp().matrix();
  return e / e.sum();
}

/// Row-wise softmax of a T x C logit matrix.
template <typename Derived>
Eigen::MatrixXd softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  Eigen::MatrixXd out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) out.row(i) = softmax(logits.row(i).transpose()).transpose();
  return out;
}

/// Weighted mean of the rows of x with nonnegative weights w.
template <typename DX, typename DW>
Eigen::VectorXd weighted_row_mean(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DW>& w) {
  return (x.transpose() * w) / w.sum();
}

// ---------------------------------------------------------------------------
// Forward operations of one stream.

/// Kernel-3 temporal convolution with zero padding; output is T x E.
Eigen::MatrixXd temporal_conv(const Eigen::MatrixXd& features, const BaseModelParams& p);

/// a_t = sigmoid(attn_w . x_t + attn_b)
Eigen::VectorXd attention_head(const Eigen::MatrixXd& x, const Eigen::VectorXd& attn_w, double attn_b);

inline Eigen::VectorXd attention_pool(const Eigen::MatrixXd& x, const Eigen::VectorXd& a) {
  return weighted_row_mean(x, a);
}

/// Complement-attention pooling: (1 - a)-weighted mean of the rows.
inline Eigen::VectorXd background_pool(const Eigen::MatrixXd& x, const Eigen::VectorXd& a) {
  return weighted_row_mean(x, (1.0 - a.array()).matrix());
}

template <typename DW, typename DB>
Eigen::VectorXd classify(const Eigen::VectorXd& x_fg, const Eigen::MatrixBase<DW>& cls_w,
                         const Eigen::MatrixBase<DB>& cls_b) {
  return softmax(cls_w * x_fg + cls_b);
}

/// The classifier applied to every snippet embedding: T x C.
template <typename DW, typename DB>
Eigen::MatrixXd tcam(const Eigen::MatrixXd& x, const Eigen::MatrixBase<DW>& cls_w, const Eigen::MatrixBase<DB>& cls_b) {
  Eigen::MatrixXd logits = x * cls_w.transpose();
  logits.rowwise() += cls_b.transpose();
  return softmax_rows(logits);
}

/// Full stream forward pass. Throws ValidationError on a feature width mismatch.
StreamOutput forward(const BaseModelParams& params, const Eigen::MatrixXd& features);

}  // namespace tscn
