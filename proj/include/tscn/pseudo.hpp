#pragma once

#include <string>

#include <Eigen/Dense>

#include "tscn/errors.hpp"

namespace tscn {

struct FusionConfig {
  double beta = 0.6;   // weight of the RGB stream
  double theta = 0.5;  // pseudo ground truth threshold

  void validate() const;
};

/// Binary snippet-level target for the pseudo loss.
struct PseudoGT {
  Eigen::VectorXd g;  // entries are exactly 0.0 or 1.0
  int source_iteration = 0;
};

/// beta * rgb + (1 - beta) * flow, for attention vectors, T-CAMs or
/// video-level predictions alike.
template <typename DR, typename DF>
typename DR::PlainObject fuse(const Eigen::MatrixBase<DR>& rgb, const Eigen::MatrixBase<DF>& flow, double beta) {
  if (rgb.rows() != flow.rows() || rgb.cols() != flow.cols()) {
    throw ValidationError("fuse: RGB and flow shapes differ");
  }
  return beta * rgb + (1.0 - beta) * flow;
}

/// g_i = 1 iff a_i > theta.
PseudoGT make_pseudo_gt(const Eigen::VectorXd& a_fuse, double theta, int source_iteration = 0);

}  // namespace tscn
