#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "tscn/losses.hpp"
#include "tscn/model.hpp"

namespace tscn {

struct BackwardResult {
  LossBreakdown loss;
  Gradients grads;
};

/// Reverse-mode gradient of the mode's objective w.r.t. every parameter.
///
/// Base mode requires `pseudo_gt == nullptr`, refine mode requires it set.
/// The guide term never propagates through the attention (stop-gradient);
/// it reaches the parameters only through the T-CAM. Subgradients: zero at
/// |u| = 0 and at the hinge of the distinctness loss, only the selected
/// bottom-l/top-l entries for the normalization loss, the argmax label class
/// for the guide max-pool, and zero inside the log clamp.
BackwardResult backward(const BaseModelParams& params, const Eigen::MatrixXd& features, std::span<const int> labels,
                        const LossWeights& w, const Eigen::VectorXd* pseudo_gt, LossMode mode);

/// Same as backward() with explicit per-term coefficients.
BackwardResult backward_terms(const BaseModelParams& params, const Eigen::MatrixXd& features,
                              std::span<const int> labels, const Eigen::VectorXd* pseudo_gt, const TermWeights& tw);

/// Smallest distance from any active non-differentiable point (|.| at 0,
/// hinge, top/bottom-l order swap, guide argmax swap, log clamp, ReLU).
double kink_margin(const BaseModelParams& params, const Eigen::MatrixXd& features, std::span<const int> labels,
                   const Eigen::VectorXd* pseudo_gt, const TermWeights& tw);

struct GradCheckReport {
  double max_rel_error = 0.0;
  Eigen::Index worst_index = -1;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  int kink_crossings = 0;  // coordinates whose +-h stencil changed a kink branch
  double kink_margin = 0.0;
};

/// Central differences against analytic gradients of an arbitrary function.
/// Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
GradCheckReport check_gradient(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                               const Eigen::VectorXd& analytic, double h);

GradCheckReport grad_check(const BaseModelParams& params, const Eigen::MatrixXd& features,
                           std::span<const int> labels, const LossWeights& w, const Eigen::VectorXd* pseudo_gt,
                           LossMode mode, double h);

/// A random gradient-check problem whose kink margin is at least
/// `min_margin` (draws are repeated until it is).
struct GradCheckInstance {
  BaseModelParams params;
  Eigen::MatrixXd features;
  std::vector<int> labels;
  std::optional<Eigen::VectorXd> pseudo_gt;
  int resamples = 0;
};

GradCheckInstance random_grad_instance(std::uint64_t seed, const ModelShape& shape, int T, LossMode mode,
                                       const LossWeights& w, double min_margin);

}  // namespace tscn
