#pragma once

#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "tscn/model.hpp"

namespace tscn {

/// Lower clamp applied to every logarithm argument in the cross-entropy terms.
inline constexpr double kLogClamp = 1e-12;

struct LossWeights {
  double lambda1 = 0.1;   // smooth
  double lambda2 = 0.1;   // attention normalization
  double lambda3 = 0.1;   // distinctness
  double lambda4 = 0.1;   // guide
  double lambda5 = 0.01;  // pseudo ground truth
  int k = 8;              // l = max(1, floor(T / k))
  double m = 0.5;         // cosine margin of the distinctness loss

  void validate() const;
};

struct LossBreakdown {
  double cls = 0.0;
  std::optional<double> smooth;
  std::optional<double> norm;
  std::optional<double> dist;
  std::optional<double> guide;
  std::optional<double> pseudo;
  double total = 0.0;
};

/// Binary cross entropy of the softmax prediction against the label set,
/// averaged over classes. Throws ValidationError on an empty label set.
double loss_cls(const Eigen::VectorXd& y_hat, std::span<const int> labels);

/// Mean absolute difference of neighbouring attention values; 0 for T = 1.
double loss_smooth(const Eigen::VectorXd& a);

/// Indices of the l smallest / largest entries, lowest index first on ties.
std::vector<Eigen::Index> bottom_indices(const Eigen::VectorXd& a, Eigen::Index l);
std::vector<Eigen::Index> top_indices(const Eigen::VectorXd& a, Eigen::Index l);

inline Eigen::Index norm_window(Eigen::Index T, int k) { return std::max<Eigen::Index>(1, T / k); }

/// mean(bottom-l) - mean(top-l), l = max(1, floor(T/k)). Always <= 0.
double loss_norm(const Eigen::VectorXd& a, int k);

/// max(0, cos(x_fg, x_bg) - m); 0 when either vector is zero.
double loss_dist(const Eigen::VectorXd& x_fg, const Eigen::VectorXd& x_bg, double m);

/// Highest-scoring label class per snippet (lowest class index on ties).
std::vector<int> guide_targets(const Eigen::MatrixXd& tcam, std::span<const int> labels);

/// Mean |a_i - max_{c in labels} s_{i,c}|. The attention is a constant here;
/// backward() never differentiates this term through it.
double loss_guide(const Eigen::VectorXd& a, const Eigen::MatrixXd& tcam, std::span<const int> labels);

/// Per-snippet binary cross entropy of attention against a 0/1 target.
double loss_pseudo(const Eigen::VectorXd& a, const Eigen::VectorXd& g);

enum class LossMode { Base, Refine };

/// Coefficient of every loss term; an empty optional removes the term from
/// the objective and from the breakdown. base_loss, refine_loss and
/// backward() all reduce to this form.
struct TermWeights {
  double cls = 1.0;
  std::optional<double> smooth;
  std::optional<double> norm;
  std::optional<double> dist;
  std::optional<double> guide;
  std::optional<double> pseudo;
  int k = 8;
  double m = 0.5;
};

TermWeights term_weights(const LossWeights& w, LossMode mode);

/// Evaluates the present terms and their weighted total. `g` is required
/// iff the pseudo term is present.
LossBreakdown evaluate_terms(const StreamOutput& out, std::span<const int> labels, const Eigen::VectorXd* g,
                             const TermWeights& tw);

/// L_cls + l1 L_smooth + l2 L_norm + l3 L_dist + l4 L_guide
LossBreakdown base_loss(const StreamOutput& out, std::span<const int> labels, const LossWeights& w);

/// L_cls + l3 L_dist + l4 L_guide + l5 L_pseudo
LossBreakdown refine_loss(const StreamOutput& out, std::span<const int> labels, const Eigen::VectorXd& g,
                          const LossWeights& w);

}  // namespace tscn
