#include "tscn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tscn/errors.hpp"

namespace tscn {

namespace {

double clamped_log(double v) { return std::log(std::max(v, kLogClamp)); }

void require_labels(std::span<const int> labels, Eigen::Index C) {
  if (labels.empty()) throw ValidationError("empty label set");
  for (int c : labels) {
    if (c < 0 || c >= C) throw ValidationError("label " + std::to_string(c) + " out of range");
  }
}

}  // namespace

void LossWeights::validate() const {
  for (double l : {lambda1, lambda2, lambda3, lambda4, lambda5}) {
    if (!(l >= 0.0)) throw ValidationError("loss weights must be non-negative");
  }
  if (k < 1) throw ValidationError("k must be a positive integer");
  if (!(m >= -1.0 && m <= 1.0)) throw ValidationError("margin m must lie in [-1, 1]");
}

double loss_cls(const Eigen::VectorXd& y_hat, std::span<const int> labels) {
  require_labels(labels, y_hat.size());
  const Eigen::Index C = y_hat.size();
  double sum = 0.0;
  for (Eigen::Index c = 0; c < C; ++c) {
    const bool positive = std::find(labels.begin(), labels.end(), c) != labels.end();
    sum += positive ? clamped_log(y_hat(c)) : clamped_log(1.0 - y_hat(c));
  }
  return -sum / static_cast<double>(C);
}

double loss_smooth(const Eigen::VectorXd& a) {
  const Eigen::Index T = a.size();
  if (T < 2) return 0.0;
  return (a.head(T - 1) - a.tail(T - 1)).cwiseAbs().sum() / static_cast<double>(T - 1);
}

std::vector<Eigen::Index> bottom_indices(const Eigen::VectorXd& a, Eigen::Index l) {
  std::vector<Eigen::Index> idx(a.size());
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  auto less = [&a](Eigen::Index i, Eigen::Index j) { return a(i) < a(j) || (a(i) == a(j) && i < j); };
  std::partial_sort(idx.begin(), idx.begin() + l, idx.end(), less);
  idx.resize(l);
  return idx;
}

std::vector<Eigen::Index> top_indices(const Eigen::VectorXd& a, Eigen::Index l) {
  std::vector<Eigen::Index> idx(a.size());
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  auto greater = [&a](Eigen::Index i, Eigen::Index j) { return a(i) > a(j) || (a(i) == a(j) && i < j); };
  std::partial_sort(idx.begin(), idx.begin() + l, idx.end(), greater);
  idx.resize(l);
  return idx;
}

double loss_norm(const Eigen::VectorXd& a, int k) {
  if (a.size() < 1) throw ValidationError("loss_norm needs at least one snippet");
  const Eigen::Index l = norm_window(a.size(), k);
  double low = 0.0;
  double high = 0.0;
  for (auto i : bottom_indices(a, l)) low += a(i);
  for (auto i : top_indices(a, l)) high += a(i);
  return (low - high) / static_cast<double>(l);
}

double loss_dist(const Eigen::VectorXd& x_fg, const Eigen::VectorXd& x_bg, double m) {
  const double nf = x_fg.norm();
  const double nb = x_bg.norm();
  if (nf == 0.0 || nb == 0.0) return 0.0;  // cosine undefined
  return std::max(0.0, x_fg.dot(x_bg) / (nf * nb) - m);
}

std::vector<int> guide_targets(const Eigen::MatrixXd& tcam, std::span<const int> labels) {
  require_labels(labels, tcam.cols());
  std::vector<int> target(tcam.rows());
  for (Eigen::Index i = 0; i < tcam.rows(); ++i) {
    int best = -1;
    for (int c : labels) {
      if (best < 0 || tcam(i, c) > tcam(i, best) || (tcam(i, c) == tcam(i, best) && c < best)) best = c;
    }
    target[i] = best;
  }
  return target;
}

double loss_guide(const Eigen::VectorXd& a, const Eigen::MatrixXd& tcam, std::span<const int> labels) {
  const auto target = guide_targets(tcam, labels);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) sum += std::abs(a(i) - tcam(i, target[i]));
  return sum / static_cast<double>(a.size());
}

double loss_pseudo(const Eigen::VectorXd& a, const Eigen::VectorXd& g) {
  if (a.size() != g.size()) throw ValidationError("pseudo ground truth length does not match attention length");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    sum += g(i) * clamped_log(a(i)) + (1.0 - g(i)) * clamped_log(1.0 - a(i));
  }
  return -sum / static_cast<double>(a.size());
}

TermWeights term_weights(const LossWeights& w, LossMode mode) {
  TermWeights tw;
  tw.k = w.k;
  tw.m = w.m;
  tw.dist = w.lambda3;
  tw.guide = w.lambda4;
  if (mode == LossMode::Base) {
    tw.smooth = w.lambda1;
    tw.norm = w.lambda2;
  } else {
    tw.pseudo = w.lambda5;
  }
  return tw;
}

LossBreakdown evaluate_terms(const StreamOutput& out, std::span<const int> labels, const Eigen::VectorXd* g,
                             const TermWeights& tw) {
  LossBreakdown b;
  b.cls = loss_cls(out.y_hat, labels);
  if (tw.smooth) b.smooth = loss_smooth(out.a);
  if (tw.norm) b.norm = loss_norm(out.a, tw.k);
  if (tw.dist) b.dist = loss_dist(out.x_fg, out.x_bg, tw.m);
  if (tw.guide) b.guide = loss_guide(out.a, out.tcam, labels);
  if (tw.pseudo) {
    if (g == nullptr) throw ValidationError("pseudo loss requested without pseudo ground truth");
    b.pseudo = loss_pseudo(out.a, *g);
  }
  // Summation order is fixed: cls, smooth, norm, dist, guide, pseudo.
  b.total = tw.cls * b.cls;
  if (b.smooth) b.total += *tw.smooth * *b.smooth;
  if (b.norm) b.total += *tw.norm * *b.norm;
  if (b.dist) b.total += *tw.dist * *b.dist;
  if (b.guide) b.total += *tw.guide * *b.guide;
  if (b.pseudo) b.total += *tw.pseudo * *b.pseudo;
  return b;
}

LossBreakdown base_loss(const StreamOutput& out, std::span<const int> labels, const LossWeights& w) {
  return evaluate_terms(out, labels, nullptr, term_weights(w, LossMode::Base));
}

LossBreakdown refine_loss(const StreamOutput& out, std::span<const int> labels, const Eigen::VectorXd& g,
                          const LossWeights& w) {
  return evaluate_terms(out, labels, &g, term_weights(w, LossMode::Refine));
}

}  // namespace tscn
