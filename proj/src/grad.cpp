#include "tscn/grad.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "tscn/errors.hpp"
#include "tscn/rng.hpp"

namespace tscn {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

double dlog_clamped(double v) { return v >= kLogClamp ? 1.0 / v : 0.0; }

void check_mode(const Eigen::VectorXd* g, LossMode mode, Eigen::Index T) {
  if (mode == LossMode::Refine && g == nullptr) throw ValidationError("refine mode requires pseudo ground truth");
  if (mode == LossMode::Base && g != nullptr) throw ValidationError("base mode takes no pseudo ground truth");
  if (g != nullptr && g->size() != T) throw ValidationError("pseudo ground truth length does not match T");
}

// Backward through a softmax y = softmax(q): dq = y * (dy - <dy, y>).
Eigen::VectorXd softmax_backward(const Eigen::VectorXd& y, const Eigen::VectorXd& dy) {
  return y.cwiseProduct((dy.array() - dy.dot(y)).matrix());
}

// Discrete state of every kink so a finite-difference stencil that crosses
// one can be detected.
std::vector<long> kink_state(const StreamOutput& out, std::span<const int> labels, const Eigen::VectorXd* g,
                             const TermWeights& tw, Activation act, const Eigen::VectorXd& guide_a) {
  std::vector<long> s;
  const Eigen::Index T = out.a.size();
  if (tw.smooth && *tw.smooth != 0.0) {
    for (Eigen::Index t = 0; t + 1 < T; ++t) s.push_back(static_cast<long>(sign(out.a(t) - out.a(t + 1))));
  }
  if (tw.norm && *tw.norm != 0.0) {
    const Eigen::Index l = norm_window(T, tw.k);
    auto lo = bottom_indices(out.a, l);
    auto hi = top_indices(out.a, l);
    std::sort(lo.begin(), lo.end());
    std::sort(hi.begin(), hi.end());
    s.insert(s.end(), lo.begin(), lo.end());
    s.insert(s.end(), hi.begin(), hi.end());
  }
  if (tw.dist && *tw.dist != 0.0) {
    const double nf = out.x_fg.norm(), nb = out.x_bg.norm();
    s.push_back(nf > 0 && nb > 0 ? static_cast<long>(sign(out.x_fg.dot(out.x_bg) / (nf * nb) - tw.m)) : 2);
  }
  if (tw.guide && *tw.guide != 0.0) {
    const auto target = guide_targets(out.tcam, labels);
    for (Eigen::Index t = 0; t < T; ++t) {
      s.push_back(target[t]);
      s.push_back(static_cast<long>(sign(guide_a(t) - out.tcam(t, target[t]))));
    }
  }
  for (Eigen::Index c = 0; c < out.y_hat.size(); ++c) {
    s.push_back(out.y_hat(c) >= kLogClamp);
    s.push_back(1.0 - out.y_hat(c) >= kLogClamp);
  }
  if (g != nullptr && tw.pseudo && *tw.pseudo != 0.0) {
    for (Eigen::Index t = 0; t < T; ++t) {
      s.push_back(out.a(t) >= kLogClamp);
      s.push_back(1.0 - out.a(t) >= kLogClamp);
    }
  }
  if (act == Activation::Relu) {
    for (Eigen::Index i = 0; i < out.pre.size(); ++i) s.push_back(out.pre.data()[i] > 0.0);
  }
  return s;
}

}  // namespace

BackwardResult backward_terms(const BaseModelParams& params, const Eigen::MatrixXd& features,
                              std::span<const int> labels, const Eigen::VectorXd* pseudo_gt, const TermWeights& tw) {
  const StreamOutput out = forward(params, features);
  BackwardResult res{evaluate_terms(out, labels, pseudo_gt, tw), Gradients(params.shape())};
  Gradients& grad = res.grads;

  const Eigen::Index T = out.a.size();
  const Eigen::Index E = out.x.cols();
  const Eigen::Index C = out.y_hat.size();
  const auto cls_w = params.cls_w();

  Eigen::VectorXd ga = Eigen::VectorXd::Zero(T);  // excludes the stop-gradient guide path
  Eigen::VectorXd gfg = Eigen::VectorXd::Zero(E);
  Eigen::VectorXd gbg = Eigen::VectorXd::Zero(E);
  Eigen::MatrixXd gx = Eigen::MatrixXd::Zero(T, E);
  Eigen::MatrixXd gtcam = Eigen::MatrixXd::Zero(T, C);

  // L_cls through the video-level softmax.
  if (tw.cls != 0.0) {
    Eigen::VectorXd gy(C);
    for (Eigen::Index c = 0; c < C; ++c) {
      const bool positive = std::find(labels.begin(), labels.end(), c) != labels.end();
      gy(c) = positive ? -dlog_clamped(out.y_hat(c)) : dlog_clamped(1.0 - out.y_hat(c));
    }
    gy *= tw.cls / static_cast<double>(C);
    const Eigen::VectorXd dq = softmax_backward(out.y_hat, gy);
    grad.cls_w() += dq * out.x_fg.transpose();
    grad.cls_b() += dq;
    gfg += cls_w.transpose() * dq;
  }

  if (tw.smooth && T > 1) {
    const double scale = *tw.smooth / static_cast<double>(T - 1);
    for (Eigen::Index t = 0; t + 1 < T; ++t) {
      const double s = sign(out.a(t) - out.a(t + 1)) * scale;
      ga(t) += s;
      ga(t + 1) -= s;
    }
  }

  if (tw.norm) {
    const Eigen::Index l = norm_window(T, tw.k);
    const double scale = *tw.norm / static_cast<double>(l);
    for (auto i : bottom_indices(out.a, l)) ga(i) += scale;
    for (auto i : top_indices(out.a, l)) ga(i) -= scale;
  }

  if (tw.dist) {
    const double nf = out.x_fg.norm();
    const double nb = out.x_bg.norm();
    if (nf > 0.0 && nb > 0.0) {
      const double cos = out.x_fg.dot(out.x_bg) / (nf * nb);
      if (cos - tw.m > 0.0) {
        gfg += *tw.dist * (out.x_bg / (nf * nb) - cos * out.x_fg / (nf * nf));
        gbg += *tw.dist * (out.x_fg / (nf * nb) - cos * out.x_bg / (nb * nb));
      }
    }
  }

  if (tw.guide) {
    const auto target = guide_targets(out.tcam, labels);
    const double scale = *tw.guide / static_cast<double>(T);
    for (Eigen::Index t = 0; t < T; ++t) {
      gtcam(t, target[t]) -= scale * sign(out.a(t) - out.tcam(t, target[t]));
    }
  }

  if (tw.pseudo) {
    const Eigen::VectorXd& g = *pseudo_gt;
    const double scale = *tw.pseudo / static_cast<double>(T);
    for (Eigen::Index t = 0; t < T; ++t) {
      ga(t) -= scale * (g(t) * dlog_clamped(out.a(t)) - (1.0 - g(t)) * dlog_clamped(1.0 - out.a(t)));
    }
  }

  // Foreground and background pooling.
  const double sum_fg = out.a.sum();
  const double sum_bg = static_cast<double>(T) - sum_fg;
  gx.noalias() += (out.a / sum_fg) * gfg.transpose();
  ga += ((out.x.rowwise() - out.x_fg.transpose()) * gfg) / sum_fg;
  if (gbg.squaredNorm() > 0.0) {
    gx.noalias() += ((1.0 - out.a.array()).matrix() / sum_bg) * gbg.transpose();
    ga -= ((out.x.rowwise() - out.x_bg.transpose()) * gbg) / sum_bg;
  }

  // T-CAM softmax rows.
  if (gtcam.squaredNorm() > 0.0) {
    Eigen::MatrixXd gr(T, C);
    for (Eigen::Index t = 0; t < T; ++t) {
      gr.row(t) = softmax_backward(out.tcam.row(t).transpose(), gtcam.row(t).transpose()).transpose();
    }
    grad.cls_w() += gr.transpose() * out.x;
    grad.cls_b() += gr.colwise().sum().transpose();
    gx.noalias() += gr * cls_w;
  }

  // Attention head.
  const Eigen::VectorXd gu = ga.cwiseProduct(out.a).cwiseProduct((1.0 - out.a.array()).matrix());
  grad.attn_w() += out.x.transpose() * gu;
  grad.attn_b() += gu.sum();
  gx.noalias() += gu * params.attn_w().transpose();

  // Embedding activation and temporal convolution.
  Eigen::MatrixXd gz = gx;
  if (params.shape().activation == Activation::Relu) {
    gz = gx.cwiseProduct((out.pre.array() > 0.0).cast<double>().matrix());
  }
  grad.conv_tap(1) += gz.transpose() * features;
  if (T > 1) {
    grad.conv_tap(0) += gz.bottomRows(T - 1).transpose() * features.topRows(T - 1);
    grad.conv_tap(2) += gz.topRows(T - 1).transpose() * features.bottomRows(T - 1);
  }
  grad.conv_b() += gz.colwise().sum().transpose();
  return res;
}

BackwardResult backward(const BaseModelParams& params, const Eigen::MatrixXd& features, std::span<const int> labels,
                        const LossWeights& w, const Eigen::VectorXd* pseudo_gt, LossMode mode) {
  check_mode(pseudo_gt, mode, features.rows());
  return backward_terms(params, features, labels, pseudo_gt, term_weights(w, mode));
}

double kink_margin(const BaseModelParams& params, const Eigen::MatrixXd& features, std::span<const int> labels,
                   const Eigen::VectorXd* pseudo_gt, const TermWeights& tw) {
  const StreamOutput out = forward(params, features);
  const Eigen::Index T = out.a.size();
  double margin = std::numeric_limits<double>::infinity();
  auto consider = [&margin](double d) { margin = std::min(margin, std::abs(d)); };

  if (tw.smooth && *tw.smooth != 0.0) {
    for (Eigen::Index t = 0; t + 1 < T; ++t) consider(out.a(t) - out.a(t + 1));
  }
  if (tw.norm && *tw.norm != 0.0) {
    const Eigen::Index l = norm_window(T, tw.k);
    if (T > l) {
      std::vector<double> sorted(out.a.data(), out.a.data() + T);
      std::sort(sorted.begin(), sorted.end());
      consider(sorted[l] - sorted[l - 1]);
      consider(sorted[T - l] - sorted[T - l - 1]);
    }
  }
  if (tw.dist && *tw.dist != 0.0) {
    const double nf = out.x_fg.norm(), nb = out.x_bg.norm();
    if (nf > 0.0 && nb > 0.0) consider(out.x_fg.dot(out.x_bg) / (nf * nb) - tw.m);
  }
  if (tw.guide && *tw.guide != 0.0) {
    const auto target = guide_targets(out.tcam, labels);
    for (Eigen::Index t = 0; t < T; ++t) {
      consider(out.a(t) - out.tcam(t, target[t]));
      for (int c : labels) {
        if (c != target[t]) consider(out.tcam(t, target[t]) - out.tcam(t, c));
      }
    }
  }
  for (Eigen::Index c = 0; c < out.y_hat.size(); ++c) {
    consider(out.y_hat(c) - kLogClamp);
    consider(1.0 - out.y_hat(c) - kLogClamp);
  }
  if (pseudo_gt != nullptr && tw.pseudo && *tw.pseudo != 0.0) {
    for (Eigen::Index t = 0; t < T; ++t) {
      consider(out.a(t) - kLogClamp);
      consider(1.0 - out.a(t) - kLogClamp);
    }
  }
  if (params.shape().activation == Activation::Relu) {
    for (Eigen::Index i = 0; i < out.pre.size(); ++i) consider(out.pre.data()[i]);
  }
  return margin;
}

GradCheckReport check_gradient(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                               const Eigen::VectorXd& analytic, double h) {
  if (!(h > 0.0)) throw ValidationError("finite-difference step must be positive");
  if (analytic.size() != x.size()) throw ValidationError("gradient size does not match the point");
  GradCheckReport rep;
  Eigen::VectorXd probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    probe(i) = x(i) + h;
    const double up = f(probe);
    probe(i) = x(i) - h;
    const double down = f(probe);
    probe(i) = x(i);
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic(i)), std::abs(numeric), 1e-8});
    const double err = std::abs(analytic(i) - numeric) / denom;
    if (err > rep.max_rel_error || rep.worst_index < 0) {
      rep.max_rel_error = err;
      rep.worst_index = i;
      rep.analytic_at_worst = analytic(i);
      rep.numeric_at_worst = numeric;
    }
  }
  return rep;
}

GradCheckReport grad_check(const BaseModelParams& params, const Eigen::MatrixXd& features,
                           std::span<const int> labels, const LossWeights& w, const Eigen::VectorXd* pseudo_gt,
                           LossMode mode, double h) {
  check_mode(pseudo_gt, mode, features.rows());
  const TermWeights tw = term_weights(w, mode);
  const BackwardResult res = backward_terms(params, features, labels, pseudo_gt, tw);
  const Activation act = params.shape().activation;

  // The guide term sees the attention as a constant, so the numeric side
  // evaluates it with the attention frozen at the unperturbed point.
  const Eigen::VectorXd frozen_a = forward(params, features).a;
  TermWeights no_guide = tw;
  no_guide.guide.reset();
  BaseModelParams probe = params;
  auto loss_at = [&](const Eigen::VectorXd& v) {
    probe.data() = v;
    const StreamOutput out = forward(probe, features);
    double total = evaluate_terms(out, labels, pseudo_gt, no_guide).total;
    if (tw.guide) total += *tw.guide * loss_guide(frozen_a, out.tcam, labels);
    return total;
  };
  GradCheckReport rep = check_gradient(loss_at, params.data(), res.grads.data(), h);

  const auto base_state = kink_state(forward(params, features), labels, pseudo_gt, tw, act, frozen_a);
  for (Eigen::Index i = 0; i < params.data().size(); ++i) {
    bool crossed = false;
    for (double step : {h, -h}) {
      probe.data() = params.data();
      probe.data()(i) += step;
      crossed = crossed || kink_state(forward(probe, features), labels, pseudo_gt, tw, act, frozen_a) != base_state;
    }
    rep.kink_crossings += crossed;
  }
  rep.kink_margin = kink_margin(params, features, labels, pseudo_gt, tw);
  return rep;
}

GradCheckInstance random_grad_instance(std::uint64_t seed, const ModelShape& shape, int T, LossMode mode,
                                       const LossWeights& w, double min_margin) {
  if (T < 1) throw ValidationError("instance needs at least one snippet");
  const TermWeights tw = term_weights(w, mode);
  for (int attempt = 0; attempt < 10000; ++attempt) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(attempt)));
    GradCheckInstance inst;
    inst.resamples = attempt;
    inst.params = init_params(shape, rng.next_u64());
    inst.params.conv_b() = Eigen::VectorXd::NullaryExpr(shape.E, [&rng] { return rng.uniform(-0.5, 0.5); });
    inst.params.attn_b() = rng.uniform(-0.5, 0.5);
    inst.params.cls_b() = Eigen::VectorXd::NullaryExpr(shape.C, [&rng] { return rng.uniform(-0.5, 0.5); });
    inst.features = Eigen::MatrixXd::NullaryExpr(T, shape.D, [&rng] { return rng.normal(); });
    const int n_labels = shape.C > 1 && rng.uniform() < 0.3 ? 2 : 1;
    while (static_cast<int>(inst.labels.size()) < n_labels) {
      const int c = static_cast<int>(rng.below(shape.C));
      if (std::find(inst.labels.begin(), inst.labels.end(), c) == inst.labels.end()) inst.labels.push_back(c);
    }
    std::sort(inst.labels.begin(), inst.labels.end());
    if (mode == LossMode::Refine) {
      inst.pseudo_gt = Eigen::VectorXd::NullaryExpr(T, [&rng] { return rng.uniform() < 0.5 ? 1.0 : 0.0; });
    }
    const Eigen::VectorXd* g = inst.pseudo_gt ? &*inst.pseudo_gt : nullptr;
    if (kink_margin(inst.params, inst.features, inst.labels, g, tw) >= min_margin) return inst;
  }
  throw ValidationError("could not draw a gradient-check instance away from kinks");
}

}  // namespace tscn
