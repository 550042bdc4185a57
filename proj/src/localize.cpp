#include "tscn/localize.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tscn/errors.hpp"
#include "tscn/parallel.hpp"
#include "tscn/pseudo.hpp"

namespace tscn {

void LocalizeConfig::validate() const {
  if (upsample_factor < 1) throw ValidationError("upsample factor must be at least 1");
  if (top_k_classes < 1) throw ValidationError("top_k_classes must be at least 1");
  if (!(threshold_step > 0.0)) throw ValidationError("threshold step must be positive");
  if (!(threshold_end >= threshold_start)) throw ValidationError("threshold_end must not be below threshold_start");
  if (!(nms_iou >= 0.0 && nms_iou <= 1.0)) throw ValidationError("nms_iou must lie in [0, 1]");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ValidationError("beta must lie in [0, 1]");
}

std::vector<double> LocalizeConfig::thresholds() const {
  const auto n = static_cast<long>(std::floor((threshold_end - threshold_start) / threshold_step + 1e-9));
  std::vector<double> taus;
  for (long i = 0; i <= n; ++i) taus.push_back(threshold_start + static_cast<double>(i) * threshold_step);
  return taus;
}

Eigen::VectorXd upsample_linear(const Eigen::VectorXd& seq, int factor) {
  if (factor < 1) throw ValidationError("upsample factor must be at least 1");
  const Eigen::Index T = seq.size();
  if (T <= 1) return seq;
  Eigen::VectorXd out((T - 1) * factor + 1);
  for (Eigen::Index j = 0; j < out.size(); ++j) {
    const Eigen::Index i = j / factor;
    const Eigen::Index r = j % factor;
    if (r == 0) {
      out(j) = seq(i);
    } else {
      const double frac = static_cast<double>(r) / factor;
      out(j) = (1.0 - frac) * seq(i) + frac * seq(i + 1);
    }
  }
  return out;
}

Eigen::MatrixXd upsample_columns(const Eigen::MatrixXd& seq, int factor) {
  const Eigen::Index T = seq.rows();
  Eigen::MatrixXd out(T <= 1 ? T : (T - 1) * factor + 1, seq.cols());
  for (Eigen::Index c = 0; c < seq.cols(); ++c) out.col(c) = upsample_linear(seq.col(c), factor);
  return out;
}

std::vector<int> top_classes(const Eigen::VectorXd& scores, int k) {
  if (k < 0 || k > scores.size()) throw ValidationError("top_classes: k exceeds the number of classes");
  std::vector<int> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&scores](int i, int j) { return scores(i) > scores(j); });
  idx.resize(k);
  return idx;
}

std::vector<Interval> threshold_runs(const Eigen::VectorXd& a, double tau) {
  std::vector<Interval> runs;
  Eigen::Index i = 0;
  const Eigen::Index n = a.size();
  while (i < n) {
    if (a(i) > tau) {
      Eigen::Index j = i;
      while (j < n && a(j) > tau) ++j;
      runs.push_back({i, j});
      i = j;
    } else {
      ++i;
    }
  }
  return runs;
}

std::vector<Interval> sweep_proposals(const Eigen::VectorXd& a_up, const LocalizeConfig& cfg) {
  std::vector<Interval> all;
  for (double tau : cfg.thresholds()) {
    const auto runs = threshold_runs(a_up, tau);
    all.insert(all.end(), runs.begin(), runs.end());
  }
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  return all;
}

double contrast_score(const Eigen::VectorXd& w, Interval span) {
  const Eigen::Index n = w.size();
  if (span.begin < 0 || span.end > n || span.begin >= span.end) throw ValidationError("proposal outside the grid");
  const double L = static_cast<double>(span.length());
  const auto outer_begin = std::max<Eigen::Index>(0, static_cast<Eigen::Index>(std::round(span.begin - L / 4.0)));
  const auto outer_end = std::min<Eigen::Index>(n, static_cast<Eigen::Index>(std::round(span.end + L / 4.0)));

  const double inner_sum = w.segment(span.begin, span.length()).sum();
  const double inner = inner_sum / L;
  const Eigen::Index margin_count = (outer_end - outer_begin) - span.length();
  if (margin_count <= 0) return inner;
  const double margin_sum = w.segment(outer_begin, span.begin - outer_begin).sum() +
                            w.segment(span.end, outer_end - span.end).sum();
  return inner - margin_sum / static_cast<double>(margin_count);
}

double score_proposal(const Proposal& p, const Eigen::VectorXd& a_up, const Eigen::MatrixXd& tcam_up) {
  if (p.label < 0 || p.label >= tcam_up.cols()) throw ValidationError("proposal class out of range");
  return contrast_score(a_up.cwiseProduct(tcam_up.col(p.label)), p.span);
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_thr) {
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& x, const Detection& y) {
    if (x.score != y.score) return x.score > y.score;
    if (x.start != y.start) return x.start < y.start;
    return x.label < y.label;
  });
  std::vector<Detection> kept;
  for (auto& d : dets) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.label == d.label && k.video_id == d.video_id && temporal_iou(k, d) > iou_thr;
    });
    if (!suppressed) kept.push_back(std::move(d));
  }
  return kept;
}

std::vector<Detection> localize_video(const std::string& video_id, const StreamOutput& rgb, const StreamOutput& flow,
                                      const LocalizeConfig& cfg, double snippet_seconds) {
  cfg.validate();
  const Eigen::VectorXd y_fuse = fuse(rgb.y_hat, flow.y_hat, cfg.beta);
  const Eigen::VectorXd a_up = upsample_linear(fuse(rgb.a, flow.a, cfg.beta), cfg.upsample_factor);
  const Eigen::MatrixXd tcam_up = upsample_columns(fuse(rgb.tcam, flow.tcam, cfg.beta), cfg.upsample_factor);
  const double seconds_per_step = snippet_seconds / cfg.upsample_factor;

  const auto classes = top_classes(y_fuse, std::min<int>(cfg.top_k_classes, static_cast<int>(y_fuse.size())));
  const auto spans = sweep_proposals(a_up, cfg);
  std::vector<Detection> dets;
  dets.reserve(spans.size() * classes.size());
  for (int c : classes) {
    const Eigen::VectorXd w = a_up.cwiseProduct(tcam_up.col(c));
    for (const auto& span : spans) {
      dets.push_back({video_id, c, static_cast<double>(span.begin) * seconds_per_step,
                      static_cast<double>(span.end) * seconds_per_step, contrast_score(w, span)});
    }
  }
  return nms(std::move(dets), cfg.nms_iou);
}

std::vector<Detection> localize_dataset(const Dataset& dataset, const Checkpoint& ckpt, const LocalizeConfig& cfg,
                                        int workers) {
  cfg.validate();
  const auto per_video = parallel_map(dataset.videos.size(), workers, [&](std::size_t i) {
    const VideoRecord& v = dataset.videos[i];
    return localize_video(v.meta.id, forward(ckpt.rgb, v.rgb), forward(ckpt.flow, v.flow), cfg,
                          dataset.snippet_seconds);
  });
  std::vector<Detection> out;
  for (const auto& d : per_video) out.insert(out.end(), d.begin(), d.end());
  return out;
}

}  // namespace tscn
