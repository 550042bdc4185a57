#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tscn/dataio.hpp"
#include "tscn/detection.hpp"
#include "tscn/model.hpp"
#include "tscn/optim.hpp"

namespace tscn {

struct LocalizeConfig {
  int upsample_factor = 8;
  int top_k_classes = 2;
  double threshold_start = 0.0;
  double threshold_end = 1.0;
  double threshold_step = 0.025;
  double nms_iou = 0.6;
  double beta = 0.6;

  void validate() const;
  /// threshold_start + i * threshold_step for every i that stays <= threshold_end.
  std::vector<double> thresholds() const;
};

/// Half-open range [begin, end) of positions on the upsampled grid.
struct Interval {
  Eigen::Index begin = 0;
  Eigen::Index end = 0;

  Eigen::Index length() const { return end - begin; }
  auto operator<=>(const Interval&) const = default;
};

struct Proposal {
  Interval span;
  int label = 0;
  double threshold = 0.0;
};

/// Endpoint-preserving linear interpolation; output length (T-1)*factor + 1.
Eigen::VectorXd upsample_linear(const Eigen::VectorXd& seq, int factor);
/// Column-wise upsample_linear of a T x C matrix.
Eigen::MatrixXd upsample_columns(const Eigen::MatrixXd& seq, int factor);

/// Indices of the k largest scores, descending, lowest index on ties.
std::vector<int> top_classes(const Eigen::VectorXd& scores, int k);

/// Maximal runs with a > tau.
std::vector<Interval> threshold_runs(const Eigen::VectorXd& a, double tau);

/// Union of threshold_runs over the configured sweep, deduplicated and sorted.
std::vector<Interval> sweep_proposals(const Eigen::VectorXd& a_up, const LocalizeConfig& cfg);

/// Inner mean of w over the interval minus the mean over the inflated margin
/// [begin - L/4, end + L/4) \ [begin, end), rounded half away from zero and
/// clamped to the grid. An empty margin contributes 0.
double contrast_score(const Eigen::VectorXd& w, Interval span);

/// contrast_score with w_i = a_i * s_{i,c}.
double score_proposal(const Proposal& p, const Eigen::VectorXd& a_up, const Eigen::MatrixXd& tcam_up);

/// Greedy class-wise suppression. Sorted by score descending, then start,
/// then class; a detection survives iff its IoU with every kept detection of
/// the same class is <= iou_thr.
std::vector<Detection> nms(std::vector<Detection> dets, double iou_thr);

std::vector<Detection> localize_video(const std::string& video_id, const StreamOutput& rgb, const StreamOutput& flow,
                                      const LocalizeConfig& cfg, double snippet_seconds);

/// Runs both streams of `ckpt` on every video and localizes; results are
/// concatenated in manifest order regardless of `workers`.
std::vector<Detection> localize_dataset(const Dataset& dataset, const Checkpoint& ckpt, const LocalizeConfig& cfg,
                                        int workers = 1);

}  // namespace tscn
