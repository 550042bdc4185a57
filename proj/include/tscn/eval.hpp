#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tscn/dataio.hpp"
#include "tscn/detection.hpp"

namespace tscn {

struct GroundTruth {
  std::string video_id;
  int label = 0;
  double start = 0.0;
  double end = 0.0;
};

/// Average precision of one class's detections (all videos) against that
/// class's ground truth. Detections are ranked by score (ties: video id, then
/// start); each is greedily matched to the unmatched same-video instance of
/// highest IoU >= iou_thr. AP integrates the precision envelope:
///   AP = (sum over true-positive ranks k of max_{j >= k} precision_j) / #GT.
/// Returns 0 when there is no ground truth.
double ap_at_iou(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts, double iou_thr);

/// 0.50, 0.55, ..., 0.95
std::vector<double> default_iou_thresholds();

struct EvalReport {
  std::vector<double> iou_thresholds;
  std::vector<double> map_at_iou;  // parallel to iou_thresholds
  double average_map = 0.0;
  std::vector<int> classes;        // classes with at least one ground-truth instance
  std::map<std::pair<int, std::size_t>, double> per_class_ap;  // (class, threshold index)
  std::size_t num_detections = 0;
  std::size_t num_ground_truth = 0;
};

std::vector<GroundTruth> ground_truth(const Dataset& dataset);

/// mAP per threshold is the mean AP over classes with ground truth;
/// average_map is the mean over thresholds. Throws ValidationError for
/// detections on unknown videos or out-of-range classes, and for datasets
/// without segment annotations.
EvalReport evaluate(const std::vector<Detection>& dets, const Dataset& dataset,
                    const std::vector<double>& iou_thresholds = default_iou_thresholds(), int workers = 1);

std::string report_to_json(const EvalReport& report);

/// Text table with mAP@0.5 / 0.75 / 0.95 / Avg in percent.
std::string format_table(const EvalReport& report, const std::string& row_label = "Fusion");

}  // namespace tscn
