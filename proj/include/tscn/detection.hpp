#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace tscn {

struct Detection {
  std::string video_id;
  int label = 0;
  double start = 0.0;  // seconds
  double end = 0.0;
  double score = 0.0;

  bool operator==(const Detection&) const = default;
};

/// Intersection over union of [s1, e1] and [s2, e2]. Throws ValidationError
/// if either interval is empty.
double temporal_iou(double s1, double e1, double s2, double e2);

inline double temporal_iou(const Detection& a, const Detection& b) {
  return temporal_iou(a.start, a.end, b.start, b.end);
}

/// Optional class names; index i names class i. Without names, labels are
/// written as stringified indices.
struct LabelMap {
  std::vector<std::string> names;

  std::string name(int label) const;
  int index(const std::string& name) const;

  /// Reads a JSON array of class names.
  static LabelMap load(const std::filesystem::path& path);
};

/// {"results": {video_id: [{"label", "score", "segment": [start, end]}]}, "version": ...}
/// Videos appear in `video_order`; each video's detections in list order.
std::string detections_to_json(const std::vector<std::string>& video_order, const std::vector<Detection>& dets,
                               const LabelMap& labels);
void write_detections(const std::filesystem::path& path, const std::vector<std::string>& video_order,
                      const std::vector<Detection>& dets, const LabelMap& labels);
std::vector<Detection> read_detections(const std::filesystem::path& path, const LabelMap& labels);

inline constexpr const char* kDetectionsVersion = "tscn-detections-1.0";

}  // namespace tscn
