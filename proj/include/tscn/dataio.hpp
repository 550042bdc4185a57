#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace tscn {

/// Ground-truth action instance, in seconds. Evaluation only.
struct SegmentAnnotation {
  double start = 0.0;
  double end = 0.0;
  int label = 0;

  bool operator==(const SegmentAnnotation&) const = default;
};

struct VideoMeta {
  std::string id;
  int T = 0;
  std::vector<int> labels;  // sorted, unique
  std::optional<std::vector<SegmentAnnotation>> segments;
  std::string rgb_path;  // relative to the manifest directory
  std::string flow_path;

  bool operator==(const VideoMeta&) const = default;
};

/// One video's snippet features. Rows are snippets, columns feature channels.
struct VideoRecord {
  VideoMeta meta;
  Eigen::MatrixXd rgb;
  Eigen::MatrixXd flow;

  double duration(double snippet_seconds) const { return meta.T * snippet_seconds; }
};

struct Dataset {
  int num_classes = 0;
  int feature_dim = 0;
  double snippet_seconds = 1.0;
  std::vector<VideoRecord> videos;
};

/// Reads manifest.json plus every referenced feature file.
/// Throws IoError for missing/unreadable files and ValidationError for
/// schema, shape, label or finiteness problems; messages name the video id.
Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes `dir/manifest.json` and one pair of float32 feature files per
/// video. Paths in the written manifest are taken from each VideoMeta.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);

/// Feature file codec: little-endian float32, row-major T x D.
std::vector<std::uint8_t> encode_features(const Eigen::MatrixXd& features);
Eigen::MatrixXd decode_features(const std::vector<std::uint8_t>& bytes, int T, int D);

struct IntRange {
  int lo = 0;
  int hi = 0;
};

struct SynthConfig {
  int num_train = 200;
  int num_val = 50;
  int num_classes = 5;
  int feature_dim = 20;
  IntRange T_range{40, 80};
  IntRange segments_per_video{1, 3};
  IntRange segment_length{6, 18};  // snippets
  double background_noise_sigma = 1.0;
  double class_separation = 8.0;
  double second_class_prob = 0.2;  // chance that a later segment draws a new class
  double snippet_seconds = 1.0;
  std::uint64_t seed = 0;

  /// Throws ValidationError on an invalid or infeasible configuration.
  void validate() const;
};

struct SyntheticData {
  Dataset train;
  Dataset val;
};

/// Planted-segment synthetic features with known ground truth.
SyntheticData generate_synthetic(const SynthConfig& cfg);

}  // namespace tscn
