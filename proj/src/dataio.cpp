#include "tscn/dataio.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "tscn/errors.hpp"
#include "tscn/rng.hpp"

namespace tscn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kMinGap = 2;  // background snippets before, between and after segments

std::string video_error(const std::string& id, const std::string& what) {
  return "video '" + id + "': " + what;
}

std::vector<std::uint8_t> read_bytes(const fs::path& path, const std::string& id) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(video_error(id, "cannot open feature file " + path.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

template <typename T>
T require(const json& j, const char* key, const std::string& ctx) {
  if (!j.contains(key)) throw ValidationError(ctx + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(ctx + ": bad field '" + key + "': " + e.what());
  }
}

json meta_to_json(const VideoMeta& m) {
  json v;
  v["id"] = m.id;
  v["T"] = m.T;
  v["labels"] = m.labels;
  if (m.segments) {
    json segs = json::array();
    for (const auto& s : *m.segments) segs.push_back(json::array({s.start, s.end, s.label}));
    v["segments"] = std::move(segs);
  }
  v["rgb_path"] = m.rgb_path;
  v["flow_path"] = m.flow_path;
  return v;
}

VideoMeta meta_from_json(const json& v, int num_classes, double snippet_seconds) {
  VideoMeta m;
  m.id = require<std::string>(v, "id", "manifest video");
  m.T = require<int>(v, "T", video_error(m.id, "manifest"));
  if (m.T <= 0) throw ValidationError(video_error(m.id, "T must be positive"));
  m.labels = require<std::vector<int>>(v, "labels", video_error(m.id, "manifest"));
  std::sort(m.labels.begin(), m.labels.end());
  m.labels.erase(std::unique(m.labels.begin(), m.labels.end()), m.labels.end());
  for (int c : m.labels) {
    if (c < 0 || c >= num_classes) {
      throw ValidationError(video_error(m.id, "label " + std::to_string(c) + " out of range"));
    }
  }
  if (v.contains("segments") && !v["segments"].is_null()) {
    std::vector<SegmentAnnotation> segs;
    const double duration = m.T * snippet_seconds;
    for (const auto& s : v["segments"]) {
      if (!s.is_array() || s.size() != 3) {
        throw ValidationError(video_error(m.id, "segment must be [start_s, end_s, class]"));
      }
      SegmentAnnotation seg{s[0].get<double>(), s[1].get<double>(), s[2].get<int>()};
      if (!(seg.start >= 0.0 && seg.start < seg.end && seg.end <= duration)) {
        throw ValidationError(video_error(m.id, "segment outside [0, duration] or empty"));
      }
      if (seg.label < 0 || seg.label >= num_classes) {
        throw ValidationError(video_error(m.id, "segment label out of range"));
      }
      segs.push_back(seg);
    }
    m.segments = std::move(segs);
  }
  m.rgb_path = require<std::string>(v, "rgb_path", video_error(m.id, "manifest"));
  m.flow_path = require<std::string>(v, "flow_path", video_error(m.id, "manifest"));
  return m;
}

Eigen::MatrixXd load_features(const fs::path& path, const VideoMeta& m, int D) {
  const auto bytes = read_bytes(path, m.id);
  const std::size_t expected = static_cast<std::size_t>(m.T) * D * 4;
  if (bytes.size() != expected) {
    throw ValidationError(video_error(m.id, "dimension mismatch in " + path.filename().string() + ": " +
                                                std::to_string(bytes.size()) + " bytes, expected " +
                                                std::to_string(expected)));
  }
  Eigen::MatrixXd f = decode_features(bytes, m.T, D);
  if (!f.allFinite()) throw ValidationError(video_error(m.id, "non-finite feature value"));
  return f;
}

}  // namespace

std::vector<std::uint8_t> encode_features(const Eigen::MatrixXd& features) {
  std::vector<std::uint8_t> out;
  out.reserve(static_cast<std::size_t>(features.size()) * 4);
  for (Eigen::Index t = 0; t < features.rows(); ++t) {
    for (Eigen::Index d = 0; d < features.cols(); ++d) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(features(t, d)));
      for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
    }
  }
  return out;
}

Eigen::MatrixXd decode_features(const std::vector<std::uint8_t>& bytes, int T, int D) {
  if (bytes.size() != static_cast<std::size_t>(T) * D * 4) {
    throw ValidationError("feature byte count does not match T x D");
  }
  Eigen::MatrixXd f(T, D);
  std::size_t k = 0;
  for (int t = 0; t < T; ++t) {
    for (int d = 0; d < D; ++d, k += 4) {
      const std::uint32_t bits = std::uint32_t{bytes[k]} | std::uint32_t{bytes[k + 1]} << 8 |
                                 std::uint32_t{bytes[k + 2]} << 16 | std::uint32_t{bytes[k + 3]} << 24;
      f(t, d) = static_cast<double>(std::bit_cast<float>(bits));
    }
  }
  return f;
}

Dataset load_dataset(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest " + manifest_path.string());
  json root;
  try {
    root = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("manifest " + manifest_path.string() + " does not parse: " + e.what());
  }

  Dataset ds;
  ds.num_classes = require<int>(root, "num_classes", "manifest");
  ds.feature_dim = require<int>(root, "feature_dim", "manifest");
  ds.snippet_seconds = require<double>(root, "snippet_seconds", "manifest");
  if (ds.num_classes <= 0 || ds.feature_dim <= 0 || !(ds.snippet_seconds > 0.0)) {
    throw ValidationError("manifest: num_classes, feature_dim and snippet_seconds must be positive");
  }
  const fs::path base = manifest_path.parent_path();
  for (const auto& v : require<json>(root, "videos", "manifest")) {
    VideoRecord rec;
    rec.meta = meta_from_json(v, ds.num_classes, ds.snippet_seconds);
    rec.rgb = load_features(base / rec.meta.rgb_path, rec.meta, ds.feature_dim);
    rec.flow = load_features(base / rec.meta.flow_path, rec.meta, ds.feature_dim);
    ds.videos.push_back(std::move(rec));
  }
  return ds;
}

void save_dataset(const Dataset& dataset, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());

  json root;
  root["num_classes"] = dataset.num_classes;
  root["feature_dim"] = dataset.feature_dim;
  root["snippet_seconds"] = dataset.snippet_seconds;
  root["videos"] = json::array();
  for (const auto& rec : dataset.videos) {
    root["videos"].push_back(meta_to_json(rec.meta));
    for (const auto& [rel, feats] : {std::pair{rec.meta.rgb_path, &rec.rgb}, std::pair{rec.meta.flow_path, &rec.flow}}) {
      const fs::path target = dir / rel;
      fs::create_directories(target.parent_path(), ec);
      if (ec) throw IoError("cannot create " + target.parent_path().string());
      write_bytes(target, encode_features(*feats));
    }
  }
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << root.dump(2) << '\n';
  if (!out) throw IoError("write failed for manifest");
}

void SynthConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ValidationError("synthetic config: " + msg); };
  if (num_train <= 0 || num_val <= 0) fail("num_train and num_val must be positive");
  if (num_classes <= 0 || feature_dim <= 0) fail("num_classes and feature_dim must be positive");
  if (T_range.lo < 4 || T_range.hi < T_range.lo) fail("T_range must satisfy 4 <= lo <= hi");
  if (segments_per_video.lo < 1 || segments_per_video.hi < segments_per_video.lo) {
    fail("segments_per_video must satisfy 1 <= lo <= hi");
  }
  if (segment_length.lo < 1 || segment_length.hi < segment_length.lo) {
    fail("segment_length must satisfy 1 <= lo <= hi");
  }
  if (!(background_noise_sigma > 0.0)) fail("background_noise_sigma must be positive");
  if (!(class_separation > 0.0)) fail("class_separation must be positive");
  if (!(snippet_seconds > 0.0)) fail("snippet_seconds must be positive");
  if (!(second_class_prob >= 0.0 && second_class_prob <= 1.0)) fail("second_class_prob must be in [0,1]");
  const int min_need = segments_per_video.lo * segment_length.lo + (segments_per_video.lo + 1) * kMinGap;
  if (min_need > T_range.lo) {
    fail("segments cannot fit: need " + std::to_string(min_need) + " snippets, T_range.lo is " +
         std::to_string(T_range.lo));
  }
}

namespace {

// Class means with norm `sep`; pairwise distances are forced to be >= sep.
std::vector<Eigen::VectorXd> draw_class_means(Rng& rng, int C, int D, double sep) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::vector<Eigen::VectorXd> means;
    for (int c = 0; c < C; ++c) {
      Eigen::VectorXd v(D);
      for (int d = 0; d < D; ++d) v(d) = rng.normal();
      if (v.norm() == 0.0) v(0) = 1.0;
      means.push_back(sep * v.normalized());
    }
    bool ok = true;
    for (int i = 0; i < C && ok; ++i) {
      for (int j = i + 1; j < C && ok; ++j) ok = (means[i] - means[j]).norm() >= sep;
    }
    if (ok) return means;
  }
  throw ValidationError("synthetic config: cannot place class means with the requested separation");
}

struct Planted {
  int begin;
  int end;  // exclusive, snippets
  int label;
};

std::vector<Planted> plant_segments(Rng& rng, const SynthConfig& cfg, int T) {
  const int n_max = std::min(cfg.segments_per_video.hi, std::max(cfg.segments_per_video.lo,
                                                                  (T - kMinGap) / (cfg.segment_length.lo + kMinGap)));
  const int n = rng.range(cfg.segments_per_video.lo, n_max);
  std::vector<int> lengths(n);
  int total = 0;
  for (auto& len : lengths) {
    len = rng.range(cfg.segment_length.lo, cfg.segment_length.hi);
    total += len;
  }
  // n <= n_max guarantees this terminates with every length >= segment_length.lo.
  int free = T - total - (n + 1) * kMinGap;
  while (free < 0) {
    --*std::max_element(lengths.begin(), lengths.end());
    ++free;
  }

  // Split the free snippets into n + 1 extra gaps.
  std::vector<int> cuts(n);
  for (auto& c : cuts) c = rng.range(0, free);
  std::sort(cuts.begin(), cuts.end());
  std::vector<Planted> segs;
  int pos = 0;
  int prev_cut = 0;
  for (int k = 0; k < n; ++k) {
    pos += kMinGap + (cuts[k] - prev_cut);
    prev_cut = cuts[k];
    segs.push_back({pos, pos + lengths[k], 0});
    pos += lengths[k];
  }
  return segs;
}

Eigen::MatrixXd render_modality(Rng& rng, const std::vector<Planted>& segs, const std::vector<Eigen::VectorXd>& means,
                                int T, int D, double sigma) {
  Eigen::MatrixXd f(T, D);
  for (int t = 0; t < T; ++t) {
    for (int d = 0; d < D; ++d) f(t, d) = sigma * rng.normal();
  }
  for (const auto& s : segs) {
    for (int t = s.begin; t < s.end; ++t) f.row(t) += means[s.label].transpose();
  }
  // Quantize to the storage precision so in-memory data equals its saved form.
  return f.unaryExpr([](double v) { return static_cast<double>(static_cast<float>(v)); });
}

Dataset synth_split(Rng& rng, const SynthConfig& cfg, const std::vector<Eigen::VectorXd>& rgb_means,
                    const std::vector<Eigen::VectorXd>& flow_means, int count, const std::string& prefix) {
  Dataset ds;
  ds.num_classes = cfg.num_classes;
  ds.feature_dim = cfg.feature_dim;
  ds.snippet_seconds = cfg.snippet_seconds;
  for (int i = 0; i < count; ++i) {
    const int T = rng.range(cfg.T_range.lo, cfg.T_range.hi);
    auto segs = plant_segments(rng, cfg, T);
    const int primary = static_cast<int>(rng.below(cfg.num_classes));
    for (std::size_t k = 0; k < segs.size(); ++k) {
      segs[k].label = primary;
      if (k > 0 && rng.uniform() < cfg.second_class_prob) segs[k].label = static_cast<int>(rng.below(cfg.num_classes));
    }

    VideoRecord rec;
    char id[64];
    std::snprintf(id, sizeof id, "%s_%05d", prefix.c_str(), i);
    rec.meta.id = id;
    rec.meta.T = T;
    rec.meta.rgb_path = "features/" + rec.meta.id + "_rgb.bin";
    rec.meta.flow_path = "features/" + rec.meta.id + "_flow.bin";
    std::vector<SegmentAnnotation> annotations;
    for (const auto& s : segs) {
      rec.meta.labels.push_back(s.label);
      annotations.push_back({s.begin * cfg.snippet_seconds, s.end * cfg.snippet_seconds, s.label});
    }
    std::sort(rec.meta.labels.begin(), rec.meta.labels.end());
    rec.meta.labels.erase(std::unique(rec.meta.labels.begin(), rec.meta.labels.end()), rec.meta.labels.end());
    rec.meta.segments = std::move(annotations);
    rec.rgb = render_modality(rng, segs, rgb_means, T, cfg.feature_dim, cfg.background_noise_sigma);
    rec.flow = render_modality(rng, segs, flow_means, T, cfg.feature_dim, cfg.background_noise_sigma);
    ds.videos.push_back(std::move(rec));
  }
  return ds;
}

}  // namespace

SyntheticData generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const auto rgb_means = draw_class_means(rng, cfg.num_classes, cfg.feature_dim, cfg.class_separation);
  const auto flow_means = draw_class_means(rng, cfg.num_classes, cfg.feature_dim, cfg.class_separation);
  SyntheticData out;
  out.train = synth_split(rng, cfg, rgb_means, flow_means, cfg.num_train, "train");
  out.val = synth_split(rng, cfg, rgb_means, flow_means, cfg.num_val, "val");
  return out;
}

}  // namespace tscn
