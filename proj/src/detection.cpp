#include "tscn/detection.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>

#include <json.hpp>

#include "tscn/errors.hpp"

namespace tscn {

double temporal_iou(double s1, double e1, double s2, double e2) {
  if (!(s1 < e1) || !(s2 < e2)) throw ValidationError("temporal_iou: degenerate interval");
  const double inter = std::max(0.0, std::min(e1, e2) - std::max(s1, s2));
  const double uni = (e1 - s1) + (e2 - s2) - inter;
  return inter / uni;
}

std::string LabelMap::name(int label) const {
  if (names.empty()) return std::to_string(label);
  if (label < 0 || label >= static_cast<int>(names.size())) {
    throw ValidationError("label " + std::to_string(label) + " has no name in the label map");
  }
  return names[label];
}

int LabelMap::index(const std::string& name) const {
  if (!names.empty()) {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it != names.end()) return static_cast<int>(it - names.begin());
  }
  int value = 0;
  const auto [ptr, ec] = std::from_chars(name.data(), name.data() + name.size(), value);
  if (ec != std::errc() || ptr != name.data() + name.size()) {
    throw ValidationError("unknown class label '" + name + "'");
  }
  return value;
}

LabelMap LabelMap::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open label map " + path.string());
  try {
    return {nlohmann::json::parse(in).get<std::vector<std::string>>()};
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("label map must be a JSON array of strings: " + std::string(e.what()));
  }
}

std::string detections_to_json(const std::vector<std::string>& video_order, const std::vector<Detection>& dets,
                               const LabelMap& labels) {
  std::map<std::string, std::vector<const Detection*>> by_video;
  for (const auto& d : dets) by_video[d.video_id].push_back(&d);
  nlohmann::ordered_json results = nlohmann::ordered_json::object();
  for (const auto& id : video_order) {
    auto list = nlohmann::ordered_json::array();
    for (const Detection* d : by_video[id]) {
      list.push_back({{"label", labels.name(d->label)}, {"score", d->score}, {"segment", {d->start, d->end}}});
    }
    results[id] = std::move(list);
  }
  for (const auto& [id, list] : by_video) {
    if (!results.contains(id)) throw ValidationError("detection for video '" + id + "' outside the video list");
  }
  nlohmann::ordered_json root;
  root["results"] = std::move(results);
  root["version"] = kDetectionsVersion;
  return root.dump(1) + "\n";
}

void write_detections(const std::filesystem::path& path, const std::vector<std::string>& video_order,
                      const std::vector<Detection>& dets, const LabelMap& labels) {
  const std::string text = detections_to_json(video_order, dets, labels);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write detections " + path.string());
  out << text;
  if (!out) throw IoError("write failed for detections " + path.string());
}

std::vector<Detection> read_detections(const std::filesystem::path& path, const LabelMap& labels) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open detections " + path.string());
  std::vector<Detection> dets;
  try {
    const auto root = nlohmann::json::parse(in);
    for (const auto& [id, list] : root.at("results").items()) {
      for (const auto& item : list) {
        Detection d;
        d.video_id = id;
        const auto& lab = item.at("label");
        d.label = lab.is_number_integer() ? lab.get<int>() : labels.index(lab.get<std::string>());
        d.score = item.at("score").get<double>();
        const auto& seg = item.at("segment");
        d.start = seg.at(0).get<double>();
        d.end = seg.at(1).get<double>();
        dets.push_back(std::move(d));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed detections file " + path.string() + ": " + e.what());
  }
  return dets;
}

}  // namespace tscn
