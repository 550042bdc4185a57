#include "tscn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include <json.hpp>

#include "tscn/errors.hpp"
#include "tscn/parallel.hpp"

namespace tscn {

double ap_at_iou(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts, double iou_thr) {
  if (gts.empty()) return 0.0;
  std::vector<const Detection*> ranked;
  ranked.reserve(dets.size());
  for (const auto& d : dets) ranked.push_back(&d);
  std::stable_sort(ranked.begin(), ranked.end(), [](const Detection* x, const Detection* y) {
    if (x->score != y->score) return x->score > y->score;
    if (x->video_id != y->video_id) return x->video_id < y->video_id;
    return x->start < y->start;
  });

  std::vector<bool> matched(gts.size(), false);
  std::vector<bool> is_tp(ranked.size(), false);
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    const Detection& d = *ranked[k];
    double best_iou = -1.0;
    std::size_t best = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (matched[g] || gts[g].video_id != d.video_id) continue;
      const double iou = temporal_iou(d.start, d.end, gts[g].start, gts[g].end);
      if (iou >= iou_thr && iou > best_iou) {
        best_iou = iou;
        best = g;
      }
    }
    if (best < gts.size()) {
      matched[best] = true;
      is_tp[k] = true;
    }
  }

  // Precision at every rank, then its running maximum from the tail.
  std::vector<double> envelope(ranked.size());
  std::size_t tp = 0;
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    tp += is_tp[k];
    envelope[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
  }
  for (std::size_t k = ranked.size(); k-- > 1;) envelope[k - 1] = std::max(envelope[k - 1], envelope[k]);

  double sum = 0.0;
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    if (is_tp[k]) sum += envelope[k];
  }
  return sum / static_cast<double>(gts.size());
}

std::vector<double> default_iou_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(static_cast<double>(50 + 5 * i) / 100.0);
  return t;
}

std::vector<GroundTruth> ground_truth(const Dataset& dataset) {
  std::vector<GroundTruth> gts;
  for (const auto& v : dataset.videos) {
    if (!v.meta.segments) throw ValidationError("video '" + v.meta.id + "' has no ground-truth segments");
    for (const auto& s : *v.meta.segments) gts.push_back({v.meta.id, s.label, s.start, s.end});
  }
  return gts;
}

EvalReport evaluate(const std::vector<Detection>& dets, const Dataset& dataset,
                    const std::vector<double>& iou_thresholds, int workers) {
  if (iou_thresholds.empty()) throw ValidationError("evaluate needs at least one IoU threshold");
  const auto gts = ground_truth(dataset);
  std::set<std::string> ids;
  for (const auto& v : dataset.videos) ids.insert(v.meta.id);
  for (const auto& d : dets) {
    if (!ids.count(d.video_id)) throw ValidationError("detection for unknown video '" + d.video_id + "'");
    if (d.label < 0 || d.label >= dataset.num_classes) {
      throw ValidationError("detection class " + std::to_string(d.label) + " out of range");
    }
    if (!(d.start < d.end) || !std::isfinite(d.score)) {
      throw ValidationError("degenerate detection in video '" + d.video_id + "'");
    }
  }

  EvalReport rep;
  rep.iou_thresholds = iou_thresholds;
  rep.num_detections = dets.size();
  rep.num_ground_truth = gts.size();
  std::vector<std::vector<Detection>> dets_by_class(dataset.num_classes);
  std::vector<std::vector<GroundTruth>> gts_by_class(dataset.num_classes);
  for (const auto& d : dets) dets_by_class[d.label].push_back(d);
  for (const auto& g : gts) gts_by_class[g.label].push_back(g);
  for (int c = 0; c < dataset.num_classes; ++c) {
    if (!gts_by_class[c].empty()) rep.classes.push_back(c);
  }

  const std::size_t nt = iou_thresholds.size();
  const std::size_t nc = rep.classes.size();
  const auto aps = parallel_map(nt * nc, workers, [&](std::size_t job) {
    const int c = rep.classes[job % nc];
    return ap_at_iou(dets_by_class[c], gts_by_class[c], iou_thresholds[job / nc]);
  });

  double total = 0.0;
  for (std::size_t t = 0; t < nt; ++t) {
    double sum = 0.0;
    for (std::size_t k = 0; k < nc; ++k) {
      rep.per_class_ap[{rep.classes[k], t}] = aps[t * nc + k];
      sum += aps[t * nc + k];
    }
    const double m = nc == 0 ? 0.0 : sum / static_cast<double>(nc);
    rep.map_at_iou.push_back(m);
    total += m;
  }
  rep.average_map = total / static_cast<double>(nt);
  return rep;
}

std::string report_to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["iou_thresholds"] = report.iou_thresholds;
  j["map_at_iou"] = report.map_at_iou;
  j["average_map"] = report.average_map;
  nlohmann::ordered_json per_class = nlohmann::ordered_json::object();
  for (int c : report.classes) {
    std::vector<double> row;
    for (std::size_t t = 0; t < report.iou_thresholds.size(); ++t) row.push_back(report.per_class_ap.at({c, t}));
    per_class[std::to_string(c)] = row;
  }
  j["per_class_ap"] = std::move(per_class);
  j["counts"] = {{"detections", report.num_detections}, {"ground_truth", report.num_ground_truth}};
  return j.dump(2) + "\n";
}

std::string format_table(const EvalReport& report, const std::string& row_label) {
  auto at = [&report](double thr) {
    for (std::size_t t = 0; t < report.iou_thresholds.size(); ++t) {
      if (std::abs(report.iou_thresholds[t] - thr) < 1e-9) return 100.0 * report.map_at_iou[t];
    }
    return std::nan("");
  };
  char buf[256];
  std::string out = "            mAP@IoU (%)\n";
  std::snprintf(buf, sizeof buf, "%-10s %7s %7s %7s %7s\n", "", "0.5", "0.75", "0.95", "Avg");
  out += buf;
  std::snprintf(buf, sizeof buf, "%-10s %7.2f %7.2f %7.2f %7.2f\n", row_label.c_str(), at(0.5), at(0.75), at(0.95),
                100.0 * report.average_map);
  out += buf;
  return out;
}

}  // namespace tscn
