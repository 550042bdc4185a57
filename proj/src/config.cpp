#include "tscn/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <json.hpp>

#include "tscn/errors.hpp"

namespace tscn {

using nlohmann::json;

namespace {

using Handlers = std::map<std::string, std::function<void(const json&)>>;

void apply_section(const json& j, const std::string& section, const Handlers& handlers) {
  if (!j.is_object()) throw ValidationError("config section '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    const auto it = handlers.find(key);
    if (it == handlers.end()) {
      throw ValidationError("unknown config key '" + (section.empty() ? key : section + "." + key) + "'");
    }
    try {
      it->second(value);
    } catch (const json::exception& e) {
      throw ValidationError("bad value for config key '" + key + "': " + e.what());
    }
  }
}

template <typename T>
std::function<void(const json&)> set(T& target) {
  return [&target](const json& v) { target = v.get<T>(); };
}

std::function<void(const json&)> set_range(IntRange& r) {
  return [&r](const json& v) {
    const auto pair = v.get<std::vector<int>>();
    if (pair.size() != 2) throw ValidationError("integer ranges are written as [lo, hi]");
    r = {pair[0], pair[1]};
  };
}

}  // namespace

void RunConfig::resolve() {
  train.seed = seed;
  synth.seed = seed;
  train.workers = workers;
}

void RunConfig::validate() const {
  train.validate();
  localize.validate();
  synth.validate();
  if (workers < 1) throw ValidationError("workers must be at least 1");
}

RunConfig run_config_from_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config does not parse: ") + e.what());
  }
  RunConfig cfg;
  TrainConfig& t = cfg.train;
  LocalizeConfig& l = cfg.localize;
  SynthConfig& s = cfg.synth;
  PathConfig& p = cfg.paths;

  Handlers model{{"embed_dim", set(t.embed_dim)},
                 {"activation", [&t](const json& v) { t.activation = activation_from_string(v.get<std::string>()); }}};
  Handlers train{{"lr", set(t.adamw.lr)},
                 {"beta1", set(t.adamw.beta1)},
                 {"beta2", set(t.adamw.beta2)},
                 {"eps", set(t.adamw.eps)},
                 {"weight_decay", set(t.adamw.weight_decay)},
                 {"epochs_per_iteration", set(t.epochs_per_iteration)},
                 {"refinement_iterations", set(t.refinement_iterations)},
                 {"ema_weight", set(t.ema_weight)}};
  Handlers loss{{"lambda1", set(t.loss_weights.lambda1)}, {"lambda2", set(t.loss_weights.lambda2)},
                {"lambda3", set(t.loss_weights.lambda3)}, {"lambda4", set(t.loss_weights.lambda4)},
                {"lambda5", set(t.loss_weights.lambda5)}, {"k", set(t.loss_weights.k)},
                {"m", set(t.loss_weights.m)}};
  Handlers fusion{{"beta", set(t.fusion.beta)}, {"theta", set(t.fusion.theta)}};
  Handlers localize{{"upsample_factor", set(l.upsample_factor)}, {"top_k_classes", set(l.top_k_classes)},
                    {"threshold_start", set(l.threshold_start)}, {"threshold_end", set(l.threshold_end)},
                    {"threshold_step", set(l.threshold_step)},   {"nms_iou", set(l.nms_iou)},
                    {"beta", set(l.beta)}};
  Handlers synth{{"num_train", set(s.num_train)},
                 {"num_val", set(s.num_val)},
                 {"num_classes", set(s.num_classes)},
                 {"feature_dim", set(s.feature_dim)},
                 {"T_range", set_range(s.T_range)},
                 {"segments_per_video", set_range(s.segments_per_video)},
                 {"segment_length", set_range(s.segment_length)},
                 {"background_noise_sigma", set(s.background_noise_sigma)},
                 {"class_separation", set(s.class_separation)},
                 {"second_class_prob", set(s.second_class_prob)},
                 {"snippet_seconds", set(s.snippet_seconds)}};
  Handlers paths{{"manifest", set(p.manifest)},     {"data", set(p.data)},
                 {"out", set(p.out)},               {"checkpoint", set(p.checkpoint)},
                 {"detections", set(p.detections)}, {"label_map", set(p.label_map)}};

  auto section = [](const std::string& name, Handlers& h) {
    return [name, &h](const json& v) { apply_section(v, name, h); };
  };
  Handlers top{{"model", section("model", model)},
               {"train", section("train", train)},
               {"loss", section("loss", loss)},
               {"fusion", section("fusion", fusion)},
               {"localize", section("localize", localize)},
               {"synth", section("synth", synth)},
               {"paths", section("paths", paths)},
               {"seed", set(cfg.seed)},
               {"workers", set(cfg.workers)}};
  apply_section(root, "", top);
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return run_config_from_json(ss.str());
}

std::string run_config_to_json(const RunConfig& cfg) {
  const TrainConfig& t = cfg.train;
  const LocalizeConfig& l = cfg.localize;
  const SynthConfig& s = cfg.synth;
  nlohmann::ordered_json j;
  j["seed"] = cfg.seed;
  j["workers"] = cfg.workers;
  j["model"] = {{"embed_dim", t.embed_dim}, {"activation", to_string(t.activation)}};
  j["train"] = {{"lr", t.adamw.lr},
                {"beta1", t.adamw.beta1},
                {"beta2", t.adamw.beta2},
                {"eps", t.adamw.eps},
                {"weight_decay", t.adamw.weight_decay},
                {"epochs_per_iteration", t.epochs_per_iteration},
                {"refinement_iterations", t.refinement_iterations},
                {"ema_weight", t.ema_weight}};
  j["loss"] = {{"lambda1", t.loss_weights.lambda1}, {"lambda2", t.loss_weights.lambda2},
               {"lambda3", t.loss_weights.lambda3}, {"lambda4", t.loss_weights.lambda4},
               {"lambda5", t.loss_weights.lambda5}, {"k", t.loss_weights.k},
               {"m", t.loss_weights.m}};
  j["fusion"] = {{"beta", t.fusion.beta}, {"theta", t.fusion.theta}};
  j["localize"] = {{"upsample_factor", l.upsample_factor}, {"top_k_classes", l.top_k_classes},
                   {"threshold_start", l.threshold_start}, {"threshold_end", l.threshold_end},
                   {"threshold_step", l.threshold_step},   {"nms_iou", l.nms_iou},
                   {"beta", l.beta}};
  j["synth"] = {{"num_train", s.num_train},
                {"num_val", s.num_val},
                {"num_classes", s.num_classes},
                {"feature_dim", s.feature_dim},
                {"T_range", {s.T_range.lo, s.T_range.hi}},
                {"segments_per_video", {s.segments_per_video.lo, s.segments_per_video.hi}},
                {"segment_length", {s.segment_length.lo, s.segment_length.hi}},
                {"background_noise_sigma", s.background_noise_sigma},
                {"class_separation", s.class_separation},
                {"second_class_prob", s.second_class_prob},
                {"snippet_seconds", s.snippet_seconds}};
  const PathConfig& p = cfg.paths;
  j["paths"] = {{"manifest", p.manifest},     {"data", p.data},
                {"out", p.out},               {"checkpoint", p.checkpoint},
                {"detections", p.detections}, {"label_map", p.label_map}};
  return j.dump(2) + "\n";
}

}  // namespace tscn
