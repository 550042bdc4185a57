#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "tscn/dataio.hpp"
#include "tscn/localize.hpp"
#include "tscn/optim.hpp"

namespace tscn {

struct PathConfig {
  std::string manifest;
  std::string data;
  std::string out;
  std::string checkpoint;
  std::string detections;
  std::string label_map;
};

/// Everything a command-line run can be configured with. Defaults are the
/// published hyperparameters; `seed` and `workers` override the per-section
/// copies when a run is resolved.
struct RunConfig {
  TrainConfig train;
  LocalizeConfig localize;
  SynthConfig synth;
  PathConfig paths;
  std::uint64_t seed = 0;
  int workers = 1;

  void validate() const;
  /// Pushes seed/workers into the sections.
  void resolve();
};

/// Sections: model, train, loss, fusion, localize, synth, paths, plus the
/// top-level keys seed and workers. Missing keys keep their defaults; unknown
/// keys throw ValidationError.
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_to_json(const RunConfig& cfg);

}  // namespace tscn
