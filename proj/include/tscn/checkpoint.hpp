#pragma once

#include <filesystem>

#include "tscn/optim.hpp"

namespace tscn {

/// Checkpoint file: one line of JSON header terminated by '\n', followed by
/// the RGB then flow parameter blobs as little-endian float64 in the
/// BaseModelParams layout. The header records per-stream dims, activation,
/// coefficient count and the refinement iteration (-1 for an ensemble).
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// "ckpt_iter{n}.bin", or "ckpt_ensemble.bin" for an ensemble.
std::string checkpoint_filename(const Checkpoint& ckpt);

}  // namespace tscn
