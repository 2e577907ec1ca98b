#pragma once

#include "depthfill/model.hpp"

#include <filesystem>

namespace depthfill {

/// Checkpoint format: a "DEPTHFILL-CKPT v1" magic line, one JSON header line
/// (model config, counters, tensor directory with name/shape/offset/dtype),
/// then a little-endian float32 blob. save -> load -> save is byte-exact and
/// a reloaded model reproduces forward outputs bitwise.
void save_checkpoint(const std::filesystem::path& path, const TrainState& state);
TrainState load_checkpoint(const std::filesystem::path& path);

}  // namespace depthfill
