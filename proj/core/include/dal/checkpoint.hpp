#pragma once

#include <filesystem>
#include <string>

#include "dal/model.hpp"

namespace dal::model {

inline constexpr int kCheckpointFormatVersion = 1;

/// JSON checkpoint: architecture descriptor plus row-major per-layer arrays.
/// Doubles are written in shortest round-trip form, so load(save(p)) == p.
std::string checkpoint_to_json(const ModelParams& params);
ModelParams checkpoint_from_json(const std::string& text);

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace dal::model
