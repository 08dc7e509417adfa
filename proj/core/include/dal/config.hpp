#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dal/eval.hpp"
#include "dal/model.hpp"
#include "dal/synthdata.hpp"
#include "dal/trainer.hpp"

namespace dal::runner {

inline constexpr int kConfigSchemaVersion = 1;

enum class Mode { kTrainDal, kTrainOe, kTrainErm, kSweepRho, kDualityCheck, kGradCheck, kEvalOnly };

std::string_view mode_name(Mode m);
std::optional<Mode> parse_mode(std::string_view name);

/// Everything one invocation needs. Per-run seeds override both the
/// training seed and the scene seed.
struct ExperimentSpec {
  Mode mode = Mode::kTrainDal;
  train::DalConfig dal;
  synth::SceneConfig scene;
  model::Architecture arch;
  std::vector<std::uint64_t> seeds{0};
  std::vector<eval::ScoreKind> scores{eval::ScoreKind::kMsp, eval::ScoreKind::kFreeEnergy,
                                      eval::ScoreKind::kMaxLogit};
  std::filesystem::path output_dir = "runs";
  std::size_t workers = 1;

  std::vector<double> rho_grid{0.01, 0.1, 1.0, 10.0, 100.0};
  std::size_t discrepancy_k = 64;
  std::size_t discrepancy_repeats = 10;

  // eval-only
  std::filesystem::path checkpoint;
  train::Method eval_method = train::Method::kDal;

  // duality-check
  std::filesystem::path instances;
  std::size_t random_instances = 100;

  /// Mode-specific and range checks; throws InvalidArgument.
  void validate() const;
};

/// The configuration defaults used when no file or flag overrides a key.
ExperimentSpec default_spec();

/// Applies one `key = value` setting. Unknown keys and unparsable values
/// throw FormatError.
void apply_setting(ExperimentSpec& spec, std::string_view key, std::string_view value);

/// Parses a key=value file. '#' starts a comment; blank lines are skipped.
/// `schema_version`, when present, must equal kConfigSchemaVersion.
void apply_config(ExperimentSpec& spec, std::istream& in);
void apply_config_file(ExperimentSpec& spec, const std::filesystem::path& path);

/// Full key=value dump in a fixed key order; parsing it reproduces `spec`.
std::string canonical_config(const ExperimentSpec& spec);
/// 16 hex digits of FNV-1a over the canonical config.
std::string spec_hash(const ExperimentSpec& spec);

/// Keys accepted by apply_setting, in canonical order.
const std::vector<std::string>& config_keys();

}  // namespace dal::runner
