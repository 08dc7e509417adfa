#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dal/config.hpp"
#include "dal/eval.hpp"
#include "dal/gradcheck.hpp"
#include "dal/model.hpp"
#include "dal/rng.hpp"
#include "dal/synthdata.hpp"
#include "dal/trainer.hpp"
#include "dal/transport.hpp"

namespace dal::runner {

/// Every split of one synthetic scene.
struct Scene {
  std::vector<synth::LabeledSample> id_train, id_test;
  std::vector<synth::UnlabeledSample> aux_train, aux_test, real;
};
Scene make_scene(const synth::SceneConfig& cfg);
train::TrainingData training_data(const Scene& s);

struct ScoreMetrics {
  eval::ScoreKind kind = eval::ScoreKind::kMsp;
  double fpr95 = 0.0;
  double auroc = 0.0;
  double fnr95 = 0.0;
  bool operator==(const ScoreMetrics&) const = default;
};

struct Evaluation {
  double id_accuracy = 0.0;
  std::vector<ScoreMetrics> aux;   // ID test vs auxiliary OOD test split
  std::vector<ScoreMetrics> real;  // ID test vs real OOD
  bool operator==(const Evaluation&) const = default;
};

Evaluation evaluate(const model::ModelParams& params, const Scene& scene,
                    const std::vector<eval::ScoreKind>& scores);

/// Result of one (method, seed, rho) training run.
struct RunRecord {
  std::string spec_hash;
  std::string method;
  std::uint64_t seed = 0;
  double rho = 0.0;
  std::string status = "ok";  // "ok" or "failed"
  std::string error;
  Evaluation metrics;
  double discrepancy_mean = 0.0;
  double discrepancy_std = 0.0;
  double wall_seconds = 0.0;
  std::string diagnostics_path;
  std::string checkpoint_path;

  bool ok() const { return status == "ok"; }
  /// Rates and AUROC in [0, 1], accuracy in [0, 1]; throws NumericError.
  void check_ranges() const;
};

std::string record_to_json(const RunRecord& r);
RunRecord record_from_json(const std::string& text);
RunRecord read_record(const std::filesystem::path& path);

/// Creates `<root>/<stem>` or, if taken, `<root>/<stem>-1`, `-2`, ...; the
/// returned directory did not exist before the call.
std::filesystem::path fresh_directory(const std::filesystem::path& root, const std::string& stem);

/// Trains one model and writes diagnostics.csv, checkpoint.json (on success)
/// and record.json into `dir`. Training failures are recorded, not thrown.
RunRecord run_single(const ExperimentSpec& spec, train::Method method, std::uint64_t seed,
                     const std::filesystem::path& dir);

struct ExperimentResult {
  std::filesystem::path run_dir;
  std::vector<RunRecord> records;  // seed order
};

/// Runs every seed of a train-dal / train-oe / train-erm spec on up to
/// `spec.workers` threads. Records are read back from disk after all runs
/// finish.
ExperimentResult run_experiment(const ExperimentSpec& spec);

inline constexpr const char* kCurveHeader = "rho,seed,fpr95_aux,fpr95_real,auroc_real";

struct SweepResult {
  std::filesystem::path run_dir;
  std::filesystem::path curve_path;
  std::vector<RunRecord> records;  // rho-major, then seed
};

/// Trains DAL for every (rho, seed) pair and writes curve.csv. FPR95 and
/// AUROC come from the MSP score; failed runs leave `nan` in their row.
SweepResult sweep_rho(const ExperimentSpec& spec);

struct DualityInstance {
  double primal = 0.0;
  double dual = 0.0;
  double gamma = 0.0;
  double gap = 0.0;
};

struct DualityReport {
  std::vector<DualityInstance> instances;
  double max_gap = 0.0;
  double tolerance = 1e-7;
  bool passed() const { return max_gap <= tolerance; }
};

/// Random ball problem: 1 to 6 center atoms and targets in up to 3
/// dimensions, losses in [0, 5], radius in [0, 3].
ot::BallProblem random_ball_problem(Rng& rng);

/// Loads problems from JSON: {"instances": [{"center": {"support": [[...]],
/// "weights": [...]}, "radius": r, "targets": [[...]], "losses": [...],
/// "cost": [[...]] (optional)}]}. Throws FormatError when malformed.
std::vector<ot::BallProblem> load_ball_problems(const std::filesystem::path& path);

DualityReport duality_check(std::span<const ot::BallProblem> problems, double tolerance = 1e-7);

/// Evaluates a saved checkpoint on the scene of every seed in `spec`.
ExperimentResult eval_only(const ExperimentSpec& spec);

/// Writes the dataset CSV of every seed; returns the file paths.
std::vector<std::filesystem::path> generate_data(const ExperimentSpec& spec);

train::Method method_for(Mode m);

}  // namespace dal::runner
