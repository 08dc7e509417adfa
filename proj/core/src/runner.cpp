#include "dal/runner.hpp"

#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "dal/checkpoint.hpp"
#include "dal/error.hpp"

namespace dal::runner {

namespace fs = std::filesystem;
using json = nlohmann::json;

Scene make_scene(const synth::SceneConfig& cfg) {
  cfg.validate();
  Scene s;
  s.id_train = synth::sample_id(cfg, synth::Split::kTrain);
  s.id_test = synth::sample_id(cfg, synth::Split::kTest);
  s.aux_train = synth::sample_aux_ood(cfg, synth::Split::kTrain);
  s.aux_test = synth::sample_aux_ood(cfg, synth::Split::kTest);
  s.real = synth::sample_real_ood(cfg);
  return s;
}

train::TrainingData training_data(const Scene& s) {
  return {synth::to_tensor(std::span<const synth::LabeledSample>(s.id_train)),
          synth::labels(s.id_train),
          synth::to_tensor(std::span<const synth::UnlabeledSample>(s.aux_train))};
}

namespace {

std::size_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < row.size(); ++k)
    if (row[k] > row[best]) best = k;
  return best;
}

ScoreMetrics metrics_for(eval::ScoreKind kind, const num::Tensor& id_logits,
                         const num::Tensor& ood_logits) {
  const eval::ScoreSet set{eval::score(kind, id_logits), eval::score(kind, ood_logits), kind};
  return {kind, eval::fpr_at_tpr(set), eval::auroc(set), eval::fnr_at_tpr(set)};
}

void check_unit(double v, const char* what) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw NumericError(std::string(what) + " outside [0, 1]: " + std::to_string(v));
  }
}

}  // namespace

Evaluation evaluate(const model::ModelParams& params, const Scene& scene,
                    const std::vector<eval::ScoreKind>& scores) {
  using synth::LabeledSample, synth::UnlabeledSample;
  const num::Tensor id_logits =
      model::predict(params, synth::to_tensor(std::span<const LabeledSample>(scene.id_test)));
  const num::Tensor aux_logits =
      model::predict(params, synth::to_tensor(std::span<const UnlabeledSample>(scene.aux_test)));
  const num::Tensor real_logits =
      model::predict(params, synth::to_tensor(std::span<const UnlabeledSample>(scene.real)));

  Evaluation ev;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scene.id_test.size(); ++i) {
    correct += static_cast<int>(argmax(id_logits.row(i))) == scene.id_test[i].label;
  }
  ev.id_accuracy = static_cast<double>(correct) / static_cast<double>(scene.id_test.size());
  for (auto kind : scores) {
    ev.aux.push_back(metrics_for(kind, id_logits, aux_logits));
    ev.real.push_back(metrics_for(kind, id_logits, real_logits));
  }
  return ev;
}

void RunRecord::check_ranges() const {
  if (!ok()) return;
  check_unit(metrics.id_accuracy, "ID accuracy");
  for (const auto* split : {&metrics.aux, &metrics.real}) {
    for (const auto& m : *split) {
      check_unit(m.fpr95, "FPR95");
      check_unit(m.auroc, "AUROC");
      check_unit(m.fnr95, "FNR95");
    }
  }
  if (!std::isfinite(discrepancy_mean) || discrepancy_mean < 0.0) {
    throw NumericError("discrepancy estimate is not a nonnegative number");
  }
}

namespace {

json metrics_json(const std::vector<ScoreMetrics>& ms) {
  json out = json::object();
  for (const auto& m : ms) {
    out[std::string(eval::score_name(m.kind))] = {
        {"fpr95", m.fpr95}, {"auroc", m.auroc}, {"fnr95", m.fnr95}};
  }
  return out;
}

std::vector<ScoreMetrics> metrics_from(const json& j) {
  std::vector<ScoreMetrics> out;
  for (const auto& [name, v] : j.items()) {
    auto kind = eval::parse_score(name);
    if (!kind) throw FormatError("unknown score '" + name + "' in run record");
    out.push_back({*kind, v.at("fpr95").get<double>(), v.at("auroc").get<double>(),
                   v.at("fnr95").get<double>()});
  }
  return out;
}

// Shortest text that parses back to the same double.
std::string shortest(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::out | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

// Scores are kept in the order the spec lists them; json objects sort keys.
void reorder(std::vector<ScoreMetrics>& ms) {
  std::stable_sort(ms.begin(), ms.end(), [](const ScoreMetrics& a, const ScoreMetrics& b) {
    return static_cast<int>(a.kind) < static_cast<int>(b.kind);
  });
}

}  // namespace

std::string record_to_json(const RunRecord& r) {
  json j = {{"spec_hash", r.spec_hash},
            {"method", r.method},
            {"seed", r.seed},
            {"rho", r.rho},
            {"status", r.status},
            {"error", r.error},
            {"wall_seconds", r.wall_seconds},
            {"diagnostics_path", r.diagnostics_path},
            {"checkpoint_path", r.checkpoint_path}};
  if (r.ok()) {
    j["id_accuracy"] = r.metrics.id_accuracy;
    j["aux_ood"] = metrics_json(r.metrics.aux);
    j["real_ood"] = metrics_json(r.metrics.real);
    j["discrepancy"] = {{"mean", r.discrepancy_mean}, {"std", r.discrepancy_std}};
  }
  return j.dump(2) + "\n";
}

RunRecord record_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    RunRecord r;
    r.spec_hash = j.at("spec_hash").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.rho = j.at("rho").get<double>();
    r.status = j.at("status").get<std::string>();
    r.error = j.at("error").get<std::string>();
    r.wall_seconds = j.at("wall_seconds").get<double>();
    r.diagnostics_path = j.at("diagnostics_path").get<std::string>();
    r.checkpoint_path = j.at("checkpoint_path").get<std::string>();
    if (r.ok()) {
      r.metrics.id_accuracy = j.at("id_accuracy").get<double>();
      r.metrics.aux = metrics_from(j.at("aux_ood"));
      r.metrics.real = metrics_from(j.at("real_ood"));
      reorder(r.metrics.aux);
      reorder(r.metrics.real);
      r.discrepancy_mean = j.at("discrepancy").at("mean").get<double>();
      r.discrepancy_std = j.at("discrepancy").at("std").get<double>();
    }
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed run record: ") + e.what());
  }
}

RunRecord read_record(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open run record " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return record_from_json(ss.str());
}

fs::path fresh_directory(const fs::path& root, const std::string& stem) {
  fs::create_directories(root);
  for (std::size_t i = 0;; ++i) {
    fs::path p = root / (i == 0 ? stem : stem + "-" + std::to_string(i));
    if (fs::create_directory(p)) return p;
  }
}

train::Method method_for(Mode m) {
  switch (m) {
    case Mode::kTrainOe: return train::Method::kOe;
    case Mode::kTrainErm: return train::Method::kErm;
    default: return train::Method::kDal;
  }
}

namespace {

std::string run_stem(const ExperimentSpec& spec) {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
  return std::string(mode_name(spec.mode)) + "-" + spec_hash(spec) + "-" + stamp;
}

fs::path start_run(const ExperimentSpec& spec) {
  spec.validate();
  const fs::path dir = fresh_directory(spec.output_dir, run_stem(spec));
  write_text(dir / "config.txt", canonical_config(spec));
  return dir;
}

synth::SceneConfig scene_for(const ExperimentSpec& spec, std::uint64_t seed) {
  synth::SceneConfig sc = spec.scene;
  sc.seed = seed;
  return sc;
}

// Runs jobs 0..n-1 on up to `workers` threads. Each job owns its output.
template <class F>
void parallel_for(std::size_t n, std::size_t workers, F&& job) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

void write_diagnostics(const fs::path& path, const train::TrainDiagnostics& d) {
  std::ofstream out(path, std::ios::out | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  d.write_csv(out);
}

}  // namespace

RunRecord run_single(const ExperimentSpec& spec, train::Method method, std::uint64_t seed,
                     const fs::path& dir) {
  const auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(dir);
  RunRecord rec;
  rec.spec_hash = spec_hash(spec);
  rec.method = train::method_name(method);
  rec.seed = seed;
  rec.rho = spec.dal.rho;
  rec.diagnostics_path = (dir / "diagnostics.csv").string();

  train::DalConfig cfg = spec.dal;
  cfg.seed = seed;
  const Scene scene = make_scene(scene_for(spec, seed));
  try {
    train::TrainResult res = train::train(method, cfg, spec.arch, training_data(scene));
    write_diagnostics(rec.diagnostics_path, res.diagnostics);
    rec.checkpoint_path = (dir / "checkpoint.json").string();
    model::save_checkpoint(res.params, rec.checkpoint_path);
    rec.metrics = evaluate(res.params, scene, spec.scores);
    const auto disc = synth::estimate_discrepancy(
        scene.aux_test, scene.real, spec.discrepancy_k, spec.discrepancy_repeats, seed);
    rec.discrepancy_mean = disc.mean;
    rec.discrepancy_std = disc.stddev;
    rec.check_ranges();
  } catch (const train::TrainingFailure& e) {
    write_diagnostics(rec.diagnostics_path, e.partial());
    rec.status = "failed";
    rec.error = e.what();
  } catch (const NumericError& e) {
    rec.status = "failed";
    rec.error = e.what();
  }
  if (!rec.ok()) rec.metrics = {};
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_text(dir / "record.json", record_to_json(rec));
  return rec;
}

ExperimentResult run_experiment(const ExperimentSpec& spec) {
  if (spec.mode != Mode::kTrainDal && spec.mode != Mode::kTrainOe && spec.mode != Mode::kTrainErm) {
    throw InvalidArgument("run_experiment expects a training mode");
  }
  ExperimentResult out;
  out.run_dir = start_run(spec);
  const train::Method method = method_for(spec.mode);
  auto seed_dir = [&](std::size_t i) { return out.run_dir / ("seed-" + std::to_string(spec.seeds[i])); };
  parallel_for(spec.seeds.size(), spec.workers,
               [&](std::size_t i) { run_single(spec, method, spec.seeds[i], seed_dir(i)); });
  for (std::size_t i = 0; i < spec.seeds.size(); ++i) {
    out.records.push_back(read_record(seed_dir(i) / "record.json"));
  }
  return out;
}

SweepResult sweep_rho(const ExperimentSpec& spec) {
  if (spec.rho_grid.empty()) throw InvalidArgument("sweep-rho needs a non-empty rho_grid");
  SweepResult out;
  out.run_dir = start_run(spec);
  const std::size_t n_seeds = spec.seeds.size();
  const std::size_t jobs = spec.rho_grid.size() * n_seeds;
  auto job_dir = [&](std::size_t j) {
    char rho[40];
    std::snprintf(rho, sizeof rho, "rho-%zu-%g", j / n_seeds, spec.rho_grid[j / n_seeds]);
    return out.run_dir / rho / ("seed-" + std::to_string(spec.seeds[j % n_seeds]));
  };
  parallel_for(jobs, spec.workers, [&](std::size_t j) {
    ExperimentSpec s = spec;
    s.dal.rho = spec.rho_grid[j / n_seeds];
    run_single(s, train::Method::kDal, spec.seeds[j % n_seeds], job_dir(j));
  });

  std::ostringstream csv;
  csv << kCurveHeader << '\n';
  const auto msp_index = [](const std::vector<ScoreMetrics>& ms) -> const ScoreMetrics* {
    for (const auto& m : ms)
      if (m.kind == eval::ScoreKind::kMsp) return &m;
    return nullptr;
  };
  for (std::size_t j = 0; j < jobs; ++j) {
    RunRecord r = read_record(job_dir(j) / "record.json");
    csv << shortest(spec.rho_grid[j / n_seeds]) << ',' << r.seed << ',';
    const ScoreMetrics* aux = msp_index(r.metrics.aux);
    const ScoreMetrics* real = msp_index(r.metrics.real);
    if (r.ok() && aux && real) {
      csv << shortest(aux->fpr95) << ',' << shortest(real->fpr95) << ',' << shortest(real->auroc)
          << '\n';
    } else {
      csv << "nan,nan,nan\n";
    }
    out.records.push_back(std::move(r));
  }
  out.curve_path = out.run_dir / "curve.csv";
  write_text(out.curve_path, csv.str());
  return out;
}

namespace {

ot::BallProblem draw_ball_problem(Rng& rng) {
  const std::size_t dim = 1 + rng.below(3);
  const std::size_t n = 1 + rng.below(6);
  const std::size_t m = 1 + rng.below(6);
  auto point = [&] {
    ot::Point p(dim);
    // Integer-valued coordinates produce ties in costs and losses, which is
    // where degenerate pivots live.
    for (auto& v : p) v = rng.uniform() < 0.3 ? static_cast<double>(rng.below(4)) : rng.uniform(-2.0, 2.0);
    return p;
  };
  std::vector<ot::Point> support(n);
  std::vector<double> weights(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    support[i] = point();
    weights[i] = rng.uniform(0.05, 1.0);
    total += weights[i];
  }
  for (auto& w : weights) w /= total;
  // Exact renormalization so the weights sum to 1 within validation tolerance.
  double rest = 1.0;
  for (std::size_t i = 0; i + 1 < n; ++i) rest -= weights[i];
  weights.back() = rest;

  ot::BallProblem p;
  p.center = ot::DiscreteDistribution(std::move(support), std::move(weights));
  p.radius = rng.uniform() < 0.1 ? 0.0 : rng.uniform(0.0, 3.0);
  for (std::size_t j = 0; j < m; ++j) {
    p.targets.push_back(point());
    p.losses.push_back(rng.uniform() < 0.2 ? static_cast<double>(rng.below(6)) : rng.uniform(0.0, 5.0));
  }
  // With probability one half a target coincides with a center atom, which
  // keeps the zero-radius problem feasible.
  if (rng.uniform() < 0.5) p.targets[rng.below(m)] = p.center.support()[rng.below(n)];
  return p;
}

}  // namespace

ot::BallProblem random_ball_problem(Rng& rng) {
  // Rejection step: keep only problems where some plan fits the budget.
  for (;;) {
    ot::BallProblem p = draw_ball_problem(rng);
    const ot::Matrix c = p.cost_matrix();
    double cheapest = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
      cheapest += p.center.weights()[i] * *std::min_element(c[i].begin(), c[i].end());
    }
    if (cheapest <= p.radius) return p;
  }
}

std::vector<ot::BallProblem> load_ball_problems(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open instance file " + path.string());
  try {
    const json j = json::parse(in);
    std::vector<ot::BallProblem> out;
    for (const auto& inst : j.at("instances")) {
      ot::BallProblem p;
      p.center = ot::DiscreteDistribution(
          inst.at("center").at("support").get<std::vector<ot::Point>>(),
          inst.at("center").at("weights").get<std::vector<double>>());
      p.radius = inst.at("radius").get<double>();
      p.targets = inst.at("targets").get<std::vector<ot::Point>>();
      p.losses = inst.at("losses").get<std::vector<double>>();
      if (inst.contains("cost")) p.cost.matrix = inst.at("cost").get<ot::Matrix>();
      p.validate();
      out.push_back(std::move(p));
    }
    return out;
  } catch (const json::exception& e) {
    throw FormatError("malformed instance file " + path.string() + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError("invalid instance in " + path.string() + ": " + e.what());
  }
}

DualityReport duality_check(std::span<const ot::BallProblem> problems, double tolerance) {
  DualityReport rep;
  rep.tolerance = tolerance;
  for (const auto& p : problems) {
    DualityInstance d;
    d.primal = ot::primal_worst_case(p).value;
    const auto dual = ot::dual_infimum(p);
    d.dual = dual.value;
    d.gamma = dual.gamma;
    d.gap = std::abs(d.primal - d.dual);
    rep.max_gap = std::max(rep.max_gap, d.gap);
    rep.instances.push_back(d);
  }
  return rep;
}

ExperimentResult eval_only(const ExperimentSpec& spec) {
  ExperimentSpec s = spec;
  s.mode = Mode::kEvalOnly;
  ExperimentResult out;
  out.run_dir = start_run(s);
  const model::ModelParams params = model::load_checkpoint(spec.checkpoint);
  if (!(params.arch == spec.arch)) {
    throw InvalidArgument("checkpoint architecture does not match the configured one");
  }
  for (auto seed : spec.seeds) {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path dir = out.run_dir / ("seed-" + std::to_string(seed));
    fs::create_directories(dir);
    const Scene scene = make_scene(scene_for(spec, seed));
    RunRecord rec;
    rec.spec_hash = spec_hash(s);
    rec.method = train::method_name(spec.eval_method);
    rec.seed = seed;
    rec.rho = spec.dal.rho;
    rec.checkpoint_path = spec.checkpoint.string();
    rec.metrics = evaluate(params, scene, spec.scores);
    const auto disc = synth::estimate_discrepancy(scene.aux_test, scene.real, spec.discrepancy_k,
                                                  spec.discrepancy_repeats, seed);
    rec.discrepancy_mean = disc.mean;
    rec.discrepancy_std = disc.stddev;
    rec.check_ranges();
    for (auto kind : spec.scores) {
      using synth::LabeledSample, synth::UnlabeledSample;
      const auto id_logits =
          model::predict(params, synth::to_tensor(std::span<const LabeledSample>(scene.id_test)));
      const auto real_logits =
          model::predict(params, synth::to_tensor(std::span<const UnlabeledSample>(scene.real)));
      std::ofstream csv(dir / ("scores-real-" + std::string(eval::score_name(kind)) + ".csv"));
      eval::write_scores_csv(csv, {eval::score(kind, id_logits), eval::score(kind, real_logits), kind});
    }
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_text(dir / "record.json", record_to_json(rec));
    out.records.push_back(read_record(dir / "record.json"));
  }
  return out;
}

std::vector<fs::path> generate_data(const ExperimentSpec& spec) {
  spec.validate();
  fs::create_directories(spec.output_dir);
  std::vector<fs::path> out;
  for (auto seed : spec.seeds) {
    const synth::SceneConfig sc = scene_for(spec, seed);
    const Scene s = make_scene(sc);
    const fs::path dir = fresh_directory(spec.output_dir, "scene-" + spec_hash(spec) + "-seed-" +
                                                              std::to_string(seed));
    const fs::path path = dir / "dataset.csv";
    std::ofstream csv(path);
    if (!csv) throw Error("cannot write " + path.string());
    csv << synth::kDatasetHeader << '\n';
    synth::write_csv_rows(csv, s.id_train, synth::Split::kTrain);
    synth::write_csv_rows(csv, s.id_test, synth::Split::kTest);
    synth::write_csv_rows(csv, s.aux_train, synth::Split::kTrain, "aux");
    synth::write_csv_rows(csv, s.aux_test, synth::Split::kTest, "aux");
    synth::write_csv_rows(csv, s.real, synth::Split::kTest, "real");
    out.push_back(path);
  }
  return out;
}

}  // namespace dal::runner
