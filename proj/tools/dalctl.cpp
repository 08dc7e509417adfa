// dalctl: command-line front end for training, sweeps and numerical checks.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 a numerical check
// failed, 3 a run failed.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dal/config.hpp"
#include "dal/error.hpp"
#include "dal/gradcheck.hpp"
#include "dal/runner.hpp"

namespace {

namespace fs = std::filesystem;
using namespace dal;

enum Exit { kOk = 0, kUsage = 1, kCheckFailed = 2, kRunFailed = 3 };

struct CommandLine {
  std::string config;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;
  bool verbose = false;
};

void add_common(CLI::App* sub, CommandLine& cl) {
  sub->add_option("-c,--config", cl.config, "key=value configuration file")->check(CLI::ExistingFile);
  sub->add_option("--set", cl.sets, "override one key, e.g. --set rho=1 (repeatable)");
  for (const auto& key : runner::config_keys()) {
    if (key == "mode") continue;
    sub->add_option("--" + key, cl.flags[key], "config key " + key);
  }
  sub->add_flag("-v,--verbose", cl.verbose, "print per-item details");
}

runner::ExperimentSpec build_spec(const CommandLine& cl, runner::Mode mode) {
  runner::ExperimentSpec spec = runner::default_spec();
  if (!cl.config.empty()) runner::apply_config_file(spec, cl.config);
  for (const auto& s : cl.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw FormatError("--set expects key=value, got '" + s + "'");
    runner::apply_setting(spec, s.substr(0, eq), s.substr(eq + 1));
  }
  for (const auto& [key, value] : cl.flags) {
    if (!value.empty()) runner::apply_setting(spec, key, value);
  }
  spec.mode = mode;
  spec.validate();
  return spec;
}

const runner::ScoreMetrics* find_score(const std::vector<runner::ScoreMetrics>& ms,
                                       eval::ScoreKind kind) {
  for (const auto& m : ms)
    if (m.kind == kind) return &m;
  return nullptr;
}

void print_records(const std::vector<runner::RunRecord>& records) {
  std::printf("%-6s %-7s %-9s", "seed", "status", "id_acc");
  std::printf(" %-22s %-22s %-22s\n", "score", "real fpr95/auroc", "aux fpr95/auroc");
  for (const auto& r : records) {
    if (!r.ok()) {
      std::printf("%-6llu %-7s %s\n", static_cast<unsigned long long>(r.seed), "failed",
                  r.error.c_str());
      continue;
    }
    for (std::size_t k = 0; k < r.metrics.real.size(); ++k) {
      const auto& real = r.metrics.real[k];
      const auto* aux = find_score(r.metrics.aux, real.kind);
      std::printf("%-6llu %-7s %-9.4f %-22s %.4f/%.4f%9s %.4f/%.4f\n",
                  static_cast<unsigned long long>(r.seed), "ok", r.metrics.id_accuracy,
                  std::string(eval::score_name(real.kind)).c_str(), real.fpr95, real.auroc, "",
                  aux ? aux->fpr95 : 0.0, aux ? aux->auroc : 0.0);
    }
  }
}

int any_failed(const std::vector<runner::RunRecord>& records) {
  for (const auto& r : records)
    if (!r.ok()) return kRunFailed;
  return kOk;
}

int cmd_train(const CommandLine& cl, runner::Mode mode) {
  const auto spec = build_spec(cl, mode);
  const auto res = runner::run_experiment(spec);
  print_records(res.records);
  std::printf("run directory: %s\n", res.run_dir.string().c_str());
  return any_failed(res.records);
}

int cmd_sweep(const CommandLine& cl) {
  const auto spec = build_spec(cl, runner::Mode::kSweepRho);
  const auto res = runner::sweep_rho(spec);
  std::size_t failed = 0;
  for (const auto& r : res.records) failed += !r.ok();
  std::ifstream curve(res.curve_path);
  std::cout << curve.rdbuf();
  std::printf("curve: %s\n", res.curve_path.string().c_str());
  if (failed) std::printf("%zu of %zu runs diverged (nan rows)\n", failed, res.records.size());
  return kOk;
}

int cmd_duality(const CommandLine& cl) {
  const auto spec = build_spec(cl, runner::Mode::kDualityCheck);
  std::vector<ot::BallProblem> problems;
  if (!spec.instances.empty()) {
    problems = runner::load_ball_problems(spec.instances);
  } else {
    Rng rng(spec.seeds.front(), 0xd0a1);
    for (std::size_t i = 0; i < spec.random_instances; ++i)
      problems.push_back(runner::random_ball_problem(rng));
  }
  const auto rep = runner::duality_check(problems);
  if (cl.verbose) {
    for (std::size_t i = 0; i < rep.instances.size(); ++i) {
      const auto& d = rep.instances[i];
      std::printf("%4zu primal=%.12g dual=%.12g gamma=%.6g gap=%.3e\n", i, d.primal, d.dual,
                  d.gamma, d.gap);
    }
  }
  std::printf("%zu instances, max gap %.3e (tolerance %.0e): %s\n", rep.instances.size(),
              rep.max_gap, rep.tolerance, rep.passed() ? "pass" : "FAIL");
  return rep.passed() ? kOk : kCheckFailed;
}

int cmd_gradcheck(const CommandLine& cl) {
  const auto spec = build_spec(cl, runner::Mode::kGradCheck);
  const auto cases = gradcheck::standard_cases(spec.seeds.front());
  const auto rep = gradcheck::run(cases);
  std::cout << rep.format();
  return rep.passed() ? kOk : kCheckFailed;
}

int cmd_eval(const CommandLine& cl) {
  const auto spec = build_spec(cl, runner::Mode::kEvalOnly);
  const auto res = runner::eval_only(spec);
  print_records(res.records);
  std::printf("run directory: %s\n", res.run_dir.string().c_str());
  return kOk;
}

int cmd_gen(const CommandLine& cl) {
  const auto spec = build_spec(cl, runner::Mode::kTrainDal);
  for (const auto& p : runner::generate_data(spec)) std::printf("%s\n", p.string().c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributional-augmented OOD learning on synthetic 2-D scenes"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "dalctl 0.1.0");

  CommandLine cl;
  struct Sub {
    const char* name;
    const char* help;
  };
  const std::vector<Sub> subs = {
      {"train-dal", "train DAL on every seed"},
      {"train-oe", "train the outlier-exposure baseline on every seed"},
      {"train-erm", "train on ID data only"},
      {"sweep-rho", "train DAL over rho_grid x seeds and write curve.csv"},
      {"duality-check", "compare primal and dual worst-case values"},
      {"grad-check", "finite-difference check of every gradient"},
      {"eval-only", "evaluate a saved checkpoint"},
      {"gen-data", "write the synthetic datasets as CSV"},
  };
  std::map<std::string, CLI::App*> handles;
  for (const auto& s : subs) {
    auto* sub = app.add_subcommand(s.name, s.help);
    add_common(sub, cl);
    handles[s.name] = sub;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*handles["train-dal"]) return cmd_train(cl, runner::Mode::kTrainDal);
    if (*handles["train-oe"]) return cmd_train(cl, runner::Mode::kTrainOe);
    if (*handles["train-erm"]) return cmd_train(cl, runner::Mode::kTrainErm);
    if (*handles["sweep-rho"]) return cmd_sweep(cl);
    if (*handles["duality-check"]) return cmd_duality(cl);
    if (*handles["grad-check"]) return cmd_gradcheck(cl);
    if (*handles["eval-only"]) return cmd_eval(cl);
    if (*handles["gen-data"]) return cmd_gen(cl);
  } catch (const FormatError& e) {
    std::fprintf(stderr, "dalctl: %s\n", e.what());
    return kUsage;
  } catch (const InvalidArgument& e) {
    std::fprintf(stderr, "dalctl: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "dalctl: run failed: %s\n", e.what());
    return kRunFailed;
  }
  return kUsage;
}
