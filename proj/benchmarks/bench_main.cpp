#include <benchmark/benchmark.h>

#include "dal/eval.hpp"
#include "dal/model.hpp"
#include "dal/rng.hpp"
#include "dal/runner.hpp"
#include "dal/trainer.hpp"
#include "dal/transport.hpp"

using namespace dal;

namespace {

ot::DiscreteDistribution cloud(Rng& rng, std::size_t n) {
  std::vector<ot::Point> pts;
  for (std::size_t i = 0; i < n; ++i) pts.push_back({rng.uniform(-5, 5), rng.uniform(-5, 5)});
  return ot::DiscreteDistribution::uniform(std::move(pts));
}

num::Tensor randn(std::size_t n, std::size_t d, Rng& rng) {
  num::Tensor t({n, d});
  for (auto& v : t.storage()) v = rng.normal();
  return t;
}

void BM_Wasserstein1(benchmark::State& state) {
  Rng rng(1);
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = cloud(rng, n), b = cloud(rng, n);
  for (auto _ : state) benchmark::DoNotOptimize(ot::wasserstein1(a, b).value);
}
BENCHMARK(BM_Wasserstein1)->Arg(8)->Arg(32)->Arg(64);

void BM_BallPrimal(benchmark::State& state) {
  Rng rng(2);
  std::vector<ot::BallProblem> problems;
  for (int i = 0; i < 64; ++i) problems.push_back(runner::random_ball_problem(rng));
  std::size_t k = 0;
  for (auto _ : state) benchmark::DoNotOptimize(ot::primal_worst_case(problems[k++ % 64]).value);
}
BENCHMARK(BM_BallPrimal);

void BM_BallDual(benchmark::State& state) {
  Rng rng(2);
  std::vector<ot::BallProblem> problems;
  for (int i = 0; i < 64; ++i) problems.push_back(runner::random_ball_problem(rng));
  std::size_t k = 0;
  for (auto _ : state) benchmark::DoNotOptimize(ot::dual_infimum(problems[k++ % 64]).value);
}
BENCHMARK(BM_BallDual);

void BM_DalStep(benchmark::State& state) {
  Rng rng(3);
  auto params = model::init_params({}, 0);
  const auto x_id = randn(128, 2, rng), x_ood = randn(256, 2, rng);
  std::vector<int> y(128);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<int>(i % 4);
  train::DalConfig cfg;
  cfg.num_search = static_cast<std::size_t>(state.range(0));
  train::DualState dual;
  for (auto _ : state) {
    auto p = params;
    benchmark::DoNotOptimize(train::dal_step(p, dual, x_id, y, x_ood, cfg, 0.01, rng).gamma);
  }
}
BENCHMARK(BM_DalStep)->Arg(0)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_Auroc(benchmark::State& state) {
  Rng rng(4);
  eval::ScoreSet s;
  const auto n = static_cast<std::size_t>(state.range(0));
  for (std::size_t i = 0; i < n; ++i) {
    s.id_scores.push_back(rng.normal() + 1.0);
    s.ood_scores.push_back(rng.normal());
  }
  for (auto _ : state) benchmark::DoNotOptimize(eval::auroc(s));
}
BENCHMARK(BM_Auroc)->Arg(1000)->Arg(100000);

}  // namespace

BENCHMARK_MAIN();
