#include "dal/synthdata.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <ostream>

#include "dal/error.hpp"
#include "dal/rng.hpp"
#include "dal/transport.hpp"

namespace dal::synth {

namespace {

constexpr std::uint64_t kIdTrainStream = 0x1d01;
constexpr std::uint64_t kIdTestStream = 0x1d02;
constexpr std::uint64_t kAuxTrainStream = 0xa001;
constexpr std::uint64_t kAuxTestStream = 0xa002;
constexpr std::uint64_t kRealStream = 0x3ea1;

std::vector<UnlabeledSample> annulus(std::size_t n, double r_lo, double r_hi, double shift,
                                     Rng rng) {
  std::vector<UnlabeledSample> out(n);
  const double lo2 = r_lo * r_lo, hi2 = r_hi * r_hi;
  for (auto& s : out) {
    const double r = std::sqrt(lo2 + rng.uniform() * (hi2 - lo2));
    const double theta = 2.0 * std::numbers::pi * rng.uniform();
    s.x = {shift + r * std::cos(theta), r * std::sin(theta)};
  }
  return out;
}

}  // namespace

void SceneConfig::validate() const {
  if (classes < 2) throw InvalidArgument("scene needs at least two classes");
  if (n_train == 0 || n_test == 0 || m_aux == 0 || m_real == 0) {
    throw InvalidArgument("scene sample sizes must be positive");
  }
  if (!(class_std >= 0.0) || !(id_radius >= 0.0)) {
    throw InvalidArgument("id_radius and class_std must be >= 0");
  }
  if (!(aux_r_lo >= 0.0) || !(aux_r_lo <= aux_r_hi)) {
    throw InvalidArgument("annulus radii must satisfy 0 <= r_lo <= r_hi");
  }
  if (!(id_radius < aux_r_lo)) throw InvalidArgument("ID circle must lie inside the annulus");
  if (!(delta >= 0.0) || !std::isfinite(delta)) throw InvalidArgument("delta must be >= 0");
}

const char* split_name(Split s) { return s == Split::kTrain ? "train" : "test"; }

std::array<double, 2> class_center(const SceneConfig& cfg, std::size_t k) {
  const double a = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(cfg.classes);
  return {cfg.id_radius * std::cos(a), cfg.id_radius * std::sin(a)};
}

std::vector<LabeledSample> sample_id(const SceneConfig& cfg, Split split) {
  cfg.validate();
  const std::size_t n = split == Split::kTrain ? cfg.n_train : cfg.n_test;
  Rng rng(cfg.seed, split == Split::kTrain ? kIdTrainStream : kIdTestStream);
  std::vector<LabeledSample> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = i % cfg.classes;
    const auto c = class_center(cfg, k);
    const double dx = rng.normal(), dy = rng.normal();
    out[i].x = {c[0] + cfg.class_std * dx, c[1] + cfg.class_std * dy};
    out[i].label = static_cast<int>(k);
  }
  return out;
}

std::vector<UnlabeledSample> sample_aux_ood(const SceneConfig& cfg, Split split) {
  cfg.validate();
  const bool train = split == Split::kTrain;
  return annulus(train ? cfg.m_aux : cfg.m_real, cfg.aux_r_lo, cfg.aux_r_hi, 0.0,
                 Rng(cfg.seed, train ? kAuxTrainStream : kAuxTestStream));
}

std::vector<UnlabeledSample> sample_real_ood(const SceneConfig& cfg) {
  cfg.validate();
  return annulus(cfg.m_real, cfg.aux_r_lo, cfg.aux_r_hi, cfg.delta, Rng(cfg.seed, kRealStream));
}

DiscrepancyEstimate estimate_discrepancy(std::span<const UnlabeledSample> aux,
                                         std::span<const UnlabeledSample> real, std::size_t k,
                                         std::size_t repeats, std::uint64_t seed) {
  if (k == 0 || k > 64) throw InvalidArgument("subsample size must lie in [1, 64]");
  if (k > aux.size() || k > real.size()) {
    throw InvalidArgument("subsample size exceeds the number of samples");
  }
  if (repeats == 0) throw InvalidArgument("at least one repeat is required");

  Rng rng(seed, 0xd15c);
  auto subsample = [&rng, k](std::span<const UnlabeledSample> s) {
    std::vector<std::size_t> idx(s.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    // Partial Fisher-Yates: the first k slots become a uniform k-subset.
    for (std::size_t i = 0; i < k; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.below(s.size() - i));
      std::swap(idx[i], idx[j]);
    }
    std::vector<ot::Point> pts;
    pts.reserve(k);
    for (std::size_t i = 0; i < k; ++i) pts.push_back({s[idx[i]].x[0], s[idx[i]].x[1]});
    return ot::DiscreteDistribution::uniform(std::move(pts));
  };

  DiscrepancyEstimate est;
  for (std::size_t r = 0; r < repeats; ++r) {
    const auto a = subsample(aux);
    const auto b = subsample(real);
    est.per_repeat.push_back(ot::wasserstein1(a, b).value);
  }
  const double n = static_cast<double>(repeats);
  est.mean = std::accumulate(est.per_repeat.begin(), est.per_repeat.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : est.per_repeat) ss += (v - est.mean) * (v - est.mean);
  est.stddev = repeats > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  return est;
}

num::Tensor to_tensor(std::span<const LabeledSample> s) {
  std::vector<double> v;
  v.reserve(2 * s.size());
  for (const auto& p : s) v.insert(v.end(), p.x.begin(), p.x.end());
  return num::Tensor({s.size(), 2}, std::move(v));
}

num::Tensor to_tensor(std::span<const UnlabeledSample> s) {
  std::vector<double> v;
  v.reserve(2 * s.size());
  for (const auto& p : s) v.insert(v.end(), p.x.begin(), p.x.end());
  return num::Tensor({s.size(), 2}, std::move(v));
}

std::vector<int> labels(std::span<const LabeledSample> s) {
  std::vector<int> out;
  out.reserve(s.size());
  for (const auto& p : s) out.push_back(p.label);
  return out;
}

void write_csv_rows(std::ostream& out, std::span<const LabeledSample> s, Split split) {
  const auto old = out.precision(17);
  for (const auto& p : s)
    out << p.x[0] << ',' << p.x[1] << ',' << p.label << ',' << split_name(split) << ",id\n";
  out.precision(old);
}

void write_csv_rows(std::ostream& out, std::span<const UnlabeledSample> s, Split split,
                    const char* role) {
  const auto old = out.precision(17);
  for (const auto& p : s)
    out << p.x[0] << ',' << p.x[1] << ",," << split_name(split) << ',' << role << '\n';
  out.precision(old);
}

}  // namespace dal::synth
