#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "dal/tensor.hpp"

namespace dal::synth {

/// 2-D scene: C Gaussian class blobs on a circle of radius `id_radius`,
/// auxiliary OOD uniform on the annulus [aux_r_lo, aux_r_hi] around the
/// origin, and real OOD drawn from the same annulus shifted by (delta, 0).
struct SceneConfig {
  std::size_t classes = 4;
  std::size_t n_train = 2000;
  std::size_t n_test = 1000;
  std::size_t m_aux = 2000;  // auxiliary OOD training points
  std::size_t m_real = 5000; // size of each OOD test split (aux and real)
  double id_radius = 1.5;
  double class_std = 0.25;
  double aux_r_lo = 4.0;
  double aux_r_hi = 5.0;
  double delta = 2.0;
  std::uint64_t seed = 0;

  void validate() const;
};

enum class Split { kTrain, kTest };

const char* split_name(Split s);

struct LabeledSample {
  std::array<double, 2> x{};
  int label = 0;
};

struct UnlabeledSample {
  std::array<double, 2> x{};
};

std::array<double, 2> class_center(const SceneConfig& cfg, std::size_t k);

/// Balanced classes (example i has label i mod C).
std::vector<LabeledSample> sample_id(const SceneConfig& cfg, Split split);
/// Training split has m_aux points, test split m_real points.
std::vector<UnlabeledSample> sample_aux_ood(const SceneConfig& cfg, Split split = Split::kTrain);
/// Held-out real OOD, m_real points.
std::vector<UnlabeledSample> sample_real_ood(const SceneConfig& cfg);

struct DiscrepancyEstimate {
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> per_repeat;
};

/// Mean and standard deviation of the exact l1 Wasserstein distance between
/// uniform k-point subsamples of the two sets over `repeats` draws.
DiscrepancyEstimate estimate_discrepancy(std::span<const UnlabeledSample> aux,
                                         std::span<const UnlabeledSample> real, std::size_t k,
                                         std::size_t repeats, std::uint64_t seed);

num::Tensor to_tensor(std::span<const LabeledSample> s);
num::Tensor to_tensor(std::span<const UnlabeledSample> s);
std::vector<int> labels(std::span<const LabeledSample> s);

inline constexpr const char* kDatasetHeader = "x1,x2,label,split,role";

/// Appends rows of the dataset CSV (no header).
void write_csv_rows(std::ostream& out, std::span<const LabeledSample> s, Split split);
void write_csv_rows(std::ostream& out, std::span<const UnlabeledSample> s, Split split,
                    const char* role);

}  // namespace dal::synth
