#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dal/tape.hpp"
#include "dal/tensor.hpp"

namespace dal::gradcheck {

using num::NodeId;
using num::Tape;
using num::Tensor;

/// A scalar function of several tensors together with a claimed gradient.
struct GradCase {
  std::string name;
  std::vector<Tensor> inputs;
  std::function<double(std::span<const Tensor>)> value;
  std::function<std::vector<Tensor>(std::span<const Tensor>)> gradient;
};

/// Builds a case whose value and gradient both come from a tape. `build`
/// receives one leaf per input and must return a single-element node.
using TapeBuilder = std::function<NodeId(Tape&, std::span<const NodeId>)>;
GradCase tape_case(std::string name, std::vector<Tensor> inputs, TapeBuilder build);

struct CaseResult {
  std::string name;
  std::size_t entries = 0;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct Options {
  double step = 1e-6;       // central-difference half width
  double tolerance = 1e-4;  // on the relative error
  double scale_floor = 1e-4;
};

/// Relative error |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor);

/// Compares the claimed gradient with central differences on every input
/// entry.
CaseResult check(const GradCase& c, const Options& opt = {});

struct Report {
  std::vector<CaseResult> cases;
  double tolerance = 0.0;

  bool passed() const;
  double worst_rel_error() const;
  /// One line per case plus a summary line.
  std::string format() const;
};

Report run(std::span<const GradCase> cases, const Options& opt = {});

/// One case per tape op, plus the composed model forward and the two
/// gradients a DAL step consumes: model parameters (w) and embedding
/// perturbations (p). Inputs are random and deterministic in `seed`.
std::vector<GradCase> standard_cases(std::uint64_t seed = 7);

}  // namespace dal::gradcheck
