#pragma once

#include <cstddef>
#include <vector>

namespace dal::ot {

enum class Sense { kLessEqual, kEqual, kGreaterEqual };

/// maximize objective . x  subject to  rows[k] . x (sense) rhs[k],  x >= 0.
struct LinearProgram {
  std::vector<double> objective;
  std::vector<std::vector<double>> rows;
  std::vector<Sense> senses;
  std::vector<double> rhs;

  explicit LinearProgram(std::vector<double> c) : objective(std::move(c)) {}
  void add_constraint(std::vector<double> coeffs, Sense sense, double b);
  std::size_t num_vars() const { return objective.size(); }
};

enum class LpStatus { kOptimal, kInfeasible, kUnbounded };

struct LpSolution {
  LpStatus status = LpStatus::kInfeasible;
  double value = 0.0;
  std::vector<double> x;
  std::size_t pivots = 0;
};

/// Two-phase dense tableau simplex. Entering and leaving variables follow
/// Bland's smallest-index rule, so the method cannot cycle.
LpSolution solve_simplex(const LinearProgram& lp, double tol = 1e-9);

}  // namespace dal::ot
