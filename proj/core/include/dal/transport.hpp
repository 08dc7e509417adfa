#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dal::ot {

using Point = std::vector<double>;
using Matrix = std::vector<std::vector<double>>;

/// Finitely supported probability measure sum_i w_i delta_{x_i}.
class DiscreteDistribution {
 public:
  DiscreteDistribution() = default;
  /// Validates: non-empty, equal point dimensions, finite coordinates,
  /// weights >= 0 summing to 1 within 1e-12.
  DiscreteDistribution(std::vector<Point> support, std::vector<double> weights);

  static DiscreteDistribution uniform(std::vector<Point> support);
  static DiscreteDistribution dirac(Point x) { return DiscreteDistribution({std::move(x)}, {1.0}); }

  const std::vector<Point>& support() const { return support_; }
  const std::vector<double>& weights() const { return weights_; }
  std::size_t size() const { return support_.size(); }
  std::size_t dim() const { return support_.empty() ? 0 : support_.front().size(); }

  /// Merges identical support points (summing weights) and drops zero-weight
  /// atoms. Atom order follows first occurrence.
  DiscreteDistribution normalized() const;

  bool operator==(const DiscreteDistribution&) const = default;

 private:
  std::vector<Point> support_;
  std::vector<double> weights_;
};

enum class CostKind { kL1 };

/// Ground cost c(x, x'). A precomputed matrix, when set, overrides the
/// metric for the support pair it was built for.
struct CostSpec {
  CostKind kind = CostKind::kL1;
  std::optional<Matrix> matrix;

  double operator()(std::span<const double> a, std::span<const double> b) const;
  Matrix pairwise(const std::vector<Point>& from, const std::vector<Point>& to) const;
};

double l1_distance(std::span<const double> a, std::span<const double> b);

struct TransportResult {
  double value = 0.0;
  Matrix plan;  // [a.size(), b.size()], rows sum to a's weights
};

/// Exact optimal transport cost min_{pi in Pi(a,b)} sum pi_ij c(x_i, y_j),
/// solved by successive shortest paths on the transportation network.
/// Supports are used as given (no merging), capped at 64 atoms each.
TransportResult wasserstein1(const DiscreteDistribution& a, const DiscreteDistribution& b,
                             const CostSpec& cost = {});

/// (1 - u) a + u b, duplicates merged.
DiscreteDistribution mixture(const DiscreteDistribution& a, const DiscreteDistribution& b, double u);

/// Worst-case expected loss over distributions within transport budget
/// `radius` of `center`, restricted to the finite candidate set `targets`.
struct BallProblem {
  DiscreteDistribution center;
  double radius = 0.0;
  std::vector<Point> targets;
  std::vector<double> losses;  // loss at each target
  CostSpec cost;

  void validate() const;
  /// c(center_i, target_j)
  Matrix cost_matrix() const;
};

struct PrimalResult {
  double value = 0.0;
  Matrix plan;  // [center.size(), targets.size()]
};

/// Exact LP maximum of sum pi_ij loss_j subject to sum_j pi_ij = w_i,
/// sum pi_ij c_ij <= radius, pi >= 0. Throws InvalidArgument if no plan fits
/// the budget.
PrimalResult primal_worst_case(const BallProblem& p);

/// gamma * radius + sum_i w_i max_j [loss_j - gamma c_ij]
double dual_value(const BallProblem& p, double gamma);

struct DualResult {
  double gamma = 0.0;
  double value = 0.0;
};

/// Minimizes dual_value over gamma >= 0. The dual is convex piecewise-linear,
/// so the minimum sits at gamma = 0 or at a breakpoint
/// (loss_j - loss_k) / (c_ij - c_ik); those are enumerated exactly.
DualResult dual_infimum(const BallProblem& p);

}  // namespace dal::ot
