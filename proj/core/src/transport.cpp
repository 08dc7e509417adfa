#include "dal/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "dal/error.hpp"
#include "dal/simplex.hpp"

namespace dal::ot {

namespace {

constexpr double kWeightTol = 1e-12;
constexpr double kMassEps = 1e-15;
constexpr std::size_t kMaxAtoms = 64;
constexpr std::size_t kMaxBallPairs = 4096;

}  // namespace

DiscreteDistribution::DiscreteDistribution(std::vector<Point> support, std::vector<double> weights)
    : support_(std::move(support)), weights_(std::move(weights)) {
  if (support_.empty()) throw InvalidArgument("distribution has empty support");
  if (support_.size() != weights_.size()) {
    throw InvalidArgument("distribution has " + std::to_string(support_.size()) + " points but " +
                          std::to_string(weights_.size()) + " weights");
  }
  const std::size_t d = support_.front().size();
  if (d == 0) throw InvalidArgument("support points must have positive dimension");
  double total = 0.0;
  for (std::size_t i = 0; i < support_.size(); ++i) {
    if (support_[i].size() != d) throw InvalidArgument("support points differ in dimension");
    for (double v : support_[i])
      if (!std::isfinite(v)) throw InvalidArgument("support point is not finite");
    if (!std::isfinite(weights_[i]) || weights_[i] < 0.0) {
      throw InvalidArgument("weights must be finite and nonnegative");
    }
    total += weights_[i];
  }
  if (std::abs(total - 1.0) > kWeightTol) {
    throw InvalidArgument("weights sum to " + std::to_string(total) + ", expected 1");
  }
}

DiscreteDistribution DiscreteDistribution::uniform(std::vector<Point> support) {
  const std::size_t n = support.size();
  if (n == 0) throw InvalidArgument("distribution has empty support");
  return DiscreteDistribution(std::move(support),
                              std::vector<double>(n, 1.0 / static_cast<double>(n)));
}

DiscreteDistribution DiscreteDistribution::normalized() const {
  std::map<Point, std::size_t> index;
  std::vector<Point> pts;
  std::vector<double> w;
  for (std::size_t i = 0; i < support_.size(); ++i) {
    if (weights_[i] == 0.0) continue;
    auto [it, inserted] = index.try_emplace(support_[i], pts.size());
    if (inserted) {
      pts.push_back(support_[i]);
      w.push_back(weights_[i]);
    } else {
      w[it->second] += weights_[i];
    }
  }
  return DiscreteDistribution(std::move(pts), std::move(w));
}

double l1_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("cost between points of different dimension");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) s += std::abs(a[k] - b[k]);
  return s;
}

double CostSpec::operator()(std::span<const double> a, std::span<const double> b) const {
  switch (kind) {
    case CostKind::kL1: return l1_distance(a, b);
  }
  throw InvalidArgument("unknown cost kind");
}

Matrix CostSpec::pairwise(const std::vector<Point>& from, const std::vector<Point>& to) const {
  if (matrix) {
    if (matrix->size() != from.size()) throw InvalidArgument("cost matrix row count mismatch");
    for (const auto& row : *matrix) {
      if (row.size() != to.size()) throw InvalidArgument("cost matrix column count mismatch");
      for (double v : row)
        if (!std::isfinite(v) || v < 0.0) throw InvalidArgument("cost entries must be >= 0");
    }
    return *matrix;
  }
  Matrix c(from.size(), std::vector<double>(to.size()));
  for (std::size_t i = 0; i < from.size(); ++i)
    for (std::size_t j = 0; j < to.size(); ++j) c[i][j] = (*this)(from[i], to[j]);
  return c;
}

TransportResult wasserstein1(const DiscreteDistribution& a, const DiscreteDistribution& b,
                             const CostSpec& cost) {
  const std::size_t n = a.size(), m = b.size();
  if (n == 0 || m == 0) throw InvalidArgument("wasserstein1 of an empty distribution");
  if (n > kMaxAtoms || m > kMaxAtoms) {
    throw InvalidArgument("wasserstein1 supports at most 64 atoms per distribution");
  }
  if (a.dim() != b.dim()) throw InvalidArgument("distributions live in different dimensions");
  const Matrix c = cost.pairwise(a.support(), b.support());

  std::vector<double> supply = a.weights();
  std::vector<double> demand = b.weights();
  Matrix flow(n, std::vector<double>(m, 0.0));

  // Successive shortest paths. Node layout: sources 0..n-1, sinks n..n+m-1.
  // Residual arcs: source i -> sink j (cost c_ij, unbounded) and sink j ->
  // source i (cost -c_ij, capacity flow_ij).
  constexpr double kInf = std::numeric_limits<double>::infinity();
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<double> dist(n + m);
  std::vector<std::size_t> parent(n + m);
  const std::size_t max_rounds = 4 * (n + m) * (n + m) + 16;
  // Relaxation slack. Path sums carry rounding error that grows with the cost
  // scale; a slack below it lets zero-cost cycles enter the parent tree.
  double cmax = 0.0;
  for (const auto& row : c)
    for (double v : row) cmax = std::max(cmax, v);
  const double slack = 1e-12 * (1.0 + cmax);

  for (std::size_t round = 0; round < max_rounds; ++round) {
    double left = 0.0;
    for (double s : supply) left += s;
    if (left <= kMassEps) break;

    std::fill(dist.begin(), dist.end(), kInf);
    std::fill(parent.begin(), parent.end(), kNone);
    for (std::size_t i = 0; i < n; ++i)
      if (supply[i] > kMassEps) dist[i] = 0.0;

    // Bellman-Ford over the dense bipartite residual graph.
    for (std::size_t pass = 0; pass < n + m; ++pass) {
      bool changed = false;
      for (std::size_t i = 0; i < n; ++i) {
        if (dist[i] == kInf) continue;
        for (std::size_t j = 0; j < m; ++j) {
          const double nd = dist[i] + c[i][j];
          if (nd < dist[n + j] - slack) {
            dist[n + j] = nd;
            parent[n + j] = i;
            changed = true;
          }
        }
      }
      for (std::size_t j = 0; j < m; ++j) {
        if (dist[n + j] == kInf) continue;
        for (std::size_t i = 0; i < n; ++i) {
          if (flow[i][j] <= kMassEps) continue;
          const double nd = dist[n + j] - c[i][j];
          if (nd < dist[i] - slack) {
            dist[i] = nd;
            parent[i] = n + j;
            changed = true;
          }
        }
      }
      if (!changed) break;
    }

    std::size_t sink = kNone;
    for (std::size_t j = 0; j < m; ++j) {
      if (demand[j] <= kMassEps || dist[n + j] == kInf) continue;
      if (sink == kNone || dist[n + j] < dist[n + sink]) sink = j;
    }
    if (sink == kNone) break;

    // Walk back to the originating source and find the bottleneck.
    double push = demand[sink];
    std::size_t v = n + sink;
    std::size_t steps = 0;
    while (parent[v] != kNone) {
      const std::size_t u = parent[v];
      if (v < n) push = std::min(push, flow[v][u - n]);  // reverse arc sink u -> source v
      v = u;
      if (++steps > 2 * (n + m)) throw NumericError("wasserstein1: cycle in shortest-path tree");
    }
    push = std::min(push, supply[v]);
    if (push <= kMassEps) break;

    supply[v] -= push;
    demand[sink] -= push;
    v = n + sink;
    while (parent[v] != kNone) {
      const std::size_t u = parent[v];
      if (v >= n)
        flow[u][v - n] += push;
      else
        flow[v][u - n] -= push;
      v = u;
    }
  }

  TransportResult out;
  out.plan = std::move(flow);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.value += out.plan[i][j] * c[i][j];
  return out;
}

DiscreteDistribution mixture(const DiscreteDistribution& a, const DiscreteDistribution& b, double u) {
  if (!(u >= 0.0 && u <= 1.0)) throw InvalidArgument("mixture weight must lie in [0, 1]");
  if (a.dim() != b.dim()) throw InvalidArgument("mixture of distributions in different dimensions");
  std::vector<Point> pts = a.support();
  pts.insert(pts.end(), b.support().begin(), b.support().end());
  std::vector<double> w;
  w.reserve(pts.size());
  for (double x : a.weights()) w.push_back((1.0 - u) * x);
  for (double x : b.weights()) w.push_back(u * x);
  return DiscreteDistribution(std::move(pts), std::move(w)).normalized();
}

void BallProblem::validate() const {
  if (center.size() == 0) throw InvalidArgument("ball center is empty");
  if (!std::isfinite(radius) || radius < 0.0) throw InvalidArgument("ball radius must be >= 0");
  if (targets.empty()) throw InvalidArgument("ball problem has no candidate targets");
  if (losses.size() != targets.size()) {
    throw InvalidArgument("ball problem needs one loss value per target");
  }
  for (double l : losses)
    if (!std::isfinite(l)) throw InvalidArgument("loss values must be finite");
  for (const auto& z : targets) {
    if (z.size() != center.dim()) throw InvalidArgument("target dimension differs from center");
    for (double v : z)
      if (!std::isfinite(v)) throw InvalidArgument("target point is not finite");
  }
  if (center.size() * targets.size() > kMaxBallPairs) {
    throw InvalidArgument("ball problem exceeds 4096 center-target pairs");
  }
}

Matrix BallProblem::cost_matrix() const { return cost.pairwise(center.support(), targets); }

PrimalResult primal_worst_case(const BallProblem& p) {
  p.validate();
  // Merge duplicate center atoms unless costs are pinned to the given support.
  const bool merge = !p.cost.matrix.has_value();
  const DiscreteDistribution center = merge ? p.center.normalized() : p.center;
  const Matrix c = p.cost.pairwise(center.support(), p.targets);
  const std::size_t n = center.size(), k = p.targets.size();
  const auto& w = center.weights();

  double min_budget = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    min_budget += w[i] * *std::min_element(c[i].begin(), c[i].end());
  if (min_budget > p.radius + 1e-12) {
    throw InvalidArgument("ball problem infeasible: cheapest plan costs " +
                          std::to_string(min_budget) + " > radius");
  }

  std::vector<double> obj(n * k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) obj[i * k + j] = p.losses[j];
  LinearProgram lp(std::move(obj));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row(n * k, 0.0);
    for (std::size_t j = 0; j < k; ++j) row[i * k + j] = 1.0;
    lp.add_constraint(std::move(row), Sense::kEqual, w[i]);
  }
  std::vector<double> budget(n * k);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) budget[i * k + j] = c[i][j];
  lp.add_constraint(std::move(budget), Sense::kLessEqual, p.radius);

  const LpSolution sol = solve_simplex(lp);
  if (sol.status != LpStatus::kOptimal) {
    throw NumericError("ball LP did not reach an optimum");
  }

  PrimalResult out;
  out.value = sol.value;
  Matrix merged(n, std::vector<double>(k));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) merged[i][j] = sol.x[i * k + j];

  if (!merge || n == p.center.size()) {
    out.plan = std::move(merged);
    return out;
  }
  // Spread each merged row back over the original duplicate atoms.
  std::map<Point, std::size_t> row_of;
  for (std::size_t i = 0; i < n; ++i) row_of.emplace(center.support()[i], i);
  out.plan.assign(p.center.size(), std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < p.center.size(); ++i) {
    const double wi = p.center.weights()[i];
    if (wi == 0.0) continue;
    const std::size_t r = row_of.at(p.center.support()[i]);
    for (std::size_t j = 0; j < k; ++j) out.plan[i][j] = merged[r][j] * (wi / w[r]);
  }
  return out;
}

namespace {

double dual_value_with(const Matrix& c, const std::vector<double>& w,
                       const std::vector<double>& losses, double radius, double gamma) {
  double v = gamma * radius;
  for (std::size_t i = 0; i < c.size(); ++i) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < losses.size(); ++j) best = std::max(best, losses[j] - gamma * c[i][j]);
    v += w[i] * best;
  }
  return v;
}

}  // namespace

double dual_value(const BallProblem& p, double gamma) {
  p.validate();
  if (!std::isfinite(gamma) || gamma < 0.0) throw InvalidArgument("dual variable must be >= 0");
  return dual_value_with(p.cost_matrix(), p.center.weights(), p.losses, p.radius, gamma);
}

DualResult dual_infimum(const BallProblem& p) {
  p.validate();
  const Matrix c = p.cost_matrix();
  const auto& w = p.center.weights();
  const std::size_t n = c.size(), k = p.losses.size();

  // Slope of the dual for gamma beyond every breakpoint.
  double tail_slope = p.radius;
  for (std::size_t i = 0; i < n; ++i) tail_slope -= w[i] * *std::min_element(c[i].begin(), c[i].end());
  if (tail_slope < -1e-12) {
    throw InvalidArgument("ball problem infeasible: dual is unbounded below");
  }

  std::vector<double> cand{0.0};
  for (std::size_t i = 0; i < n; ++i) {
    if (w[i] == 0.0) continue;
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t l = j + 1; l < k; ++l) {
        const double dc = c[i][j] - c[i][l];
        if (dc == 0.0) continue;
        const double g = (p.losses[j] - p.losses[l]) / dc;
        if (g > 0.0 && std::isfinite(g)) cand.push_back(g);
      }
    }
  }
  std::sort(cand.begin(), cand.end());
  cand.erase(std::unique(cand.begin(), cand.end()), cand.end());

  auto f = [&](std::size_t idx) { return dual_value_with(c, w, p.losses, p.radius, cand[idx]); };
  std::size_t lo = 0, hi = cand.size() - 1;
  if (cand.size() * n * k <= 2'000'000) {
    DualResult best{cand[0], f(0)};
    for (std::size_t idx = 1; idx < cand.size(); ++idx) {
      const double v = f(idx);
      if (v < best.value) best = {cand[idx], v};
    }
    return best;
  }
  // Convex sequence: bisect on the sign of the forward difference, then
  // rescan a small window to absorb rounding on flat stretches.
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (f(mid) <= f(mid + 1))
      hi = mid;
    else
      lo = mid + 1;
  }
  const std::size_t from = lo >= 4 ? lo - 4 : 0;
  const std::size_t to = std::min(cand.size() - 1, lo + 4);
  DualResult best{cand[from], f(from)};
  for (std::size_t idx = from + 1; idx <= to; ++idx) {
    const double v = f(idx);
    if (v < best.value) best = {cand[idx], v};
  }
  return best;
}

}  // namespace dal::ot
