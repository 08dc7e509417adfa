#include "dal/simplex.hpp"

#include <cmath>
#include <limits>

#include "dal/error.hpp"

namespace dal::ot {

void LinearProgram::add_constraint(std::vector<double> coeffs, Sense sense, double b) {
  if (coeffs.size() != objective.size()) {
    throw InvalidArgument("constraint has " + std::to_string(coeffs.size()) +
                          " coefficients, program has " + std::to_string(objective.size()) +
                          " variables");
  }
  rows.push_back(std::move(coeffs));
  senses.push_back(sense);
  rhs.push_back(b);
}

namespace {

class Tableau {
 public:
  Tableau(std::size_t m, std::size_t cols) : m_(m), cols_(cols), t_((m + 1) * (cols + 1), 0.0) {}

  double& at(std::size_t r, std::size_t c) { return t_[r * (cols_ + 1) + c]; }
  double at(std::size_t r, std::size_t c) const { return t_[r * (cols_ + 1) + c]; }
  double& rhs(std::size_t r) { return at(r, cols_); }
  double& obj(std::size_t c) { return at(m_, c); }

  void pivot(std::size_t pr, std::size_t pc) {
    const std::size_t w = cols_ + 1;
    double* prow = &t_[pr * w];
    const double inv = 1.0 / prow[pc];
    for (std::size_t c = 0; c < w; ++c) prow[c] *= inv;
    prow[pc] = 1.0;
    for (std::size_t r = 0; r <= m_; ++r) {
      if (r == pr) continue;
      double* row = &t_[r * w];
      const double f = row[pc];
      if (f == 0.0) continue;
      for (std::size_t c = 0; c < w; ++c) row[c] -= f * prow[c];
      row[pc] = 0.0;
    }
  }

  std::size_t m_, cols_;

 private:
  std::vector<double> t_;
};

enum class PhaseResult { kOptimal, kUnbounded };

// Maximizes the objective held in the tableau's last row (stored as reduced
// costs: negative entry => improving column). `allowed` masks columns that
// may enter the basis.
PhaseResult run_phase(Tableau& t, std::vector<std::size_t>& basis, const std::vector<bool>& allowed,
                      double tol, std::size_t& pivots) {
  const std::size_t max_pivots = 50'000 + 50 * (t.m_ + t.cols_);
  while (true) {
    std::size_t enter = t.cols_;
    for (std::size_t c = 0; c < t.cols_; ++c) {
      if (allowed[c] && t.obj(c) < -tol) {
        enter = c;
        break;
      }
    }
    if (enter == t.cols_) return PhaseResult::kOptimal;

    std::size_t leave = t.m_;
    double best_ratio = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < t.m_; ++r) {
      const double a = t.at(r, enter);
      if (a <= tol) continue;
      const double ratio = t.rhs(r) / a;
      if (ratio < best_ratio - tol ||
          (std::abs(ratio - best_ratio) <= tol && leave < t.m_ && basis[r] < basis[leave])) {
        if (ratio < best_ratio - tol) best_ratio = ratio;
        leave = r;
      }
    }
    if (leave == t.m_) return PhaseResult::kUnbounded;
    t.pivot(leave, enter);
    basis[leave] = enter;
    if (++pivots > max_pivots) throw NumericError("simplex exceeded its pivot budget");
  }
}

}  // namespace

LpSolution solve_simplex(const LinearProgram& lp, double tol) {
  const std::size_t n = lp.num_vars();
  const std::size_t m = lp.rows.size();
  if (n == 0) throw InvalidArgument("linear program has no variables");

  // Normalize to nonnegative right-hand sides.
  std::vector<std::vector<double>> rows = lp.rows;
  std::vector<Sense> senses = lp.senses;
  std::vector<double> b = lp.rhs;
  for (std::size_t r = 0; r < m; ++r) {
    if (b[r] < 0.0) {
      b[r] = -b[r];
      for (auto& v : rows[r]) v = -v;
      if (senses[r] == Sense::kLessEqual)
        senses[r] = Sense::kGreaterEqual;
      else if (senses[r] == Sense::kGreaterEqual)
        senses[r] = Sense::kLessEqual;
    }
  }

  std::size_t num_slack = 0, num_art = 0;
  for (auto s : senses) {
    if (s != Sense::kEqual) ++num_slack;
    if (s != Sense::kLessEqual) ++num_art;
  }
  const std::size_t cols = n + num_slack + num_art;
  const std::size_t art_begin = n + num_slack;
  Tableau t(m, cols);
  std::vector<std::size_t> basis(m);

  std::size_t slack = n, art = art_begin;
  for (std::size_t r = 0; r < m; ++r) {
    for (std::size_t c = 0; c < n; ++c) t.at(r, c) = rows[r][c];
    t.rhs(r) = b[r];
    switch (senses[r]) {
      case Sense::kLessEqual:
        t.at(r, slack) = 1.0;
        basis[r] = slack++;
        break;
      case Sense::kGreaterEqual:
        t.at(r, slack++) = -1.0;
        t.at(r, art) = 1.0;
        basis[r] = art++;
        break;
      case Sense::kEqual:
        t.at(r, art) = 1.0;
        basis[r] = art++;
        break;
    }
  }

  LpSolution sol;
  std::vector<bool> allowed(cols, true);

  if (num_art > 0) {
    // Phase 1: maximize -sum(artificials). Reduced costs = -(sum of rows with artificial basis).
    for (std::size_t c = 0; c <= cols; ++c) t.at(m, c) = 0.0;
    for (std::size_t c = art_begin; c < cols; ++c) t.obj(c) = 1.0;
    for (std::size_t r = 0; r < m; ++r) {
      if (basis[r] < art_begin) continue;
      for (std::size_t c = 0; c <= cols; ++c) t.at(m, c) -= t.at(r, c);
    }
    run_phase(t, basis, allowed, tol, sol.pivots);
    const double infeasibility = -t.rhs(m);
    double scale = 1.0;
    for (double v : b) scale = std::max(scale, std::abs(v));
    if (infeasibility > tol * scale * 10.0) {
      sol.status = LpStatus::kInfeasible;
      return sol;
    }
    // Drive remaining (zero-valued) artificials out of the basis.
    for (std::size_t r = 0; r < m; ++r) {
      if (basis[r] < art_begin) continue;
      for (std::size_t c = 0; c < art_begin; ++c) {
        if (std::abs(t.at(r, c)) > tol) {
          t.pivot(r, c);
          basis[r] = c;
          ++sol.pivots;
          break;
        }
      }
    }
    for (std::size_t c = art_begin; c < cols; ++c) allowed[c] = false;
  }

  // Phase 2: reduced costs of the original objective w.r.t. the current basis.
  for (std::size_t c = 0; c <= cols; ++c) t.at(m, c) = 0.0;
  for (std::size_t c = 0; c < n; ++c) t.obj(c) = -lp.objective[c];
  for (std::size_t r = 0; r < m; ++r) {
    const std::size_t bc = basis[r];
    const double cb = bc < n ? lp.objective[bc] : 0.0;
    if (cb == 0.0) continue;
    for (std::size_t c = 0; c <= cols; ++c) t.at(m, c) += cb * t.at(r, c);
  }

  if (run_phase(t, basis, allowed, tol, sol.pivots) == PhaseResult::kUnbounded) {
    sol.status = LpStatus::kUnbounded;
    return sol;
  }
  sol.status = LpStatus::kOptimal;
  sol.x.assign(n, 0.0);
  for (std::size_t r = 0; r < m; ++r)
    if (basis[r] < n) sol.x[basis[r]] = std::max(t.rhs(r), 0.0);
  double value = 0.0;
  for (std::size_t c = 0; c < n; ++c) value += lp.objective[c] * sol.x[c];
  sol.value = value;
  return sol;
}

}  // namespace dal::ot
