#include "concov/lp.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>

#include "concov/error.hpp"

namespace concov {

const char* lp_status_name(LpStatus s) {
  switch (s) {
    case LpStatus::optimal: return "optimal";
    case LpStatus::infeasible: return "infeasible";
    case LpStatus::unbounded: return "unbounded";
    case LpStatus::time_limit: return "time limit";
    case LpStatus::iteration_limit: return "iteration limit";
  }
  return "?";
}

namespace {

constexpr double kPivotTol = 1e-9;
constexpr double kCostTol = 1e-9;
constexpr double kFeasTol = 1e-9;
constexpr int kDegenerateSwitch = 50;

enum class Outcome { optimal, unbounded, time_limit, iteration_limit };

// Tableau over structural, slack and artificial columns. Row i of `t` holds
// B^-1 A; `value` holds the current value of every column; `basis[i]` is the
// column basic in row i and `row_of[j]` the row of basic column j (or -1).
class Tableau {
public:
  Tableau(std::size_t rows, std::size_t cols)
      : m_(rows), n_(cols), t_(rows * cols, 0.0), lower_(cols), upper_(cols), value_(cols, 0.0),
        basis_(rows), row_of_(cols, -1) {}

  double& at(std::size_t i, std::size_t j) { return t_[i * n_ + j]; }
  double at(std::size_t i, std::size_t j) const { return t_[i * n_ + j]; }

  std::size_t m_, n_;
  std::vector<double> t_;
  std::vector<double> lower_, upper_, value_;
  std::vector<std::size_t> basis_;
  std::vector<long> row_of_;
  std::size_t iterations_ = 0;

  Outcome optimize(const std::vector<double>& cost, const LpOptions& opt,
                   std::chrono::steady_clock::time_point deadline);
  void pivot(std::size_t r, std::size_t j, std::vector<double>& reduced);
};

void Tableau::pivot(std::size_t r, std::size_t j, std::vector<double>& reduced) {
  const double p = at(r, j);
  double* prow = &t_[r * n_];
  for (std::size_t k = 0; k < n_; ++k) prow[k] /= p;
  prow[j] = 1.0;
  for (std::size_t i = 0; i < m_; ++i) {
    if (i == r) continue;
    double* row = &t_[i * n_];
    const double f = row[j];
    if (f == 0.0) continue;
    for (std::size_t k = 0; k < n_; ++k) row[k] -= f * prow[k];
    row[j] = 0.0;
  }
  const double f = reduced[j];
  if (f != 0.0) {
    for (std::size_t k = 0; k < n_; ++k) reduced[k] -= f * prow[k];
    reduced[j] = 0.0;
  }
  row_of_[basis_[r]] = -1;
  basis_[r] = j;
  row_of_[j] = static_cast<long>(r);
}

Outcome Tableau::optimize(const std::vector<double>& cost, const LpOptions& opt,
                          std::chrono::steady_clock::time_point deadline) {
  // reduced costs d = c - c_B^T B^-1 A
  std::vector<double> reduced(cost);
  for (std::size_t i = 0; i < m_; ++i) {
    const double cb = cost[basis_[i]];
    if (cb == 0.0) continue;
    for (std::size_t k = 0; k < n_; ++k) reduced[k] -= cb * at(i, k);
  }
  int degenerate = 0;
  for (;;) {
    if (iterations_ >= opt.max_iterations) return Outcome::iteration_limit;
    if ((iterations_ & 15) == 0 && std::chrono::steady_clock::now() > deadline) return Outcome::time_limit;
    const bool bland = degenerate >= kDegenerateSwitch;

    // entering column
    long enter = -1;
    int dir = 0;
    double best = 0.0;
    for (std::size_t j = 0; j < n_; ++j) {
      if (row_of_[j] >= 0 || lower_[j] == upper_[j]) continue;
      const double d = reduced[j];
      int cand = 0;
      if (d < -kCostTol && value_[j] < upper_[j]) cand = 1;
      else if (d > kCostTol && value_[j] > lower_[j]) cand = -1;
      if (cand == 0) continue;
      if (bland) {
        enter = static_cast<long>(j);
        dir = cand;
        break;
      }
      if (std::abs(d) > best) {
        best = std::abs(d);
        enter = static_cast<long>(j);
        dir = cand;
      }
    }
    if (enter < 0) return Outcome::optimal;
    const auto j = static_cast<std::size_t>(enter);

    // ratio test
    double step = upper_[j] - lower_[j];  // bound flip
    long leave = -1;
    double leave_alpha = 0.0;
    for (std::size_t i = 0; i < m_; ++i) {
      const double alpha = dir * at(i, j);
      if (std::abs(alpha) <= kPivotTol) continue;
      const std::size_t b = basis_[i];
      double limit;
      if (alpha > 0) {
        if (lower_[b] == -kInf) continue;
        limit = std::max(0.0, (value_[b] - lower_[b]) / alpha);
      } else {
        if (upper_[b] == kInf) continue;
        limit = std::max(0.0, (upper_[b] - value_[b]) / -alpha);
      }
      bool take = limit < step - 1e-12;
      if (!take && limit <= step + 1e-12 && leave >= 0) {
        const auto cur = static_cast<std::size_t>(leave);
        take = bland ? basis_[i] < basis_[cur] : std::abs(alpha) > std::abs(leave_alpha);
      }
      if (take) {
        step = std::min(limit, step);
        leave = static_cast<long>(i);
        leave_alpha = alpha;
      }
    }
    if (step == kInf) return Outcome::unbounded;
    ++iterations_;
    degenerate = step <= 1e-12 ? degenerate + 1 : 0;

    // move along the edge
    value_[j] += dir * step;
    for (std::size_t i = 0; i < m_; ++i) {
      const double a = at(i, j);
      if (a != 0.0) value_[basis_[i]] -= dir * step * a;
    }
    if (leave < 0) {
      value_[j] = dir > 0 ? upper_[j] : lower_[j];
      continue;
    }
    const auto r = static_cast<std::size_t>(leave);
    const std::size_t out = basis_[r];
    value_[out] = leave_alpha > 0 ? lower_[out] : upper_[out];
    pivot(r, j, reduced);
  }
}

}  // namespace

LpResult lp_solve(const LpProblem& problem, const LpOptions& options) {
  const auto deadline = std::chrono::steady_clock::now() +
                        std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                            std::chrono::duration<double>(options.time_limit_seconds));
  const std::size_t n = problem.num_variables();
  const std::size_t m = problem.rows.size();
  if (problem.upper.size() != n || problem.cost.size() != n) {
    throw InputError("LP bound and cost vectors differ in length");
  }
  for (std::size_t j = 0; j < n; ++j) {
    if (problem.lower[j] > problem.upper[j]) return {LpStatus::infeasible, {}, 0.0, 0};
  }

  // initial nonbasic values: a finite bound, or zero when free
  std::vector<double> x0(n);
  for (std::size_t j = 0; j < n; ++j) {
    x0[j] = std::isfinite(problem.lower[j]) ? problem.lower[j] : std::isfinite(problem.upper[j]) ? problem.upper[j] : 0.0;
  }
  std::vector<double> residual(m);
  std::vector<int> sign(m, 0);  // nonzero when the row needs an artificial
  std::size_t artificials = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto& row = problem.rows[i];
    double r = row.rhs;
    for (const auto& [j, a] : row.terms) {
      if (j >= n) throw InputError(fmt::format("LP row {} references variable {} of {}", i, j, n));
      r -= a * x0[j];
    }
    residual[i] = r;
    const bool slack_ok = row.sense == RowSense::le   ? r >= 0
                          : row.sense == RowSense::ge ? r <= 0
                                                      : false;
    if (!slack_ok) {
      sign[i] = r >= 0 ? 1 : -1;
      ++artificials;
    }
  }

  const std::size_t cols = n + m + artificials;
  if (m > 0 && cols > options.max_tableau_entries / m) {
    throw SolverError(fmt::format("an LP of {} rows and {} columns exceeds the dense solver limit of {} entries", m,
                                  cols, options.max_tableau_entries));
  }
  Tableau tab(m, cols);
  for (std::size_t j = 0; j < n; ++j) {
    tab.lower_[j] = problem.lower[j];
    tab.upper_[j] = problem.upper[j];
    tab.value_[j] = x0[j];
  }
  std::size_t next_art = n + m;
  for (std::size_t i = 0; i < m; ++i) {
    const auto& row = problem.rows[i];
    const std::size_t s = n + i;
    tab.lower_[s] = row.sense == RowSense::ge ? -kInf : 0.0;
    tab.upper_[s] = row.sense == RowSense::le ? kInf : 0.0;
    const double scale = sign[i] < 0 ? -1.0 : 1.0;
    for (const auto& [j, a] : row.terms) tab.at(i, j) += scale * a;
    tab.at(i, s) = scale;
    if (sign[i] == 0) {
      tab.basis_[i] = s;
      tab.row_of_[s] = static_cast<long>(i);
      tab.value_[s] = residual[i];
    } else {
      const std::size_t a = next_art++;
      tab.at(i, a) = 1.0;
      tab.lower_[a] = 0.0;
      tab.upper_[a] = kInf;
      tab.basis_[i] = a;
      tab.row_of_[a] = static_cast<long>(i);
      tab.value_[a] = std::abs(residual[i]);
    }
  }

  auto finish = [&](LpStatus status) {
    LpResult res;
    res.status = status;
    res.iterations = tab.iterations_;
    if (status == LpStatus::optimal) {
      res.x.assign(tab.value_.begin(), tab.value_.begin() + static_cast<long>(n));
      for (std::size_t j = 0; j < n; ++j) res.objective += problem.cost[j] * res.x[j];
    }
    return res;
  };
  auto to_status = [](Outcome o) {
    switch (o) {
      case Outcome::unbounded: return LpStatus::unbounded;
      case Outcome::time_limit: return LpStatus::time_limit;
      case Outcome::iteration_limit: return LpStatus::iteration_limit;
      default: return LpStatus::optimal;
    }
  };

  if (artificials > 0) {
    std::vector<double> phase1(cols, 0.0);
    for (std::size_t a = n + m; a < cols; ++a) phase1[a] = 1.0;
    const Outcome o = tab.optimize(phase1, options, deadline);
    if (o != Outcome::optimal) return finish(to_status(o));
    double infeas = 0.0;
    for (std::size_t a = n + m; a < cols; ++a) infeas += tab.value_[a];
    if (infeas > kFeasTol * std::max<double>(1.0, static_cast<double>(m))) return finish(LpStatus::infeasible);
    for (std::size_t a = n + m; a < cols; ++a) {
      tab.upper_[a] = 0.0;
      tab.value_[a] = 0.0;
    }
    // drive basic artificials out where a non-artificial column can replace them
    std::vector<double> scratch(cols, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      if (tab.basis_[i] < n + m) continue;
      for (std::size_t j = 0; j < n + m; ++j) {
        if (tab.row_of_[j] < 0 && std::abs(tab.at(i, j)) > 1e-7) {
          tab.pivot(i, j, scratch);
          break;
        }
      }
    }
  }

  std::vector<double> phase2(cols, 0.0);
  std::copy(problem.cost.begin(), problem.cost.end(), phase2.begin());
  return finish(to_status(tab.optimize(phase2, options, deadline)));
}

}  // namespace concov
