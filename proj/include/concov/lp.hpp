#pragma once

#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace concov {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class RowSense { le, ge, eq };

struct LpRow {
  std::vector<std::pair<std::size_t, double>> terms;  // (variable, coefficient)
  RowSense sense = RowSense::le;
  double rhs = 0.0;
};

/// minimize cost . x subject to rows and lower <= x <= upper.
struct LpProblem {
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<double> cost;
  std::vector<LpRow> rows;

  std::size_t add_variable(double lo, double hi, double c = 0.0) {
    lower.push_back(lo);
    upper.push_back(hi);
    cost.push_back(c);
    return lower.size() - 1;
  }
  void add_row(LpRow row) { rows.push_back(std::move(row)); }
  std::size_t num_variables() const { return lower.size(); }
};

enum class LpStatus { optimal, infeasible, unbounded, time_limit, iteration_limit };

const char* lp_status_name(LpStatus s);

struct LpOptions {
  double time_limit_seconds = 60.0;
  std::size_t max_iterations = 200000;
  /// The tableau is dense; larger problems raise SolverError.
  std::size_t max_tableau_entries = 100'000'000;
};

struct LpResult {
  LpStatus status = LpStatus::infeasible;
  std::vector<double> x;
  double objective = 0.0;
  std::size_t iterations = 0;
};

/// Dense two-phase primal simplex with bounded variables.
///
/// Phase one minimizes the sum of artificial variables added to rows whose
/// slack cannot start feasible. Entering variables are chosen by Dantzig's
/// rule (largest reduced cost, lowest index on ties). After 50 consecutive
/// degenerate pivots the solver switches to Bland's rule (lowest eligible
/// index) until a pivot makes progress, which rules out cycling. The ratio
/// test prefers the largest pivot element among near-ties.
LpResult lp_solve(const LpProblem& problem, const LpOptions& options = {});

}  // namespace concov
