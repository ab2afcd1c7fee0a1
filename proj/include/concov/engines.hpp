#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "concov/bn.hpp"
#include "concov/coverage.hpp"
#include "concov/lp.hpp"
#include "concov/network.hpp"
#include "concov/oracle.hpp"
#include "concov/rng.hpp"

namespace concov {

using TestTarget = std::variant<NcTarget, SscTarget, BfcTarget, BfdcTarget>;

/// What a target refers to. SSC targets need `ssc`, BN targets need `bn`.
struct TargetContext {
  const Network* net = nullptr;
  const SscState* ssc = nullptr;
  const BnAbstraction* bn = nullptr;
};

/// Whether `generated` meets `target` relative to the candidate it was
/// derived from.
bool target_met(const TargetContext& ctx, const TestTarget& target, const ActivationTrace& candidate,
                const ActivationTrace& generated);

/// Input domain, one interval per feature.
struct InputBounds {
  std::vector<double> lower;
  std::vector<double> upper;
};

struct EngineConfig {
  Norm norm = Norm::linf;
  double dmin_hard = 0.01;
  double dmin_noise = 0.1;
  double epsilon = 1e-4;
  std::size_t l0_eval_budget = 128;
  std::size_t l0_max_changes = 0;  // 0: floor(n_features / 4), at least 1
  double lp_time_limit = 60.0;

  /// Throws InputError when a field is out of range.
  void validate() const;
};

/// lb = dmin_hard + uniform(0, dmin_noise).
double sample_lower_bound(const EngineConfig& cfg, Rng& rng);

// ---------------------------------------------------------------------------
// Concolic LP search

/// An LP over the inputs x' and the distance bound d, with every hidden
/// value written as an affine function of x' under the candidate's fixed
/// activation pattern.
struct LpEncoding {
  LpProblem problem;
  std::size_t d_var = 0;  // index of d; inputs are variables 0..n-1
  /// Expected ReLU signs per encoded ReLU layer: +1 active, -1 inactive.
  std::vector<std::pair<std::size_t, std::vector<signed char>>> relu_signs;
  /// Expected max-pool selections per encoded pool layer.
  std::vector<std::pair<std::size_t, std::vector<std::size_t>>> pool_selection;
};

/// Encodes the search for an input meeting `target` that keeps the
/// candidate's activation pattern up to the target layer, except for the
/// neurons the target flips. Minimizes d subject to |x'_i - x_i| <= d and
/// d >= lb. Throws InputError for targets without context.
LpEncoding lp_encode(const TargetContext& ctx, const ActivationTrace& candidate, const TestTarget& target,
                     const InputBounds& bounds, double lb, const EngineConfig& cfg);

/// Realised pattern equals the encoded one with margins of at least
/// epsilon / 2.
bool pattern_matches(const LpEncoding& enc, const ActivationTrace& trace, double epsilon);

enum class EngineStatus { found, infeasible, timeout, unverified, failed };

const char* engine_status_name(EngineStatus s);

struct EngineResult {
  EngineStatus status = EngineStatus::failed;
  Tensor x;
  double objective = 0.0;  // LP: optimal d; pixelwise: changed features
  std::string note;
};

/// Samples lb, encodes, solves and verifies the solution post hoc. A
/// solution that violates bounds, pattern or target is reported as
/// unverified.
EngineResult lp_search(const TargetContext& ctx, const ActivationTrace& candidate, const TestTarget& target,
                       const InputBounds& bounds, const EngineConfig& cfg, Rng& rng);

// ---------------------------------------------------------------------------
// Pixel-wise L0 search

/// Larger is closer to meeting the target.
double target_score(const TargetContext& ctx, const TestTarget& target, const ActivationTrace& candidate,
                    const ActivationTrace& generated);

/// Greedy coordinate search. Each round samples up to l0_eval_budget
/// unchanged features, tries each at both domain extremes and applies the
/// single change with the best score. Stops when the target is met, no
/// change improves the score, or the change budget is spent.
EngineResult pixelwise_search(const TargetContext& ctx, const ActivationTrace& candidate, const TestTarget& target,
                              const InputBounds& bounds, const EngineConfig& cfg, Rng& rng);

// ---------------------------------------------------------------------------
// Fuzzing

struct FuzzConfig {
  std::size_t iterations = 0;  // mutants in total
  std::size_t workers = 1;
  std::size_t max_changes = 0;  // 0: floor(n_features / 4), at least 1
  std::uint64_t seed = 0;
};

struct FuzzMutant {
  std::size_t index = 0;  // mutant number
  std::size_t seed_index = 0;
  std::size_t seed_label = 0;
  Tensor x;
  Verdict verdict;
};

struct FuzzResult {
  std::size_t mutants = 0;
  std::size_t accepted = 0;
  std::vector<FuzzMutant> adversarials;  // ordered by mutant number
};

/// Mutant i picks seed order[i mod |seeds|] from a seeded shuffle, draws
/// k ~ uniform{1..max_changes} distinct features and sets each to a uniform
/// value of its domain, using an RNG stream derived from (seed, i). Mutants
/// are dealt round-robin to the workers, so results do not depend on the
/// worker count.
FuzzResult fuzz(const Network& net, std::span<const Tensor> seeds, const InputBounds& bounds, const FuzzConfig& cfg,
                const OracleConfig& oracle, const LofEstimator* lof);

}  // namespace concov
