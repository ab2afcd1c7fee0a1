#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "concov/network.hpp"

namespace concov {

enum class Norm { l0, linf };

/// "l0" / "linf" (case-insensitive).
Norm parse_norm(const std::string& text);
/// "L0" / "Linf", as printed in reports.
const char* norm_name(Norm n);

/// Number of features whose values differ by more than 1e-12.
double norm_l0(std::span<const double> a, std::span<const double> b);
double norm_linf(std::span<const double> a, std::span<const double> b);
double norm_distance(Norm n, std::span<const double> a, std::span<const double> b);

/// Default threshold: 1/4 for L-infinity, floor(n_features / 4) for L0.
double default_dthr(Norm n, std::size_t n_features);

// ---------------------------------------------------------------------------
// Local outlier factor

double cosine_distance(std::span<const double> a, std::span<const double> b);

/// Local outlier factor over a fixed reference sample with cosine distance.
///
/// k nearest neighbours are ranked by distance, ties by sample index.
/// reach(a, b) = max(k-distance(b), d(a, b)); lrd(a) = 1 / (mean reach of a
/// to its neighbours + 1e-10), the offset keeping duplicated points finite;
/// LOF(a) = mean lrd of the neighbours / lrd(a).
class LofEstimator {
public:
  /// Zero vectors are dropped from the sample. Throws InputError when fewer
  /// than k + 1 usable points remain or k < 1.
  LofEstimator(std::vector<std::vector<double>> sample, std::size_t k);

  /// Score of a new point. Throws InputError for a zero vector.
  double score(std::span<const double> x) const;
  /// Score of sample point i against the rest of the sample.
  double score_member(std::size_t i) const;

  std::size_t size() const { return sample_.size(); }
  std::size_t k() const { return k_; }

private:
  struct Neighbour {
    double dist;
    std::size_t index;
  };
  std::vector<Neighbour> neighbours(std::span<const double> x, long skip) const;
  double lof_of(const std::vector<Neighbour>& nn) const;

  std::vector<std::vector<double>> sample_;
  std::size_t k_;
  std::vector<double> k_distance_;
  std::vector<double> lrd_;
};

// ---------------------------------------------------------------------------
// Verdicts

struct OracleConfig {
  Norm norm = Norm::linf;
  double dthr = 0.25;
  bool lof_enabled = false;
  std::size_t lof_k = 20;
  double lof_threshold = 1.5;
  std::size_t lof_sample = 3000;
};

enum class RejectReason { none, distance, outlier };

const char* reject_reason_name(RejectReason r);

struct Verdict {
  bool accepted = false;
  double distance = 0.0;
  std::optional<double> lof_score;
  bool adversarial = false;
  RejectReason reason = RejectReason::none;
  std::size_t label = 0;  // label of the generated input
};

/// Accepts x2 when its distance to the reference x is within dthr and, with
/// LOF enabled, its outlier score is at most the threshold. An accepted x2 is
/// adversarial when its label differs from the reference label.
Verdict vet(const OracleConfig& cfg, const LofEstimator* lof, std::span<const double> x, std::size_t x_label,
            std::span<const double> x2, std::size_t x2_label);

/// Same, classifying both inputs with `net`.
Verdict vet(const OracleConfig& cfg, const LofEstimator* lof, const Network& net, const Tensor& x, const Tensor& x2);

}  // namespace concov
