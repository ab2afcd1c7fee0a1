#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "concov/coverage.hpp"
#include "concov/network.hpp"

namespace concov {

// ---------------------------------------------------------------------------
// Feature extraction

/// Linear projection of one layer's activations onto its principal
/// components: features = components * (v - mean).
struct Projection {
  std::vector<double> mean;
  std::vector<std::vector<double>> components;  // [feature][neuron], orthonormal rows
  std::vector<double> variance_ratios;          // per component

  std::size_t num_features() const { return components.size(); }
  std::size_t input_size() const { return mean.size(); }
  double captured_variance() const;
};

/// PCA through the sample covariance (divisor n - 1). Components are ordered
/// by decreasing eigenvalue and signed so that their largest-magnitude entry
/// is positive. When there are fewer samples than neurons the n x n Gram
/// matrix is decomposed instead; both give the same components.
/// Throws DataError when fewer than `num_features` eigenvalues are nonzero.
Projection pca_fit(const std::vector<std::vector<double>>& samples, std::size_t num_features);

std::vector<double> pca_project(const Projection& proj, std::span<const double> activations);

// ---------------------------------------------------------------------------
// Discretization

enum class DiscrStrategy { uniform, quantile };

DiscrStrategy parse_discr_strategy(const std::string& text);
const char* strategy_name(DiscrStrategy s);

/// Bounds of one interval. Values v with lower <= v < upper belong to it,
/// with the inequalities flipped by the two flags.
struct Interval {
  double lower;
  double upper;
  bool lower_open = false;
  bool upper_closed = false;

  bool contains(double v) const {
    return (lower_open ? v > lower : v >= lower) && (upper_closed ? v <= upper : v < upper);
  }
};

/// Ordered boundaries b_1 < ... < b_{m-1} splitting the real line into m
/// intervals (-inf, b_1), [b_1, b_2), ..., [b_{m-1}, inf).
///
/// An extended set was fitted with b_1 and b_{m-1} at the training minimum
/// and maximum, so its outer intervals hold values never seen in training:
/// (-inf, min), [min, b_2), ..., [b_{m-2}, max], (max, inf).
/// A non-extended set spreads its intervals over the training range and is
/// shown as [min, b_1), ..., [b_{m-1}, max]; values outside that range fall
/// into the outermost intervals.
struct IntervalSet {
  std::vector<double> boundaries;
  bool extended = false;
  double range_lo = 0.0;
  double range_hi = 0.0;

  std::size_t count() const { return boundaries.size() + 1; }
  std::size_t index_of(double value) const;
  Interval interval(std::size_t i) const;
  /// Distance from `value` to interval i (0 inside).
  double distance(double value, std::size_t i) const;
  /// "(-inf, -15.6)", "[-15.6, 155]", "(155, inf)", ...
  std::string format(std::size_t i) const;
};

/// Formats a boundary with 3 significant digits ("%.3g").
std::string format_boundary(double value);

/// Fits m intervals (m >= 2, or m >= 3 when extended) to the projected
/// training values of one feature. Coinciding quantile boundaries are merged,
/// so the result may hold fewer intervals. Throws DataError for a constant
/// feature.
IntervalSet discretize_fit(std::span<const double> values, std::size_t m, DiscrStrategy strategy, bool extended,
                           std::size_t feature = 0);

// ---------------------------------------------------------------------------
// Bayesian-network abstraction

struct BnLayer {
  std::string name;
  Projection projection;
  std::vector<IntervalSet> intervals;  // one per feature
};

/// Projected values and interval indices of one test, per BN layer and
/// feature.
struct TestFeatures {
  std::vector<std::vector<double>> values;
  std::vector<std::vector<std::size_t>> bins;
};

/// Nodes are (layer, feature) pairs; every feature of a layer is a parent of
/// every feature of the next layer. Count tables are empirical frequencies
/// of the tests added so far.
class BnAbstraction {
public:
  /// Resolves layer names against `net` and checks projection sizes.
  BnAbstraction(const Network& net, std::vector<BnLayer> layers);

  const std::vector<BnLayer>& layers() const { return layers_; }
  std::size_t layer_index(std::size_t pos) const { return indices_[pos]; }
  std::size_t node_count() const;
  std::size_t edge_count() const;
  std::size_t fitted() const { return fitted_; }

  TestFeatures features_of(const ActivationTrace& trace) const;

  void add(const TestFeatures& test);
  void clear();

  std::uint64_t marginal(std::size_t layer, std::size_t feature, std::size_t interval) const {
    return marginal_[layer][feature][interval];
  }
  /// Mixed-radix key of the parent interval combination of `layer`.
  std::uint64_t parent_key(std::size_t layer, std::span<const std::size_t> parent_bins) const;
  std::vector<std::size_t> parent_bins(std::size_t layer, std::uint64_t key) const;
  std::uint64_t parent_count(std::size_t layer, std::uint64_t key) const;
  std::uint64_t joint(std::size_t layer, std::size_t feature, std::uint64_t key, std::size_t interval) const;
  /// Parent combinations of `layer` with a positive count, in key order.
  std::vector<std::uint64_t> active_parents(std::size_t layer) const;

  std::uint64_t bfc_covered() const;
  std::uint64_t bfc_total() const;
  double bfc_measure() const;

  std::uint64_t bfdc_covered() const;
  std::uint64_t bfdc_total() const;
  /// Throws InputError for single-layer abstractions.
  double bfdc_measure() const;

private:
  std::vector<BnLayer> layers_;
  std::vector<std::size_t> indices_;
  std::vector<std::vector<std::vector<std::uint64_t>>> marginal_;
  std::vector<std::map<std::uint64_t, std::uint64_t>> parents_;
  std::vector<std::vector<std::map<std::uint64_t, std::vector<std::uint64_t>>>> joint_;
  std::size_t fitted_ = 0;
};

/// Clears the count tables and fits them to `tests`.
void bn_fit(BnAbstraction& abstr, const Network& net, std::span<const Tensor> tests);

struct CreateOptions {
  std::vector<std::string> layers;
  std::size_t num_features = 3;
  std::size_t num_intervals = 3;
  DiscrStrategy strategy = DiscrStrategy::uniform;
  bool extended = false;
};

/// Fits projections and intervals on a training sample, logging progress.
std::vector<BnLayer> create_abstraction(const Network& net, std::span<const Tensor> sample,
                                        const CreateOptions& options, std::ostream& log);

inline constexpr const char* kAbstractionFormat = "concov-bnabstr-v1";

void save_abstraction(const std::vector<BnLayer>& layers, const std::filesystem::path& path);
std::vector<BnLayer> load_abstraction(const std::filesystem::path& path);
std::string abstraction_to_json(const std::vector<BnLayer>& layers);
std::vector<BnLayer> abstraction_from_json(const std::string& text);

/// Table of extracted features and their intervals.
void show_abstraction(const std::vector<BnLayer>& layers, std::ostream& out);

// ---------------------------------------------------------------------------
// Targets

struct BfcTarget {
  std::size_t layer = 0;  // position in BnAbstraction::layers()
  std::size_t feature = 0;
  std::size_t interval = 0;
};

struct BfdcTarget {
  std::size_t layer = 0;  // >= 1
  std::size_t feature = 0;
  std::size_t interval = 0;
  std::vector<std::size_t> parent_bins;
};

std::vector<std::size_t> attempt_key(const BfcTarget& t, std::size_t candidate);
std::vector<std::size_t> attempt_key(const BfdcTarget& t, std::size_t candidate);

/// First interval (in layer, feature, interval order) with a zero count,
/// paired with the test whose feature value lies closest to it.
std::optional<Selection<BfcTarget>> bfc_select_target(const BnAbstraction& abstr,
                                                      std::span<const TestFeatures> suite,
                                                      const AttemptSet& attempted);

/// First unexercised (parent combination, child interval) entry whose parent
/// combination occurs, paired with the test exhibiting that combination whose
/// child value lies closest to the interval.
std::optional<Selection<BfdcTarget>> bfdc_select_target(const BnAbstraction& abstr,
                                                        std::span<const TestFeatures> suite,
                                                        const AttemptSet& attempted);

}  // namespace concov
