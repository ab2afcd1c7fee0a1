#pragma once

#include <cstddef>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "concov/network.hpp"
#include "concov/rng.hpp"

namespace concov {

/// Keys of (target, candidate) combinations the run loop already tried.
using AttemptSet = std::set<std::vector<std::size_t>>;

/// A ReLU layer whose neurons are covered by structural criteria.
struct CoverageLayer {
  std::size_t index = 0;  // network layer index of the ReLU
  std::string name;
  std::string display;  // name used in reports (the affine layer feeding the ReLU)
  Shape shape;
  std::size_t neurons = 0;
};

/// Resolves --layers for structural criteria. An empty list selects every
/// ReLU layer. Throws InputError for unknown or non-ReLU layers.
std::vector<CoverageLayer> select_relu_layers(const Network& net, const std::vector<std::string>& names);

// ---------------------------------------------------------------------------
// Neuron coverage

struct NcTarget {
  std::size_t layer = 0;  // network index of the ReLU layer
  std::size_t neuron = 0;
};

/// Activation witnesses per neuron. A neuron is activated by a test when its
/// pre-activation is strictly positive.
class NcState {
public:
  explicit NcState(std::vector<CoverageLayer> layers);

  void update(const ActivationTrace& trace);

  std::size_t covered_count() const { return covered_; }
  std::size_t total() const { return total_; }
  double measure() const { return total_ == 0 ? 0.0 : static_cast<double>(covered_) / static_cast<double>(total_); }
  bool covered(std::size_t layer_pos, std::size_t neuron) const { return masks_[layer_pos][neuron] != 0; }
  const std::vector<CoverageLayer>& layers() const { return layers_; }

private:
  std::vector<CoverageLayer> layers_;
  std::vector<std::vector<char>> masks_;
  std::size_t covered_ = 0;
  std::size_t total_ = 0;
};

template <class Target>
struct Selection {
  Target target;
  std::size_t candidate = 0;  // index into the suite
};

/// Picks the unwitnessed neuron and suite test whose pre-activation is
/// largest (closest to activation), skipping attempted combinations. Ties go
/// to the lowest (layer, neuron, test). Returns nullopt when exhausted.
std::optional<Selection<NcTarget>> nc_select_target(const NcState& state, std::span<const ActivationTrace> suite,
                                                    const AttemptSet& attempted);

std::vector<std::size_t> attempt_key(const NcTarget& t, std::size_t candidate);

// ---------------------------------------------------------------------------
// Sign-sign coverage

/// A decision layer for sign-sign coverage.
///
/// Decisions are the pre-activations of the affine layer feeding the selected
/// ReLU. Conditions are the entries of that affine layer's input, which must
/// be a ReLU output, possibly passed through max-pooling or flattening; a
/// condition is positive when its value is.
struct SscLayer {
  std::size_t relu = 0;            // selected ReLU layer
  std::size_t decision_layer = 0;  // affine layer producing the decisions
  std::size_t condition_layer = 0;  // layer whose output feeds decision_layer
  std::size_t condition_relu = 0;   // ReLU underlying the conditions
  Shape decision_shape;
  Shape condition_shape;
  std::size_t decisions = 0;
  std::size_t fan_in = 0;
  std::string decision_name;
  std::string condition_name;

  std::size_t pair_count() const { return decisions * fan_in; }
};

/// Decision layers for the named ReLU layers. An empty list selects every
/// ReLU layer that has a preceding ReLU layer; named layers without one are
/// an InputError.
std::vector<SscLayer> select_ssc_layers(const Network& net, const std::vector<std::string>& names);

/// Flat condition indices in the direct fan-in of `decision`, in a fixed
/// order (full input for dense, kernel receptive field for conv).
std::vector<std::size_t> decision_fan_in(const Network& net, const SscLayer& layer, std::size_t decision);

struct SscTarget {
  std::size_t layer = 0;  // position in SscState::layers()
  std::size_t decision = 0;
  std::size_t condition_pos = 0;  // position within decision_fan_in
  std::size_t condition = 0;      // flat index in the condition tensor
};

std::vector<std::size_t> attempt_key(const SscTarget& t, std::size_t candidate);

/// Covered (condition, decision) pairs. Only pairs of traces explicitly
/// passed to update() are considered, so a fresh state measures 0.
///
/// A pair is covered by two tests when the decision changes sign and the
/// condition is one of between 1 and ceil(ratio * fan_in) conditions of the
/// decision's fan-in that change sign. ratio <= 1/fan_in gives the strict
/// definition where every other condition keeps its sign.
class SscState {
public:
  SscState(const Network& net, std::vector<SscLayer> layers, double cond_ratio);

  /// Records pairs covered between `before` and `after`; returns how many
  /// were new.
  std::size_t update(const ActivationTrace& before, const ActivationTrace& after);

  std::size_t covered_count() const { return covered_; }
  std::size_t total() const { return total_; }
  double measure() const { return total_ == 0 ? 0.0 : static_cast<double>(covered_) / static_cast<double>(total_); }
  bool covered(std::size_t layer_pos, std::size_t decision, std::size_t condition_pos) const;
  std::size_t allowed_flips(std::size_t layer_pos) const;
  double cond_ratio() const { return ratio_; }
  const std::vector<SscLayer>& layers() const { return layers_; }
  const Network& network() const { return *net_; }

private:
  const Network* net_;
  std::vector<SscLayer> layers_;
  double ratio_;
  std::vector<std::unordered_set<std::uint64_t>> covered_pairs_;
  std::size_t covered_ = 0;
  std::size_t total_ = 0;
};

/// Whether `decision` flips between the traces with exactly the allowed set
/// of condition flips that includes `condition_pos`.
bool ssc_pair_covered_by(const SscState& state, const SscTarget& target, const ActivationTrace& before,
                         const ActivationTrace& after);

/// Draws an uncovered pair and a candidate test at random, falling back to
/// an ordered scan when sampling keeps hitting covered or attempted pairs.
std::optional<Selection<SscTarget>> ssc_select_target(const SscState& state, std::size_t suite_size, Rng& rng,
                                                      const AttemptSet& attempted);

}  // namespace concov
