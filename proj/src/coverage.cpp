#include "concov/coverage.hpp"

#include <fmt/format.h>

#include <cmath>
#include <variant>

#include "concov/error.hpp"

namespace concov {

std::vector<CoverageLayer> select_relu_layers(const Network& net, const std::vector<std::string>& names) {
  std::vector<std::size_t> indices;
  if (names.empty()) {
    for (std::size_t k = 0; k < net.depth(); ++k) {
      if (std::holds_alternative<ReLU>(net.layer(k).kind)) indices.push_back(k);
    }
  } else {
    for (const auto& n : names) {
      const std::size_t k = net.index_of(n);
      if (!std::holds_alternative<ReLU>(net.layer(k).kind)) {
        throw InputError(fmt::format("layer '{}' is a {} layer; structural criteria only cover ReLU layers", n,
                                     kind_name(net.layer(k).kind)));
      }
      indices.push_back(k);
    }
  }
  if (indices.empty()) {
    throw InputError("no ReLU layer to cover");
  }
  std::vector<CoverageLayer> layers;
  for (std::size_t k : indices) {
    const Shape& s = net.output_shape_of(k);
    layers.push_back({k, net.layer(k).name, neuron_layer_name(net, k), s, shape_size(s)});
  }
  return layers;
}

NcState::NcState(std::vector<CoverageLayer> layers) : layers_(std::move(layers)) {
  for (const auto& l : layers_) {
    masks_.emplace_back(l.neurons, 0);
    total_ += l.neurons;
  }
}

void NcState::update(const ActivationTrace& trace) {
  if (trace.layers.empty()) return;
  for (std::size_t p = 0; p < layers_.size(); ++p) {
    const auto& l = layers_[p];
    if (l.index >= trace.layers.size() || trace.layers[l.index].u.size() != l.neurons) {
      throw InputError("activation trace does not match the covered network");
    }
    const auto u = trace.layers[l.index].u.values();
    auto& mask = masks_[p];
    for (std::size_t i = 0; i < l.neurons; ++i) {
      if (!mask[i] && u[i] > 0.0) {
        mask[i] = 1;
        ++covered_;
      }
    }
  }
}

std::vector<std::size_t> attempt_key(const NcTarget& t, std::size_t candidate) {
  return {0, t.layer, t.neuron, candidate};
}

std::optional<Selection<NcTarget>> nc_select_target(const NcState& state, std::span<const ActivationTrace> suite,
                                                    const AttemptSet& attempted) {
  std::optional<Selection<NcTarget>> best;
  double best_u = 0.0;
  for (std::size_t p = 0; p < state.layers().size(); ++p) {
    const auto& l = state.layers()[p];
    for (std::size_t i = 0; i < l.neurons; ++i) {
      if (state.covered(p, i)) continue;
      for (std::size_t t = 0; t < suite.size(); ++t) {
        const double u = suite[t].layers[l.index].u[i];
        if (best && u <= best_u) continue;
        const NcTarget target{l.index, i};
        if (attempted.contains(attempt_key(target, t))) continue;
        best = Selection<NcTarget>{target, t};
        best_u = u;
      }
    }
  }
  return best;
}

// ---------------------------------------------------------------------------

namespace {

// Decision layer behind ReLU layer `cl`, or an explanation of why there is
// none.
std::variant<SscLayer, std::string> ssc_layer_for(const Network& net, const CoverageLayer& cl) {
  SscLayer l;
  l.relu = cl.index;
  if (cl.index == 0 || !is_affine(net.layer(cl.index - 1))) {
    return fmt::format("layer '{}' is not fed by a dense or conv layer and cannot hold decisions", cl.name);
  }
  l.decision_layer = cl.index - 1;
  const std::string no_conditions = fmt::format("layer '{}' has no preceding ReLU layer to provide conditions", cl.name);
  if (l.decision_layer == 0) return no_conditions;
  l.condition_layer = l.decision_layer - 1;
  std::size_t k = l.condition_layer;
  while (k > 0 &&
         (std::holds_alternative<MaxPool2D>(net.layer(k).kind) || std::holds_alternative<Flatten>(net.layer(k).kind))) {
    --k;
  }
  if (!std::holds_alternative<ReLU>(net.layer(k).kind)) return no_conditions;
  l.condition_relu = k;
  l.decision_shape = net.output_shape_of(l.decision_layer);
  l.condition_shape = net.output_shape_of(l.condition_layer);
  l.decisions = shape_size(l.decision_shape);
  const auto& kind = net.layer(l.decision_layer).kind;
  if (const auto* c = std::get_if<Conv2D>(&kind)) {
    l.fan_in = c->kernel_h * c->kernel_w * c->in_ch;
  } else {
    l.fan_in = shape_size(l.condition_shape);
  }
  l.decision_name = net.layer(l.decision_layer).name;
  l.condition_name = neuron_layer_name(net, l.condition_relu);
  return l;
}

}  // namespace

std::vector<SscLayer> select_ssc_layers(const Network& net, const std::vector<std::string>& names) {
  std::vector<SscLayer> out;
  for (const auto& cl : select_relu_layers(net, names)) {
    auto l = ssc_layer_for(net, cl);
    if (auto* layer = std::get_if<SscLayer>(&l)) {
      out.push_back(std::move(*layer));
    } else if (!names.empty()) {
      throw InputError(std::get<std::string>(l));
    }
  }
  if (out.empty()) throw InputError("no ReLU layer of the network can hold sign-sign decisions");
  return out;
}

std::vector<std::size_t> decision_fan_in(const Network& net, const SscLayer& layer, std::size_t decision) {
  std::vector<std::size_t> idx;
  idx.reserve(layer.fan_in);
  const auto& kind = net.layer(layer.decision_layer).kind;
  if (const auto* c = std::get_if<Conv2D>(&kind)) {
    const std::size_t out_w = layer.decision_shape[1];
    const std::size_t in_w = layer.condition_shape[1];
    const std::size_t cell = decision / c->out_ch;
    const std::size_t oh = cell / out_w, ow = cell % out_w;
    for (std::size_t i = 0; i < c->kernel_h; ++i)
      for (std::size_t j = 0; j < c->kernel_w; ++j)
        for (std::size_t ic = 0; ic < c->in_ch; ++ic)
          idx.push_back(((oh * c->stride + i) * in_w + (ow * c->stride + j)) * c->in_ch + ic);
  } else {
    for (std::size_t i = 0; i < layer.fan_in; ++i) idx.push_back(i);
  }
  return idx;
}

std::vector<std::size_t> attempt_key(const SscTarget& t, std::size_t candidate) {
  return {1, t.layer, t.decision, t.condition_pos, candidate};
}

SscState::SscState(const Network& net, std::vector<SscLayer> layers, double cond_ratio)
    : net_(&net), layers_(std::move(layers)), ratio_(cond_ratio), covered_pairs_(layers_.size()) {
  if (!(cond_ratio > 0.0 && cond_ratio <= 1.0)) {
    throw InputError(fmt::format("condition ratio must lie in (0, 1], got {}", cond_ratio));
  }
  for (const auto& l : layers_) total_ += l.pair_count();
}

std::size_t SscState::allowed_flips(std::size_t layer_pos) const {
  const double limit = std::ceil(ratio_ * static_cast<double>(layers_[layer_pos].fan_in) - 1e-9);
  return std::max<std::size_t>(1, static_cast<std::size_t>(limit));
}

bool SscState::covered(std::size_t layer_pos, std::size_t decision, std::size_t condition_pos) const {
  const auto& l = layers_[layer_pos];
  return covered_pairs_[layer_pos].contains(static_cast<std::uint64_t>(decision) * l.fan_in + condition_pos);
}

namespace {

std::vector<char> condition_flips(const SscLayer& l, const ActivationTrace& a, const ActivationTrace& b) {
  const auto ca = a.layers[l.condition_layer].v.values();
  const auto cb = b.layers[l.condition_layer].v.values();
  if (ca.size() != cb.size() || ca.size() != shape_size(l.condition_shape)) {
    throw InputError("activation traces do not match the covered network");
  }
  std::vector<char> flips(ca.size());
  for (std::size_t i = 0; i < ca.size(); ++i) flips[i] = (ca[i] > 0.0) != (cb[i] > 0.0);
  return flips;
}

bool decision_flipped(const SscLayer& l, const ActivationTrace& a, const ActivationTrace& b, std::size_t d) {
  return (a.layers[l.decision_layer].u[d] > 0.0) != (b.layers[l.decision_layer].u[d] > 0.0);
}

}  // namespace

std::size_t SscState::update(const ActivationTrace& before, const ActivationTrace& after) {
  std::size_t fresh = 0;
  for (std::size_t p = 0; p < layers_.size(); ++p) {
    const auto& l = layers_[p];
    const auto flips = condition_flips(l, before, after);
    const std::size_t allowed = allowed_flips(p);
    if (before.layers[l.decision_layer].u.size() != l.decisions ||
        after.layers[l.decision_layer].u.size() != l.decisions) {
      throw InputError("activation traces do not match the covered network");
    }
    for (std::size_t d = 0; d < l.decisions; ++d) {
      if (!decision_flipped(l, before, after, d)) continue;
      const auto fan = decision_fan_in(*net_, l, d);
      std::size_t n = 0;
      for (std::size_t c : fan) n += flips[c] ? 1 : 0;
      if (n == 0 || n > allowed) continue;
      for (std::size_t pos = 0; pos < fan.size(); ++pos) {
        if (flips[fan[pos]] && covered_pairs_[p].insert(static_cast<std::uint64_t>(d) * l.fan_in + pos).second) {
          ++fresh;
        }
      }
    }
  }
  covered_ += fresh;
  return fresh;
}

bool ssc_pair_covered_by(const SscState& state, const SscTarget& target, const ActivationTrace& before,
                         const ActivationTrace& after) {
  const auto& l = state.layers()[target.layer];
  if (!decision_flipped(l, before, after, target.decision)) return false;
  const auto flips = condition_flips(l, before, after);
  const auto fan = decision_fan_in(state.network(), l, target.decision);
  if (!flips[fan[target.condition_pos]]) return false;
  std::size_t n = 0;
  for (std::size_t c : fan) n += flips[c] ? 1 : 0;
  return n <= state.allowed_flips(target.layer);
}

std::optional<Selection<SscTarget>> ssc_select_target(const SscState& state, std::size_t suite_size, Rng& rng,
                                                      const AttemptSet& attempted) {
  if (suite_size == 0 || state.covered_count() == state.total()) return std::nullopt;
  const auto& layers = state.layers();
  auto make = [&](std::size_t p, std::size_t d, std::size_t pos) {
    const auto fan = decision_fan_in(state.network(), layers[p], d);
    return SscTarget{p, d, pos, fan[pos]};
  };
  for (int attempt = 0; attempt < 256; ++attempt) {
    const std::size_t t = rng.below(suite_size);
    const std::size_t p = rng.below(layers.size());
    const std::size_t d = rng.below(layers[p].decisions);
    const std::size_t pos = rng.below(layers[p].fan_in);
    if (state.covered(p, d, pos)) continue;
    const auto target = make(p, d, pos);
    if (attempted.contains(attempt_key(target, t))) continue;
    return Selection<SscTarget>{target, t};
  }
  for (std::size_t p = 0; p < layers.size(); ++p)
    for (std::size_t d = 0; d < layers[p].decisions; ++d)
      for (std::size_t pos = 0; pos < layers[p].fan_in; ++pos) {
        if (state.covered(p, d, pos)) continue;
        const auto target = make(p, d, pos);
        for (std::size_t t = 0; t < suite_size; ++t) {
          if (!attempted.contains(attempt_key(target, t))) return Selection<SscTarget>{target, t};
        }
      }
  return std::nullopt;
}

}  // namespace concov
