#pragma once

#include <cstdint>
#include <set>
#include <tuple>
#include <utility>
#include <vector>

#include "concov/bn.hpp"
#include "concov/network.hpp"
#include "concov/runner.hpp"

namespace concov::testing {

// Batch NC over the tests added up to `iteration`: neurons of every ReLU
// layer with a strictly positive input on some test.
inline CoveragePoint batch_nc(const Network& net, const std::vector<SuiteTest>& suite, std::size_t iteration) {
  std::set<std::pair<std::size_t, std::size_t>> seen;
  std::uint64_t total = 0;
  for (std::size_t k = 0; k < net.depth(); ++k) {
    if (std::holds_alternative<ReLU>(net.layer(k).kind)) total += shape_size(net.output_shape_of(k));
  }
  for (const auto& t : suite) {
    if (t.iteration > iteration) continue;
    const auto tr = forward_trace(net, t.x);
    for (std::size_t k = 0; k < net.depth(); ++k) {
      if (!std::holds_alternative<ReLU>(net.layer(k).kind)) continue;
      for (std::size_t i = 0; i < tr.layers[k].u.size(); ++i) {
        if (tr.layers[k].u[i] > 0) seen.insert({k, i});
      }
    }
  }
  return {seen.size(), total};
}

// Batch BFC: distinct (layer, feature, interval) triples over the tests
// added up to `iteration`.
inline CoveragePoint batch_bfc(const Network& net, const std::vector<BnLayer>& layers, const std::vector<SuiteTest>& suite,
                        std::size_t iteration) {
  std::set<std::tuple<std::size_t, std::size_t, std::size_t>> seen;
  std::uint64_t total = 0;
  for (const auto& l : layers)
    for (const auto& s : l.intervals) total += s.count();
  for (const auto& t : suite) {
    if (t.iteration > iteration) continue;
    const auto tr = forward_trace(net, t.x);
    for (std::size_t li = 0; li < layers.size(); ++li) {
      const auto v = tr.layers[net.index_of(layers[li].name)].v.values();
      const Projection& p = layers[li].projection;
      for (std::size_t f = 0; f < p.num_features(); ++f) {
        double y = 0;
        for (std::size_t j = 0; j < v.size(); ++j) y += p.components[f][j] * (v[j] - p.mean[j]);
        seen.insert({li, f, layers[li].intervals[f].index_of(y)});
      }
    }
  }
  return {seen.size(), total};
}

}  // namespace concov::testing
