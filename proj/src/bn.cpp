#include "concov/bn.hpp"

#include <fmt/format.h>

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "concov/error.hpp"

namespace concov {

// ---------------------------------------------------------------------------
// PCA

double Projection::captured_variance() const {
  return std::accumulate(variance_ratios.begin(), variance_ratios.end(), 0.0);
}

Projection pca_fit(const std::vector<std::vector<double>>& samples, std::size_t num_features) {
  if (num_features == 0) {
    throw InputError("PCA needs at least one feature");
  }
  const auto n = static_cast<Eigen::Index>(samples.size());
  if (samples.size() < 2 || samples.size() < num_features) {
    throw DataError(fmt::format("PCA with {} features needs at least {} samples, got {}", num_features,
                                std::max<std::size_t>(2, num_features), samples.size()));
  }
  const auto d = static_cast<Eigen::Index>(samples[0].size());
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(samples[i].size()) != d) throw InputError("PCA samples differ in length");
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = samples[i][j];
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  const double denom = static_cast<double>(n - 1);

  // eigenvalues descending, eigenvectors as matching columns over neurons
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
  if (d <= n) {
    const Eigen::MatrixXd cov = (x.transpose() * x) / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    values = es.eigenvalues().reverse();
    vectors = es.eigenvectors().rowwise().reverse();
  } else {
    const Eigen::MatrixXd gram = (x * x.transpose()) / denom;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    values = es.eigenvalues().reverse();
    const Eigen::MatrixXd u = es.eigenvectors().rowwise().reverse();
    vectors = Eigen::MatrixXd::Zero(d, n);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (values(i) > 0) vectors.col(i) = x.transpose() * u.col(i) / std::sqrt(denom * values(i));
    }
  }

  const double top = values.size() > 0 ? std::max(values(0), 0.0) : 0.0;
  const double tol = 1e-12 * top;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (values(i) <= tol) values(i) = 0.0;
  }
  const double total = values.sum();
  std::size_t nonzero = 0;
  for (Eigen::Index i = 0; i < values.size(); ++i) nonzero += values(i) > 0 ? 1 : 0;
  if (nonzero < num_features) {
    throw DataError(
        fmt::format("activations have only {} nonzero principal components, {} requested", nonzero, num_features));
  }

  Projection p;
  p.mean.assign(mean.data(), mean.data() + d);
  for (std::size_t f = 0; f < num_features; ++f) {
    Eigen::VectorXd c = vectors.col(static_cast<Eigen::Index>(f));
    c.normalize();
    Eigen::Index arg = 0;
    for (Eigen::Index j = 1; j < d; ++j) {
      if (std::abs(c(j)) > std::abs(c(arg))) arg = j;
    }
    if (c(arg) < 0) c = -c;
    p.components.emplace_back(c.data(), c.data() + d);
    p.variance_ratios.push_back(values(static_cast<Eigen::Index>(f)) / total);
  }
  return p;
}

std::vector<double> pca_project(const Projection& proj, std::span<const double> activations) {
  if (activations.size() != proj.input_size()) {
    throw InputError(fmt::format("projection expects {} activations, got {}", proj.input_size(), activations.size()));
  }
  std::vector<double> out(proj.num_features(), 0.0);
  for (std::size_t f = 0; f < out.size(); ++f) {
    const auto& c = proj.components[f];
    double acc = 0.0;
    for (std::size_t j = 0; j < activations.size(); ++j) acc += c[j] * (activations[j] - proj.mean[j]);
    out[f] = acc;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Intervals

DiscrStrategy parse_discr_strategy(const std::string& text) {
  if (text == "uniform") return DiscrStrategy::uniform;
  if (text == "quantile") return DiscrStrategy::quantile;
  throw InputError(fmt::format("unknown discretization strategy '{}' (expected uniform or quantile)", text));
}

const char* strategy_name(DiscrStrategy s) { return s == DiscrStrategy::uniform ? "uniform" : "quantile"; }

std::size_t IntervalSet::index_of(double value) const {
  const auto i =
      static_cast<std::size_t>(std::upper_bound(boundaries.begin(), boundaries.end(), value) - boundaries.begin());
  // the training maximum stays inside the last inner interval
  if (extended && i == boundaries.size() && value == boundaries.back()) return i - 1;
  return i;
}

Interval IntervalSet::interval(std::size_t i) const {
  constexpr double inf = std::numeric_limits<double>::infinity();
  Interval r{i == 0 ? -inf : boundaries[i - 1], i == boundaries.size() ? inf : boundaries[i]};
  if (extended && !boundaries.empty()) {
    r.upper_closed = i + 2 == count();
    r.lower_open = i + 1 == count();
  }
  return r;
}

double IntervalSet::distance(double value, std::size_t i) const {
  const auto r = interval(i);
  if (r.contains(value)) return 0.0;
  return value <= r.lower ? r.lower - value : value - r.upper;
}

std::string format_boundary(double value) { return fmt::format("{:.3g}", value); }

std::string IntervalSet::format(std::size_t i) const {
  const auto [lo, hi, lo_open, hi_closed] = interval(i);
  const bool first = i == 0, last = i + 1 == count();
  if (extended) {
    if (first) return fmt::format("(-inf, {})", format_boundary(hi));
    if (last) return fmt::format("({}, inf)", format_boundary(lo));
    return fmt::format("[{}, {}{}", format_boundary(lo), format_boundary(hi), hi_closed ? "]" : ")");
  }
  const double shown_lo = first ? range_lo : lo;
  const double shown_hi = last ? range_hi : hi;
  return fmt::format("[{}, {}{}", format_boundary(shown_lo), format_boundary(shown_hi), last ? "]" : ")");
}

namespace {

double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

}  // namespace

IntervalSet discretize_fit(std::span<const double> values, std::size_t m, DiscrStrategy strategy, bool extended,
                           std::size_t feature) {
  if (m < (extended ? 3u : 2u)) {
    throw InputError(fmt::format("{} discretization needs at least {} intervals, got {}",
                                 extended ? "extended" : "plain", extended ? 3 : 2, m));
  }
  if (values.empty()) {
    throw DataError(fmt::format("feature {} has no training values", feature));
  }
  std::vector<double> sorted(values.begin(), values.end());
  std::ranges::sort(sorted);
  const double lo = sorted.front(), hi = sorted.back();
  if (!(lo < hi)) {
    throw DataError(fmt::format("feature {} is constant over the training sample", feature));
  }

  IntervalSet set;
  set.extended = extended;
  set.range_lo = lo;
  set.range_hi = hi;
  std::vector<double> b;
  const std::size_t inner = extended ? m - 2 : m;
  if (extended) b.push_back(lo);
  for (std::size_t i = 1; i < inner; ++i) {
    const double q = static_cast<double>(i) / static_cast<double>(inner);
    b.push_back(strategy == DiscrStrategy::uniform ? lo + q * (hi - lo) : quantile(sorted, q));
  }
  if (extended) b.push_back(hi);
  for (double v : b) {
    if (set.boundaries.empty() || v > set.boundaries.back()) set.boundaries.push_back(v);
  }
  return set;
}

// ---------------------------------------------------------------------------
// Abstraction

BnAbstraction::BnAbstraction(const Network& net, std::vector<BnLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) {
    throw InputError("a BN abstraction needs at least one layer");
  }
  for (const auto& l : layers_) {
    const std::size_t k = net.index_of(l.name);
    const std::size_t n = shape_size(net.output_shape_of(k));
    if (l.projection.input_size() != n) {
      throw DataError(fmt::format("abstraction layer '{}' projects {} neurons but the network layer has {}", l.name,
                                  l.projection.input_size(), n));
    }
    if (l.intervals.size() != l.projection.num_features() || l.projection.num_features() == 0) {
      throw DataError(fmt::format("abstraction layer '{}' needs one interval set per feature", l.name));
    }
    indices_.push_back(k);
  }
  clear();
}

void BnAbstraction::clear() {
  fitted_ = 0;
  marginal_.clear();
  parents_.assign(layers_.size(), {});
  joint_.assign(layers_.size(), {});
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    auto& per_feature = marginal_.emplace_back();
    for (const auto& set : layers_[l].intervals) per_feature.emplace_back(set.count(), 0);
    joint_[l].resize(layers_[l].intervals.size());
  }
}

std::size_t BnAbstraction::node_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.projection.num_features();
  return n;
}

std::size_t BnAbstraction::edge_count() const {
  std::size_t e = 0;
  for (std::size_t l = 1; l < layers_.size(); ++l) {
    e += layers_[l - 1].projection.num_features() * layers_[l].projection.num_features();
  }
  return e;
}

TestFeatures BnAbstraction::features_of(const ActivationTrace& trace) const {
  TestFeatures tf;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    auto values = pca_project(layers_[l].projection, trace.layers[indices_[l]].v.values());
    std::vector<std::size_t> bins;
    for (std::size_t f = 0; f < values.size(); ++f) bins.push_back(layers_[l].intervals[f].index_of(values[f]));
    tf.values.push_back(std::move(values));
    tf.bins.push_back(std::move(bins));
  }
  return tf;
}

std::uint64_t BnAbstraction::parent_key(std::size_t layer, std::span<const std::size_t> parent_bins) const {
  const auto& parents = layers_[layer - 1].intervals;
  std::uint64_t key = 0;
  for (std::size_t f = 0; f < parents.size(); ++f) key = key * parents[f].count() + parent_bins[f];
  return key;
}

std::vector<std::size_t> BnAbstraction::parent_bins(std::size_t layer, std::uint64_t key) const {
  const auto& parents = layers_[layer - 1].intervals;
  std::vector<std::size_t> bins(parents.size());
  for (std::size_t f = parents.size(); f-- > 0;) {
    bins[f] = key % parents[f].count();
    key /= parents[f].count();
  }
  return bins;
}

void BnAbstraction::add(const TestFeatures& test) {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    for (std::size_t f = 0; f < test.bins[l].size(); ++f) ++marginal_[l][f][test.bins[l][f]];
    if (l == 0) continue;
    const std::uint64_t key = parent_key(l, test.bins[l - 1]);
    ++parents_[l][key];
    for (std::size_t f = 0; f < test.bins[l].size(); ++f) {
      auto& row = joint_[l][f][key];
      if (row.empty()) row.assign(layers_[l].intervals[f].count(), 0);
      ++row[test.bins[l][f]];
    }
  }
  ++fitted_;
}

std::uint64_t BnAbstraction::parent_count(std::size_t layer, std::uint64_t key) const {
  const auto it = parents_[layer].find(key);
  return it == parents_[layer].end() ? 0 : it->second;
}

std::uint64_t BnAbstraction::joint(std::size_t layer, std::size_t feature, std::uint64_t key,
                                   std::size_t interval) const {
  const auto& table = joint_[layer][feature];
  const auto it = table.find(key);
  return it == table.end() ? 0 : it->second[interval];
}

std::vector<std::uint64_t> BnAbstraction::active_parents(std::size_t layer) const {
  std::vector<std::uint64_t> keys;
  for (const auto& [key, count] : parents_[layer]) {
    if (count > 0) keys.push_back(key);
  }
  return keys;
}

std::uint64_t BnAbstraction::bfc_covered() const {
  std::uint64_t n = 0;
  for (const auto& layer : marginal_)
    for (const auto& feature : layer)
      for (auto c : feature) n += c > 0 ? 1 : 0;
  return n;
}

std::uint64_t BnAbstraction::bfc_total() const {
  std::uint64_t n = 0;
  for (const auto& layer : marginal_)
    for (const auto& feature : layer) n += feature.size();
  return n;
}

double BnAbstraction::bfc_measure() const {
  return static_cast<double>(bfc_covered()) / static_cast<double>(bfc_total());
}

std::uint64_t BnAbstraction::bfdc_covered() const {
  std::uint64_t n = 0;
  for (std::size_t l = 1; l < layers_.size(); ++l)
    for (const auto& table : joint_[l])
      for (const auto& [key, row] : table)
        for (auto c : row) n += c > 0 ? 1 : 0;
  return n;
}

std::uint64_t BnAbstraction::bfdc_total() const {
  std::uint64_t n = 0;
  for (std::size_t l = 1; l < layers_.size(); ++l) {
    const std::uint64_t active = active_parents(l).size();
    for (const auto& set : layers_[l].intervals) n += active * set.count();
  }
  return n;
}

double BnAbstraction::bfdc_measure() const {
  if (layers_.size() < 2) {
    throw InputError("feature-dependence coverage needs an abstraction of at least two layers");
  }
  const auto total = bfdc_total();
  return total == 0 ? 0.0 : static_cast<double>(bfdc_covered()) / static_cast<double>(total);
}

void bn_fit(BnAbstraction& abstr, const Network& net, std::span<const Tensor> tests) {
  abstr.clear();
  for (const auto& x : tests) abstr.add(abstr.features_of(forward_trace(net, x)));
}

std::vector<BnLayer> create_abstraction(const Network& net, std::span<const Tensor> sample,
                                        const CreateOptions& options, std::ostream& log) {
  if (options.layers.empty()) {
    throw InputError("select at least one layer for the abstraction");
  }
  std::vector<std::size_t> indices;
  for (const auto& name : options.layers) {
    const std::size_t k = net.index_of(name);
    if (std::holds_alternative<Softmax>(net.layer(k).kind)) {
      throw InputError(fmt::format("layer '{}' is the softmax output and cannot be abstracted", name));
    }
    indices.push_back(k);
    log << fmt::format("Using {}{}-bin discretizer with {} strategy for layer {}\n",
                       options.extended ? "extended " : "", options.num_intervals, strategy_name(options.strategy),
                       name);
  }
  log << fmt::format("\n| Given {} classified training sample\n", sample.size());

  std::vector<std::vector<std::vector<double>>> activations(indices.size());
  for (const auto& x : sample) {
    const auto trace = forward_trace(net, x);
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const auto v = trace.layers[indices[i]].v.values();
      activations[i].emplace_back(v.begin(), v.end());
    }
  }

  std::vector<BnLayer> layers;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    BnLayer layer;
    layer.name = options.layers[i];
    log << fmt::format("| Extracting and discretizing features for layer {}...\n", layer.name);
    layer.projection = pca_fit(activations[i], options.num_features);
    log << fmt::format("| Extracted {} features\n", layer.projection.num_features());
    std::vector<std::vector<double>> projected(layer.projection.num_features());
    for (const auto& a : activations[i]) {
      const auto f = pca_project(layer.projection, a);
      for (std::size_t j = 0; j < f.size(); ++j) projected[j].push_back(f[j]);
    }
    for (std::size_t j = 0; j < projected.size(); ++j) {
      try {
        layer.intervals.push_back(
            discretize_fit(projected[j], options.num_intervals, options.strategy, options.extended, j));
      } catch (const DataError& e) {
        throw DataError(fmt::format("layer '{}': {}", layer.name, e.what()));
      }
      log << fmt::format("| Discretization of feature {} involves {} intervals\n", j, layer.intervals.back().count());
    }
    log << fmt::format("| Discretized {} features\n", projected.size());
    layers.push_back(std::move(layer));
  }
  for (const auto& l : layers) {
    log << fmt::format("| Captured variance ratio for layer {} is {:.2f}%\n", l.name,
                       100.0 * l.projection.captured_variance());
  }
  const BnAbstraction abstr(net, layers);
  log << fmt::format("| Created Bayesian Network of {} nodes and {} edges.\n", abstr.node_count(),
                     abstr.edge_count());
  return layers;
}

// ---------------------------------------------------------------------------
// Serialization

std::string abstraction_to_json(const std::vector<BnLayer>& layers) {
  using nlohmann::json;
  json j;
  j["format"] = kAbstractionFormat;
  j["layers"] = json::array();
  for (const auto& l : layers) {
    json jl;
    jl["name"] = l.name;
    jl["mean"] = l.projection.mean;
    jl["components"] = l.projection.components;
    jl["variance_ratios"] = l.projection.variance_ratios;
    jl["intervals"] = json::array();
    for (const auto& s : l.intervals) {
      jl["intervals"].push_back({{"boundaries", s.boundaries},
                                 {"extended", s.extended},
                                 {"range", {s.range_lo, s.range_hi}}});
    }
    j["layers"].push_back(std::move(jl));
  }
  return j.dump();
}

std::vector<BnLayer> abstraction_from_json(const std::string& text) {
  using nlohmann::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(fmt::format("malformed abstraction JSON: {}", e.what()));
  }
  if (!j.is_object() || !j.contains("format")) {
    throw DataError("not an abstraction file");
  }
  if (j["format"] != kAbstractionFormat) {
    throw DataError(fmt::format("unsupported abstraction format '{}' (expected {})",
                                j["format"].is_string() ? j["format"].get<std::string>() : j["format"].dump(),
                                kAbstractionFormat));
  }
  std::vector<BnLayer> layers;
  try {
    for (const auto& jl : j.at("layers")) {
      BnLayer l;
      l.name = jl.at("name").get<std::string>();
      l.projection.mean = jl.at("mean").get<std::vector<double>>();
      l.projection.components = jl.at("components").get<std::vector<std::vector<double>>>();
      l.projection.variance_ratios = jl.at("variance_ratios").get<std::vector<double>>();
      for (const auto& js : jl.at("intervals")) {
        IntervalSet s;
        s.boundaries = js.at("boundaries").get<std::vector<double>>();
        s.extended = js.at("extended").get<bool>();
        if (js.contains("range")) {
          s.range_lo = js["range"].at(0).get<double>();
          s.range_hi = js["range"].at(1).get<double>();
        } else if (!s.boundaries.empty()) {
          s.range_lo = s.boundaries.front();
          s.range_hi = s.boundaries.back();
        }
        if (!std::ranges::is_sorted(s.boundaries) ||
            std::ranges::adjacent_find(s.boundaries) != s.boundaries.end()) {
          throw DataError(fmt::format("layer '{}': interval boundaries must be strictly increasing", l.name));
        }
        l.intervals.push_back(std::move(s));
      }
      for (const auto& c : l.projection.components) {
        if (c.size() != l.projection.mean.size()) {
          throw DataError(fmt::format("layer '{}': component length differs from mean length", l.name));
        }
      }
      if (l.intervals.size() != l.projection.components.size()) {
        throw DataError(fmt::format("layer '{}': one interval set per feature required", l.name));
      }
      layers.push_back(std::move(l));
    }
  } catch (const json::exception& e) {
    throw DataError(fmt::format("invalid abstraction file: {}", e.what()));
  }
  return layers;
}

void save_abstraction(const std::vector<BnLayer>& layers, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(fmt::format("cannot write '{}'", path.string()));
  out << abstraction_to_json(layers) << '\n';
}

std::vector<BnLayer> load_abstraction(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open abstraction file '{}'", path.string()));
  std::stringstream buf;
  buf << in.rdbuf();
  return abstraction_from_json(buf.str());
}

void show_abstraction(const std::vector<BnLayer>& layers, std::ostream& out) {
  std::vector<std::array<std::string, 3>> rows;
  for (const auto& l : layers) {
    for (std::size_t f = 0; f < l.intervals.size(); ++f) {
      std::vector<std::string> parts;
      for (std::size_t i = 0; i < l.intervals[f].count(); ++i) parts.push_back(l.intervals[f].format(i));
      rows.push_back({f == 0 ? l.name : std::string{}, std::to_string(f), fmt::format("{}", fmt::join(parts, ", "))});
    }
  }
  const std::array<std::string, 3> header = {"Layer", "Feature", "Intervals"};
  std::array<std::size_t, 3> width{};
  for (std::size_t c = 0; c < 3; ++c) {
    width[c] = header[c].size() + 2;
    for (const auto& r : rows) width[c] = std::max(width[c], r[c].size());
  }
  const std::string title = "===  Extracted Features and Associated Intervals  ";
  out << title << std::string(80 - title.size(), '=') << '\n';
  out << fmt::format("{:<{}}  {:<{}}  {}\n", header[0], width[0], header[1], width[1], header[2]);
  out << fmt::format("{}  {}  {}\n", std::string(width[0], '-'), std::string(width[1], '-'),
                     std::string(width[2], '-'));
  for (const auto& r : rows) out << fmt::format("{:<{}}  {:<{}}  {}\n", r[0], width[0], r[1], width[1], r[2]);
}

// ---------------------------------------------------------------------------
// Targets

std::vector<std::size_t> attempt_key(const BfcTarget& t, std::size_t candidate) {
  return {2, t.layer, t.feature, t.interval, candidate};
}

std::vector<std::size_t> attempt_key(const BfdcTarget& t, std::size_t candidate) {
  std::vector<std::size_t> key = {3, t.layer, t.feature, t.interval};
  key.insert(key.end(), t.parent_bins.begin(), t.parent_bins.end());
  key.push_back(candidate);
  return key;
}

std::optional<Selection<BfcTarget>> bfc_select_target(const BnAbstraction& abstr,
                                                      std::span<const TestFeatures> suite,
                                                      const AttemptSet& attempted) {
  const auto& layers = abstr.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (std::size_t f = 0; f < layers[l].intervals.size(); ++f) {
      const auto& set = layers[l].intervals[f];
      for (std::size_t i = 0; i < set.count(); ++i) {
        if (abstr.marginal(l, f, i) > 0) continue;
        const BfcTarget target{l, f, i};
        std::optional<std::size_t> best;
        double best_d = 0.0;
        for (std::size_t t = 0; t < suite.size(); ++t) {
          const double d = set.distance(suite[t].values[l][f], i);
          if (best && d >= best_d) continue;
          if (attempted.contains(attempt_key(target, t))) continue;
          best = t;
          best_d = d;
        }
        if (best) return Selection<BfcTarget>{target, *best};
      }
    }
  }
  return std::nullopt;
}

std::optional<Selection<BfdcTarget>> bfdc_select_target(const BnAbstraction& abstr,
                                                        std::span<const TestFeatures> suite,
                                                        const AttemptSet& attempted) {
  const auto& layers = abstr.layers();
  for (std::size_t l = 1; l < layers.size(); ++l) {
    const auto keys = abstr.active_parents(l);
    for (std::size_t f = 0; f < layers[l].intervals.size(); ++f) {
      const auto& set = layers[l].intervals[f];
      for (const auto key : keys) {
        for (std::size_t i = 0; i < set.count(); ++i) {
          if (abstr.joint(l, f, key, i) > 0) continue;
          const BfdcTarget target{l, f, i, abstr.parent_bins(l, key)};
          std::optional<std::size_t> best;
          double best_d = 0.0;
          for (std::size_t t = 0; t < suite.size(); ++t) {
            if (suite[t].bins[l - 1] != target.parent_bins) continue;
            const double d = set.distance(suite[t].values[l][f], i);
            if (best && d >= best_d) continue;
            if (attempted.contains(attempt_key(target, t))) continue;
            best = t;
            best_d = d;
          }
          if (best) return Selection<BfdcTarget>{target, *best};
        }
      }
    }
  }
  return std::nullopt;
}

}  // namespace concov
