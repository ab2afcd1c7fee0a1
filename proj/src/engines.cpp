#include "concov/engines.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <thread>

#include "concov/error.hpp"

namespace concov {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

const SscState& need_ssc(const TargetContext& ctx) {
  if (ctx.ssc == nullptr) throw InputError("sign-sign targets need the SSC state");
  return *ctx.ssc;
}

const BnAbstraction& need_bn(const TargetContext& ctx) {
  if (ctx.bn == nullptr) throw InputError("feature targets need a BN abstraction");
  return *ctx.bn;
}

}  // namespace

bool target_met(const TargetContext& ctx, const TestTarget& target, const ActivationTrace& candidate,
                const ActivationTrace& generated) {
  return std::visit(
      overloaded{
          [&](const NcTarget& t) { return generated.layers[t.layer].u[t.neuron] > 0.0; },
          [&](const SscTarget& t) { return ssc_pair_covered_by(need_ssc(ctx), t, candidate, generated); },
          [&](const BfcTarget& t) {
            return need_bn(ctx).features_of(generated).bins[t.layer][t.feature] == t.interval;
          },
          [&](const BfdcTarget& t) {
            const auto& bn = need_bn(ctx);
            const auto f = bn.features_of(generated);
            return f.bins[t.layer][t.feature] == t.interval && f.bins[t.layer - 1] == t.parent_bins;
          },
      },
      target);
}

void EngineConfig::validate() const {
  if (!(dmin_hard >= 0.0 && dmin_hard < 1.0)) {
    throw InputError(fmt::format("hard lower bound must lie in [0, 1), got {}", dmin_hard));
  }
  if (!(dmin_noise >= 0.0 && dmin_noise < 1.0 - dmin_hard)) {
    throw InputError(fmt::format("lower-bound noise must lie in [0, {}), got {}", 1.0 - dmin_hard, dmin_noise));
  }
  if (!(epsilon > 0.0)) throw InputError("activation margin must be positive");
  if (l0_eval_budget == 0) throw InputError("L0 evaluation budget must be positive");
  if (!(lp_time_limit > 0.0)) throw InputError("LP time limit must be positive");
}

double sample_lower_bound(const EngineConfig& cfg, Rng& rng) { return cfg.dmin_hard + rng.uniform(0.0, cfg.dmin_noise); }

const char* engine_status_name(EngineStatus s) {
  switch (s) {
    case EngineStatus::found: return "found";
    case EngineStatus::infeasible: return "infeasible";
    case EngineStatus::timeout: return "timeout";
    case EngineStatus::unverified: return "unverified";
    case EngineStatus::failed: return "failed";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Encoding

namespace {

// Affine function of the inputs: coefficients 0..n-1 and the constant at n.
// An empty vector is the zero function.
using Expr = std::vector<double>;

struct Flip {
  // ReLU layer -> neuron -> forced sign
  std::map<std::size_t, std::map<std::size_t, signed char>> relu;
  // pool layer -> output cell -> forced selection
  std::map<std::size_t, std::map<std::size_t, std::size_t>> pool;
};

class Encoder {
public:
  Encoder(const Network& net, const ActivationTrace& cand, const InputBounds& bounds, double lb, double eps)
      : net_(net), cand_(cand), n_(net.input_size()), eps_(eps) {
    if (bounds.lower.size() != n_ || bounds.upper.size() != n_) {
      throw InputError(fmt::format("input bounds cover {} features, the network expects {}", bounds.lower.size(), n_));
    }
    const auto x = cand.input.values();
    for (std::size_t i = 0; i < n_; ++i) enc_.problem.add_variable(bounds.lower[i], bounds.upper[i]);
    enc_.d_var = enc_.problem.add_variable(lb, kInf, 1.0);
    for (std::size_t i = 0; i < n_; ++i) {
      enc_.problem.add_row({{{i, 1.0}, {enc_.d_var, -1.0}}, RowSense::le, x[i]});
      enc_.problem.add_row({{{i, 1.0}, {enc_.d_var, 1.0}}, RowSense::ge, x[i]});
    }
    current_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) {
      current_[i].assign(n_ + 1, 0.0);
      current_[i][i] = 1.0;
    }
  }

  // Propagates through layers 0..last, so current() is the output of `last`.
  void run_to(std::size_t last, const Flip& flip) {
    for (std::size_t k = next_; k <= last; ++k) step(k, flip);
    next_ = last + 1;
  }

  const std::vector<Expr>& current() const { return current_; }

  // expr (sense) rhs
  void add(const Expr& e, RowSense sense, double rhs) {
    LpRow row;
    row.sense = sense;
    row.rhs = rhs;
    if (!e.empty()) {
      for (std::size_t j = 0; j < n_; ++j)
        if (e[j] != 0.0) row.terms.emplace_back(j, e[j]);
      row.rhs -= e[n_];
    }
    enc_.problem.add_row(std::move(row));
  }

  // Constrains e into `iv`, epsilon inside every finite end so that
  // round-off cannot push the solution across a boundary.
  void add_interval(const Expr& e, const Interval& iv) {
    if (std::isfinite(iv.lower)) add(e, RowSense::ge, iv.lower + eps_);
    if (std::isfinite(iv.upper)) add(e, RowSense::le, iv.upper - eps_);
  }

  Expr linear(const std::vector<double>& coef, const std::vector<Expr>& in, double constant) const {
    Expr out(n_ + 1, 0.0);
    out[n_] = constant;
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (coef[i] == 0.0 || in[i].empty()) continue;
      for (std::size_t j = 0; j <= n_; ++j) out[j] += coef[i] * in[i][j];
    }
    return out;
  }

  LpEncoding finish() { return std::move(enc_); }

  double eps() const { return eps_; }

private:
  void axpy(Expr& out, double a, const Expr& in) const {
    if (in.empty() || a == 0.0) return;
    for (std::size_t j = 0; j <= n_; ++j) out[j] += a * in[j];
  }

  void step(std::size_t k, const Flip& flip) {
    const LayerSpec& spec = net_.layer(k);
    const Shape& in_shape = net_.input_shape_of(k);
    const Shape& out_shape = net_.output_shape_of(k);
    std::vector<Expr> out;
    std::visit(overloaded{
                   [&](const Dense& d) {
                     out.assign(d.out, Expr(n_ + 1, 0.0));
                     for (std::size_t j = 0; j < d.out; ++j) out[j][n_] = d.bias[j];
                     for (std::size_t i = 0; i < d.in; ++i) {
                       if (current_[i].empty()) continue;
                       for (std::size_t j = 0; j < d.out; ++j) axpy(out[j], d.weights[i * d.out + j], current_[i]);
                     }
                   },
                   [&](const Conv2D& c) {
                     const std::size_t in_w = in_shape[1];
                     const std::size_t oh_n = out_shape[0], ow_n = out_shape[1];
                     out.assign(oh_n * ow_n * c.out_ch, Expr(n_ + 1, 0.0));
                     for (std::size_t oh = 0; oh < oh_n; ++oh)
                       for (std::size_t ow = 0; ow < ow_n; ++ow)
                         for (std::size_t oc = 0; oc < c.out_ch; ++oc) {
                           Expr& e = out[(oh * ow_n + ow) * c.out_ch + oc];
                           e[n_] = c.bias[oc];
                           for (std::size_t i = 0; i < c.kernel_h; ++i)
                             for (std::size_t j = 0; j < c.kernel_w; ++j)
                               for (std::size_t ic = 0; ic < c.in_ch; ++ic) {
                                 const std::size_t src =
                                     ((oh * c.stride + i) * in_w + (ow * c.stride + j)) * c.in_ch + ic;
                                 const double w = c.weights[((i * c.kernel_w + j) * c.in_ch + ic) * c.out_ch + oc];
                                 axpy(e, w, current_[src]);
                               }
                         }
                   },
                   [&](const MaxPool2D& p) {
                     const std::size_t in_w = in_shape[1], ch = in_shape[2];
                     const auto* forced = flip.pool.contains(k) ? &flip.pool.at(k) : nullptr;
                     std::vector<std::size_t> selection(cand_.layers[k].selected_index);
                     out.resize(selection.size());
                     for (std::size_t oh = 0; oh < out_shape[0]; ++oh)
                       for (std::size_t ow = 0; ow < out_shape[1]; ++ow)
                         for (std::size_t c = 0; c < ch; ++c) {
                           const std::size_t o = (oh * out_shape[1] + ow) * ch + c;
                           if (forced != nullptr && forced->contains(o)) selection[o] = forced->at(o);
                           const std::size_t sel = selection[o];
                           for (std::size_t i = 0; i < p.pool_h; ++i)
                             for (std::size_t j = 0; j < p.pool_w; ++j) {
                               const std::size_t idx = ((oh * p.pool_h + i) * in_w + (ow * p.pool_w + j)) * ch + c;
                               if (idx == sel || (current_[idx].empty() && current_[sel].empty())) continue;
                               Expr diff = current_[sel].empty() ? Expr(n_ + 1, 0.0) : current_[sel];
                               axpy(diff, -1.0, current_[idx]);
                               add(diff, RowSense::ge, eps_);
                             }
                           out[o] = current_[sel];
                         }
                     enc_.pool_selection.emplace_back(k, std::move(selection));
                   },
                   [&](const Flatten&) { out = std::move(current_); },
                   [&](const ReLU&) {
                     const auto u = cand_.layers[k].u.values();
                     const auto* forced = flip.relu.contains(k) ? &flip.relu.at(k) : nullptr;
                     std::vector<signed char> signs(u.size());
                     out.resize(u.size());
                     for (std::size_t i = 0; i < u.size(); ++i) {
                       signed char s = u[i] > 0.0 ? 1 : -1;
                       if (forced != nullptr && forced->contains(i)) s = forced->at(i);
                       signs[i] = s;
                       if (current_[i].empty()) {
                         // constant zero input: active is impossible
                         add(Expr{}, s > 0 ? RowSense::ge : RowSense::le, s > 0 ? eps_ : -eps_);
                         continue;
                       }
                       if (s > 0) {
                         add(current_[i], RowSense::ge, eps_);
                         out[i] = current_[i];
                       } else {
                         add(current_[i], RowSense::le, -eps_);
                       }
                     }
                     enc_.relu_signs.emplace_back(k, std::move(signs));
                   },
                   [&](const Softmax&) { throw InputError("the softmax layer cannot be encoded"); },
               },
               spec.kind);
    current_ = std::move(out);
  }

  const Network& net_;
  const ActivationTrace& cand_;
  std::size_t n_;
  double eps_;
  LpEncoding enc_;
  std::vector<Expr> current_;
  std::size_t next_ = 0;
};

Expr feature_expr(const Encoder& e, const Projection& p, std::size_t f, const std::vector<Expr>& v) {
  double c0 = 0.0;
  for (std::size_t j = 0; j < p.mean.size(); ++j) c0 -= p.components[f][j] * p.mean[j];
  return e.linear(p.components[f], v, c0);
}

// Condition-side flip for an SSC target: the ReLU neurons behind the
// condition entry and, when pooled, the pool selection.
void ssc_condition_flip(const Network& net, const ActivationTrace& cand, const SscLayer& l, std::size_t condition,
                        Flip& flip) {
  const bool positive = cand.layers[l.condition_layer].v[condition] > 0.0;
  std::optional<std::size_t> pool;
  for (std::size_t k = l.condition_relu + 1; k <= l.condition_layer; ++k) {
    if (std::holds_alternative<MaxPool2D>(net.layer(k).kind)) pool = k;
  }
  if (!pool) {
    flip.relu[l.condition_relu][condition] = positive ? -1 : 1;
    return;
  }
  // flatten keeps flat indices, so `condition` indexes the pool output
  const auto& p = std::get<MaxPool2D>(net.layer(*pool).kind);
  const Shape& in = net.input_shape_of(*pool);
  const Shape& out = net.output_shape_of(*pool);
  const std::size_t ch = in[2];
  const std::size_t c = condition % ch, cell = condition / ch;
  const std::size_t oh = cell / out[1], ow = cell % out[1];
  std::vector<std::size_t> window;
  for (std::size_t i = 0; i < p.pool_h; ++i)
    for (std::size_t j = 0; j < p.pool_w; ++j) window.push_back(((oh * p.pool_h + i) * in[1] + (ow * p.pool_w + j)) * ch + c);
  if (positive) {
    for (std::size_t idx : window) flip.relu[l.condition_relu][idx] = -1;
    flip.pool[*pool][condition] = window.front();
  } else {
    flip.relu[l.condition_relu][cand.layers[*pool].selected_index[condition]] = 1;
  }
}

}  // namespace

LpEncoding lp_encode(const TargetContext& ctx, const ActivationTrace& candidate, const TestTarget& target,
                     const InputBounds& bounds, double lb, const EngineConfig& cfg) {
  if (ctx.net == nullptr) throw InputError("LP encoding needs a network");
  const Network& net = *ctx.net;
  Encoder enc(net, candidate, bounds, lb, cfg.epsilon);
  std::visit(overloaded{
                 [&](const NcTarget& t) {
                   if (t.layer == 0) throw InputError("cannot target a ReLU that reads the raw input");
                   enc.run_to(t.layer - 1, {});
                   enc.add(enc.current()[t.neuron], RowSense::ge, cfg.epsilon);
                 },
                 [&](const SscTarget& t) {
                   const auto& l = need_ssc(ctx).layers()[t.layer];
                   Flip flip;
                   ssc_condition_flip(net, candidate, l, t.condition, flip);
                   enc.run_to(l.decision_layer, flip);
                   const bool was_positive = candidate.layers[l.decision_layer].u[t.decision] > 0.0;
                   enc.add(enc.current()[t.decision], was_positive ? RowSense::le : RowSense::ge,
                           was_positive ? -cfg.epsilon : cfg.epsilon);
                 },
                 [&](const BfcTarget& t) {
                   const auto& bn = need_bn(ctx);
                   const auto& bl = bn.layers()[t.layer];
                   enc.run_to(bn.layer_index(t.layer), {});
                   enc.add_interval(feature_expr(enc, bl.projection, t.feature, enc.current()),
                                    bl.intervals[t.feature].interval(t.interval));
                 },
                 [&](const BfdcTarget& t) {
                   const auto& bn = need_bn(ctx);
                   if (t.layer == 0) throw InputError("feature-dependence targets need a parent layer");
                   const auto& parent = bn.layers()[t.layer - 1];
                   enc.run_to(bn.layer_index(t.layer - 1), {});
                   for (std::size_t f = 0; f < parent.intervals.size(); ++f) {
                     enc.add_interval(feature_expr(enc, parent.projection, f, enc.current()),
                                      parent.intervals[f].interval(t.parent_bins[f]));
                   }
                   const auto& bl = bn.layers()[t.layer];
                   enc.run_to(bn.layer_index(t.layer), {});
                   enc.add_interval(feature_expr(enc, bl.projection, t.feature, enc.current()),
                                    bl.intervals[t.feature].interval(t.interval));
                 },
             },
             target);
  return enc.finish();
}

bool pattern_matches(const LpEncoding& enc, const ActivationTrace& trace, double epsilon) {
  const double m = epsilon / 2;
  for (const auto& [k, signs] : enc.relu_signs) {
    const auto u = trace.layers[k].u.values();
    for (std::size_t i = 0; i < signs.size(); ++i) {
      if (signs[i] > 0 ? u[i] < m : u[i] > -m) return false;
    }
  }
  for (const auto& [k, sel] : enc.pool_selection) {
    if (trace.layers[k].selected_index != sel) return false;
  }
  return true;
}

EngineResult lp_search(const TargetContext& ctx, const ActivationTrace& candidate, const TestTarget& target,
                       const InputBounds& bounds, const EngineConfig& cfg, Rng& rng) {
  const double lb = sample_lower_bound(cfg, rng);
  const LpEncoding enc = lp_encode(ctx, candidate, target, bounds, lb, cfg);
  LpOptions opt;
  opt.time_limit_seconds = cfg.lp_time_limit;
  const LpResult sol = lp_solve(enc.problem, opt);
  EngineResult res;
  switch (sol.status) {
    case LpStatus::optimal: break;
    case LpStatus::time_limit:
      res.status = EngineStatus::timeout;
      res.note = "LP time limit reached";
      return res;
    default:
      res.status = EngineStatus::infeasible;
      res.note = lp_status_name(sol.status);
      return res;
  }
  const std::size_t n = ctx.net->input_size();
  res.x = Tensor(ctx.net->input_shape());
  for (std::size_t i = 0; i < n; ++i) res.x[i] = std::clamp(sol.x[i], bounds.lower[i], bounds.upper[i]);
  res.objective = sol.x[enc.d_var];
  const ActivationTrace trace = forward_trace(*ctx.net, res.x);
  if (norm_linf(res.x.values(), candidate.input.values()) > res.objective + 1e-6) {
    res.status = EngineStatus::unverified;
    res.note = "distance bound violated";
  } else if (!pattern_matches(enc, trace, cfg.epsilon)) {
    res.status = EngineStatus::unverified;
    res.note = "activation pattern not reproduced";
  } else if (!target_met(ctx, target, candidate, trace)) {
    res.status = EngineStatus::unverified;
    res.note = "target not met";
  } else {
    res.status = EngineStatus::found;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Pixel-wise search

double target_score(const TargetContext& ctx, const TestTarget& target, const ActivationTrace& candidate,
                    const ActivationTrace& generated) {
  return std::visit(
      overloaded{
          [&](const NcTarget& t) { return generated.layers[t.layer].u[t.neuron]; },
          [&](const SscTarget& t) {
            const auto& l = need_ssc(ctx).layers()[t.layer];
            const double d0 = candidate.layers[l.decision_layer].u[t.decision];
            const double d1 = generated.layers[l.decision_layer].u[t.decision];
            const double c0 = candidate.layers[l.condition_layer].v[t.condition];
            const double c1 = generated.layers[l.condition_layer].v[t.condition];
            const double dm = d0 > 0.0 ? -d1 : d1;
            const double cm = c0 > 0.0 ? -c1 : c1;
            return std::min(dm, cm);
          },
          [&](const BfcTarget& t) {
            const auto& bn = need_bn(ctx);
            const auto f = bn.features_of(generated);
            return -bn.layers()[t.layer].intervals[t.feature].distance(f.values[t.layer][t.feature], t.interval);
          },
          [&](const BfdcTarget& t) {
            const auto& bn = need_bn(ctx);
            const auto f = bn.features_of(generated);
            double d = bn.layers()[t.layer].intervals[t.feature].distance(f.values[t.layer][t.feature], t.interval);
            const auto& parent = bn.layers()[t.layer - 1];
            for (std::size_t p = 0; p < parent.intervals.size(); ++p)
              d += parent.intervals[p].distance(f.values[t.layer - 1][p], t.parent_bins[p]);
            return -d;
          },
      },
      target);
}

EngineResult pixelwise_search(const TargetContext& ctx, const ActivationTrace& candidate, const TestTarget& target,
                              const InputBounds& bounds, const EngineConfig& cfg, Rng& rng) {
  const Network& net = *ctx.net;
  const std::size_t n = net.input_size();
  const std::size_t max_changes = cfg.l0_max_changes > 0 ? cfg.l0_max_changes : std::max<std::size_t>(1, n / 4);
  Tensor x = candidate.input.reshaped(net.input_shape());
  double score = target_score(ctx, target, candidate, candidate);
  std::vector<char> changed(n, 0);
  std::size_t changes = 0;
  EngineResult res;
  while (changes < max_changes) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < n; ++i)
      if (!changed[i]) pool.push_back(i);
    const std::size_t m = std::min(cfg.l0_eval_budget, pool.size());
    for (std::size_t i = 0; i < m; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
    pool.resize(m);
    std::sort(pool.begin(), pool.end());

    std::optional<std::pair<std::size_t, double>> best;
    double best_score = score;
    for (std::size_t f : pool) {
      for (double value : {bounds.lower[f], bounds.upper[f]}) {
        if (value == x[f]) continue;
        const double keep = x[f];
        x[f] = value;
        const auto trace = forward_trace(net, x);
        x[f] = keep;
        if (target_met(ctx, target, candidate, trace)) {
          x[f] = value;
          res.status = EngineStatus::found;
          res.x = std::move(x);
          res.objective = static_cast<double>(changes + 1);
          return res;
        }
        const double s = target_score(ctx, target, candidate, trace);
        if (s > best_score) {
          best_score = s;
          best = {f, value};
        }
      }
    }
    if (!best) {
      res.note = fmt::format("no single-feature change improves the target after {} change(s)", changes);
      break;
    }
    x[best->first] = best->second;
    changed[best->first] = 1;
    ++changes;
    score = best_score;
  }
  if (res.note.empty()) res.note = fmt::format("change budget of {} feature(s) exhausted", max_changes);
  res.status = EngineStatus::failed;
  res.x = std::move(x);
  res.objective = static_cast<double>(changes);
  return res;
}

// ---------------------------------------------------------------------------
// Fuzzing

FuzzResult fuzz(const Network& net, std::span<const Tensor> seeds, const InputBounds& bounds, const FuzzConfig& cfg,
                const OracleConfig& oracle, const LofEstimator* lof) {
  if (cfg.iterations > 0 && seeds.empty()) throw InputError("fuzzing needs at least one seed input");
  if (cfg.workers == 0) throw InputError("fuzzing needs at least one worker");
  const std::size_t n = net.input_size();
  if (bounds.lower.size() != n || bounds.upper.size() != n) {
    throw InputError("input bounds do not match the network input");
  }
  const std::size_t maxk = std::min(n, cfg.max_changes > 0 ? cfg.max_changes : std::max<std::size_t>(1, n / 4));

  std::vector<std::size_t> order(seeds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng shuffle_rng(derive_seed(cfg.seed, ~std::uint64_t{0}));
  shuffle_rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::size_t> labels;
  for (const auto& s : seeds) labels.push_back(forward(net, s).label);

  struct Partial {
    std::size_t accepted = 0;
    std::vector<FuzzMutant> adversarials;
  };
  const std::size_t workers = std::max<std::size_t>(1, std::min(cfg.workers, cfg.iterations));
  std::vector<Partial> parts(workers);
  auto work = [&](std::size_t w) {
    std::vector<std::size_t> features(n);
    for (std::size_t i = w; i < cfg.iterations; i += workers) {
      Rng rng(derive_seed(cfg.seed, i));
      const std::size_t s = order[i % order.size()];
      Tensor x = seeds[s].reshaped(net.input_shape());
      const std::size_t k = 1 + rng.below(maxk);
      for (std::size_t j = 0; j < n; ++j) features[j] = j;
      for (std::size_t j = 0; j < k; ++j) {
        std::swap(features[j], features[j + rng.below(n - j)]);
        const std::size_t f = features[j];
        x[f] = rng.uniform(bounds.lower[f], bounds.upper[f]);
      }
      const std::size_t label = forward(net, x).label;
      Verdict v = vet(oracle, lof, seeds[s].values(), labels[s], x.values(), label);
      if (v.accepted) ++parts[w].accepted;
      if (v.adversarial) parts[w].adversarials.push_back({i, s, labels[s], std::move(x), v});
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }

  FuzzResult res;
  res.mutants = cfg.iterations;
  for (auto& p : parts) {
    res.accepted += p.accepted;
    for (auto& m : p.adversarials) res.adversarials.push_back(std::move(m));
  }
  std::sort(res.adversarials.begin(), res.adversarials.end(),
            [](const FuzzMutant& a, const FuzzMutant& b) { return a.index < b.index; });
  return res;
}

}  // namespace concov
