#include <doctest.h>

#include <cmath>
#include <sstream>

#include "concov/engines.hpp"
#include "concov/error.hpp"
#include "concov/model_io.hpp"

using namespace concov;

namespace {

InputBounds unit_box(std::size_t n) { return {std::vector<double>(n, 0.0), std::vector<double>(n, 1.0)}; }

Network single_neuron_net() {
  // u = x - 0.5
  Dense d{1, 1, Tensor({1, 1}, {1.0}), Tensor({1}, {-0.5})};
  Dense o{1, 2, Tensor({1, 2}, {1.0, -1.0}), Tensor({2})};
  return Network({1}, {{"dense", d}, {"activation", ReLU{}}, {"dense_1", o}, {"activation_1", Softmax{}}});
}

EngineConfig no_lower_bound() {
  EngineConfig cfg;
  cfg.dmin_hard = 0.0;
  cfg.dmin_noise = 0.0;
  return cfg;
}

Tensor random_input(std::size_t n, Rng& rng) {
  Tensor x({n});
  for (double& v : x.values()) v = rng.uniform();
  return x;
}

// Whether `trace` keeps the ReLU signs of `cand` with margin eps on every
// ReLU before `layer`, and the target neuron's input reaches eps.
bool grid_admissible(const Network& net, const ActivationTrace& cand, const ActivationTrace& trace, std::size_t layer,
                     std::size_t neuron, double eps) {
  for (std::size_t k = 0; k < layer; ++k) {
    if (!std::holds_alternative<ReLU>(net.layer(k).kind)) continue;
    for (std::size_t i = 0; i < cand.layers[k].u.size(); ++i) {
      const double u = trace.layers[k].u[i];
      if (cand.layers[k].u[i] > 0.0 ? u < eps : u > -eps) return false;
    }
  }
  return trace.layers[layer].u[neuron] >= eps;
}

}  // namespace

TEST_CASE("single-neuron LP reaches the analytic optimum") {
  const Network net = single_neuron_net();
  const auto cand = forward_trace(net, Tensor({1}, {0.3}));
  const EngineConfig cfg = no_lower_bound();
  const TargetContext ctx{&net};
  const NcTarget target{1, 0};

  const auto enc = lp_encode(ctx, cand, target, unit_box(1), 0.0, cfg);
  const auto sol = lp_solve(enc.problem);
  REQUIRE(sol.status == LpStatus::optimal);
  CHECK(std::abs(sol.x[0] - (0.5 + cfg.epsilon)) <= 1e-6);
  CHECK(std::abs(sol.x[enc.d_var] - (0.2 + cfg.epsilon)) <= 1e-9);

  const auto bound = lp_solve(lp_encode(ctx, cand, target, unit_box(1), 0.5, cfg).problem);
  REQUIRE(bound.status == LpStatus::optimal);
  CHECK(bound.objective == doctest::Approx(0.5).epsilon(1e-12));

  Rng rng(1);
  const auto res = lp_search(ctx, cand, target, unit_box(1), cfg, rng);
  REQUIRE(res.status == EngineStatus::found);
  CHECK(std::abs(res.x[0] - (0.5 + cfg.epsilon)) <= 1e-6);
}

TEST_CASE("a dead neuron is infeasible") {
  Dense d{2, 1, Tensor({2, 1}), Tensor({1}, {-1.0})};
  Dense o{1, 2, Tensor({1, 2}, {1.0, -1.0}), Tensor({2})};
  const Network net({2}, {{"dense", d}, {"activation", ReLU{}}, {"dense_1", o}, {"activation_1", Softmax{}}});
  const auto cand = forward_trace(net, Tensor({2}, {0.5, 0.5}));
  Rng rng(1);
  const auto res = lp_search({&net}, cand, NcTarget{1, 0}, unit_box(2), EngineConfig{}, rng);
  CHECK(res.status == EngineStatus::infeasible);
}

TEST_CASE("LP solutions on random dense networks pass verification") {
  std::size_t found = 0, unverified = 0, attempts = 0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    const Network net = generate_model("dense:8,relu,dense:4,relu,dense:2,softmax", {2}, seed);
    Rng rng(seed * 7);
    const auto cand = forward_trace(net, random_input(2, rng));
    for (std::size_t layer : {1u, 3u}) {
      for (std::size_t i = 0; i < cand.layers[layer].u.size(); ++i) {
        if (cand.layers[layer].u[i] > 0.0) continue;
        ++attempts;
        const auto res = lp_search({&net}, cand, NcTarget{layer, i}, unit_box(2), EngineConfig{}, rng);
        if (res.status == EngineStatus::found) {
          ++found;
          const auto t = forward_trace(net, res.x);
          CHECK(t.layers[layer].u[i] > 0.0);
          CHECK(norm_linf(res.x.values(), cand.input.values()) <= res.objective + 1e-6);
        }
        if (res.status == EngineStatus::unverified) ++unverified;
      }
    }
  }
  CHECK(unverified == 0);
  CHECK(found > 20);
  CHECK(attempts > found);
}

TEST_CASE("LP optimum agrees with a grid search over the activation region") {
  const double step = 0.005;
  std::size_t instances = 0;
  for (std::uint64_t seed = 1; seed <= 400 && instances < 20; ++seed) {
    const Network net = generate_model("dense:8,relu,dense:4,relu,dense:2,softmax", {2}, 1000 + seed);
    Rng rng(seed);
    const auto cand = forward_trace(net, random_input(2, rng));
    const std::size_t layer = seed % 2 == 0 ? 1 : 3;
    std::optional<std::size_t> neuron;
    for (std::size_t i = 0; i < cand.layers[layer].u.size() && !neuron; ++i)
      if (cand.layers[layer].u[i] <= 0.0) neuron = i;
    if (!neuron) continue;
    const EngineConfig cfg = no_lower_bound();

    double grid = kInf;
    for (int a = 0; a <= 200; ++a)
      for (int b = 0; b <= 200; ++b) {
        const Tensor x({2}, {a * step, b * step});
        if (grid_admissible(net, cand, forward_trace(net, x), layer, *neuron, cfg.epsilon))
          grid = std::min(grid, norm_linf(x.values(), cand.input.values()));
      }
    const auto sol = lp_solve(lp_encode({&net}, cand, NcTarget{layer, *neuron}, unit_box(2), 0.0, cfg).problem);
    if (grid == kInf) continue;  // region empty or thinner than the grid step
    REQUIRE(sol.status == LpStatus::optimal);
    ++instances;
    CHECK(sol.objective <= grid + 1e-9);
    CHECK(sol.objective >= grid - 0.02);
  }
  CHECK(instances == 20);
}

TEST_CASE("lower bound samples spread over the noise range") {
  EngineConfig cfg;
  cfg.dmin_hard = 1.0 / 255;
  cfg.dmin_noise = 0.1;
  Rng rng(42);
  double sum = 0;
  for (int i = 0; i < 10000; ++i) {
    const double lb = sample_lower_bound(cfg, rng);
    CHECK(lb >= cfg.dmin_hard);
    CHECK(lb < cfg.dmin_hard + cfg.dmin_noise);
    sum += lb - cfg.dmin_hard;
  }
  CHECK(std::abs(sum / 10000 - 0.05) <= 0.05 * 0.05);
}

TEST_CASE("engine configuration ranges") {
  EngineConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.dmin_hard = 1.0;
  CHECK_THROWS_AS(cfg.validate(), InputError);
  cfg.dmin_hard = 0.5;
  cfg.dmin_noise = 0.6;
  CHECK_THROWS_AS(cfg.validate(), InputError);
}

TEST_CASE("SSC LP solutions flip the targeted pair through pooling and convolution") {
  for (const char* spec : {"conv2d:3x3:2,relu,maxpool2d:2x2,flatten,dense:3,relu,dense:2,softmax",
                           "conv2d:3x3:2,relu,conv2d:2x2:2,relu,flatten,dense:2,softmax"}) {
    std::size_t found = 0, unverified = 0;
    for (std::uint64_t seed = 1; seed <= 6; ++seed) {
      const Network net = generate_model(spec, {6, 6, 1}, seed);
      SscState ssc(net, select_ssc_layers(net, {"activation_1"}), 0.01);
      const TargetContext ctx{&net, &ssc};
      Rng rng(seed);
      const auto cand = forward_trace(net, random_input(36, rng).reshaped({6, 6, 1}));
      const auto& l = ssc.layers()[0];
      for (std::size_t d = 0; d < l.decisions; ++d)
        for (std::size_t pos = 0; pos < l.fan_in; ++pos) {
          const auto fan = decision_fan_in(net, l, d);
          const SscTarget t{0, d, pos, fan[pos]};
          const auto res = lp_search(ctx, cand, t, unit_box(36), EngineConfig{}, rng);
          if (res.status == EngineStatus::found) {
            ++found;
            CHECK(ssc_pair_covered_by(ssc, t, cand, forward_trace(net, res.x)));
          }
          if (res.status == EngineStatus::unverified) ++unverified;
        }
    }
    CHECK(unverified == 0);
    CHECK(found > 0);
  }
}

TEST_CASE("BFC and BFdC LP solutions land in the targeted intervals") {
  const Network net = generate_model("dense:10,relu,dense:10,relu,dense:3,softmax", {4}, 21);
  Rng rng(3);
  std::vector<Tensor> train;
  for (int i = 0; i < 100; ++i) train.push_back(random_input(4, rng));
  CreateOptions o;
  o.layers = {"activation", "activation_1"};
  o.num_features = 2;
  o.num_intervals = 4;
  o.extended = true;
  std::ostringstream log;
  BnAbstraction bn(net, create_abstraction(net, train, o, log));
  bn_fit(bn, net, std::span<const Tensor>(train.data(), 10));
  const TargetContext ctx{&net, nullptr, &bn};

  std::size_t found = 0, unverified = 0;
  for (std::size_t c = 0; c < 10; ++c) {
    const auto cand = forward_trace(net, train[c]);
    const auto feats = bn.features_of(cand);
    for (std::size_t l = 0; l < 2; ++l)
      for (std::size_t f = 0; f < 2; ++f)
        for (std::size_t i = 0; i < bn.layers()[l].intervals[f].count(); ++i) {
          if (feats.bins[l][f] == i) continue;
          const auto res = lp_search(ctx, cand, BfcTarget{l, f, i}, unit_box(4), EngineConfig{}, rng);
          found += res.status == EngineStatus::found;
          unverified += res.status == EngineStatus::unverified;
                if (l == 0) continue;
          const BfdcTarget t{l, f, i, feats.bins[0]};
          const auto dep = lp_search(ctx, cand, t, unit_box(4), EngineConfig{}, rng);
          found += dep.status == EngineStatus::found;
          unverified += dep.status == EngineStatus::unverified;
          if (dep.status == EngineStatus::found) CHECK(bn.features_of(forward_trace(net, dep.x)).bins[0] == feats.bins[0]);
        }
  }
  CHECK(unverified == 0);
  CHECK(found > 0);
}

TEST_CASE("pixelwise search flips one helpful pixel") {
  Dense d{4, 1, Tensor({4, 1}, {1.0, 0.0, 0.0, 0.0}), Tensor({1}, {-0.5})};
  Dense o{1, 2, Tensor({1, 2}, {1.0, -1.0}), Tensor({2})};
  const Network net({4}, {{"dense", d}, {"activation", ReLU{}}, {"dense_1", o}, {"activation_1", Softmax{}}});
  const auto cand = forward_trace(net, Tensor({4}, {0.3, 0.3, 0.3, 0.3}));
  EngineConfig cfg;
  cfg.norm = Norm::l0;
  Rng rng(1);
  const auto res = pixelwise_search({&net}, cand, NcTarget{1, 0}, unit_box(4), cfg, rng);
  REQUIRE(res.status == EngineStatus::found);
  CHECK(res.objective == 1.0);
  CHECK(norm_l0(res.x.values(), cand.input.values()) == 1.0);
  CHECK(res.x[0] == 1.0);
}

TEST_CASE("pixelwise search fails on a dead neuron") {
  Dense d{4, 1, Tensor({4, 1}), Tensor({1}, {-0.5})};
  Dense o{1, 2, Tensor({1, 2}, {1.0, -1.0}), Tensor({2})};
  const Network net({4}, {{"dense", d}, {"activation", ReLU{}}, {"dense_1", o}, {"activation_1", Softmax{}}});
  const auto cand = forward_trace(net, Tensor({4}, {0.3, 0.3, 0.3, 0.3}));
  Rng rng(1);
  const auto res = pixelwise_search({&net}, cand, NcTarget{1, 0}, unit_box(4), EngineConfig{}, rng);
  CHECK(res.status == EngineStatus::failed);
  CHECK_FALSE(res.note.empty());
}

TEST_CASE("pixelwise search respects the change budget") {
  Rng rng(5);
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Network net = generate_model("dense:12,relu,dense:2,softmax", {16}, seed);
    const auto cand = forward_trace(net, random_input(16, rng));
    for (std::size_t i = 0; i < 12; ++i) {
      if (cand.layers[1].u[i] > 0.0) continue;
      const auto res = pixelwise_search({&net}, cand, NcTarget{1, i}, unit_box(16), EngineConfig{}, rng);
      CHECK(norm_l0(res.x.values(), cand.input.values()) <= 4.0);
      if (res.status == EngineStatus::found) CHECK(forward_trace(net, res.x).layers[1].u[i] > 0.0);
    }
  }
}

TEST_CASE("fuzzing with no iterations produces nothing") {
  const Network net = generate_model("dense:8,relu,dense:2,softmax", {2}, 1);
  const std::vector<Tensor> seeds = {Tensor({2}, {0.5, 0.5})};
  FuzzConfig cfg;
  const auto res = fuzz(net, seeds, unit_box(2), cfg, OracleConfig{}, nullptr);
  CHECK(res.mutants == 0);
  CHECK(res.adversarials.empty());
}

TEST_CASE("fuzzing a constant network finds no adversarial") {
  Dense d{2, 2, Tensor({2, 2}), Tensor({2}, {1.0, 0.0})};
  const Network net({2}, {{"dense", d}, {"activation", Softmax{}}});
  const std::vector<Tensor> seeds = {Tensor({2}, {0.5, 0.5}), Tensor({2}, {0.1, 0.9})};
  FuzzConfig cfg;
  cfg.iterations = 500;
  cfg.seed = 3;
  const auto res = fuzz(net, seeds, unit_box(2), cfg, OracleConfig{}, nullptr);
  CHECK(res.mutants == 500);
  CHECK(res.adversarials.empty());
  CHECK(res.accepted > 0);
}

TEST_CASE("fuzzing results do not depend on the worker count") {
  // label 1 iff x0 > 0.5
  Dense d{2, 2, Tensor({2, 2}, {0.0, 1.0, 0.0, 0.0}), Tensor({2}, {0.0, -0.5})};
  const Network net({2}, {{"dense", d}, {"activation", Softmax{}}});
  Rng rng(8);
  std::vector<Tensor> seeds;
  for (int i = 0; i < 10; ++i) seeds.push_back(random_input(2, rng));
  FuzzConfig cfg;
  cfg.iterations = 1000;
  cfg.seed = 99;
  OracleConfig oracle;
  oracle.dthr = 0.5;
  const auto base = fuzz(net, seeds, unit_box(2), cfg, oracle, nullptr);
  CHECK(base.adversarials.size() > 0);
  for (std::size_t w : {2u, 3u, 8u}) {
    cfg.workers = w;
    const auto other = fuzz(net, seeds, unit_box(2), cfg, oracle, nullptr);
    CHECK(other.accepted == base.accepted);
    REQUIRE(other.adversarials.size() == base.adversarials.size());
    for (std::size_t i = 0; i < base.adversarials.size(); ++i) {
      CHECK(other.adversarials[i].index == base.adversarials[i].index);
      CHECK(other.adversarials[i].x == base.adversarials[i].x);
    }
  }
  for (const auto& m : base.adversarials) {
    CHECK(m.verdict.accepted);
    CHECK(forward(net, m.x).label != forward(net, seeds[m.seed_index]).label);
  }
}
