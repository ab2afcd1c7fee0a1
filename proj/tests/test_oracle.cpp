#include <doctest.h>

#include <cmath>

#include "concov/error.hpp"
#include "concov/oracle.hpp"
#include "concov/rng.hpp"
#include "support/oracles.hpp"

using namespace concov;

namespace {

oracle::Matrix random_points(std::size_t n, std::size_t d, Rng& rng) {
  oracle::Matrix m(n, std::vector<double>(d));
  for (auto& r : m)
    for (double& v : r) v = rng.uniform(-1, 1);
  return m;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) { return oracle::cosine_distance(a, b); }

Network threshold_net() {
  // label 1 iff x > 0.5: scores (0, x - 0.5)
  Dense d{1, 2, Tensor({1, 2}, {0.0, 1.0}), Tensor({2}, {0.0, -0.5})};
  return Network({1}, {{"dense", d}, {"activation", Softmax{}}});
}

}  // namespace

TEST_CASE("norms on identical and single-pixel pairs") {
  std::vector<double> a(784, 0.3), b(a);
  CHECK(norm_l0(a, b) == 0.0);
  CHECK(norm_linf(a, b) == 0.0);
  b[100] += 0.02;
  CHECK(norm_l0(a, b) == 1.0);
  CHECK(norm_linf(a, b) == doctest::Approx(0.02).epsilon(1e-12));
}

TEST_CASE("norms match an elementwise recount") {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> a(30), b(30);
    std::size_t diff = 0;
    double mx = 0;
    for (std::size_t i = 0; i < 30; ++i) {
      a[i] = rng.uniform();
      b[i] = rng.below(3) == 0 ? a[i] + rng.uniform(-0.5, 0.5) : a[i];
      if (a[i] != b[i]) ++diff;
      mx = std::max(mx, std::abs(a[i] - b[i]));
    }
    CHECK(norm_l0(a, b) == static_cast<double>(diff));
    CHECK(norm_linf(a, b) == mx);
    CHECK(norm_linf(b, a) == norm_linf(a, b));
  }
  const std::vector<double> x(3), y(4);
  CHECK_THROWS_AS(norm_l0(x, y), InputError);
}

TEST_CASE("norm names and defaults") {
  CHECK(parse_norm("Linf") == Norm::linf);
  CHECK(parse_norm("l0") == Norm::l0);
  CHECK_THROWS_AS(parse_norm("l2"), InputError);
  CHECK(std::string(norm_name(Norm::l0)) == "L0");
  CHECK(default_dthr(Norm::linf, 784) == 0.25);
  CHECK(default_dthr(Norm::l0, 784) == 196.0);
}

TEST_CASE("LOF matches the direct formula on random sets") {
  Rng rng(8);
  for (int set = 0; set < 30; ++set) {
    const auto pts = random_points(20, 2 + set % 3, rng);
    const LofEstimator lof(pts, 3);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      CHECK(std::abs(lof.score_member(i) - oracle::lof_brute_force(pts, pts[i], 3, cosine, static_cast<long>(i))) <
            1e-9);
    }
    for (int q = 0; q < 5; ++q) {
      const auto query = random_points(1, pts[0].size(), rng)[0];
      CHECK(std::abs(lof.score(query) - oracle::lof_brute_force(pts, query, 3, cosine)) < 1e-9);
    }
  }
}

TEST_CASE("LOF of a far point in a cluster matches the direct formula") {
  Rng rng(12);
  oracle::Matrix pts;
  for (int i = 0; i < 20; ++i) pts.push_back({1.0 + rng.uniform(-0.05, 0.05), 0.2 + rng.uniform(-0.05, 0.05)});
  const LofEstimator lof(pts, 3);
  const std::vector<double> far = {-0.3, 1.0};
  const double s = lof.score(far);
  CHECK(std::abs(s - oracle::lof_brute_force(pts, far, 3, cosine)) < 1e-9);
  CHECK(s > 1.5);
}

TEST_CASE("LOF of duplicated points is one") {
  const oracle::Matrix pts(25, std::vector<double>{0.3, 0.7, 0.1});
  const LofEstimator lof(pts, 5);
  CHECK(std::abs(lof.score(pts[0]) - 1.0) < 1e-9);
  CHECK(std::abs(lof.score_member(3) - 1.0) < 1e-9);
}

TEST_CASE("LOF of an interior point of an even angular grid is near one") {
  oracle::Matrix pts;
  for (int i = 0; i < 60; ++i) {
    const double t = 0.01 * i;
    pts.push_back({std::cos(t), std::sin(t)});
  }
  const LofEstimator lof(pts, 4);
  const double s = lof.score(std::vector<double>{std::cos(0.305), std::sin(0.305)});
  CHECK(s >= 0.9);
  CHECK(s <= 1.1);
}

TEST_CASE("LOF ignores magnitude and rejects zero vectors") {
  Rng rng(5);
  const auto pts = random_points(30, 4, rng);
  const LofEstimator lof(pts, 5);
  const std::vector<double> q = {0.2, -0.4, 0.9, 0.1};
  std::vector<double> scaled(q);
  for (double& v : scaled) v *= 7.5;
  CHECK(lof.score(q) == doctest::Approx(lof.score(scaled)).epsilon(1e-9));
  CHECK_THROWS_AS(lof.score(std::vector<double>(4, 0.0)), InputError);
  CHECK_THROWS_AS(LofEstimator(random_points(3, 2, rng), 3), InputError);
}

TEST_CASE("vet accepts identical inputs and rejects far ones") {
  const Network net = threshold_net();
  OracleConfig cfg;
  const Tensor x({1}, {0.3});
  auto v = vet(cfg, nullptr, net, x, x);
  CHECK(v.accepted);
  CHECK_FALSE(v.adversarial);
  CHECK(v.reason == RejectReason::none);

  v = vet(cfg, nullptr, net, x, Tensor({1}, {0.6}));
  CHECK_FALSE(v.accepted);
  CHECK(v.reason == RejectReason::distance);
  CHECK(v.distance == doctest::Approx(0.3));
  CHECK_FALSE(v.adversarial);
}

TEST_CASE("vet flags a near-boundary label change as adversarial") {
  const Network net = threshold_net();
  OracleConfig cfg;
  const auto v = vet(cfg, nullptr, net, Tensor({1}, {0.45}), Tensor({1}, {0.55}));
  CHECK(v.accepted);
  CHECK(v.adversarial);
  CHECK(v.label == 1);
  CHECK(v.distance == doctest::Approx(0.1));
}

TEST_CASE("vet distance acceptance is monotone under shrinking perturbations") {
  OracleConfig cfg;
  cfg.norm = Norm::linf;
  cfg.dthr = 0.2;
  Rng rng(9);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> x(5), y(5);
    for (std::size_t i = 0; i < 5; ++i) {
      x[i] = rng.uniform();
      y[i] = x[i] + rng.uniform(-0.4, 0.4);
    }
    const bool far = !vet(cfg, nullptr, x, 0, y, 0).accepted;
    std::vector<double> half(5);
    for (std::size_t i = 0; i < 5; ++i) half[i] = x[i] + 0.5 * (y[i] - x[i]);
    if (!far) CHECK(vet(cfg, nullptr, x, 0, half, 0).accepted);
    CHECK(vet(cfg, nullptr, x, 0, y, 0).distance == vet(cfg, nullptr, y, 0, x, 0).distance);
  }
}

TEST_CASE("vet with LOF rejects outliers and never reports them as adversarial") {
  oracle::Matrix pts;
  Rng rng(1);
  for (int i = 0; i < 40; ++i) pts.push_back({1.0 + rng.uniform(-0.05, 0.05), 0.2 + rng.uniform(-0.05, 0.05)});
  const LofEstimator lof(pts, 5);
  OracleConfig cfg;
  cfg.dthr = 10;
  cfg.lof_enabled = true;
  const std::vector<double> x = {1.0, 0.2}, inlier = {1.01, 0.21}, outlier = {-0.3, 1.0}, zero = {0.0, 0.0};
  auto v = vet(cfg, &lof, x, 0, inlier, 1);
  CHECK(v.accepted);
  CHECK(v.adversarial);
  REQUIRE(v.lof_score);
  v = vet(cfg, &lof, x, 0, outlier, 1);
  CHECK_FALSE(v.accepted);
  CHECK_FALSE(v.adversarial);
  CHECK(v.reason == RejectReason::outlier);
  v = vet(cfg, &lof, x, 0, zero, 1);
  CHECK(v.reason == RejectReason::outlier);
}
