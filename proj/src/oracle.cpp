#include "concov/oracle.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <cmath>

#include "concov/error.hpp"

namespace concov {

Norm parse_norm(const std::string& text) {
  std::string t(text);
  std::ranges::transform(t, t.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (t == "l0") return Norm::l0;
  if (t == "linf") return Norm::linf;
  throw InputError(fmt::format("unknown norm '{}' (expected l0 or linf)", text));
}

const char* norm_name(Norm n) { return n == Norm::l0 ? "L0" : "Linf"; }

namespace {

void check_sizes(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw InputError(fmt::format("cannot compare inputs of {} and {} features", a.size(), b.size()));
  }
}

}  // namespace

double norm_l0(std::span<const double> a, std::span<const double> b) {
  check_sizes(a, b);
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += std::abs(a[i] - b[i]) > 1e-12 ? 1 : 0;
  return static_cast<double>(n);
}

double norm_linf(std::span<const double> a, std::span<const double> b) {
  check_sizes(a, b);
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double norm_distance(Norm n, std::span<const double> a, std::span<const double> b) {
  return n == Norm::l0 ? norm_l0(a, b) : norm_linf(a, b);
}

double default_dthr(Norm n, std::size_t n_features) {
  return n == Norm::l0 ? static_cast<double>(std::max<std::size_t>(1, n_features / 4)) : 0.25;
}

// ---------------------------------------------------------------------------

double cosine_distance(std::span<const double> a, std::span<const double> b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace {

bool is_zero(std::span<const double> x) {
  return std::ranges::all_of(x, [](double v) { return v == 0.0; });
}

}  // namespace

LofEstimator::LofEstimator(std::vector<std::vector<double>> sample, std::size_t k) : k_(k) {
  if (k < 1) throw InputError("LOF needs at least one neighbour");
  for (auto& s : sample) {
    if (!is_zero(s)) sample_.push_back(std::move(s));
  }
  if (sample_.size() <= k) {
    throw InputError(fmt::format("LOF with k = {} needs more than {} nonzero sample points, got {}", k, k,
                                 sample_.size()));
  }
  std::vector<std::vector<Neighbour>> nn(sample_.size());
  for (std::size_t i = 0; i < sample_.size(); ++i) {
    nn[i] = neighbours(sample_[i], static_cast<long>(i));
    k_distance_.push_back(nn[i].back().dist);
  }
  for (std::size_t i = 0; i < sample_.size(); ++i) {
    double sum = 0;
    for (const auto& n : nn[i]) sum += std::max(k_distance_[n.index], n.dist);
    lrd_.push_back(1.0 / (sum / static_cast<double>(k_) + 1e-10));
  }
}

std::vector<LofEstimator::Neighbour> LofEstimator::neighbours(std::span<const double> x, long skip) const {
  std::vector<Neighbour> all;
  all.reserve(sample_.size());
  for (std::size_t i = 0; i < sample_.size(); ++i) {
    if (static_cast<long>(i) == skip) continue;
    all.push_back({cosine_distance(x, sample_[i]), i});
  }
  auto less = [](const Neighbour& a, const Neighbour& b) {
    return a.dist < b.dist || (a.dist == b.dist && a.index < b.index);
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<long>(k_), all.end(), less);
  all.resize(k_);
  return all;
}

double LofEstimator::lof_of(const std::vector<Neighbour>& nn) const {
  double reach = 0, mean_lrd = 0;
  for (const auto& n : nn) {
    reach += std::max(k_distance_[n.index], n.dist);
    mean_lrd += lrd_[n.index];
  }
  const double lrd = 1.0 / (reach / static_cast<double>(k_) + 1e-10);
  return mean_lrd / static_cast<double>(k_) / lrd;
}

double LofEstimator::score(std::span<const double> x) const {
  if (x.size() != sample_[0].size()) {
    throw InputError(fmt::format("LOF expects {} features, got {}", sample_[0].size(), x.size()));
  }
  if (is_zero(x)) throw InputError("cosine distance is undefined for a zero vector");
  return lof_of(neighbours(x, -1));
}

double LofEstimator::score_member(std::size_t i) const { return lof_of(neighbours(sample_.at(i), static_cast<long>(i))); }

// ---------------------------------------------------------------------------

const char* reject_reason_name(RejectReason r) {
  switch (r) {
    case RejectReason::none: return "none";
    case RejectReason::distance: return "distance";
    case RejectReason::outlier: return "outlier";
  }
  return "?";
}

Verdict vet(const OracleConfig& cfg, const LofEstimator* lof, std::span<const double> x, std::size_t x_label,
            std::span<const double> x2, std::size_t x2_label) {
  Verdict v;
  v.label = x2_label;
  v.distance = norm_distance(cfg.norm, x, x2);
  if (v.distance > cfg.dthr) {
    v.reason = RejectReason::distance;
    return v;
  }
  if (cfg.lof_enabled && lof != nullptr) {
    if (is_zero(x2)) {
      v.reason = RejectReason::outlier;
      return v;
    }
    v.lof_score = lof->score(x2);
    if (*v.lof_score > cfg.lof_threshold) {
      v.reason = RejectReason::outlier;
      return v;
    }
  }
  v.accepted = true;
  v.adversarial = x2_label != x_label;
  return v;
}

Verdict vet(const OracleConfig& cfg, const LofEstimator* lof, const Network& net, const Tensor& x, const Tensor& x2) {
  return vet(cfg, lof, x.values(), forward(net, x).label, x2.values(), forward(net, x2).label);
}

}  // namespace concov
