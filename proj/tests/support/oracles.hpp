#pragma once

// Independent reference computations used to freeze expected values in
// tests. Nothing here calls into the library code paths being checked.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

namespace concov::oracle {

using Matrix = std::vector<std::vector<double>>;

/// y = b + W^T x with W stored [in][out] as a nested matrix.
inline std::vector<double> affine(const Matrix& w, const std::vector<double>& b, const std::vector<double>& x) {
  std::vector<double> y(b);
  for (std::size_t j = 0; j < y.size(); ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += w[i][j] * x[i];
    y[j] += acc;
  }
  return y;
}

inline std::vector<double> relu(std::vector<double> v) {
  for (double& x : v) x = x > 0.0 ? x : 0.0;
  return v;
}

/// Cyclic Jacobi eigenvalue iteration for a symmetric matrix. Returns
/// eigenvalues in descending order together with matching unit eigenvectors
/// (as rows).
inline std::pair<std::vector<double>, Matrix> jacobi_eigen(Matrix a) {
  const std::size_t n = a.size();
  Matrix v(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a[x][x] > a[y][y]; });
  std::vector<double> values;
  Matrix vectors;
  for (std::size_t i : order) {
    values.push_back(a[i][i]);
    std::vector<double> col(n);
    for (std::size_t k = 0; k < n; ++k) col[k] = v[k][i];
    vectors.push_back(col);
  }
  return {values, vectors};
}

/// Sample covariance (divisor n - 1).
inline Matrix covariance(const Matrix& rows) {
  const std::size_t n = rows.size(), d = rows[0].size();
  std::vector<double> mean(d, 0.0);
  for (const auto& r : rows)
    for (std::size_t j = 0; j < d; ++j) mean[j] += r[j] / static_cast<double>(n);
  Matrix c(d, std::vector<double>(d, 0.0));
  for (const auto& r : rows)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) c[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]) / static_cast<double>(n - 1);
  return c;
}

inline double cosine_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

inline double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

/// Direct transcription of the local outlier factor definitions: k nearest
/// neighbours (ties by index), k-distance, reachability distance, local
/// reachability density 1 / (mean reach-dist + 1e-10), and the ratio of the
/// neighbours' mean density to the query's.
template <class Dist>
double lof_brute_force(const Matrix& sample, const std::vector<double>& query, std::size_t k, Dist dist,
                       long exclude = -1) {
  auto knn = [&](const std::vector<double>& p, long skip) {
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t i = 0; i < sample.size(); ++i) {
      if (static_cast<long>(i) == skip) continue;
      all.emplace_back(dist(p, sample[i]), i);
    }
    std::sort(all.begin(), all.end());
    all.resize(k);
    return all;
  };
  auto k_distance = [&](std::size_t i) { return knn(sample[i], static_cast<long>(i)).back().first; };
  auto lrd = [&](const std::vector<double>& p, long skip) {
    double sum = 0;
    for (const auto& [d, j] : knn(p, skip)) sum += std::max(k_distance(j), d);
    return 1.0 / (sum / static_cast<double>(k) + 1e-10);
  };
  const auto neighbours = knn(query, exclude);
  double mean_lrd = 0;
  for (const auto& [d, j] : neighbours) mean_lrd += lrd(sample[j], static_cast<long>(j));
  mean_lrd /= static_cast<double>(k);
  return mean_lrd / lrd(query, exclude);
}

}  // namespace concov::oracle
