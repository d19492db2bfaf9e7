#pragma once

// Test-only reference implementations. Deliberately naive and independent of
// the library code paths they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <vector>

#include "attnseg/matrix.hpp"
#include "attnseg/types.hpp"

namespace oracle {

using Dense = std::vector<std::vector<double>>;

inline Dense to_dense(const attnseg::Matrix& m) {
  Dense d(m.rows, std::vector<double>(m.cols));
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) d[r][c] = m(r, c);
  return d;
}

inline Dense matmul(const Dense& a, const Dense& b) {
  const std::size_t n = a.size(), k = b.size(), m = b.empty() ? 0 : b[0].size();
  Dense out(n, std::vector<double>(m, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += a[i][t] * b[t][j];
      out[i][j] = s;
    }
  return out;
}

/// self^order * cross via an explicit matrix power (triple loops).
inline Dense matrix_power_times(const Dense& self, const Dense& cross, int order) {
  const std::size_t n = self.size();
  Dense power(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) power[i][i] = 1.0;
  for (int o = 0; o < order; ++o) power = matmul(power, self);
  return matmul(power, cross);
}

inline attnseg::Matrix random_stochastic(std::size_t rows, std::size_t cols, std::mt19937_64& rng,
                                         double sparsity = 0.0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  attnseg::Matrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    std::vector<double> row(cols);
    double s = 0.0;
    for (auto& v : row) {
      v = u(rng) < sparsity ? 0.0 : u(rng);
      s += v;
    }
    if (s == 0.0) {
      row[r % cols] = 1.0;
      s = 1.0;
    }
    for (std::size_t c = 0; c < cols; ++c) m(r, c) = static_cast<float>(row[c] / s);
  }
  return m;
}

/// Max total over all injective row -> column maps (rows <= cols).
inline double brute_force_assignment(const std::vector<double>& scores, std::size_t rows, std::size_t cols) {
  std::vector<std::size_t> perm(cols);
  std::iota(perm.begin(), perm.end(), 0);
  double best = -std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t i = 0; i < rows; ++i) total += scores[i * cols + perm[i]];
    best = std::max(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

/// Adjusted Rand index between two labelings.
inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1;
    ra[a[i]] += 1;
    rb[b[i]] += 1;
  }
  auto c2 = [](double n) { return n * (n - 1) / 2.0; };
  double sj = 0, sa = 0, sb = 0;
  for (auto& [k, v] : joint) sj += c2(v);
  for (auto& [k, v] : ra) sa += c2(v);
  for (auto& [k, v] : rb) sb += c2(v);
  const double total = c2(static_cast<double>(a.size()));
  const double expected = sa * sb / total;
  const double max_index = 0.5 * (sa + sb);
  if (max_index == expected) return 1.0;
  return (sj - expected) / (max_index - expected);
}

/// Reference mean-field for a fully connected CRF with Potts compatibility:
/// straightforward double loop over all pixel pairs, recomputing kernels.
/// q0 is labels-major; returns labels-major Q after `iterations`.
inline std::vector<double> mean_field_reference(const attnseg::RgbImage& img, const std::vector<double>& q0,
                                                std::size_t labels, int iterations, double w1, double sxy_a,
                                                double srgb, double w2, double sxy_s) {
  const std::size_t n = img.width * img.height;
  std::vector<double> q = q0;
  for (int it = 0; it < iterations; ++it) {
    std::vector<double> next(q.size());
    for (std::size_t i = 0; i < n; ++i) {
      const double xi = static_cast<double>(i % img.width), yi = static_cast<double>(i / img.width);
      std::vector<double> energy(labels);
      for (std::size_t l = 0; l < labels; ++l) energy[l] = -std::log(q0[l * n + i]);
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double xj = static_cast<double>(j % img.width), yj = static_cast<double>(j / img.width);
        const double d2 = (xi - xj) * (xi - xj) + (yi - yj) * (yi - yj);
        double c2 = 0.0;
        for (int ch = 0; ch < 3; ++ch) {
          const double d = static_cast<double>(img.pixels[3 * i + ch]) - static_cast<double>(img.pixels[3 * j + ch]);
          c2 += d * d;
        }
        const double k = w1 * std::exp(-d2 / (2 * sxy_a * sxy_a) - c2 / (2 * srgb * srgb)) +
                         w2 * std::exp(-d2 / (2 * sxy_s * sxy_s));
        // Potts: label l pays k * Q_j(l') for every l' != l.
        for (std::size_t l = 0; l < labels; ++l)
          for (std::size_t m = 0; m < labels; ++m)
            if (m != l) energy[l] += k * q[m * n + j];
      }
      double z = 0.0;
      const double lo = *std::min_element(energy.begin(), energy.end());
      for (std::size_t l = 0; l < labels; ++l) z += std::exp(-(energy[l] - lo));
      for (std::size_t l = 0; l < labels; ++l) next[l * n + i] = std::exp(-(energy[l] - lo)) / z;
    }
    q = next;
  }
  return q;
}

}  // namespace oracle
