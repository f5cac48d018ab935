// Reference implementations used only by the tests. Each one is written
// from the textbook definition, independently of the library code.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <vector>

namespace oracle {

/// JS divergence in bits, using natural logs then converting.
inline double js(const std::vector<double>& p, const std::vector<double>& q) {
  double kl_pm = 0.0;
  double kl_qm = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    double m = (p[k] + q[k]) / 2.0;
    if (p[k] > 0) kl_pm += p[k] * (std::log(p[k]) - std::log(m));
    if (q[k] > 0) kl_qm += q[k] * (std::log(q[k]) - std::log(m));
  }
  return (kl_pm + kl_qm) / 2.0 / std::log(2.0);
}

inline double bc(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) s += std::sqrt(p[k]) * std::sqrt(q[k]);
  return s;
}

inline double entropy_bits(const std::vector<double>& p) {
  double h = 0.0;
  for (double x : p) {
    if (x > 0) h -= x * std::log(x);
  }
  return h / std::log(2.0);
}

/// Plain exp / sum, no shift. Only valid for moderate inputs.
inline std::vector<double> softmax(const std::vector<double>& a) {
  std::vector<double> e;
  double total = 0.0;
  for (double x : a) {
    e.push_back(std::exp(x));
    total += e.back();
  }
  for (double& x : e) x /= total;
  return e;
}

/// Componentwise sum_b w_b * p_b, accumulated in long double.
inline std::vector<double> mixture(const std::vector<std::vector<double>>& ps, const std::vector<double>& w) {
  std::vector<long double> acc(ps.front().size(), 0.0L);
  for (std::size_t b = 0; b < ps.size(); ++b) {
    for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += static_cast<long double>(w[b]) * ps[b][k];
  }
  return {acc.begin(), acc.end()};
}

inline std::size_t argmax_first(const std::vector<double>& p) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < p.size(); ++k) {
    if (p[k] > p[best]) best = k;
  }
  return best;
}

struct Confusion {
  std::size_t classes;
  std::vector<std::vector<std::size_t>> m;  // m[truth][pred]

  explicit Confusion(std::size_t k) : classes(k), m(k, std::vector<std::size_t>(k, 0)) {}

  void add(std::size_t truth, std::size_t pred) { ++m[truth][pred]; }

  double accuracy() const {
    std::size_t diag = 0;
    std::size_t total = 0;
    for (std::size_t i = 0; i < classes; ++i) {
      for (std::size_t j = 0; j < classes; ++j) {
        total += m[i][j];
        if (i == j) diag += m[i][j];
      }
    }
    return static_cast<double>(diag) / static_cast<double>(total);
  }

  /// Precision/recall form of F1 averaged over every class; 0 when a class
  /// has no predictions or no support.
  double macro_f1() const {
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      double tp = static_cast<double>(m[c][c]);
      double predicted = 0.0;
      double actual = 0.0;
      for (std::size_t o = 0; o < classes; ++o) {
        predicted += static_cast<double>(m[o][c]);
        actual += static_cast<double>(m[c][o]);
      }
      double precision = predicted > 0 ? tp / predicted : 0.0;
      double recall = actual > 0 ? tp / actual : 0.0;
      sum += precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
    }
    return sum / static_cast<double>(classes);
  }
};

/// Pooled R^2 over all cells, clamped at zero.
inline double r2(const std::vector<std::vector<double>>& truth, const std::vector<std::vector<double>>& pred) {
  double n = 0.0;
  double mean = 0.0;
  for (const auto& t : truth) {
    for (double x : t) {
      mean += x;
      n += 1.0;
    }
  }
  mean /= n;
  double res = 0.0;
  double tot = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    for (std::size_t k = 0; k < truth[i].size(); ++k) {
      res += std::pow(truth[i][k] - pred[i][k], 2);
      tot += std::pow(truth[i][k] - mean, 2);
    }
  }
  return std::max(0.0, 1.0 - res / tot);
}

}  // namespace oracle
