#pragma once

// Brute-force reference implementations used by the tests. They share no code
// with the library beyond plain data types.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <set>
#include <vector>

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) c[i][j] += a[i][k] * b[k][j];
  return c;
}

// D^{-1/2} (A + I) D^{-1/2} by explicit dense products.
inline Matrix normalized_adjacency(const Matrix& a) {
  const std::size_t n = a.size();
  Matrix tilde = a, dm(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) tilde[i][i] += 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) deg += tilde[i][j];
    dm[i][i] = std::pow(deg, -0.5);
  }
  return matmul(matmul(dm, tilde), dm);
}

// Plain density-space sum of Gaussian kernels.
inline double kde_log_density(const std::vector<std::vector<double>>& pts, const std::vector<double>& z, double h) {
  const double d = static_cast<double>(z.size());
  double p = 0.0;
  for (const auto& x : pts) {
    double r = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) r += ((z[k] - x[k]) / h) * ((z[k] - x[k]) / h);
    p += std::pow(2.0 * std::numbers::pi, -d / 2.0) * std::exp(-0.5 * r);
  }
  return std::log(p / (static_cast<double>(pts.size()) * std::pow(h, d)));
}

// Mann-Whitney U / (P N), ties counted as one half.
inline double mann_whitney(const std::vector<double>& s, const std::vector<int>& pos) {
  double u = 0.0, P = 0.0, N = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) (pos[i] ? P : N) += 1.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (pos[i] && !pos[j]) u += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
  return u / (P * N);
}

struct Point {
  double threshold, tpr, fpr, recall, precision;
};

// Every distinct score as a threshold (predict positive when score >= threshold),
// counts taken by a full pass over the data.
inline std::vector<Point> sweep(const std::vector<double>& s, const std::vector<int>& pos) {
  std::set<double, std::greater<>> thresholds(s.begin(), s.end());
  double P = 0.0, N = 0.0;
  for (int p : pos) (p ? P : N) += 1.0;
  std::vector<Point> out;
  for (double th : thresholds) {
    double tp = 0.0, fp = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] >= th) (pos[i] ? tp : fp) += 1.0;
    out.push_back({th, P > 0 ? tp / P : 0.0, N > 0 ? fp / N : 0.0, P > 0 ? tp / P : 0.0, tp / (tp + fp)});
  }
  return out;
}

inline double aupr(const std::vector<double>& s, const std::vector<int>& pos) {
  const auto pts = sweep(s, pos);
  double area = 0.0, prev = 0.0;
  for (std::size_t k = 0; k < pts.size(); ++k) {
    double best = 0.0;
    for (const Point& q : pts)
      if (q.recall >= pts[k].recall) best = std::max(best, q.precision);
    area += (pts[k].recall - prev) * best;
    prev = pts[k].recall;
  }
  return area;
}

inline double fpr_at_95_tpr(const std::vector<double>& s, const std::vector<int>& pos) {
  double best = std::numeric_limits<double>::infinity();
  for (const Point& p : sweep(s, pos))
    if (p.tpr >= 0.95) best = std::min(best, p.fpr);
  return best;
}

// -log of the bivariate normal density written out term by term.
inline double bivariate_nll(double x, double y, double mx, double my, double sx, double sy, double rho) {
  const double zx = (x - mx) / sx, zy = (y - my) / sy;
  const double one_m = 1.0 - rho * rho;
  const double dens = std::exp(-(zx * zx + zy * zy - 2.0 * rho * zx * zy) / (2.0 * one_m)) /
                      (2.0 * std::numbers::pi * sx * sy * std::sqrt(one_m));
  return -std::log(dens);
}

// Number of stride-1 windows of length w in a sequence of length n covering index t.
inline std::size_t covering_windows(std::size_t n, std::size_t w, std::size_t t) {
  std::size_t c = 0;
  for (std::size_t start = 0; start + w <= n; ++start)
    if (start <= t && t < start + w) ++c;
  return c;
}

}  // namespace oracle
