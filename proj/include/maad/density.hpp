#pragma once

// Gaussian kernel density estimate over latent vectors.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "maad/io.hpp"

namespace maad::density {

// log p is never reported below this (exp(-745) is the smallest subnormal).
inline constexpr double kLogDensityFloor = -745.0;

// M points of dimension d, stored row-major.
class PointSet {
 public:
  PointSet() = default;
  explicit PointSet(std::size_t dim) : dim_(dim) {
    if (dim == 0) throw std::invalid_argument("PointSet: dimension must be >= 1");
  }
  PointSet(std::size_t dim, std::vector<double> values) : PointSet(dim) {
    if (values.size() % dim != 0) throw std::invalid_argument("PointSet: value count not a multiple of dimension");
    values_ = std::move(values);
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return dim_ == 0 ? 0 : values_.size() / dim_; }
  bool empty() const { return values_.empty(); }
  std::span<const double> operator[](std::size_t i) const { return {values_.data() + i * dim_, dim_}; }
  const std::vector<double>& values() const { return values_; }

  void push_back(std::span<const double> p) {
    if (p.size() != dim_) {
      throw std::invalid_argument("PointSet: point of dimension " + std::to_string(p.size()) + ", expected " +
                                  std::to_string(dim_));
    }
    values_.insert(values_.end(), p.begin(), p.end());
  }

  bool operator==(const PointSet&) const = default;

 private:
  std::size_t dim_ = 0;
  std::vector<double> values_;
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

// log( (1 / (M h^d)) sum_i (2 pi)^{-d/2} exp(-r_i / (2 h^2)) ) from squared distances r_i.
inline double log_density_from_squared(std::span<const double> sq, std::size_t dim, double h) {
  const double inv2h2 = 0.5 / (h * h);
  double lo = std::numeric_limits<double>::infinity();
  for (double r : sq) lo = std::min(lo, r);
  double acc = 0.0;
  for (double r : sq) acc += std::exp(-(r - lo) * inv2h2);
  const double d = static_cast<double>(dim);
  const double v = -lo * inv2h2 + std::log(acc) - std::log(static_cast<double>(sq.size())) - d * std::log(h) -
                   0.5 * d * std::log(2.0 * std::numbers::pi);
  return std::max(v, kLogDensityFloor);
}

class DensityModel {
 public:
  DensityModel(PointSet points, double h) : points_(std::move(points)), h_(h) {
    if (points_.empty()) throw std::invalid_argument("density fit: no latent vectors");
    if (!(h > 0.0) || !std::isfinite(h)) throw std::invalid_argument("density fit: bandwidth must be > 0");
  }

  std::size_t size() const { return points_.size(); }
  std::size_t dim() const { return points_.dim(); }
  double bandwidth() const { return h_; }
  const PointSet& points() const { return points_; }

  double log_density(std::span<const double> z) const {
    if (z.size() != dim()) {
      throw std::invalid_argument("log_density: query of dimension " + std::to_string(z.size()) + ", model has " +
                                  std::to_string(dim()));
    }
    thread_local std::vector<double> sq;
    sq.resize(size());
    for (std::size_t i = 0; i < size(); ++i) sq[i] = squared_distance(z, points_[i]);
    return log_density_from_squared(sq, dim(), h_);
  }

 private:
  PointSet points_;
  double h_;
};

inline DensityModel fit(PointSet latents, double h) { return DensityModel(std::move(latents), h); }

// 2^-4.5, 2^-4, ..., 2^5
inline std::vector<double> default_bandwidth_grid() {
  std::vector<double> g;
  for (int k = -9; k <= 10; ++k) g.push_back(std::exp2(0.5 * k));
  return g;
}

struct BandwidthSelection {
  double bandwidth = 0.0;
  std::vector<double> grid;
  std::vector<double> mean_log_likelihood;  // per grid entry
};

// 5-fold cross-validation of held-out mean log-density. Folds are contiguous
// blocks of a seeded permutation; ties go to the smaller bandwidth.
inline BandwidthSelection select_bandwidth(const PointSet& latents, std::vector<double> grid, std::uint64_t seed = 0,
                                           std::size_t folds = 5) {
  if (latents.size() < folds) {
    throw std::invalid_argument("select_bandwidth: need at least " + std::to_string(folds) + " points, got " +
                                std::to_string(latents.size()));
  }
  if (grid.empty()) throw std::invalid_argument("select_bandwidth: empty grid");
  for (double h : grid)
    if (!(h > 0.0)) throw std::invalid_argument("select_bandwidth: grid values must be > 0");
  std::sort(grid.begin(), grid.end());

  const std::size_t n = latents.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<double> score(grid.size(), 0.0);
  std::vector<double> sq;
  for (std::size_t f = 0; f < folds; ++f) {
    const std::size_t lo = f * n / folds, hi = (f + 1) * n / folds;
    const std::size_t n_train = n - (hi - lo);
    // Held-out x train squared distances, shared by every bandwidth.
    sq.assign((hi - lo) * n_train, 0.0);
    for (std::size_t q = lo; q < hi; ++q) {
      double* row = sq.data() + (q - lo) * n_train;
      std::size_t c = 0;
      for (std::size_t k = 0; k < n; ++k) {
        if (k >= lo && k < hi) continue;
        row[c++] = squared_distance(latents[order[q]], latents[order[k]]);
      }
    }
    for (std::size_t g = 0; g < grid.size(); ++g) {
      double total = 0.0;
      for (std::size_t q = 0; q < hi - lo; ++q)
        total += log_density_from_squared({sq.data() + q * n_train, n_train}, latents.dim(), grid[g]);
      score[g] += total / static_cast<double>(hi - lo) / static_cast<double>(folds);
    }
  }
  std::size_t best = 0;
  for (std::size_t g = 1; g < grid.size(); ++g)
    if (score[g] > score[best]) best = g;
  return {grid[best], grid, score};
}

inline constexpr double kJitterStd = 0.1;

// Without replacement when m <= size; otherwise with replacement plus Gaussian
// jitter on every coordinate.
inline PointSet subsample(const PointSet& latents, std::size_t m, std::uint64_t seed) {
  if (m == 0) throw std::invalid_argument("subsample: M must be >= 1");
  if (latents.empty()) throw std::invalid_argument("subsample: no latent vectors");
  std::mt19937_64 rng(seed);
  const std::size_t n = latents.size();
  PointSet out(latents.dim());
  if (m <= n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < m; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, n - 1);
      std::swap(idx[i], idx[pick(rng)]);
      out.push_back(latents[idx[i]]);
    }
    return out;
  }
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::normal_distribution<double> noise(0.0, kJitterStd);
  std::vector<double> p(latents.dim());
  for (std::size_t i = 0; i < m; ++i) {
    const auto src = latents[pick(rng)];
    for (std::size_t k = 0; k < p.size(); ++k) p[k] = src[k] + noise(rng);
    out.push_back(p);
  }
  return out;
}

// Text file: "M,d,h" header, one value row, then M rows of d values.
inline void save_density(const DensityModel& model, const std::string& path) {
  auto out = open_for_write(path);
  out << "M,d,h\n" << model.size() << ',' << model.dim() << ',' << format_double(model.bandwidth()) << '\n';
  for (std::size_t i = 0; i < model.size(); ++i) {
    const auto p = model.points()[i];
    for (std::size_t k = 0; k < p.size(); ++k) out << (k ? "," : "") << format_double(p[k]);
    out << '\n';
  }
  if (!out) throw DataError("failed writing density model '" + path + "'");
}

inline DensityModel load_density(const std::string& path) {
  std::vector<std::string> lines;
  try {
    lines = read_lines(path);
  } catch (const DataError&) {
    throw DataError("no density model at '" + path + "'; run `maad fit-density` first");
  }
  if (lines.size() < 2 || lines[0] != "M,d,h") throw ParseError(path, 1, "header", "expected 'M,d,h'");
  const auto head = split_csv(lines[1]);
  if (head.size() != 3) throw ParseError(path, 2, "header", "expected 3 values");
  const long long m = parse_int(head[0], path, 2, "M");
  const long long d = parse_int(head[1], path, 2, "d");
  const double h = parse_double(head[2], path, 2, "h");
  if (m < 1 || d < 1) throw ParseError(path, 2, "M", "M and d must be >= 1");
  if (lines.size() != static_cast<std::size_t>(m) + 2) {
    throw ParseError(path, lines.size(), "M", "expected " + std::to_string(m) + " vectors, found " +
                                                  std::to_string(lines.size() - 2));
  }
  PointSet pts(static_cast<std::size_t>(d));
  std::vector<double> p(static_cast<std::size_t>(d));
  for (std::size_t i = 0; i < static_cast<std::size_t>(m); ++i) {
    const auto f = split_csv(lines[i + 2]);
    if (f.size() != p.size()) throw ParseError(path, i + 3, "vector", "expected " + std::to_string(d) + " values");
    for (std::size_t k = 0; k < p.size(); ++k) p[k] = parse_double(f[k], path, i + 3, "z" + std::to_string(k));
    pts.push_back(p);
  }
  if (!(h > 0.0)) throw ParseError(path, 2, "h", "bandwidth must be > 0");
  return DensityModel(std::move(pts), h);
}

}  // namespace maad::density
