#pragma once

// Spatio-temporal graph of a scene window: per-frame relative displacements as
// node features, and a symmetrically normalized inverse-distance adjacency.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "maad/diffcore.hpp"
#include "maad/simdata.hpp"

namespace maad::graph {

using ad::Tensor;

// Distances below this are floored so weights stay <= 1e6. Exact coincidence
// still yields weight 0.
inline constexpr double kMinDistance = 1e-6;

using Displacement = std::array<double, 2>;

struct StGraphBatch {
  Tensor features;   // [T', N, 2]
  Tensor adjacency;  // [T', N, N], normalized

  std::size_t frames() const { return features.dim(0); }
  std::size_t agents() const { return features.dim(1); }
};

// v_t = s_t - s_{t-1}; the first frame of the window has no predecessor and is (0, 0).
inline Tensor to_relative(const std::vector<Trajectory>& agents, std::size_t start, std::size_t length) {
  if (agents.empty()) throw std::invalid_argument("to_relative: no agents");
  if (length < 2) throw std::invalid_argument("to_relative: window needs at least 2 frames");
  const std::size_t N = agents.size();
  for (const Trajectory& tr : agents)
    if (start + length > tr.size()) throw std::invalid_argument("to_relative: window exceeds trajectory length");
  Tensor v({length, N, 2});
  for (std::size_t t = 1; t < length; ++t)
    for (std::size_t i = 0; i < N; ++i) {
      const AgentState& cur = agents[i][start + t];
      const AgentState& prev = agents[i][start + t - 1];
      v[(t * N + i) * 2] = cur.x - prev.x;
      v[(t * N + i) * 2 + 1] = cur.y - prev.y;
    }
  return v;
}

inline Tensor to_relative(const Scene& scene) { return to_relative(scene.agents, 0, scene.num_frames()); }

inline double edge_weight(const Displacement& vi, const Displacement& vj) {
  const double d = std::hypot(vi[0] - vj[0], vi[1] - vj[1]);
  if (d == 0.0) return 0.0;
  return 1.0 / std::max(d, kMinDistance);
}

// Raw weighted adjacency of one frame of node features [N, 2] (flat, row-major).
inline Tensor raw_adjacency(std::span<const double> frame_features, std::size_t n) {
  Tensor a({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double w = edge_weight({frame_features[2 * i], frame_features[2 * i + 1]},
                                   {frame_features[2 * j], frame_features[2 * j + 1]});
      a[i * n + j] = w;
      a[j * n + i] = w;
    }
  return a;
}

// D^{-1/2} (A + I) D^{-1/2} with D_ii = sum_j (A + I)_ij.
inline Tensor normalize_adjacency(const Tensor& a) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) {
    throw ad::ShapeError("normalize_adjacency: expected square matrix, got " + ad::to_string(a.shape()));
  }
  const std::size_t n = a.dim(0);
  std::vector<double> inv_sqrt_deg(n);
  for (std::size_t i = 0; i < n; ++i) {
    double d = 1.0;
    for (std::size_t j = 0; j < n; ++j) d += a[i * n + j];
    inv_sqrt_deg[i] = 1.0 / std::sqrt(d);
  }
  Tensor out({n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double tilde = a[i * n + j] + (i == j ? 1.0 : 0.0);
      out[i * n + j] = inv_sqrt_deg[i] * tilde * inv_sqrt_deg[j];
    }
  return out;
}

inline StGraphBatch build_graph(const Tensor& features) {
  if (features.rank() != 3 || features.dim(2) != 2) {
    throw ad::ShapeError("build_graph: features must be [T, N, 2], got " + ad::to_string(features.shape()));
  }
  const std::size_t T = features.dim(0), N = features.dim(1);
  StGraphBatch batch{features, Tensor({T, N, N})};
  for (std::size_t t = 0; t < T; ++t) {
    const Tensor slice = normalize_adjacency(raw_adjacency(features.data().subspan(t * N * 2, N * 2), N));
    std::copy(slice.data().begin(), slice.data().end(), batch.adjacency.data().begin() + t * N * N);
  }
  return batch;
}

inline StGraphBatch build_graph(const std::vector<Trajectory>& agents, std::size_t start, std::size_t length) {
  return build_graph(to_relative(agents, start, length));
}

// Same features, every adjacency slice replaced by the identity (no interaction).
inline StGraphBatch without_interaction(StGraphBatch batch) {
  const std::size_t T = batch.frames(), N = batch.agents();
  std::fill(batch.adjacency.data().begin(), batch.adjacency.data().end(), 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < N; ++i) batch.adjacency[(t * N + i) * N + i] = 1.0;
  return batch;
}

}  // namespace maad::graph
