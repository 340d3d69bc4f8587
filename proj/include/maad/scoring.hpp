#pragma once

// Per-agent and per-frame anomaly scores from overlapping windows, plus the
// reconstruction baselines (constant velocity, linear interpolation, STGAE error).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "maad/density.hpp"
#include "maad/graph.hpp"
#include "maad/io.hpp"
#include "maad/simdata.hpp"
#include "maad/stgae.hpp"

namespace maad::scoring {

using Point = std::array<double, 2>;

// Higher is more anomalous. Uncovered cells (possible only in scenes shorter
// than the window) are flagged and left out of evaluation.
struct ScoreSeries {
  std::string scene_id;
  std::size_t frames = 0;
  std::size_t agents = 0;
  std::vector<double> agent;            // [T * N]
  std::vector<std::uint8_t> agent_covered;
  std::vector<double> frame;            // [T]
  std::vector<std::uint8_t> frame_covered;

  double agent_score(std::size_t t, std::size_t i) const { return agent[t * agents + i]; }
  bool operator==(const ScoreSeries&) const = default;
};

inline double agent_frame_score(std::span<const double> per_segment) {
  if (per_segment.empty()) throw std::invalid_argument("agent_frame_score: no covering segment");
  double s = 0.0;
  for (double v : per_segment) s += v;
  return s / static_cast<double>(per_segment.size());
}

inline double frame_score(std::span<const double> agent_scores) {
  if (agent_scores.empty()) throw std::invalid_argument("frame_score: no agents");
  return *std::max_element(agent_scores.begin(), agent_scores.end());
}

// Per-(t, i) values of one window, row-major [len * N].
using WindowScorer = std::function<std::vector<double>(const Scene&, std::size_t start, std::size_t len)>;

inline ScoreSeries score_scene(const Scene& scene, std::size_t segment_length, std::size_t stride,
                               const WindowScorer& scorer) {
  if (stride == 0) throw std::invalid_argument("stride must be >= 1");
  const std::size_t T = scene.num_frames(), N = scene.num_agents();
  ScoreSeries out{scene.scene_id, T, N, std::vector<double>(T * N, 0.0), std::vector<std::uint8_t>(T * N, 0),
                  std::vector<double>(T, 0.0), std::vector<std::uint8_t>(T, 0)};
  std::vector<std::size_t> count(T * N, 0);
  for (std::size_t start = 0; start + segment_length <= T; start += stride) {
    const std::vector<double> v = scorer(scene, start, segment_length);
    if (v.size() != segment_length * N) throw std::logic_error("window scorer returned wrong size");
    for (std::size_t t = 0; t < segment_length; ++t)
      for (std::size_t i = 0; i < N; ++i) {
        const std::size_t c = (start + t) * N + i;
        out.agent[c] += v[t * N + i];
        ++count[c];
      }
  }
  for (std::size_t t = 0; t < T; ++t) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < N; ++i) {
      const std::size_t c = t * N + i;
      if (count[c] == 0) continue;
      out.agent[c] /= static_cast<double>(count[c]);
      out.agent_covered[c] = 1;
      best = std::max(best, out.agent[c]);
    }
    if (std::isfinite(best)) {
      out.frame[t] = best;
      out.frame_covered[t] = 1;
    }
  }
  return out;
}

// Squared error against a constant-velocity extrapolation from the first two positions.
inline std::vector<double> cvm_score(std::span<const Point> track) {
  if (track.size() < 3) throw std::invalid_argument("cvm_score: need at least 3 frames");
  const double vx = track[1][0] - track[0][0], vy = track[1][1] - track[0][1];
  std::vector<double> err(track.size());
  for (std::size_t t = 0; t < track.size(); ++t) {
    const double px = track[0][0] + vx * static_cast<double>(t), py = track[0][1] + vy * static_cast<double>(t);
    err[t] = (track[t][0] - px) * (track[t][0] - px) + (track[t][1] - py) * (track[t][1] - py);
  }
  return err;
}

// Squared error against equidistant points on the chord from first to last position.
inline std::vector<double> lti_score(std::span<const Point> track) {
  if (track.size() < 2) throw std::invalid_argument("lti_score: need at least 2 frames");
  const std::size_t n = track.size();
  std::vector<double> err(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double u = static_cast<double>(t) / static_cast<double>(n - 1);
    const double px = track[0][0] + u * (track[n - 1][0] - track[0][0]);
    const double py = track[0][1] + u * (track[n - 1][1] - track[0][1]);
    err[t] = (track[t][0] - px) * (track[t][0] - px) + (track[t][1] - py) * (track[t][1] - py);
  }
  return err;
}

namespace detail {

inline WindowScorer per_track(std::vector<double> (*f)(std::span<const Point>)) {
  return [f](const Scene& scene, std::size_t start, std::size_t len) {
    const std::size_t N = scene.num_agents();
    std::vector<double> out(len * N);
    std::vector<Point> track(len);
    for (std::size_t i = 0; i < N; ++i) {
      for (std::size_t t = 0; t < len; ++t) track[t] = {scene.agents[i][start + t].x, scene.agents[i][start + t].y};
      const auto e = f(track);
      for (std::size_t t = 0; t < len; ++t) out[t * N + i] = e[t];
    }
    return out;
  };
}

// FNV-1a, stable across platforms (std::hash is not).
inline std::uint64_t stable_hash(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

}  // namespace detail

inline WindowScorer cvm_scorer() { return detail::per_track(&cvm_score); }
inline WindowScorer lti_scorer() { return detail::per_track(&lti_score); }

// -log p(z) per (t, i); only the encoder runs.
inline std::vector<double> kde_segment_scores(const stgae::ModelParams& params, const density::DensityModel& model,
                                              const graph::StGraphBatch& batch) {
  const ad::Tensor z = stgae::encode(batch, params);
  const std::size_t cells = batch.frames() * batch.agents();
  std::vector<double> out(cells);
  for (std::size_t c = 0; c < cells; ++c)
    out[c] = -model.log_density(z.data().subspan(c * stgae::kLatentFeatures, stgae::kLatentFeatures));
  return out;
}

inline WindowScorer kde_scorer(const stgae::ModelParams& params, const density::DensityModel& model) {
  return [&params, &model](const Scene& scene, std::size_t start, std::size_t len) {
    return kde_segment_scores(params, model, graph::build_graph(scene.agents, start, len));
  };
}

enum class ReconstructionMode { mse, biv_sampled };

inline constexpr std::size_t kReconstructionSamples = 20;

// Squared displacement error per (t, i). mse uses the predicted mean; biv_sampled
// averages the error of `samples` draws from the predicted bivariate Gaussian.
inline std::vector<double> reconstruction_score(const stgae::ModelParams& params, const graph::StGraphBatch& batch,
                                                ReconstructionMode mode, std::size_t samples = kReconstructionSamples,
                                                std::uint64_t seed = 0) {
  const ad::Tensor raw = stgae::decode(stgae::encode(batch, params), params);
  const auto biv = stgae::to_bivariate(raw);
  const auto target = batch.features.data();
  std::vector<double> out(biv.size());
  if (mode == ReconstructionMode::mse) {
    for (std::size_t c = 0; c < biv.size(); ++c) {
      const double dx = biv[c].mu[0] - target[2 * c], dy = biv[c].mu[1] - target[2 * c + 1];
      out[c] = dx * dx + dy * dy;
    }
    return out;
  }
  if (samples == 0) throw std::invalid_argument("reconstruction_score: samples must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  for (std::size_t c = 0; c < biv.size(); ++c) {
    const auto& b = biv[c];
    const double tail = std::sqrt(std::max(0.0, 1.0 - b.rho * b.rho));
    double acc = 0.0;
    for (std::size_t k = 0; k < samples; ++k) {
      const double e1 = n01(rng), e2 = n01(rng);
      const double x = b.mu[0] + b.sigma[0] * e1;
      const double y = b.mu[1] + b.sigma[1] * (b.rho * e1 + tail * e2);
      acc += (x - target[2 * c]) * (x - target[2 * c]) + (y - target[2 * c + 1]) * (y - target[2 * c + 1]);
    }
    out[c] = acc / static_cast<double>(samples);
  }
  return out;
}

inline WindowScorer reconstruction_scorer(const stgae::ModelParams& params, ReconstructionMode mode,
                                          std::uint64_t seed, std::size_t samples = kReconstructionSamples) {
  return [&params, mode, seed, samples](const Scene& scene, std::size_t start, std::size_t len) {
    const std::uint64_t s = derive_seed(seed ^ detail::stable_hash(scene.scene_id), start);
    return reconstruction_score(params, graph::build_graph(scene.agents, start, len), mode, samples, s);
  };
}

// Per-scene min-max rescaling of covered frame scores to [0, 1]; plotting only.
inline std::vector<double> normalized_frame_scores(const ScoreSeries& s) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t t = 0; t < s.frames; ++t)
    if (s.frame_covered[t]) {
      lo = std::min(lo, s.frame[t]);
      hi = std::max(hi, s.frame[t]);
    }
  std::vector<double> out(s.frames, 0.0);
  for (std::size_t t = 0; t < s.frames; ++t)
    if (s.frame_covered[t]) out[t] = hi > lo ? (s.frame[t] - lo) / (hi - lo) : 0.0;
  return out;
}

// One file per scene: "kind,frame,agent,score,normalized". Agent rows carry
// alpha_t^i, frame rows carry alpha_t and its per-scene normalized value.
inline void write_scores(const ScoreSeries& s, const std::string& path) {
  auto out = open_for_write(path);
  out << "kind,frame,agent,score,normalized\n";
  for (std::size_t t = 0; t < s.frames; ++t)
    for (std::size_t i = 0; i < s.agents; ++i)
      if (s.agent_covered[t * s.agents + i])
        out << "agent," << t << ',' << i << ',' << format_double(s.agent_score(t, i)) << ",\n";
  const auto norm = normalized_frame_scores(s);
  for (std::size_t t = 0; t < s.frames; ++t)
    if (s.frame_covered[t]) out << "frame," << t << ",," << format_double(s.frame[t]) << ',' << format_double(norm[t]) << '\n';
  if (!out) throw DataError("failed writing scores '" + path + "'");
}

inline ScoreSeries read_scores(const std::string& path, const std::string& scene_id, std::size_t frames,
                               std::size_t agents) {
  std::vector<std::string> lines;
  try {
    lines = read_lines(path);
  } catch (const DataError&) {
    throw DataError("no scores at '" + path + "'; run `maad score` first");
  }
  if (lines.empty() || lines[0] != "kind,frame,agent,score,normalized")
    throw ParseError(path, 1, "header", "expected 'kind,frame,agent,score,normalized'");
  ScoreSeries s{scene_id, frames, agents, std::vector<double>(frames * agents, 0.0),
                std::vector<std::uint8_t>(frames * agents, 0), std::vector<double>(frames, 0.0),
                std::vector<std::uint8_t>(frames, 0)};
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) continue;
    const auto f = split_csv(lines[ln]);
    if (f.size() != 5) throw ParseError(path, ln + 1, "row", "expected 5 fields");
    const long long t = parse_int(f[1], path, ln + 1, "frame");
    if (t < 0 || static_cast<std::size_t>(t) >= frames) throw ParseError(path, ln + 1, "frame", "out of range");
    const double v = parse_double(f[3], path, ln + 1, "score");
    if (f[0] == "agent") {
      const long long i = parse_int(f[2], path, ln + 1, "agent");
      if (i < 0 || static_cast<std::size_t>(i) >= agents) throw ParseError(path, ln + 1, "agent", "out of range");
      s.agent[t * agents + i] = v;
      s.agent_covered[t * agents + i] = 1;
    } else if (f[0] == "frame") {
      s.frame[t] = v;
      s.frame_covered[t] = 1;
    } else {
      throw ParseError(path, ln + 1, "kind", "expected 'agent' or 'frame'");
    }
  }
  return s;
}

}  // namespace maad::scoring
