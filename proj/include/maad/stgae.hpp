#pragma once

// Spatio-temporal graph auto-encoder.
//
// encoder: one spatial graph convolution  H = prelu(Â V W_s + b_s)
//          and one temporal convolution   Z = prelu(conv_t(H) + b_t), kernel 3
// decoder: five temporal convolutions (kernel 3 x 1 over time x agent) with
//          prelu between layers, producing 5 raw values per agent and frame
//          that parameterize a bivariate Gaussian over the displacement.
//
// No weight has an agent dimension, so one parameter set serves any N.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "maad/diffcore.hpp"
#include "maad/graph.hpp"

namespace maad::stgae {

using ad::Tape;
using ad::Tensor;
using ad::Var;

inline constexpr std::size_t kInputFeatures = 2;
inline constexpr std::size_t kLatentFeatures = 5;
inline constexpr std::size_t kOutputFeatures = 5;
inline constexpr std::size_t kKernel = 3;
inline constexpr std::size_t kDecoderLayers = 5;
inline constexpr double kInitialSlope = 0.25;

struct ModelParams {
  Tensor spatial_weight{{kInputFeatures, kLatentFeatures}};
  Tensor spatial_bias{{kLatentFeatures}};
  Tensor spatial_slope{{kLatentFeatures}};
  Tensor temporal_weight{{kKernel, kLatentFeatures, kLatentFeatures}};
  Tensor temporal_bias{{kLatentFeatures}};
  Tensor temporal_slope{{kLatentFeatures}};
  std::array<Tensor, kDecoderLayers> decoder_weight;
  std::array<Tensor, kDecoderLayers> decoder_bias;
  std::array<Tensor, kDecoderLayers - 1> decoder_slope;

  ModelParams() {
    for (std::size_t l = 0; l < kDecoderLayers; ++l) {
      const std::size_t cin = kLatentFeatures;
      const std::size_t cout = (l + 1 == kDecoderLayers) ? kOutputFeatures : kLatentFeatures;
      decoder_weight[l] = Tensor({kKernel, 1, cin, cout});
      decoder_bias[l] = Tensor({cout});
      if (l + 1 < kDecoderLayers) decoder_slope[l] = Tensor({cout});
    }
  }

  // Named parameter blocks in a fixed order (serialization, optimizers).
  std::vector<std::pair<std::string, Tensor*>> blocks() {
    std::vector<std::pair<std::string, Tensor*>> out = {
        {"spatial.weight", &spatial_weight}, {"spatial.bias", &spatial_bias},
        {"spatial.slope", &spatial_slope},   {"temporal.weight", &temporal_weight},
        {"temporal.bias", &temporal_bias},   {"temporal.slope", &temporal_slope},
    };
    for (std::size_t l = 0; l < kDecoderLayers; ++l) {
      const std::string p = "decoder." + std::to_string(l) + ".";
      out.emplace_back(p + "weight", &decoder_weight[l]);
      out.emplace_back(p + "bias", &decoder_bias[l]);
      if (l + 1 < kDecoderLayers) out.emplace_back(p + "slope", &decoder_slope[l]);
    }
    return out;
  }

  std::vector<std::pair<std::string, const Tensor*>> blocks() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (auto& [name, t] : const_cast<ModelParams*>(this)->blocks()) out.emplace_back(name, t);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : blocks()) n += t->size();
    return n;
  }

  bool all_finite() const {
    for (const auto& [name, t] : blocks())
      if (!t->all_finite()) return false;
    return true;
  }

  bool operator==(const ModelParams&) const = default;

  // Weights and biases uniform in +-sqrt(1/fan_in); rectifier slopes at 0.25.
  static ModelParams initialize(std::uint64_t seed) {
    ModelParams p;
    std::mt19937_64 rng(seed);
    const auto fill = [&rng](Tensor& t, std::size_t fan_in) {
      const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
      std::uniform_real_distribution<double> u(-bound, bound);
      for (double& v : t.data()) v = u(rng);
    };
    fill(p.spatial_weight, kInputFeatures);
    fill(p.spatial_bias, kInputFeatures);
    fill(p.temporal_weight, kKernel * kLatentFeatures);
    fill(p.temporal_bias, kKernel * kLatentFeatures);
    for (std::size_t l = 0; l < kDecoderLayers; ++l) {
      fill(p.decoder_weight[l], kKernel * kLatentFeatures);
      fill(p.decoder_bias[l], kKernel * kLatentFeatures);
    }
    const auto slope = [](Tensor& t) { std::fill(t.data().begin(), t.data().end(), kInitialSlope); };
    slope(p.spatial_slope);
    slope(p.temporal_slope);
    for (Tensor& t : p.decoder_slope) slope(t);
    return p;
  }
};

// Parameters placed on a tape, either as leaves (training) or constants (inference).
struct BoundParams {
  std::vector<Var> vars;  // same order as ModelParams::blocks()
  Var spatial_weight, spatial_bias, spatial_slope;
  Var temporal_weight, temporal_bias, temporal_slope;
  std::array<Var, kDecoderLayers> decoder_weight, decoder_bias;
  std::array<Var, kDecoderLayers - 1> decoder_slope;
};

inline BoundParams bind_vars(std::span<const Var> vars) {
  BoundParams b;
  b.vars.assign(vars.begin(), vars.end());
  std::size_t k = 0;
  b.spatial_weight = vars[k++];
  b.spatial_bias = vars[k++];
  b.spatial_slope = vars[k++];
  b.temporal_weight = vars[k++];
  b.temporal_bias = vars[k++];
  b.temporal_slope = vars[k++];
  for (std::size_t l = 0; l < kDecoderLayers; ++l) {
    b.decoder_weight[l] = vars[k++];
    b.decoder_bias[l] = vars[k++];
    if (l + 1 < kDecoderLayers) b.decoder_slope[l] = vars[k++];
  }
  return b;
}

inline BoundParams bind(Tape& tape, const ModelParams& params, bool trainable) {
  std::vector<Var> vars;
  for (const auto& [name, t] : params.blocks()) vars.push_back(trainable ? tape.leaf(*t) : tape.constant(*t));
  return bind_vars(vars);
}

namespace detail {

inline void check_inputs(Var features, Var adjacency) {
  const auto& fs = features.shape();
  const auto& as = adjacency.shape();
  if (fs.size() != 3 || fs[2] != kInputFeatures || as.size() != 3 || as[0] != fs[0] || as[1] != fs[1] ||
      as[2] != fs[1]) {
    throw ad::ShapeError("encode: features " + ad::to_string(fs) + " and adjacency " + ad::to_string(as) +
                         " are inconsistent (want [T,N,2] and [T,N,N])");
  }
}

// Per-node linear map [T,N,Cin] -> [T,N,Cout] + bias.
inline Var node_linear(Var x, Var weight, Var bias) {
  const auto s = x.shape();
  Var flat = ad::reshape(x, {s[0] * s[1], s[2]});
  Var y = ad::matmul(flat, weight);
  y = ad::reshape(y, {s[0], s[1], weight.shape()[1]});
  return ad::add_bias(y, bias);
}

inline Var temporal_block(const BoundParams& p, Var h) {
  Var z = ad::conv1d(h, p.temporal_weight, p.temporal_bias, kKernel / 2);
  return ad::prelu(z, p.temporal_slope);
}

}  // namespace detail

// Z in [T', N, 5].
inline Var encode(const BoundParams& p, Var features, Var adjacency) {
  detail::check_inputs(features, adjacency);
  Var aggregated = ad::batched_matmul(adjacency, features);
  Var h = ad::prelu(detail::node_linear(aggregated, p.spatial_weight, p.spatial_bias), p.spatial_slope);
  return detail::temporal_block(p, h);
}

// Interaction-free path: no neighbourhood aggregation at all.
inline Var encode_without_interaction(const BoundParams& p, Var features) {
  const auto& fs = features.shape();
  if (fs.size() != 3 || fs[2] != kInputFeatures) {
    throw ad::ShapeError("encode: features must be [T,N,2], got " + ad::to_string(fs));
  }
  Var h = ad::prelu(detail::node_linear(features, p.spatial_weight, p.spatial_bias), p.spatial_slope);
  return detail::temporal_block(p, h);
}

// Raw decoder output [T', N, 5]; zero padding keeps the length T'.
inline Var decode(const BoundParams& p, Var z) {
  const auto& zs = z.shape();
  if (zs.size() != 3 || zs[2] != kLatentFeatures) {
    throw ad::ShapeError("decode: latent must be [T,N,5], got " + ad::to_string(zs));
  }
  Var h = z;
  for (std::size_t l = 0; l < kDecoderLayers; ++l) {
    h = ad::conv2d(h, p.decoder_weight[l], p.decoder_bias[l], kKernel / 2, 0);
    if (l + 1 < kDecoderLayers) h = ad::prelu(h, p.decoder_slope[l]);
  }
  return h;
}

// Mean bivariate-Gaussian negative log-likelihood of `target` [T,N,2] under
// raw decoder output [T,N,5] with mu = (r1, r2), sigma = exp(r3, r4), rho = tanh(r5).
inline Var nll_loss(Var raw, Var target) {
  const auto& rs = raw.shape();
  const auto& ts = target.shape();
  if (rs.size() != 3 || rs[2] != kOutputFeatures || ts.size() != 3 || ts[2] != 2 || rs[0] != ts[0] ||
      rs[1] != ts[1]) {
    throw ad::ShapeError("nll_loss: raw " + ad::to_string(rs) + " vs target " + ad::to_string(ts));
  }
  Var dx = ad::sub(ad::slice_last(target, 0, 1), ad::slice_last(raw, 0, 1));
  Var dy = ad::sub(ad::slice_last(target, 1, 2), ad::slice_last(raw, 1, 2));
  Var log_sx = ad::slice_last(raw, 2, 3);
  Var log_sy = ad::slice_last(raw, 3, 4);
  Var r5 = ad::slice_last(raw, 4, 5);
  Var zx = ad::mul(dx, ad::exp(ad::neg(log_sx)));
  Var zy = ad::mul(dy, ad::exp(ad::neg(log_sy)));
  Var rho = ad::tanh(r5);
  Var q = ad::sub(ad::add(ad::square(zx), ad::square(zy)), ad::scale(ad::mul(rho, ad::mul(zx, zy)), 2.0));
  Var log_one_minus_rho2 = ad::log_sech2(r5);
  Var mahalanobis = ad::scale(ad::mul(q, ad::exp(ad::neg(log_one_minus_rho2))), 0.5);
  Var term = ad::add(ad::add(log_sx, log_sy), ad::add(ad::scale(log_one_minus_rho2, 0.5), mahalanobis));
  term = ad::add_scalar(term, std::log(2.0 * std::numbers::pi));
  return ad::mean(term);
}

// Mean squared error between predicted means and targets (for the MSE-trained variant).
inline Var mse_loss(Var raw, Var target) {
  Var mu = ad::slice_last(raw, 0, 2);
  return ad::mean(ad::square(ad::sub(mu, target)));
}

enum class LossKind { nll, mse };

inline Var loss(LossKind kind, Var raw, Var target) {
  return kind == LossKind::nll ? nll_loss(raw, target) : mse_loss(raw, target);
}

// ---------------------------------------------------------------------------
// Tape-free convenience wrappers for inference.

inline Tensor encode(const graph::StGraphBatch& batch, const ModelParams& params) {
  Tape tape;
  const BoundParams p = bind(tape, params, false);
  return encode(p, tape.constant(batch.features), tape.constant(batch.adjacency)).value();
}

inline Tensor encode_without_interaction(const Tensor& features, const ModelParams& params) {
  Tape tape;
  const BoundParams p = bind(tape, params, false);
  return encode_without_interaction(p, tape.constant(features)).value();
}

inline Tensor decode(const Tensor& z, const ModelParams& params) {
  Tape tape;
  const BoundParams p = bind(tape, params, false);
  return decode(p, tape.constant(z)).value();
}

struct BivariateParams {
  std::array<double, 2> mu{};
  std::array<double, 2> sigma{1.0, 1.0};
  double rho = 0.0;
};

inline BivariateParams to_bivariate(std::span<const double> raw) {
  if (raw.size() != kOutputFeatures) throw ad::ShapeError("to_bivariate: expected 5 raw values");
  return {{raw[0], raw[1]}, {std::exp(raw[2]), std::exp(raw[3])}, std::tanh(raw[4])};
}

// Per (t, i) bivariate parameters of a raw decoder output [T, N, 5].
inline std::vector<BivariateParams> to_bivariate(const Tensor& raw) {
  std::vector<BivariateParams> out(raw.size() / kOutputFeatures);
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = to_bivariate(raw.data().subspan(k * kOutputFeatures, kOutputFeatures));
  return out;
}

}  // namespace maad::stgae
