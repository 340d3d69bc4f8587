#pragma once

// Sliding-window segmentation, the SGD training loop and checkpoints.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "maad/graph.hpp"
#include "maad/io.hpp"
#include "maad/simdata.hpp"
#include "maad/stgae.hpp"

namespace maad::train {

using stgae::ModelParams;

// Training or evaluation hit NaN/inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Segment {
  std::string scene_id;
  std::size_t scene_index = 0;
  std::size_t start_frame = 0;
  graph::StGraphBatch graph;

  std::size_t length() const { return graph.frames(); }
};

// max(0, floor((T - T') / stride) + 1)
inline std::size_t segment_count(std::size_t frames, std::size_t segment_length, std::size_t stride) {
  if (stride == 0) throw std::invalid_argument("stride must be >= 1");
  if (frames < segment_length) return 0;
  return (frames - segment_length) / stride + 1;
}

// Scenes shorter than the segment length contribute nothing and are reported
// through `warnings` when given.
inline std::vector<Segment> segment_scenes(const std::vector<Scene>& scenes, std::size_t segment_length,
                                           std::size_t stride, std::vector<std::string>* warnings = nullptr) {
  if (stride == 0) throw std::invalid_argument("stride must be >= 1");
  if (segment_length < 2) throw std::invalid_argument("segment length must be >= 2");
  std::vector<Segment> out;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const Scene& scene = scenes[s];
    const std::size_t n = segment_count(scene.num_frames(), segment_length, stride);
    if (n == 0 && warnings != nullptr) {
      warnings->push_back("scene '" + scene.scene_id + "' has " + std::to_string(scene.num_frames()) +
                          " frames, shorter than the segment length " + std::to_string(segment_length));
    }
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t start = k * stride;
      out.push_back({scene.scene_id, s, start, graph::build_graph(scene.agents, start, segment_length)});
    }
  }
  return out;
}

struct TrainConfig {
  std::size_t epochs = 250;
  double lr = 0.01;
  double lr_after_decay = 0.002;
  std::size_t decay_epoch = 150;
  std::size_t segment_length = 15;
  std::size_t stride = 1;
  std::uint64_t seed = 0;
  double clip_norm = 10.0;
  stgae::LossKind loss = stgae::LossKind::nll;

  void validate() const {
    if (epochs == 0 || segment_length < 2 || stride == 0) throw std::invalid_argument("epochs, stride must be >= 1, segment_length >= 2");
    if (!(lr > 0.0) || !(lr_after_decay > 0.0) || !(clip_norm > 0.0))
      throw std::invalid_argument("learning rates and clip norm must be positive");
    if (decay_epoch == 0 || decay_epoch >= epochs) throw std::invalid_argument("decay_epoch must be in [1, epochs)");
  }

  // 1-indexed epochs; the decayed rate applies strictly after decay_epoch.
  double learning_rate(std::size_t epoch) const { return epoch <= decay_epoch ? lr : lr_after_decay; }
};

inline std::string to_string(stgae::LossKind k) { return k == stgae::LossKind::nll ? "nll" : "mse"; }

inline stgae::LossKind parse_loss_kind(const std::string& s) {
  if (s == "nll") return stgae::LossKind::nll;
  if (s == "mse") return stgae::LossKind::mse;
  throw std::invalid_argument("unknown loss '" + s + "' (nll or mse)");
}

// Applies recognised keys of a key = value config to a TrainConfig. Returns the
// keys it did not consume.
inline std::map<std::string, std::string> apply_config(TrainConfig& cfg, std::map<std::string, std::string> kv) {
  const auto take = [&kv](const char* key, auto& field) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    std::istringstream is(it->second);
    using T = std::remove_reference_t<decltype(field)>;
    T v{};
    is >> v;
    if (!is || !(is >> std::ws).eof()) throw std::invalid_argument(std::string("bad value for '") + key + "': " + it->second);
    field = v;
    kv.erase(it);
  };
  take("epochs", cfg.epochs);
  take("lr", cfg.lr);
  take("lr_after_decay", cfg.lr_after_decay);
  take("decay_epoch", cfg.decay_epoch);
  take("segment_length", cfg.segment_length);
  take("stride", cfg.stride);
  take("seed", cfg.seed);
  take("clip_norm", cfg.clip_norm);
  if (auto it = kv.find("loss"); it != kv.end()) {
    cfg.loss = parse_loss_kind(it->second);
    kv.erase(it);
  }
  return kv;
}

// key = value lines; '#' starts a comment.
inline std::map<std::string, std::string> read_key_values(const std::string& path) {
  const auto lines = read_lines(path);
  std::map<std::string, std::string> kv;
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    std::string line = lines[ln].substr(0, lines[ln].find('#'));
    const auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      if (b == std::string::npos) return std::string();
      return s.substr(b, s.find_last_not_of(" \t") - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(path, ln + 1, "line", "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ParseError(path, ln + 1, "key", "empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

struct EpochRecord {
  std::size_t epoch = 0;  // 1-indexed
  double learning_rate = 0.0;
  double mean_loss = 0.0;
};

struct TrainResult {
  ModelParams params;
  std::vector<EpochRecord> history;
};

// Loss and gradient of one segment, gradients in ModelParams::blocks() order.
inline double loss_and_gradient(const ModelParams& params, const Segment& segment, stgae::LossKind kind,
                                std::vector<ad::Tensor>* grads) {
  ad::Tape tape;
  const stgae::BoundParams p = stgae::bind(tape, params, grads != nullptr);
  ad::Var features = tape.constant(segment.graph.features);
  ad::Var z = stgae::encode(p, features, tape.constant(segment.graph.adjacency));
  ad::Var loss = stgae::loss(kind, stgae::decode(p, z), features);
  const double value = loss.value().item();
  if (grads != nullptr && std::isfinite(value)) {
    tape.backward(loss);
    grads->clear();
    for (ad::Var v : p.vars) grads->push_back(tape.grad(v));
  }
  return value;
}

// Plain SGD, one step per segment, segment order reshuffled every epoch,
// global-norm gradient clipping.
inline TrainResult train(const std::vector<Segment>& segments, const TrainConfig& cfg,
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.validate();
  if (segments.empty()) throw std::invalid_argument("train: no segments");
  TrainResult result;
  result.params = ModelParams::initialize(derive_seed(cfg.seed, 1));
  std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, 2));
  std::vector<std::size_t> order(segments.size());
  std::vector<ad::Tensor> grads;
  auto blocks = result.params.blocks();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const double lr = cfg.learning_rate(epoch);
    double total = 0.0;
    for (std::size_t idx : order) {
      const Segment& seg = segments[idx];
      const double value = loss_and_gradient(result.params, seg, cfg.loss, &grads);
      if (!std::isfinite(value)) {
        throw NumericError("non-finite loss in epoch " + std::to_string(epoch) + " on segment " + seg.scene_id +
                           "@" + std::to_string(seg.start_frame));
      }
      total += value;
      double norm2 = 0.0;
      for (const ad::Tensor& g : grads)
        for (double v : g.data()) norm2 += v * v;
      const double norm = std::sqrt(norm2);
      if (!std::isfinite(norm)) {
        throw NumericError("non-finite gradient in epoch " + std::to_string(epoch) + " on segment " + seg.scene_id +
                           "@" + std::to_string(seg.start_frame));
      }
      const double step = norm > cfg.clip_norm ? lr * cfg.clip_norm / norm : lr;
      for (std::size_t b = 0; b < blocks.size(); ++b) {
        auto dst = blocks[b].second->data();
        const auto g = grads[b].data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] -= step * g[i];
      }
    }
    EpochRecord rec{epoch, lr, total / static_cast<double>(segments.size())};
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints: a versioned text container with the training config and one
// shape-tagged block per parameter tensor, closed by an "end" line.

inline constexpr const char* kCheckpointMagic = "maad-stgae-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(const ModelParams& params, const TrainConfig& cfg, const std::string& path) {
  auto out = open_for_write(path);
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "config epochs " << cfg.epochs << '\n'
      << "config lr " << format_double(cfg.lr) << '\n'
      << "config lr_after_decay " << format_double(cfg.lr_after_decay) << '\n'
      << "config decay_epoch " << cfg.decay_epoch << '\n'
      << "config segment_length " << cfg.segment_length << '\n'
      << "config stride " << cfg.stride << '\n'
      << "config seed " << cfg.seed << '\n'
      << "config clip_norm " << format_double(cfg.clip_norm) << '\n'
      << "config loss " << to_string(cfg.loss) << '\n';
  for (const auto& [name, t] : params.blocks()) {
    out << "block " << name << ' ' << t->rank();
    for (std::size_t d : t->shape()) out << ' ' << d;
    out << '\n';
    for (std::size_t i = 0; i < t->size(); ++i) out << (i ? " " : "") << format_double((*t)[i]);
    out << '\n';
  }
  out << "end\n";
  if (!out) throw DataError("failed writing checkpoint '" + path + "'");
}

struct Checkpoint {
  ModelParams params;
  TrainConfig config;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("no checkpoint at '" + path + "'; run `maad train` first");
  std::string magic;
  int version = 0;
  in >> magic >> version;
  if (magic != kCheckpointMagic) throw ParseError(path, 1, "magic", "not a checkpoint file");
  if (version != kCheckpointVersion)
    throw ParseError(path, 1, "version", "unsupported checkpoint version " + std::to_string(version));

  Checkpoint ck;
  std::map<std::string, std::string> cfg;
  auto blocks = ck.params.blocks();
  std::size_t next_block = 0;
  bool ended = false;
  std::string tag;
  while (in >> tag) {
    if (tag == "config") {
      std::string key, value;
      if (!(in >> key >> value)) throw ParseError(path, 0, "config", "truncated config entry");
      cfg[key] = value;
    } else if (tag == "block") {
      std::string name;
      std::size_t rank = 0;
      if (!(in >> name >> rank)) throw ParseError(path, 0, "block", "truncated block header");
      ad::Shape shape(rank);
      for (auto& d : shape)
        if (!(in >> d)) throw ParseError(path, 0, name, "truncated shape");
      if (next_block >= blocks.size() || blocks[next_block].first != name) {
        throw ParseError(path, 0, name, "unexpected parameter block");
      }
      ad::Tensor& dst = *blocks[next_block].second;
      if (shape != dst.shape()) {
        throw ParseError(path, 0, name,
                         "shape mismatch: file has " + ad::to_string(shape) + ", model expects " + ad::to_string(dst.shape()));
      }
      for (double& v : dst.data()) {
        std::string tok;
        if (!(in >> tok)) throw ParseError(path, 0, name, "truncated values");
        v = parse_double(tok, path, 0, name);
      }
      ++next_block;
    } else if (tag == "end") {
      ended = true;
      break;
    } else {
      throw ParseError(path, 0, tag, "unknown record");
    }
  }
  if (!ended) throw ParseError(path, 0, "end", "checkpoint truncated");
  if (next_block != blocks.size()) throw ParseError(path, 0, "block", "missing parameter blocks");
  const auto rest = apply_config(ck.config, cfg);
  if (!rest.empty()) throw ParseError(path, 0, rest.begin()->first, "unknown config key");
  return ck;
}

}  // namespace maad::train
