#pragma once

// End-to-end commands shared by the CLI and the acceptance runs: generate,
// train, fit-density, score, eval, gradcheck and the segment-length sweep.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "maad/density.hpp"
#include "maad/diffcore.hpp"
#include "maad/graph.hpp"
#include "maad/io.hpp"
#include "maad/metrics.hpp"
#include "maad/scoring.hpp"
#include "maad/simdata.hpp"
#include "maad/stgae.hpp"
#include "maad/train.hpp"

namespace maad::pipeline {

namespace fs = std::filesystem;

enum class Method { kde, stgae_mse, stgae_biv, cvm, lti };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::kde: return "kde";
    case Method::stgae_mse: return "stgae-mse";
    case Method::stgae_biv: return "stgae-biv";
    case Method::cvm: return "cvm";
    case Method::lti: return "lti";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (Method m : {Method::kde, Method::stgae_mse, Method::stgae_biv, Method::cvm, Method::lti})
    if (to_string(m) == s) return m;
  throw std::invalid_argument("unknown method '" + s + "' (kde, stgae-mse, stgae-biv, cvm, lti)");
}

inline bool needs_checkpoint(Method m) { return m == Method::kde || m == Method::stgae_mse || m == Method::stgae_biv; }

inline constexpr std::size_t kDefaultKdeSubsample = 4000;

struct RunConfig {
  std::string dataset = "data";
  std::string runs_root = "runs";
  std::string run_name = "default";
  DatasetConfig data;
  train::TrainConfig train;
  std::vector<double> bandwidth_grid = density::default_bandwidth_grid();
  std::size_t kde_subsample = kDefaultKdeSubsample;  // 0 keeps every latent
  std::vector<std::uint64_t> seeds{0};

  std::string run_dir() const { return (fs::path(runs_root) / run_name).string(); }

  void validate() const {
    train.validate();
    if (seeds.empty()) throw std::invalid_argument("seeds must not be empty");
    if (bandwidth_grid.empty()) throw std::invalid_argument("bandwidth grid must not be empty");
  }
};

namespace detail {

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& text) {
  std::string s = text;
  for (char& c : s)
    if (c == ',') c = ' ';
  std::istringstream is(s);
  std::vector<T> out;
  T v{};
  while (is >> v) out.push_back(v);
  if (!is.eof()) throw std::invalid_argument("bad list for '" + key + "': " + text);
  return out;
}

template <class T>
T parse_scalar(const std::string& key, const std::string& text) {
  std::istringstream is(text);
  T v{};
  is >> v;
  if (!is || !(is >> std::ws).eof()) throw std::invalid_argument("bad value for '" + key + "': " + text);
  return v;
}

}  // namespace detail

// key = value file. Training keys follow TrainConfig; the rest are listed below.
inline RunConfig load_run_config(const std::string& path) {
  RunConfig cfg;
  auto kv = train::apply_config(cfg.train, train::read_key_values(path));
  for (const auto& [key, value] : kv) {
    if (key == "dataset") cfg.dataset = value;
    else if (key == "runs_root") cfg.runs_root = value;
    else if (key == "run") cfg.run_name = value;
    else if (key == "bandwidth_grid") cfg.bandwidth_grid = detail::parse_list<double>(key, value);
    else if (key == "kde_subsample") cfg.kde_subsample = detail::parse_scalar<std::size_t>(key, value);
    else if (key == "seeds") cfg.seeds = detail::parse_list<std::uint64_t>(key, value);
    else if (key == "n_train") cfg.data.n_train = detail::parse_scalar<std::size_t>(key, value);
    else if (key == "n_test_normal") cfg.data.n_test_normal = detail::parse_scalar<std::size_t>(key, value);
    else if (key == "n_test_abnormal") cfg.data.n_test_abnormal = detail::parse_scalar<std::size_t>(key, value);
    else if (key == "train_agents") cfg.data.train_agents = detail::parse_scalar<int>(key, value);
    else if (key == "test_agents") cfg.data.test_agents = detail::parse_scalar<int>(key, value);
    else if (key == "duration_frames") cfg.data.duration_frames = detail::parse_scalar<int>(key, value);
    else if (key == "data_seed") cfg.data.base_seed = detail::parse_scalar<std::uint64_t>(key, value);
    else throw ParseError(path, 0, key, "unknown config key");
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// In-memory building blocks

inline train::TrainResult train_model(const std::vector<Scene>& scenes, const train::TrainConfig& cfg,
                                      std::ostream* log = nullptr) {
  std::vector<std::string> warnings;
  const auto segments = train::segment_scenes(scenes, cfg.segment_length, cfg.stride, &warnings);
  if (log)
    for (const auto& w : warnings) *log << "warning: " << w << '\n';
  if (segments.empty()) throw DataError("no training segments (every scene is shorter than the segment length)");
  return train::train(segments, cfg, [&](const train::EpochRecord& e) {
    if (log && (e.epoch == 1 || e.epoch % 25 == 0 || e.epoch == cfg.epochs))
      *log << "epoch " << e.epoch << " lr " << e.learning_rate << " loss " << e.mean_loss << '\n';
  });
}

// Every (t, i) latent of every training window.
inline density::PointSet collect_latents(const stgae::ModelParams& params, const std::vector<Scene>& scenes,
                                         std::size_t segment_length, std::size_t stride) {
  density::PointSet latents(stgae::kLatentFeatures);
  for (const Scene& scene : scenes)
    for (std::size_t start = 0; start + segment_length <= scene.num_frames(); start += stride) {
      const ad::Tensor z = stgae::encode(graph::build_graph(scene.agents, start, segment_length), params);
      for (std::size_t c = 0; c < z.size() / stgae::kLatentFeatures; ++c)
        latents.push_back(z.data().subspan(c * stgae::kLatentFeatures, stgae::kLatentFeatures));
    }
  return latents;
}

struct DensityFit {
  density::DensityModel model;
  density::BandwidthSelection selection;
};

inline DensityFit fit_density(const stgae::ModelParams& params, const std::vector<Scene>& scenes,
                              const train::TrainConfig& cfg, const std::vector<double>& grid, std::size_t subsample,
                              std::uint64_t seed) {
  density::PointSet latents = collect_latents(params, scenes, cfg.segment_length, cfg.stride);
  if (latents.empty()) throw DataError("no latent vectors to fit the density on");
  if (subsample > 0) latents = density::subsample(latents, subsample, derive_seed(seed, 3));
  auto sel = density::select_bandwidth(latents, grid, derive_seed(seed, 4));
  return {density::fit(std::move(latents), sel.bandwidth), std::move(sel)};
}

inline scoring::WindowScorer make_scorer(Method m, const stgae::ModelParams* params,
                                         const density::DensityModel* model, std::uint64_t seed) {
  switch (m) {
    case Method::cvm: return scoring::cvm_scorer();
    case Method::lti: return scoring::lti_scorer();
    case Method::kde:
      if (!params || !model) throw std::invalid_argument("kde scoring needs a checkpoint and a density model");
      return scoring::kde_scorer(*params, *model);
    case Method::stgae_mse:
    case Method::stgae_biv:
      if (!params) throw std::invalid_argument("reconstruction scoring needs a checkpoint");
      return scoring::reconstruction_scorer(*params,
                                            m == Method::stgae_mse ? scoring::ReconstructionMode::mse
                                                                   : scoring::ReconstructionMode::biv_sampled,
                                            derive_seed(seed, 5));
  }
  throw std::logic_error("unhandled method");
}

inline std::vector<scoring::ScoreSeries> score_scenes(const std::vector<Scene>& scenes, std::size_t segment_length,
                                                      std::size_t stride, const scoring::WindowScorer& scorer) {
  std::vector<scoring::ScoreSeries> out;
  for (const Scene& s : scenes) {
    out.push_back(scoring::score_scene(s, segment_length, stride, scorer));
    for (std::size_t t = 0; t < out.back().frames; ++t)
      if (out.back().frame_covered[t] && !std::isfinite(out.back().frame[t]))
        throw train::NumericError("non-finite score in scene " + s.scene_id + " frame " + std::to_string(t));
  }
  return out;
}

// Covered frames of every scene, paired with their labels.
inline std::vector<metrics::FrameRecord> frame_records(const std::vector<Scene>& scenes,
                                                       const std::vector<scoring::ScoreSeries>& scores) {
  if (scenes.size() != scores.size()) throw std::invalid_argument("frame_records: scene/score count mismatch");
  std::vector<metrics::FrameRecord> out;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    if (scores[s].frames != scenes[s].num_frames())
      throw DataError("scores for '" + scenes[s].scene_id + "' do not match the scene length");
    for (std::size_t t = 0; t < scores[s].frames; ++t)
      if (scores[s].frame_covered[t]) out.push_back({scores[s].frame[t], scenes[s].labels[t]});
  }
  return out;
}

inline double frame_auroc(const std::vector<Scene>& scenes, const std::vector<scoring::ScoreSeries>& scores) {
  const auto records = frame_records(scenes, scores);
  return metrics::auroc(metrics::overall(records));
}

// ---------------------------------------------------------------------------
// Commands. Each reads its inputs from disk and writes its outputs under a
// directory; none of them modifies its inputs.

inline std::string checkpoint_path(const std::string& run_dir) { return (fs::path(run_dir) / "ckpt_final").string(); }
inline std::string density_path(const std::string& run_dir) { return (fs::path(run_dir) / "density.csv").string(); }
inline std::string scores_dir(const std::string& run_dir, Method m) {
  return (fs::path(run_dir) / "scores" / to_string(m)).string();
}

inline void cmd_generate(const DatasetConfig& cfg, const std::string& out, bool force, std::ostream& log) {
  if (fs::exists(out) && fs::is_directory(out) && !fs::is_empty(out) && !force)
    throw DataError("'" + out + "' exists and is not empty; pass --force to overwrite");
  const Dataset ds = generate_dataset(cfg);
  write_dataset(ds, out);
  log << "wrote " << ds.train.size() << " train and " << ds.test.size() << " test scenes to " << out << '\n';
}

inline void cmd_train(const RunConfig& cfg, const std::string& run_dir, std::ostream& log) {
  const Dataset ds = read_dataset(cfg.dataset);
  if (ds.train.empty()) throw DataError("dataset '" + cfg.dataset + "' has no training scenes");
  const auto result = train_model(ds.train, cfg.train, &log);
  fs::create_directories(run_dir);
  train::save_checkpoint(result.params, cfg.train, checkpoint_path(run_dir));
  auto hist = open_for_write((fs::path(run_dir) / "loss.csv").string());
  hist << "epoch,lr,loss\n";
  for (const auto& e : result.history)
    hist << e.epoch << ',' << format_double(e.learning_rate) << ',' << format_double(e.mean_loss) << '\n';
  log << "checkpoint written to " << checkpoint_path(run_dir) << '\n';
}

inline void cmd_fit_density(const RunConfig& cfg, const std::string& run_dir, std::ostream& log) {
  const auto ck = train::load_checkpoint(checkpoint_path(run_dir));
  const Dataset ds = read_dataset(cfg.dataset);
  const auto fit = fit_density(ck.params, ds.train, ck.config, cfg.bandwidth_grid, cfg.kde_subsample, ck.config.seed);
  density::save_density(fit.model, density_path(run_dir));
  log << "density model with M=" << fit.model.size() << ", h=" << fit.model.bandwidth() << " written to "
      << density_path(run_dir) << '\n';
}

inline void check_loss_matches(Method m, const train::Checkpoint& ck) {
  if (m == Method::stgae_mse && ck.config.loss != stgae::LossKind::mse)
    throw DataError("method stgae-mse needs a checkpoint trained with loss = mse");
  if (m == Method::stgae_biv && ck.config.loss != stgae::LossKind::nll)
    throw DataError("method stgae-biv needs a checkpoint trained with loss = nll");
}

inline void cmd_score(const RunConfig& cfg, Method m, const std::string& run_dir, std::ostream& log) {
  const Dataset ds = read_dataset(cfg.dataset);
  std::optional<train::Checkpoint> ck;
  std::optional<density::DensityModel> model;
  std::size_t seg_len = cfg.train.segment_length, stride = cfg.train.stride;
  std::uint64_t seed = cfg.train.seed;
  if (needs_checkpoint(m)) {
    ck = train::load_checkpoint(checkpoint_path(run_dir));
    check_loss_matches(m, *ck);
    seg_len = ck->config.segment_length;
    stride = ck->config.stride;
    seed = ck->config.seed;
  }
  if (m == Method::kde) model = density::load_density(density_path(run_dir));
  const auto scorer = make_scorer(m, ck ? &ck->params : nullptr, model ? &*model : nullptr, seed);
  const auto scores = score_scenes(ds.test, seg_len, stride, scorer);
  const std::string dir = scores_dir(run_dir, m);
  fs::create_directories(dir);
  for (const auto& s : scores) scoring::write_scores(s, (fs::path(dir) / (s.scene_id + ".scores.csv")).string());
  log << "scored " << scores.size() << " scenes into " << dir << '\n';
}

// One score directory per seed.
inline metrics::Report cmd_eval(const RunConfig& cfg, const std::vector<std::string>& score_dirs,
                                const std::string& out_dir, std::ostream& log) {
  if (score_dirs.empty()) throw std::invalid_argument("eval needs at least one scores directory");
  const Dataset ds = read_dataset(cfg.dataset);
  std::vector<std::vector<metrics::FrameRecord>> per_seed;
  for (const std::string& dir : score_dirs) {
    if (!fs::is_directory(dir)) throw DataError("no scores directory '" + dir + "'; run `maad score` first");
    std::vector<scoring::ScoreSeries> scores;
    for (const Scene& s : ds.test)
      scores.push_back(scoring::read_scores((fs::path(dir) / (s.scene_id + ".scores.csv")).string(), s.scene_id,
                                            s.num_frames(), s.num_agents()));
    per_seed.push_back(frame_records(ds.test, scores));
  }
  const metrics::Report report = metrics::evaluate(per_seed);
  for (const auto& n : report.notices) log << "notice: " << n << '\n';
  fs::create_directories(out_dir);
  metrics::write_report(report, (fs::path(out_dir) / "report.csv").string());
  auto roc = open_for_write((fs::path(out_dir) / "roc.csv").string());
  roc << "fpr,tpr\n";
  for (const auto& [f, t] : metrics::roc_points(metrics::overall(per_seed.front())))
    roc << format_double(f) << ',' << format_double(t) << '\n';
  log << "report written to " << (fs::path(out_dir) / "report.csv").string() << '\n';
  return report;
}

inline ad::GradCheckReport cmd_gradcheck(std::uint64_t seed, std::size_t segment_length = 15) {
  ScenarioConfig sc;
  sc.seed = seed;
  sc.n_agents = 2;
  const Scene scene = generate_scene(sc);
  const graph::StGraphBatch batch = graph::build_graph(scene.agents, 0, segment_length);
  const stgae::ModelParams params = stgae::ModelParams::initialize(seed);
  std::vector<ad::Tensor> tensors;
  for (const auto& [name, t] : params.blocks()) tensors.push_back(*t);
  return ad::grad_check(
      [&batch](ad::Tape& tape, std::span<const ad::Var> vars) {
        const stgae::BoundParams p = stgae::bind_vars(vars);
        ad::Var x = tape.constant(batch.features);
        ad::Var z = stgae::encode(p, x, tape.constant(batch.adjacency));
        return stgae::nll_loss(stgae::decode(p, z), x);
      },
      tensors, 1e-5);
}

struct SweepRow {
  std::size_t segment_length = 0;
  Method method = Method::kde;
  double auroc = 0.0;
};

// Retrains the encoder for every segment length and reports frame AUROC of the
// KDE pipeline and of both linear baselines.
inline std::vector<SweepRow> cmd_sweep_seglen(const RunConfig& cfg, const std::vector<std::size_t>& lengths,
                                              const std::string& out_dir, std::ostream& log) {
  const Dataset ds = read_dataset(cfg.dataset);
  std::vector<SweepRow> rows;
  fs::create_directories(out_dir);
  for (std::size_t len : lengths) {
    train::TrainConfig tc = cfg.train;
    tc.segment_length = len;
    log << "segment length " << len << '\n';
    const auto trained = train_model(ds.train, tc, &log);
    const auto fit = fit_density(trained.params, ds.train, tc, cfg.bandwidth_grid, cfg.kde_subsample, tc.seed);
    for (Method m : {Method::kde, Method::cvm, Method::lti}) {
      const auto scorer = make_scorer(m, &trained.params, &fit.model, tc.seed);
      const double a = frame_auroc(ds.test, score_scenes(ds.test, len, tc.stride, scorer));
      rows.push_back({len, m, a});
      log << "  " << to_string(m) << " auroc " << a << '\n';
    }
  }
  auto out = open_for_write((fs::path(out_dir) / "seglen_sweep.csv").string());
  out << "segment_length,method,auroc\n";
  for (const auto& r : rows) out << r.segment_length << ',' << to_string(r.method) << ',' << format_double(r.auroc) << '\n';
  return rows;
}

}  // namespace maad::pipeline
