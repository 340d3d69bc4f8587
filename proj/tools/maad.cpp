// maad: command-line driver for the trajectory anomaly detection pipeline.
//
//   maad generate     --out data [--agents 2|3|4] [--seed S] [--force]
//   maad train        --config run.cfg [--seed S]
//   maad fit-density  --config run.cfg [--kde-subsample M]
//   maad score        --config run.cfg --method kde|stgae-mse|stgae-biv|cvm|lti
//   maad eval         --config run.cfg --scores DIR [--scores DIR ...] --out DIR
//   maad gradcheck    [--seed S]
//   maad sweep-seglen --config run.cfg --out DIR [--lengths 4,8,15,30]
//
// Exit status: 0 ok, 1 usage, 2 data error, 3 numeric failure.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "maad/pipeline.hpp"

namespace {

using namespace maad;
using pipeline::Method;

constexpr int kUsage = 1;
constexpr int kData = 2;
constexpr int kNumeric = 3;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> dataset;
  std::optional<std::string> out;
  std::string method;
  int agents = 2;
  std::optional<std::size_t> kde_subsample;
  std::vector<std::string> scores;
  std::vector<std::size_t> lengths{4, 8, 10, 15, 20, 30, 40};
  bool force = false;
};

pipeline::RunConfig run_config(const Options& o) {
  pipeline::RunConfig cfg;
  if (!o.config.empty()) cfg = pipeline::load_run_config(o.config);
  if (o.seed) cfg.train.seed = *o.seed;
  if (o.dataset) cfg.dataset = *o.dataset;
  if (o.kde_subsample) cfg.kde_subsample = *o.kde_subsample;
  cfg.validate();
  return cfg;
}

std::string run_dir(const Options& o, const pipeline::RunConfig& cfg) { return o.out ? *o.out : cfg.run_dir(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-agent trajectory anomaly detection"};
  app.require_subcommand(1);
  Options o;

  const auto common = [&o](CLI::App* c) {
    c->add_option("--config", o.config, "key = value run configuration");
    c->add_option("--seed", o.seed, "random seed");
    c->add_option("--dataset", o.dataset, "dataset root (overrides config)");
  };

  auto* gen = app.add_subcommand("generate", "simulate a dataset");
  common(gen);
  gen->add_option("--out", o.out, "target directory")->required();
  gen->add_option("--agents", o.agents, "agents per test scene")->check(CLI::IsMember({2, 3, 4}));
  gen->add_flag("--force", o.force, "overwrite a non-empty target");

  auto* tr = app.add_subcommand("train", "train the graph auto-encoder");
  common(tr);
  tr->add_option("--out", o.out, "run directory (default runs_root/run)");

  auto* fd = app.add_subcommand("fit-density", "fit the latent density model");
  common(fd);
  fd->add_option("--out", o.out, "run directory (default runs_root/run)");
  fd->add_option("--kde-subsample", o.kde_subsample, "stored latent samples M (0 keeps all)");

  auto* sc = app.add_subcommand("score", "score the test split");
  common(sc);
  sc->add_option("--out", o.out, "run directory (default runs_root/run)");
  sc->add_option("--method", o.method, "scoring method")
      ->required()
      ->check(CLI::IsMember({"kde", "stgae-mse", "stgae-biv", "cvm", "lti"}));

  auto* ev = app.add_subcommand("eval", "compute metrics from score files");
  common(ev);
  ev->add_option("--scores", o.scores, "score directory, one per seed")->required();
  ev->add_option("--out", o.out, "report directory")->required();

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the training gradient");
  gc->add_option("--seed", o.seed, "random seed");

  auto* sw = app.add_subcommand("sweep-seglen", "retrain and evaluate over segment lengths");
  common(sw);
  sw->add_option("--out", o.out, "output directory")->required();
  sw->add_option("--lengths", o.lengths, "segment lengths")->delimiter(',');
  sw->add_option("--kde-subsample", o.kde_subsample, "stored latent samples M (0 keeps all)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (gen->parsed()) {
      DatasetConfig dc = o.config.empty() ? DatasetConfig{} : pipeline::load_run_config(o.config).data;
      if (o.seed) dc.base_seed = *o.seed;
      if (gen->count("--agents") > 0) dc.test_agents = o.agents;
      pipeline::cmd_generate(dc, *o.out, o.force, std::cout);
    } else if (tr->parsed()) {
      const auto cfg = run_config(o);
      pipeline::cmd_train(cfg, run_dir(o, cfg), std::cout);
    } else if (fd->parsed()) {
      const auto cfg = run_config(o);
      pipeline::cmd_fit_density(cfg, run_dir(o, cfg), std::cout);
    } else if (sc->parsed()) {
      const auto cfg = run_config(o);
      pipeline::cmd_score(cfg, pipeline::parse_method(o.method), run_dir(o, cfg), std::cout);
    } else if (ev->parsed()) {
      const auto cfg = run_config(o);
      const auto report = pipeline::cmd_eval(cfg, o.scores, *o.out, std::cout);
      std::vector<double> a;
      for (const auto& h : report.seeds) a.push_back(h.auroc);
      std::printf("auroc %.4f +- %.4f over %zu seed(s)\n", metrics::mean(a), metrics::stddev(a), a.size());
    } else if (gc->parsed()) {
      const auto r = pipeline::cmd_gradcheck(o.seed.value_or(0));
      std::printf("max relative error %.3e over %zu coordinates (param %zu index %zu: analytic %.10g numeric %.10g)\n",
                  r.max_relative_error, r.coordinates, r.param, r.index, r.analytic, r.numeric);
      if (!(r.max_relative_error < 1e-4)) return kNumeric;
    } else if (sw->parsed()) {
      const auto cfg = run_config(o);
      pipeline::cmd_sweep_seglen(cfg, o.lengths, *o.out, std::cout);
    }
  } catch (const train::NumericError& e) {
    std::cerr << "maad: numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const metrics::MetricError& e) {
    std::cerr << "maad: " << e.what() << '\n';
    return kData;
  } catch (const ParseError& e) {
    std::cerr << "maad: " << e.what() << '\n';
    return kData;
  } catch (const DataError& e) {
    std::cerr << "maad: " << e.what() << '\n';
    return kData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "maad: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "maad: " << e.what() << '\n';
    return kData;
  }
  return 0;
}
