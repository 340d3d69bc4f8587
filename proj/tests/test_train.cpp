#include <gtest/gtest.h>

#include "maad/simdata.hpp"
#include "maad/train.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

using namespace maad;
using namespace maad::train;
using testutil::TempDir;

namespace {

Scene scene_with_frames(int frames, std::uint64_t seed = 0) {
  ScenarioConfig c;
  c.seed = seed;
  c.duration_frames = frames;
  c.scene_id = "s" + std::to_string(seed);
  return generate_scene(c);
}

TrainConfig small_config(std::size_t epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.decay_epoch = epochs - 1;
  c.seed = 3;
  return c;
}

}  // namespace

TEST(Segments, CountExamples) {
  EXPECT_EQ(segment_count(15, 15, 1), 1u);
  EXPECT_EQ(segment_count(20, 15, 1), 6u);
  EXPECT_EQ(segment_count(10, 15, 1), 0u);
  EXPECT_EQ(segment_count(150, 15, 5), 28u);
}

TEST(Segments, ShortSceneWarns) {
  std::vector<std::string> warnings;
  const auto segs = segment_scenes({scene_with_frames(10)}, 15, 1, &warnings);
  EXPECT_TRUE(segs.empty());
  ASSERT_EQ(warnings.size(), 1u);
  EXPECT_NE(warnings[0].find("shorter than the segment length"), std::string::npos);
}

TEST(Segments, EveryFrameCoveredByStrideOneWindows) {
  const Scene s = scene_with_frames(40);
  for (std::size_t len : {4u, 8u, 15u, 30u}) {
    const auto segs = segment_scenes({s}, len, 1);
    std::vector<std::size_t> cover(40, 0);
    for (const auto& seg : segs) {
      EXPECT_EQ(seg.length(), len);
      for (std::size_t t = seg.start_frame; t < seg.start_frame + len; ++t) ++cover[t];
    }
    for (std::size_t t = 0; t < 40; ++t) EXPECT_EQ(cover[t], oracle::covering_windows(40, len, t));
  }
}

TEST(Segments, WindowContentMatchesScene) {
  const Scene s = scene_with_frames(20, 4);
  const auto segs = segment_scenes({s}, 15, 1);
  const auto& seg = segs[3];
  EXPECT_EQ(seg.start_frame, 3u);
  EXPECT_EQ(seg.graph.features, graph::build_graph(s.agents, 3, 15).features);
}

TEST(TrainConfig, LearningRateSchedule) {
  const TrainConfig c;
  EXPECT_EQ(c.learning_rate(1), 0.01);
  EXPECT_EQ(c.learning_rate(150), 0.01);
  EXPECT_EQ(c.learning_rate(151), 0.002);
  EXPECT_EQ(c.learning_rate(250), 0.002);
}

TEST(TrainConfig, ValidateRejectsBadValues) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.decay_epoch = 250;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.lr = 0.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.segment_length = 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(TrainConfig, ParsesKeyValueFile) {
  TempDir dir;
  testutil::spit(dir / "c.cfg", "# comment\nepochs = 40\n lr=0.5 # trailing\nloss = mse\nother = x\n");
  TrainConfig c;
  const auto rest = apply_config(c, read_key_values(dir / "c.cfg"));
  EXPECT_EQ(c.epochs, 40u);
  EXPECT_EQ(c.lr, 0.5);
  EXPECT_EQ(c.loss, stgae::LossKind::mse);
  ASSERT_EQ(rest.size(), 1u);
  EXPECT_EQ(rest.begin()->first, "other");
}

TEST(TrainConfig, RejectsMalformedValues) {
  TrainConfig c;
  EXPECT_THROW(apply_config(c, {{"epochs", "ten"}}), std::invalid_argument);
  EXPECT_THROW(apply_config(c, {{"loss", "l1"}}), std::invalid_argument);
  TempDir dir;
  testutil::spit(dir / "c.cfg", "epochs 40\n");
  EXPECT_THROW(read_key_values(dir / "c.cfg"), ParseError);
}

TEST(Train, LossDecreasesOnToyData) {
  const auto segs = segment_scenes({scene_with_frames(40, 1), scene_with_frames(40, 2)}, 15, 1);
  const auto r = train::train(segs, small_config(20));
  ASSERT_EQ(r.history.size(), 20u);
  EXPECT_LT(r.history.back().mean_loss, r.history.front().mean_loss);
  EXPECT_TRUE(r.params.all_finite());
  EXPECT_EQ(r.history[18].learning_rate, 0.01);
  EXPECT_EQ(r.history[19].learning_rate, 0.002);
  EXPECT_EQ(r.history[0].learning_rate, 0.01);
}

TEST(Train, SameSeedSameParameters) {
  const auto segs = segment_scenes({scene_with_frames(30, 5)}, 15, 1);
  const auto a = train::train(segs, small_config(3));
  const auto b = train::train(segs, small_config(3));
  EXPECT_EQ(a.params, b.params);
  TrainConfig other = small_config(3);
  other.seed = 4;
  EXPECT_FALSE(train::train(segs, other).params == a.params);
}

TEST(Train, NonFiniteLossAborts) {
  const Scene s = scene_with_frames(20, 6);
  auto segs = segment_scenes({s}, 15, 1);
  segs[2].graph.features[0] = std::numeric_limits<double>::quiet_NaN();
  try {
    train::train(segs, small_config(2));
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find(s.scene_id + "@2"), std::string::npos);
  }
}

TEST(Train, GradientMatchesPerSegmentLoss) {
  const auto segs = segment_scenes({scene_with_frames(16, 7)}, 15, 1);
  const auto params = stgae::ModelParams::initialize(1);
  std::vector<ad::Tensor> grads;
  const double a = loss_and_gradient(params, segs[0], stgae::LossKind::mse, &grads);
  const double b = loss_and_gradient(params, segs[0], stgae::LossKind::mse, nullptr);
  EXPECT_EQ(a, b);
  EXPECT_EQ(grads.size(), params.blocks().size());
}

TEST(Checkpoint, RoundTripIsExact) {
  TempDir dir;
  TrainConfig c = small_config(7);
  c.loss = stgae::LossKind::mse;
  c.segment_length = 8;
  const auto p = stgae::ModelParams::initialize(11);
  save_checkpoint(p, c, dir / "ck");
  const Checkpoint ck = load_checkpoint(dir / "ck");
  EXPECT_EQ(ck.params, p);
  EXPECT_EQ(ck.config.epochs, 7u);
  EXPECT_EQ(ck.config.segment_length, 8u);
  EXPECT_EQ(ck.config.loss, stgae::LossKind::mse);
}

TEST(Checkpoint, TruncatedFileRejected) {
  TempDir dir;
  save_checkpoint(stgae::ModelParams::initialize(1), TrainConfig{}, dir / "ck");
  const std::string text = testutil::slurp(dir / "ck");
  testutil::spit(dir / "cut", text.substr(0, text.size() / 2));
  EXPECT_THROW(load_checkpoint(dir / "cut"), ParseError);
}

TEST(Checkpoint, ShapeMismatchRejected) {
  TempDir dir;
  save_checkpoint(stgae::ModelParams::initialize(1), TrainConfig{}, dir / "ck");
  std::string text = testutil::slurp(dir / "ck");
  const auto pos = text.find("block spatial.weight 2 2 5");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 26, "block spatial.weight 2 5 2");
  testutil::spit(dir / "bad", text);
  try {
    load_checkpoint(dir / "bad");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("shape mismatch"), std::string::npos);
  }
}

TEST(Checkpoint, WrongMagicAndMissingFile) {
  TempDir dir;
  testutil::spit(dir / "x", "hello 1\n");
  EXPECT_THROW(load_checkpoint(dir / "x"), ParseError);
  try {
    load_checkpoint(dir / "none");
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("maad train"), std::string::npos);
  }
}
