#include <gtest/gtest.h>

#include <map>
#include <set>

#include "maad/simdata.hpp"
#include "testutil.hpp"

using namespace maad;
using testutil::TempDir;

namespace {

ScenarioConfig wrong_way(std::uint64_t seed) {
  ScenarioConfig c;
  c.seed = seed;
  c.anomaly_class = AnomalyClass::wrong_way;
  c.anomaly_onset_frame = 50;
  c.anomaly_duration_frames = 30;
  return c;
}

}  // namespace

TEST(Simdata, SameSeedSameScene) {
  ScenarioConfig c;
  c.seed = 42;
  EXPECT_EQ(generate_scene(c), generate_scene(c));
  ScenarioConfig d = c;
  d.seed = 43;
  EXPECT_FALSE(generate_scene(c) == generate_scene(d));
}

TEST(Simdata, NormalSceneHasOnlyNormalLabels) {
  ScenarioConfig c;
  c.seed = 1;
  const Scene s = generate_scene(c);
  ASSERT_EQ(s.labels.size(), 150u);
  for (const auto& l : s.labels) EXPECT_EQ(l, FrameLabel{});
  EXPECT_EQ(s.anomaly_class(), AnomalyClass::none);
}

TEST(Simdata, WrongWayLabelsAndMotion) {
  const Scene s = generate_scene(wrong_way(2));
  for (int f = 0; f < 150; ++f) {
    const FrameState want = (f >= 50 && f < 80) ? FrameState::abnormal
                            : (f == 49 || f == 80) ? FrameState::transition
                                                   : FrameState::normal;
    EXPECT_EQ(s.labels[f].state, want) << "frame " << f;
    EXPECT_EQ(s.labels[f].anomaly_class, want == FrameState::normal ? AnomalyClass::none : AnomalyClass::wrong_way);
  }
  for (int f = 51; f < 80; ++f) EXPECT_LT(s.agents[0][f].x - s.agents[0][f - 1].x, 0.0) << "frame " << f;
}

TEST(Simdata, EveryClassProducesLabelledFinitePlausibleScene) {
  for (AnomalyClass cls : kAnomalyClasses) {
    ScenarioConfig c;
    c.seed = 17;
    c.anomaly_class = cls;
    const Scene s = generate_scene(c);
    EXPECT_NO_THROW(s.validate());
    EXPECT_EQ(s.anomaly_class(), cls);
    std::size_t abnormal = 0;
    for (const auto& l : s.labels) abnormal += l.state == FrameState::abnormal;
    EXPECT_EQ(abnormal, 30u) << to_string(cls);
    for (const auto& tr : s.agents)
      for (std::size_t f = 1; f < tr.size(); ++f) {
        const double step = std::hypot(tr[f].x - tr[f - 1].x, tr[f].y - tr[f - 1].y);
        EXPECT_LT(step, 6.0) << to_string(cls) << " frame " << f;
        EXPECT_LT(std::abs(tr[f].y), 20.0);
      }
  }
}

TEST(Simdata, NormalSpeedsStayNearConfiguredRange) {
  ScenarioConfig c;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    c.seed = seed;
    const Scene s = generate_scene(c);
    for (const auto& tr : s.agents) {
      const double v = (tr.back().x - tr.front().x) / (0.1 * static_cast<double>(tr.size() - 1));
      EXPECT_GT(v, c.speed_min - 3.0);
      EXPECT_LT(v, c.speed_max + 3.0);
    }
  }
}

TEST(Simdata, RejectsBadConfig) {
  ScenarioConfig c = wrong_way(0);
  c.anomaly_duration_frames = 10;
  EXPECT_THROW(generate_scene(c), std::invalid_argument);
  c = wrong_way(0);
  c.anomaly_onset_frame = 140;
  EXPECT_THROW(generate_scene(c), std::invalid_argument);
  c = ScenarioConfig{};
  c.n_agents = 0;
  EXPECT_THROW(generate_scene(c), std::invalid_argument);
}

TEST(Simdata, ExtraAgentsKeepFirstTwo) {
  ScenarioConfig c = wrong_way(5);
  const Scene two = generate_scene(c);
  c.n_agents = 4;
  const Scene four = generate_scene(c);
  ASSERT_EQ(four.num_agents(), 4u);
  EXPECT_EQ(four.agents[0], two.agents[0]);
  EXPECT_EQ(four.agents[1], two.agents[1]);
}

TEST(Dataset, CountsFollowConfig) {
  const Dataset ds = generate_dataset(80, 3, 0);
  EXPECT_EQ(ds.train.size(), 80u);
  std::size_t normal = 0, abnormal = 0;
  std::map<AnomalyClass, int> per_class;
  for (const Scene& s : ds.test) {
    if (s.anomaly_class() == AnomalyClass::none) {
      ++normal;
    } else {
      ++abnormal;
      ++per_class[s.anomaly_class()];
    }
  }
  EXPECT_EQ(normal, 33u);
  EXPECT_EQ(abnormal, 33u);
  for (AnomalyClass c : kAnomalyClasses) EXPECT_EQ(per_class[c], 3);
  for (const Scene& s : ds.train) EXPECT_EQ(s.anomaly_class(), AnomalyClass::none);
}

TEST(Dataset, MinimalConfigAndUniqueIds) {
  const Dataset ds = generate_dataset(1, 0, 9);
  EXPECT_EQ(ds.train.size(), 1u);
  EXPECT_TRUE(ds.test.empty());
  const Dataset big = generate_dataset(5, 1, 9);
  std::set<std::string> ids;
  for (const auto& e : big.manifest()) ids.insert(e.scene_id);
  EXPECT_EQ(ids.size(), big.train.size() + big.test.size());
}

TEST(Dataset, Deterministic) {
  const Dataset a = generate_dataset(3, 1, 4), b = generate_dataset(3, 1, 4);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
}

TEST(SceneIo, RoundTripIsExact) {
  TempDir dir;
  const Scene s = generate_scene(wrong_way(3));
  write_scene(s, dir / "s.csv");
  EXPECT_EQ(read_scene(dir / "s.csv"), s);
}

TEST(SceneIo, DatasetRoundTrip) {
  TempDir dir;
  const Dataset ds = generate_dataset(2, 1, 6);
  write_dataset(ds, dir.path().string());
  const Dataset back = read_dataset(dir.path().string());
  EXPECT_EQ(back.train, ds.train);
  EXPECT_EQ(back.test, ds.test);
}

TEST(SceneIo, MissingLabelsReadAsNormal) {
  TempDir dir;
  testutil::spit(dir / "a.csv", "a,0.1,1,2\n0,0,0,0\n1,0,1,0\n");
  const Scene s = read_scene(dir / "a.csv");
  EXPECT_EQ(s.labels.size(), 2u);
  EXPECT_EQ(s.anomaly_class(), AnomalyClass::none);
}

TEST(SceneIo, EmptyFileHasNoFrames) {
  TempDir dir;
  testutil::spit(dir / "a.csv", "");
  try {
    read_scene(dir / "a.csv");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("no frames"), std::string::npos);
  }
}

TEST(SceneIo, ReportsLineAndField) {
  TempDir dir;
  testutil::spit(dir / "a.csv", "a,0.1,1,2\n0,0,0,0\n1,0,oops,0\n");
  try {
    read_scene(dir / "a.csv");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
    EXPECT_EQ(e.field(), "x");
  }
}

TEST(SceneIo, ShortTrajectoryRejected) {
  TempDir dir;
  testutil::spit(dir / "a.csv", "a,0.1,2,2\n0,0,0,0\n1,0,1,0\n0,1,0,3\n");
  try {
    read_scene(dir / "a.csv");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("agent 1 has 1 frames"), std::string::npos);
  }
}

TEST(SceneIo, BadLabelRejected) {
  TempDir dir;
  testutil::spit(dir / "a.csv", "a,0.1,1,2\n0,0,0,0\n1,0,1,0\n");
  testutil::spit(dir / "a.labels.csv", "frame,state,anomaly_class\n0,normal,none\n1,abnormal,none\n");
  EXPECT_THROW(read_scene(dir / "a.csv"), ParseError);
}

TEST(SceneIo, MissingDatasetNamesGenerator) {
  TempDir dir;
  try {
    read_dataset(dir / "nothing");
    FAIL();
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("maad generate"), std::string::npos);
  }
}
