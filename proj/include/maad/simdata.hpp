#pragma once

// Procedural two-lane highway scenes with scripted normal and abnormal
// manoeuvres, plus the plain-text dataset format.
//
// Coordinates: x runs along the legal direction of travel, y is lateral with
// the left lane at larger y. The origin is agent 0's position in frame 0.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "maad/io.hpp"

namespace maad {

struct AgentState {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const AgentState&) const = default;
};

using Trajectory = std::vector<AgentState>;

enum class FrameState : std::uint8_t { normal, transition, abnormal };

enum class AnomalyClass : std::uint8_t {
  none,
  leave_road,
  left_spreading,
  aggressive_overtaking,
  pushing_aside,
  aggressive_reeving,
  right_spreading,
  skidding,
  staggering,
  tailgating,
  thwarting,
  wrong_way,
};

inline constexpr std::array<AnomalyClass, 11> kAnomalyClasses = {
    AnomalyClass::leave_road,         AnomalyClass::left_spreading, AnomalyClass::aggressive_overtaking,
    AnomalyClass::pushing_aside,      AnomalyClass::aggressive_reeving, AnomalyClass::right_spreading,
    AnomalyClass::skidding,           AnomalyClass::staggering,     AnomalyClass::tailgating,
    AnomalyClass::thwarting,          AnomalyClass::wrong_way,
};

inline std::string_view to_string(AnomalyClass c) {
  switch (c) {
    case AnomalyClass::none: return "none";
    case AnomalyClass::leave_road: return "leave_road";
    case AnomalyClass::left_spreading: return "left_spreading";
    case AnomalyClass::aggressive_overtaking: return "aggressive_overtaking";
    case AnomalyClass::pushing_aside: return "pushing_aside";
    case AnomalyClass::aggressive_reeving: return "aggressive_reeving";
    case AnomalyClass::right_spreading: return "right_spreading";
    case AnomalyClass::skidding: return "skidding";
    case AnomalyClass::staggering: return "staggering";
    case AnomalyClass::tailgating: return "tailgating";
    case AnomalyClass::thwarting: return "thwarting";
    case AnomalyClass::wrong_way: return "wrong_way";
  }
  return "none";
}

inline std::optional<AnomalyClass> parse_anomaly_class(std::string_view name) {
  if (name == "none") return AnomalyClass::none;
  for (AnomalyClass c : kAnomalyClasses)
    if (to_string(c) == name) return c;
  return std::nullopt;
}

inline std::string_view to_string(FrameState s) {
  switch (s) {
    case FrameState::normal: return "normal";
    case FrameState::transition: return "transition";
    case FrameState::abnormal: return "abnormal";
  }
  return "normal";
}

inline std::optional<FrameState> parse_frame_state(std::string_view name) {
  if (name == "normal") return FrameState::normal;
  if (name == "transition") return FrameState::transition;
  if (name == "abnormal") return FrameState::abnormal;
  return std::nullopt;
}

struct FrameLabel {
  FrameState state = FrameState::normal;
  AnomalyClass anomaly_class = AnomalyClass::none;
  bool operator==(const FrameLabel&) const = default;
};

struct Scene {
  std::string scene_id;
  double dt = 0.1;
  std::vector<Trajectory> agents;
  std::vector<FrameLabel> labels;

  std::size_t num_agents() const { return agents.size(); }
  std::size_t num_frames() const { return agents.empty() ? 0 : agents.front().size(); }

  // Class of the scripted anomaly, none for normal scenes.
  AnomalyClass anomaly_class() const {
    for (const FrameLabel& l : labels)
      if (l.anomaly_class != AnomalyClass::none) return l.anomaly_class;
    return AnomalyClass::none;
  }

  void validate() const {
    if (agents.empty()) throw std::invalid_argument("scene '" + scene_id + "' has no agents");
    if (!(dt > 0.0)) throw std::invalid_argument("scene '" + scene_id + "' has non-positive dt");
    const std::size_t T = num_frames();
    if (T < 2) throw std::invalid_argument("scene '" + scene_id + "' needs at least 2 frames");
    for (std::size_t i = 0; i < agents.size(); ++i) {
      if (agents[i].size() != T) {
        throw std::invalid_argument("scene '" + scene_id + "': agent " + std::to_string(i) + " has " +
                                    std::to_string(agents[i].size()) + " frames, expected " + std::to_string(T));
      }
      for (const AgentState& s : agents[i])
        if (!std::isfinite(s.x) || !std::isfinite(s.y))
          throw std::invalid_argument("scene '" + scene_id + "': non-finite position");
    }
    if (labels.size() != T) throw std::invalid_argument("scene '" + scene_id + "': label count differs from frames");
    for (const FrameLabel& l : labels) {
      if ((l.state == FrameState::normal) != (l.anomaly_class == AnomalyClass::none)) {
        throw std::invalid_argument("scene '" + scene_id + "': label state and anomaly class disagree");
      }
    }
  }

  bool operator==(const Scene&) const = default;
};

inline constexpr int kMinAnomalyFrames = 20;

struct ScenarioConfig {
  std::uint64_t seed = 0;
  int n_agents = 2;
  int duration_frames = 150;
  double dt = 0.1;
  double lane_width = 3.5;
  double speed_min = 23.0;  // m/s
  double speed_max = 27.0;
  AnomalyClass anomaly_class = AnomalyClass::none;
  int anomaly_onset_frame = 50;
  int anomaly_duration_frames = 30;
  int anomalous_agent = 0;  // 0 or 1
  std::string scene_id = "scene_0000";

  void validate() const {
    if (n_agents < 1) throw std::invalid_argument("n_agents must be >= 1");
    if (duration_frames < 2) throw std::invalid_argument("duration_frames must be >= 2");
    if (!(dt > 0.0) || !(lane_width > 0.0)) throw std::invalid_argument("dt and lane_width must be positive");
    if (!(speed_min > 0.0) || !(speed_max > speed_min + 2.0))
      throw std::invalid_argument("speed range must satisfy 0 < min and min + 2 < max");
    if (anomaly_class == AnomalyClass::none) return;
    if (anomaly_duration_frames < kMinAnomalyFrames) {
      throw std::invalid_argument("anomaly duration " + std::to_string(anomaly_duration_frames) +
                                  " below minimum " + std::to_string(kMinAnomalyFrames));
    }
    if (anomaly_onset_frame < 1 || anomaly_onset_frame + anomaly_duration_frames + 1 > duration_frames) {
      throw std::invalid_argument("anomaly window [" + std::to_string(anomaly_onset_frame) + ", " +
                                  std::to_string(anomaly_onset_frame + anomaly_duration_frames) +
                                  ") with its transition frames does not fit a scene of " +
                                  std::to_string(duration_frames) + " frames");
    }
    if (anomalous_agent < 0 || anomalous_agent > 1 || anomalous_agent >= n_agents)
      throw std::invalid_argument("anomalous_agent must be 0 or 1 and exist in the scene");
  }
};

namespace detail {

inline double smooth01(double u) {
  u = std::clamp(u, 0.0, 1.0);
  return 0.5 * (1.0 - std::cos(std::numbers::pi * u));
}

inline double bump(double s) { return std::sin(std::numbers::pi * std::clamp(s, 0.0, 1.0)); }

// Rises over the first quarter, holds, falls over the last quarter.
inline double plateau(double s) {
  if (s < 0.25) return smooth01(s / 0.25);
  if (s > 0.75) return smooth01((1.0 - s) / 0.25);
  return 1.0;
}

// Ramps 0 -> 1 over the first `in` frames of a window of length d, and back to 0
// over the last `out` frames (out = 0 keeps it at 1).
inline double ramp_hold(int k, int d, int in, int out) {
  const double up = smooth01(static_cast<double>(k + 1) / in);
  if (out <= 0 || k < d - out) return up;
  return smooth01(static_cast<double>(d - 1 - k) / out);
}

struct Vehicle {
  double x = 0, y = 0, v = 0, v_des = 0;
  int lane = 0;
  double wobble = 0;
  bool changing = false;
  double lc_from = 0, lc_to = 0;
  int lc_start = 0, lc_len = 30;
  bool passive = false;
};

class HighwaySim {
 public:
  explicit HighwaySim(const ScenarioConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {}

  Scene run() {
    const int T = cfg_.duration_frames;
    const int N = cfg_.n_agents;
    init();
    Scene scene;
    scene.scene_id = cfg_.scene_id;
    scene.dt = cfg_.dt;
    scene.agents.assign(N, Trajectory(T));
    scene.labels.assign(T, FrameLabel{});
    for (int i = 0; i < N; ++i) scene.agents[i][0] = {veh_[i].x, veh_[i].y};

    const bool scripted = cfg_.anomaly_class != AnomalyClass::none;
    const int onset = cfg_.anomaly_onset_frame;
    const int dur = cfg_.anomaly_duration_frames;
    const int a = cfg_.anomalous_agent;
    const int b = (N >= 2) ? 1 - a : -1;

    for (int f = 1; f < T; ++f) {
      const bool in_window = scripted && f >= onset && f < onset + dur;
      if (scripted && f == onset) capture_onset(a);
      if (scripted && f == onset + dur) {
        recover(a, f);
        if (b >= 0) recover(b, f);
      }
      for (int i = 0; i < N; ++i) {
        if (in_window && i == a) continue;
        if (veh_[i].passive) {
          step_passive(veh_[i], f);
        } else {
          step_normal(i, f, (in_window && i == b) ? victim_reaction(f - onset, dur) : Reaction{});
        }
      }
      if (in_window) step_script(a, b, f - onset, dur);
      for (int i = 0; i < N; ++i) scene.agents[i][f] = {veh_[i].x, veh_[i].y};
    }

    if (scripted) {
      for (int f = onset; f < onset + dur; ++f) scene.labels[f] = {FrameState::abnormal, cfg_.anomaly_class};
      scene.labels[onset - 1] = {FrameState::transition, cfg_.anomaly_class};
      scene.labels[onset + dur] = {FrameState::transition, cfg_.anomaly_class};
    }
    return scene;
  }

 private:
  struct Reaction {
    std::optional<double> acc;
    double dy = 0.0;
  };

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double gaussian(double sd) { return std::normal_distribution<double>(0.0, sd)(rng_); }

  double lane_center(int lane) const { return base_y_ + lane * cfg_.lane_width; }

  int nearest_lane(double y) const {
    return std::clamp(static_cast<int>(std::lround((y - base_y_) / cfg_.lane_width)), 0, 1);
  }

  void init() {
    const int N = cfg_.n_agents;
    veh_.assign(N, Vehicle{});
    const double vlo = cfg_.speed_min + 1.0;
    const double vhi = cfg_.speed_max - 1.0;

    const int lane0 = uniform(0.0, 1.0) < 0.5 ? 0 : 1;
    base_y_ = lane0 == 0 ? 0.0 : -cfg_.lane_width;
    veh_[0].lane = lane0;
    veh_[0].x = 0.0;
    veh_[0].y = 0.0;
    veh_[0].v = uniform(vlo, vhi);
    veh_[0].v_des = uniform(vlo, vhi);
    if (N >= 2) {
      Vehicle& v1 = veh_[1];
      v1.lane = uniform(0.0, 1.0) < 0.5 ? 0 : 1;
      double dx = uniform(12.0, 50.0);
      if (uniform(0.0, 1.0) < 0.5) dx = -dx;
      v1.x = dx;
      v1.y = lane_center(v1.lane);
      v1.v = uniform(vlo, vhi);
      v1.v_des = uniform(vlo, vhi);
    }
    // Extra agents are passive and drawn from their own stream, so the first
    // two agents are identical whatever the agent count.
    std::mt19937_64 extra(derive_seed(cfg_.seed, 0xA6E));
    for (int i = 2; i < N; ++i) {
      Vehicle& v = veh_[i];
      v.passive = true;
      v.lane = (i % 2 == 0) ? 1 : 0;
      const double side = (i % 4 < 2) ? 1.0 : -1.0;
      v.x = side * (80.0 + 35.0 * (i - 2)) + std::uniform_real_distribution<double>(-10.0, 10.0)(extra);
      v.y = lane_center(v.lane);
      v.v = std::uniform_real_distribution<double>(vlo, vhi)(extra);
      v.v_des = v.v;
      passive_rng_.emplace_back(derive_seed(cfg_.seed, 0xA6E + i));
    }
  }

  void start_lane_change(Vehicle& v, int target, int f, int len = 30) {
    v.changing = true;
    v.lc_from = v.y - v.wobble;
    v.lc_to = lane_center(target);
    v.lc_start = f;
    v.lc_len = len;
    v.lane = target;
  }

  void update_lateral(Vehicle& v, int f, double wobble_sd) {
    v.wobble = 0.95 * v.wobble + gaussian(wobble_sd);
    if (v.changing) {
      const double s = static_cast<double>(f - v.lc_start) / v.lc_len;
      v.y = v.lc_from + (v.lc_to - v.lc_from) * smooth01(s) + v.wobble;
      if (s >= 1.0) v.changing = false;
    } else {
      v.y = lane_center(v.lane) + v.wobble;
    }
  }

  // Is the given lane free of the other core agent within [x + behind, x + ahead]?
  bool lane_free(int self, int lane, double behind, double ahead) const {
    for (int j = 0; j < static_cast<int>(veh_.size()); ++j) {
      if (j == self || veh_[j].passive) continue;
      const Vehicle& o = veh_[j];
      if (nearest_lane(o.y) != lane && o.lane != lane) continue;
      const double dx = o.x - veh_[self].x;
      if (dx > behind && dx < ahead) return false;
    }
    return true;
  }

  void step_normal(int i, int f, const Reaction& reaction) {
    Vehicle& v = veh_[i];
    const double dt = cfg_.dt;
    if (uniform(0.0, 1.0) < 0.01) v.v_des = uniform(cfg_.speed_min + 1.0, cfg_.speed_max - 1.0);

    // Leader: the other core agent ahead in the same lane.
    const Vehicle* leader = nullptr;
    double gap = 0.0;
    for (int j = 0; j < static_cast<int>(veh_.size()); ++j) {
      if (j == i || veh_[j].passive) continue;
      const Vehicle& o = veh_[j];
      const double dx = o.x - v.x;
      if (std::abs(o.y - v.y) < 0.5 * cfg_.lane_width && dx > 0.0 && dx < v.v * 2.0 + 10.0) {
        leader = &o;
        gap = dx;
      }
    }

    double acc;
    if (leader != nullptr && !v.changing) {
      const int other_lane = 1 - v.lane;
      if (v.v_des > leader->v + 1.0 && lane_free(i, other_lane, -15.0, 30.0)) {
        start_lane_change(v, other_lane, f);
        acc = 0.5 * (v.v_des - v.v);
      } else {
        acc = 0.6 * (leader->v - v.v) + 0.15 * (gap - (1.5 * v.v + 5.0));
      }
    } else {
      acc = 0.5 * (v.v_des - v.v);
    }

    if (!v.changing && v.lane == 1 && uniform(0.0, 1.0) < 0.02 && lane_free(i, 0, -15.0, 25.0)) {
      start_lane_change(v, 0, f);
    } else if (!v.changing && v.lane == 0 && uniform(0.0, 1.0) < 0.002 && lane_free(i, 1, -30.0, 30.0)) {
      start_lane_change(v, 1, f);
    }

    acc = std::clamp(acc + gaussian(0.3), -3.0, 2.0);
    if (reaction.acc) {
      v.v = std::clamp(v.v + *reaction.acc * dt, 5.0, cfg_.speed_max);
    } else {
      v.v = std::clamp(v.v + acc * dt, cfg_.speed_min, cfg_.speed_max);
    }
    v.x += v.v * dt;
    update_lateral(v, f, 0.01);
    v.y += reaction.dy;
  }

  void step_passive(Vehicle& v, int f) {
    auto& r = passive_rng_[&v - veh_.data() - 2];
    const double acc = std::clamp(0.5 * (v.v_des - v.v) + std::normal_distribution<double>(0.0, 0.3)(r), -3.0, 2.0);
    v.v = std::clamp(v.v + acc * cfg_.dt, cfg_.speed_min, cfg_.speed_max);
    v.x += v.v * cfg_.dt;
    v.wobble = 0.95 * v.wobble + std::normal_distribution<double>(0.0, 0.01)(r);
    v.y = lane_center(v.lane) + v.wobble;
    (void)f;
  }

  void capture_onset(int a) {
    onset_a_ = veh_[a];
    onset_a_.y = veh_[a].changing ? veh_[a].y : lane_center(veh_[a].lane);
    onset_a_.lane = nearest_lane(onset_a_.y);
    onset_a_.y = lane_center(onset_a_.lane);
    veh_[a].changing = false;
  }

  // Side pointing from the anomalous agent's lane towards the other lane.
  double inner_side() const { return onset_a_.lane == 0 ? 1.0 : -1.0; }

  // How the other core agent responds to the interactive classes.
  Reaction victim_reaction(int k, int d) const {
    const double s = static_cast<double>(k + 1) / d;
    Reaction r;
    switch (cfg_.anomaly_class) {
      case AnomalyClass::left_spreading:
      case AnomalyClass::right_spreading:
        r.acc = -1.5 * plateau(s);
        break;
      case AnomalyClass::pushing_aside:
        r.dy = inner_side() * 0.7 * cfg_.lane_width * plateau(s);
        break;
      case AnomalyClass::aggressive_reeving:
        if (k >= 6 && k < 18) r.acc = -6.0;
        break;
      case AnomalyClass::thwarting:
        if (k >= 3 && k < 15) r.acc = -5.0;
        break;
      default:
        break;
    }
    return r;
  }

  void step_script(int a, int b, int k, int d) {
    Vehicle& v = veh_[a];
    const double dt = cfg_.dt;
    const double t = k * dt;
    const double s = static_cast<double>(k + 1) / d;
    const double L = cfg_.lane_width;
    const double y0 = onset_a_.y;
    const double v0 = onset_a_.v;
    const double side = inner_side();
    const double two_pi = 2.0 * std::numbers::pi;
    double vx = v0;
    double y = y0;
    switch (cfg_.anomaly_class) {
      case AnomalyClass::leave_road:
        y = y0 - side * 1.6 * L * bump(s);
        vx = v0 * (1.0 - 0.3 * bump(s));
        break;
      case AnomalyClass::left_spreading:
        y = y0 + (0.5 * L + 0.6 * std::sin(two_pi * 0.8 * t)) * plateau(s);
        break;
      case AnomalyClass::right_spreading:
        y = y0 - (0.5 * L + 0.6 * std::sin(two_pi * 0.8 * t)) * plateau(s);
        break;
      case AnomalyClass::aggressive_overtaking:
        y = y0 + side * L * ramp_hold(k, d, 8, 8);
        vx = v0 + std::min(12.0, 5.0 * t);
        break;
      case AnomalyClass::pushing_aside:
        y = y0 + side * 0.75 * L * plateau(s);
        break;
      case AnomalyClass::aggressive_reeving:
        y = y0 + side * L * ramp_hold(k, d, 6, 0);
        if (k < 6) {
          vx = v0 + 3.0;
        } else if (k < 16) {
          vx = v0 + 3.0 - 6.0 * (k - 5) * dt;
        } else {
          vx = v0 - 3.0 + 2.0 * (k - 15) * dt;
        }
        break;
      case AnomalyClass::skidding:
        y = y0 + 0.7 * std::sin(two_pi * 1.5 * t) * bump(s);
        vx = v0 * (1.0 - 0.35 * s) - 2.0 * std::abs(std::sin(two_pi * 1.5 * t)) * bump(s);
        break;
      case AnomalyClass::staggering:
        y = y0 + 1.1 * std::sin(two_pi * 0.45 * t) * bump(s);
        vx = v0 + 3.0 * std::sin(two_pi * 0.35 * t);
        break;
      case AnomalyClass::tailgating: {
        if (b >= 0) {
          const Vehicle& victim = veh_[b];
          const double target_y = victim.lane == onset_a_.lane ? y0 : lane_center(victim.lane);
          y = y0 + (target_y - y0) * smooth01(static_cast<double>(k + 1) / 10.0);
          const double gap = victim.x - v.x;
          vx = std::clamp(victim.v + 0.8 * (gap - 4.0), v0 - 10.0, v0 + 12.0);
        }
        vx += 1.5 * std::sin(two_pi * 1.0 * t);
        break;
      }
      case AnomalyClass::thwarting:
        if (k < 15) {
          vx = std::max(v0 - 7.0 * t, 0.4 * v0);
        } else if (k < 25) {
          vx = std::max(v0 - 7.0 * 1.5, 0.4 * v0);
        } else {
          vx = std::max(v0 - 7.0 * 1.5, 0.4 * v0) + 3.0 * (k - 24) * dt;
        }
        break;
      case AnomalyClass::wrong_way:
        vx = -v0;
        break;
      case AnomalyClass::none:
        break;
    }
    v.x += vx * dt;
    v.y = y;
    v.v = vx;
    (void)b;
  }

  // Hands the agent back to normal control after the scripted window.
  void recover(int i, int f) {
    Vehicle& v = veh_[i];
    v.v = std::clamp(std::abs(v.v), cfg_.speed_min, cfg_.speed_max);
    v.v_des = std::clamp(v.v, cfg_.speed_min + 1.0, cfg_.speed_max - 1.0);
    v.lane = nearest_lane(v.y);
    v.wobble = 0.0;
    v.changing = false;
    if (std::abs(v.y - lane_center(v.lane)) > 1e-9) {
      v.changing = true;
      v.lc_from = v.y;
      v.lc_to = lane_center(v.lane);
      v.lc_start = f;
      v.lc_len = 20;
    }
  }

 private:
  ScenarioConfig cfg_;
  std::mt19937_64 rng_;
  std::vector<std::mt19937_64> passive_rng_;
  std::vector<Vehicle> veh_;
  Vehicle onset_a_;
  double base_y_ = 0.0;
};

}  // namespace detail

inline Scene generate_scene(const ScenarioConfig& config) {
  config.validate();
  return detail::HighwaySim(config).run();
}

// ---------------------------------------------------------------------------
// Datasets

struct DatasetConfig {
  std::size_t n_train = 80;
  std::size_t n_test_normal = 33;
  std::size_t n_test_abnormal = 33;  // cycles through the 11 classes
  std::uint64_t base_seed = 0;
  int train_agents = 2;
  int test_agents = 2;
  int duration_frames = 150;
  double speed_min = 23.0;  // m/s
  double speed_max = 27.0;
};

struct ManifestEntry {
  std::string scene_id;
  std::string split;  // "train" or "test"
  AnomalyClass anomaly_class = AnomalyClass::none;
  bool operator==(const ManifestEntry&) const = default;
};

struct Dataset {
  std::vector<Scene> train;
  std::vector<Scene> test;

  std::vector<ManifestEntry> manifest() const {
    std::vector<ManifestEntry> m;
    for (const Scene& s : train) m.push_back({s.scene_id, "train", s.anomaly_class()});
    for (const Scene& s : test) m.push_back({s.scene_id, "test", s.anomaly_class()});
    return m;
  }
};

inline std::string scene_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%04zu", index);
  return buf;
}

// Scene seeds depend only on (base_seed, scene index); the agent count only adds
// passive agents, so test sets with N = 2, 3, 4 share their first two agents.
inline Dataset generate_dataset(const DatasetConfig& cfg) {
  Dataset ds;
  std::size_t index = 0;
  const auto base = [&](std::size_t i, int agents) {
    ScenarioConfig sc;
    sc.seed = derive_seed(cfg.base_seed, i);
    sc.n_agents = agents;
    sc.duration_frames = cfg.duration_frames;
    sc.speed_min = cfg.speed_min;
    sc.speed_max = cfg.speed_max;
    sc.scene_id = scene_name(i);
    return sc;
  };
  for (std::size_t k = 0; k < cfg.n_train; ++k, ++index) ds.train.push_back(generate_scene(base(index, cfg.train_agents)));
  for (std::size_t k = 0; k < cfg.n_test_normal; ++k, ++index)
    ds.test.push_back(generate_scene(base(index, cfg.test_agents)));
  for (std::size_t k = 0; k < cfg.n_test_abnormal; ++k, ++index) {
    ScenarioConfig sc = base(index, cfg.test_agents);
    std::mt19937_64 rng(derive_seed(sc.seed, 0x5C41));
    sc.anomaly_class = kAnomalyClasses[k % kAnomalyClasses.size()];
    const int T = cfg.duration_frames;
    const int max_dur = std::max(kMinAnomalyFrames, std::min(45, T - 32));
    sc.anomaly_duration_frames = std::uniform_int_distribution<int>(std::min(25, max_dur), max_dur)(rng);
    const int lo = std::min(15, T - sc.anomaly_duration_frames - 1);
    const int hi = std::max(lo, T - sc.anomaly_duration_frames - 16);
    sc.anomaly_onset_frame = std::uniform_int_distribution<int>(std::max(1, lo), std::max(1, hi))(rng);
    sc.anomalous_agent = (cfg.test_agents >= 2 && (rng() & 1U)) ? 1 : 0;
    ds.test.push_back(generate_scene(sc));
  }
  return ds;
}

// n_normal training scenes; the test split holds 11 * n_abnormal_per_class
// abnormal scenes (every class equally often) and as many normal ones.
inline Dataset generate_dataset(std::size_t n_normal, std::size_t n_abnormal_per_class, std::uint64_t base_seed) {
  DatasetConfig cfg;
  cfg.n_train = n_normal;
  cfg.n_test_abnormal = n_abnormal_per_class * kAnomalyClasses.size();
  cfg.n_test_normal = cfg.n_test_abnormal;
  cfg.base_seed = base_seed;
  return generate_dataset(cfg);
}

// ---------------------------------------------------------------------------
// File format
//
//   scene_XXXX.csv         first line "scene_id,dt,N,T", then "frame,agent,x,y" rows
//   scene_XXXX.labels.csv  header "frame,state,anomaly_class", then one row per frame

inline std::string labels_path_for(const std::string& scene_path) {
  const std::string suffix = ".csv";
  if (scene_path.size() >= suffix.size() && scene_path.compare(scene_path.size() - 4, 4, suffix) == 0)
    return scene_path.substr(0, scene_path.size() - 4) + ".labels.csv";
  return scene_path + ".labels.csv";
}

inline void write_scene(const Scene& scene, const std::string& path, bool with_labels = true) {
  scene.validate();
  {
    auto out = open_for_write(path);
    out << scene.scene_id << ',' << format_double(scene.dt) << ',' << scene.num_agents() << ','
        << scene.num_frames() << '\n';
    for (std::size_t f = 0; f < scene.num_frames(); ++f)
      for (std::size_t i = 0; i < scene.num_agents(); ++i) {
        const AgentState& s = scene.agents[i][f];
        out << f << ',' << i << ',' << format_double(s.x) << ',' << format_double(s.y) << '\n';
      }
    if (!out) throw DataError("failed writing '" + path + "'");
  }
  if (with_labels) {
    const std::string lp = labels_path_for(path);
    auto out = open_for_write(lp);
    out << "frame,state,anomaly_class\n";
    for (std::size_t f = 0; f < scene.labels.size(); ++f)
      out << f << ',' << to_string(scene.labels[f].state) << ',' << to_string(scene.labels[f].anomaly_class) << '\n';
    if (!out) throw DataError("failed writing '" + lp + "'");
  }
}

inline std::vector<FrameLabel> read_labels(const std::string& path, std::size_t frames) {
  const auto lines = read_lines(path);
  std::vector<FrameLabel> labels(frames);
  std::vector<bool> seen(frames, false);
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) continue;
    const auto f = split_csv(lines[ln]);
    if (f.size() != 3) throw ParseError(path, ln + 1, "row", "expected 3 fields, got " + std::to_string(f.size()));
    const long long frame = parse_int(f[0], path, ln + 1, "frame");
    if (frame < 0 || static_cast<std::size_t>(frame) >= frames)
      throw ParseError(path, ln + 1, "frame", "out of range 0.." + std::to_string(frames - 1));
    const auto state = parse_frame_state(f[1]);
    if (!state) throw ParseError(path, ln + 1, "state", "unknown state '" + std::string(f[1]) + "'");
    const auto cls = parse_anomaly_class(f[2]);
    if (!cls) throw ParseError(path, ln + 1, "anomaly_class", "unknown class '" + std::string(f[2]) + "'");
    if ((*state == FrameState::normal) != (*cls == AnomalyClass::none))
      throw ParseError(path, ln + 1, "anomaly_class", "class must be none exactly for normal frames");
    labels[frame] = {*state, *cls};
    seen[frame] = true;
  }
  for (std::size_t f = 0; f < frames; ++f)
    if (!seen[f]) throw ParseError(path, lines.size(), "frame", "no label for frame " + std::to_string(f));
  return labels;
}

// A missing labels file reads as an all-normal scene.
inline Scene read_scene(const std::string& path) {
  const auto lines = read_lines(path);
  std::size_t first = 0;
  while (first < lines.size() && lines[first].empty()) ++first;
  if (first == lines.size()) throw ParseError(path + ": no frames");
  const auto h = split_csv(lines[first]);
  const std::size_t hl = first + 1;
  if (h.size() != 4) throw ParseError(path, hl, "header", "expected scene_id,dt,N,T");
  Scene scene;
  scene.scene_id = std::string(h[0]);
  if (scene.scene_id.empty()) throw ParseError(path, hl, "scene_id", "empty");
  scene.dt = parse_double(h[1], path, hl, "dt");
  if (!(scene.dt > 0.0)) throw ParseError(path, hl, "dt", "must be positive");
  const long long n = parse_int(h[2], path, hl, "N");
  const long long t = parse_int(h[3], path, hl, "T");
  if (n < 1) throw ParseError(path, hl, "N", "must be >= 1");
  if (t < 1) throw ParseError(path, hl, "T", "no frames");
  if (t < 2) throw ParseError(path, hl, "T", "need at least 2 frames");
  const auto N = static_cast<std::size_t>(n);
  const auto T = static_cast<std::size_t>(t);

  scene.agents.assign(N, Trajectory(T));
  std::vector<std::size_t> count(N, 0);
  std::vector<bool> seen(N * T, false);
  std::size_t rows = 0;
  for (std::size_t ln = first + 1; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) continue;
    const auto f = split_csv(lines[ln]);
    const std::size_t lno = ln + 1;
    if (f.size() != 4) throw ParseError(path, lno, "row", "expected frame,agent,x,y");
    const long long frame = parse_int(f[0], path, lno, "frame");
    const long long agent = parse_int(f[1], path, lno, "agent");
    if (frame < 0 || static_cast<std::size_t>(frame) >= T)
      throw ParseError(path, lno, "frame", "out of range 0.." + std::to_string(T - 1));
    if (agent < 0 || static_cast<std::size_t>(agent) >= N)
      throw ParseError(path, lno, "agent", "out of range 0.." + std::to_string(N - 1));
    const double x = parse_double(f[2], path, lno, "x");
    const double y = parse_double(f[3], path, lno, "y");
    if (!std::isfinite(x)) throw ParseError(path, lno, "x", "non-finite");
    if (!std::isfinite(y)) throw ParseError(path, lno, "y", "non-finite");
    const std::size_t key = static_cast<std::size_t>(agent) * T + static_cast<std::size_t>(frame);
    if (seen[key]) throw ParseError(path, lno, "frame", "duplicate row for agent " + std::to_string(agent));
    seen[key] = true;
    scene.agents[agent][frame] = {x, y};
    ++count[agent];
    ++rows;
  }
  if (rows == 0) throw ParseError(path + ": no frames");
  for (std::size_t i = 0; i < N; ++i) {
    if (count[i] != T) {
      throw ParseError(path, lines.size(), "frame",
                       "trajectory of agent " + std::to_string(i) + " has " + std::to_string(count[i]) +
                           " frames, header says " + std::to_string(T));
    }
  }
  const std::string lp = labels_path_for(path);
  if (std::filesystem::exists(lp)) {
    scene.labels = read_labels(lp, T);
  } else {
    scene.labels.assign(T, FrameLabel{});
  }
  return scene;
}

// Layout: <root>/train/<id>.csv, <root>/test/<id>.csv + <id>.labels.csv, <root>/manifest.csv
inline void write_dataset(const Dataset& ds, const std::string& root) {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(root) / "train");
  fs::create_directories(fs::path(root) / "test");
  for (const Scene& s : ds.train) write_scene(s, (fs::path(root) / "train" / (s.scene_id + ".csv")).string(), false);
  for (const Scene& s : ds.test) write_scene(s, (fs::path(root) / "test" / (s.scene_id + ".csv")).string(), true);
  auto out = open_for_write((fs::path(root) / "manifest.csv").string());
  out << "scene_id,split,anomaly_class\n";
  for (const ManifestEntry& e : ds.manifest()) out << e.scene_id << ',' << e.split << ',' << to_string(e.anomaly_class) << '\n';
}

inline std::vector<ManifestEntry> read_manifest(const std::string& root) {
  const std::string path = (std::filesystem::path(root) / "manifest.csv").string();
  if (!std::filesystem::exists(path)) throw DataError("no manifest at '" + path + "'; run `maad generate` first");
  const auto lines = read_lines(path);
  std::vector<ManifestEntry> entries;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    if (lines[ln].empty()) continue;
    const auto f = split_csv(lines[ln]);
    if (f.size() != 3) throw ParseError(path, ln + 1, "row", "expected scene_id,split,anomaly_class");
    if (f[1] != "train" && f[1] != "test") throw ParseError(path, ln + 1, "split", "must be train or test");
    const auto cls = parse_anomaly_class(f[2]);
    if (!cls) throw ParseError(path, ln + 1, "anomaly_class", "unknown class '" + std::string(f[2]) + "'");
    entries.push_back({std::string(f[0]), std::string(f[1]), *cls});
  }
  return entries;
}

inline Dataset read_dataset(const std::string& root) {
  Dataset ds;
  for (const ManifestEntry& e : read_manifest(root)) {
    const std::string path = (std::filesystem::path(root) / e.split / (e.scene_id + ".csv")).string();
    (e.split == "train" ? ds.train : ds.test).push_back(read_scene(path));
  }
  return ds;
}

}  // namespace maad
