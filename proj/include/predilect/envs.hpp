// 2D environments, ground-truth frames and the segment -> metric mapping.
//
// PointReach: a point mass accelerating toward a goal in a square arena.
//   observation = [goal.x - x, goal.y - y, vx, vy]
//   action      = [ax, ay] in [-1, 1], scaled by max_accel
//
// SocialNav: a robot crossing a corridor with walking humans, pushed by a
// social force whose gain is part of the action.
//   observation = [lidar ranges..., goal_forward, goal_left, speed, gain]
//   (goal_forward/goal_left: goal offset in the robot frame)
//   action      = [d_heading, d_speed, d_gain] in [-1, 1], scaled by rates
#ifndef PREDILECT_ENVS_HPP_
#define PREDILECT_ENVS_HPP_

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "predilect/core.hpp"
#include "predilect/rng.hpp"

namespace predilect::envs {

inline constexpr const char* kDistanceToGoal = "distance to goal";
inline constexpr const char* kDistanceToHuman = "distance to human";
inline constexpr const char* kSpeed = "speed";

struct PointReachConfig {
  double half_width = 1.0;     // m
  double max_speed = 1.0;      // m/s
  double max_accel = 2.0;      // m/s^2
  double dt = 0.1;             // s
  int episode_length = 50;     // steps
  double goal_radius = 0.05;   // m
  double goal_margin = 0.1;    // goals spawn at least this far from walls
  double goal_bonus = 1.0;
};

struct PointReachState {
  Point2 pos;
  Point2 vel;
  Point2 goal;
  int t = 0;
};

struct SocialNavConfig {
  double corridor_length = 10.0;  // m, x in [0, length]
  double corridor_width = 4.0;    // m, y in [-width/2, width/2]
  int human_count = 3;
  double human_speed_min = 0.3;   // m/s
  double human_speed_max = 0.8;
  double human_radius = 0.25;     // m
  double robot_radius = 0.25;     // m
  int lidar_rays = 16;
  double lidar_range = 5.0;       // m
  double gain_min = 0.0;
  double gain_max = 2.0;
  double length_scale = 0.5;      // m, social-force decay
  double interaction_range = 4.0; // m, farther entities exert no force
  double dt = 0.2;                // s
  int episode_length = 100;
  double max_speed = 1.0;         // m/s
  double turn_rate = 1.5;         // rad/s at |action| = 1
  double accel = 1.0;             // m/s^2 at |action| = 1
  double gain_rate = 1.0;         // gain units/s at |action| = 1
  double goal_radius = 0.4;       // m
  double comfort_distance = 1.5;  // m, proximity penalty starts here
  double w_goal = 1.0;
  double w_human = 0.5;
  double w_collision = 5.0;
};

struct Human {
  Point2 pos;
  Point2 vel;
  Point2 waypoint_a;
  Point2 waypoint_b;
  bool toward_b = true;
  double speed = 0.5;
};

struct SocialNavState {
  Point2 pos;
  Point2 vel;  // net velocity over the last step
  double heading = 0.0;
  double speed = 0.0;
  double gain = 0.0;
  std::vector<Human> humans;
  Point2 goal;
  int t = 0;
};

template <typename State>
struct StepOutcome {
  State state;
  StateVector observation;
  double true_reward = 0.0;
  bool done = false;
  // Episode ended on the step limit rather than a terminal event.
  bool truncated = false;
};

// PointReach ------------------------------------------------------------------

void validate(const PointReachConfig& config);
PointReachState reset_pointreach(const PointReachConfig& config, Rng& rng);
StateVector observe_pointreach(const PointReachState& state);
StepOutcome<PointReachState> step_pointreach(const PointReachConfig& config,
                                             const PointReachState& state,
                                             std::span<const double> action);
Frame pointreach_frame(const PointReachState& state);

// SocialNav -------------------------------------------------------------------

void validate(const SocialNavConfig& config);

// Sum over entities of gain * exp(-d / length_scale) * unit(robot - entity).
// Distances below 1 cm are treated as 1 cm; coincident points push along +x.
Point2 social_force(Point2 robot, std::span<const Point2> entities, double gain,
                    double length_scale);

// Nearest points on the corridor walls to `p`.
std::vector<Point2> wall_points(const SocialNavConfig& config, Point2 p);

SocialNavState reset_socialnav(const SocialNavConfig& config, Rng& rng);
std::vector<double> compute_lidar(const SocialNavState& state,
                                  const SocialNavConfig& config);
StateVector observe_socialnav(const SocialNavState& state,
                              const SocialNavConfig& config);
StepOutcome<SocialNavState> step_socialnav(const SocialNavConfig& config,
                                           const SocialNavState& state,
                                           std::span<const double> action);
Frame socialnav_frame(const SocialNavState& state,
                      const SocialNavConfig& config);
double min_human_distance(Point2 robot, const std::vector<Point2>& humans);

// Polymorphic wrapper ---------------------------------------------------------

struct Transition {
  StateVector observation;
  bool done = false;
  bool truncated = false;
};

// One environment instance; not shared between threads. The learner sees
// observations and termination only. The true reward of the last step is a
// separate query reserved for the oracle and for evaluation.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string name() const = 0;
  virtual int observation_dim() const = 0;
  virtual int action_dim() const = 0;
  virtual StateVector reset(Rng& rng) = 0;
  virtual Transition step(std::span<const double> action) = 0;
  virtual double last_true_reward() = 0;
  // Ground truth of the current state.
  virtual Frame frame() const = 0;
  virtual std::unique_ptr<Environment> clone() const = 0;
};

std::unique_ptr<Environment> make_pointreach(PointReachConfig config);
std::unique_ptr<Environment> make_socialnav(SocialNavConfig config);

// Features ----------------------------------------------------------------------

FeatureSet pointreach_features();
FeatureSet socialnav_features();

// Sentiment the oracle attaches to an extreme of a feature.
struct FeaturePolarity {
  std::string feature;
  Sentiment when_low = Sentiment::positive;
  Sentiment when_high = Sentiment::negative;
};

using PolarityTable = std::vector<FeaturePolarity>;

// PointReach: low goal distance is good. SocialNav: low goal distance is
// good, low human distance is bad, high speed is good unless
// `speed_high_is_positive` is false.
PolarityTable default_polarity(const std::string& env_name,
                               bool speed_high_is_positive = true);
const FeaturePolarity& polarity_for(const PolarityTable& table,
                                    const std::string& feature);

// Metric of `feature` in a frame: "distance to goal" and "distance to human"
// (nearest human, center to center) in m, "speed" in m/s.
double frame_metric(const Frame& frame, const std::string& feature);

MetricTensor map_segment_to_metrics(const TrajectorySegment& segment,
                                    const FeatureSet& features);

}  // namespace predilect::envs

#endif  // PREDILECT_ENVS_HPP_
