#include "predilect/envs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace predilect::envs {

namespace {

double norm(Point2 p) { return std::hypot(p.x, p.y); }
Point2 sub(Point2 a, Point2 b) { return {a.x - b.x, a.y - b.y}; }

void check_action(std::span<const double> action, std::size_t dim) {
  if (action.size() != dim) {
    throw Error("action has dimension " + std::to_string(action.size()) +
                ", expected " + std::to_string(dim));
  }
  for (double a : action) {
    if (!std::isfinite(a)) throw Error("non-finite action");
  }
}

double clamp_unit(double a) { return std::clamp(a, -1.0, 1.0); }

double wrap_angle(double a) {
  a = std::fmod(a + std::numbers::pi, 2.0 * std::numbers::pi);
  if (a < 0) a += 2.0 * std::numbers::pi;
  return a - std::numbers::pi;
}

}  // namespace

// PointReach ------------------------------------------------------------------

void validate(const PointReachConfig& c) {
  if (!(c.half_width > 0 && c.max_speed > 0 && c.max_accel > 0 && c.dt > 0 &&
        c.episode_length > 0 && c.goal_radius > 0 && c.goal_margin >= 0 &&
        c.goal_margin < c.half_width)) {
    throw Error("invalid PointReach configuration");
  }
}

PointReachState reset_pointreach(const PointReachConfig& c, Rng& rng) {
  PointReachState s;
  const double g = c.half_width - c.goal_margin;
  do {
    s.pos = {rng.uniform(-c.half_width, c.half_width),
             rng.uniform(-c.half_width, c.half_width)};
    s.goal = {rng.uniform(-g, g), rng.uniform(-g, g)};
  } while (norm(sub(s.pos, s.goal)) < 2.0 * c.goal_radius);
  return s;
}

StateVector observe_pointreach(const PointReachState& s) {
  return {s.goal.x - s.pos.x, s.goal.y - s.pos.y, s.vel.x, s.vel.y};
}

StepOutcome<PointReachState> step_pointreach(const PointReachConfig& c,
                                             const PointReachState& state,
                                             std::span<const double> action) {
  check_action(action, 2);
  StepOutcome<PointReachState> out;
  PointReachState& s = out.state;
  s = state;
  s.vel.x += clamp_unit(action[0]) * c.max_accel * c.dt;
  s.vel.y += clamp_unit(action[1]) * c.max_accel * c.dt;
  const double speed = norm(s.vel);
  if (speed > c.max_speed) {
    s.vel.x *= c.max_speed / speed;
    s.vel.y *= c.max_speed / speed;
  }
  s.pos.x += s.vel.x * c.dt;
  s.pos.y += s.vel.y * c.dt;
  if (std::abs(s.pos.x) > c.half_width) {
    s.pos.x = std::copysign(c.half_width, s.pos.x);
    s.vel.x = 0.0;
  }
  if (std::abs(s.pos.y) > c.half_width) {
    s.pos.y = std::copysign(c.half_width, s.pos.y);
    s.vel.y = 0.0;
  }
  s.t += 1;
  const double d = norm(sub(s.pos, s.goal));
  out.true_reward = -d;
  if (d < c.goal_radius) {
    out.true_reward += c.goal_bonus;
    out.done = true;
  } else if (s.t >= c.episode_length) {
    out.done = true;
    out.truncated = true;
  }
  out.observation = observe_pointreach(s);
  return out;
}

Frame pointreach_frame(const PointReachState& s) {
  Frame f;
  f.t = s.t;
  f.robot_x = s.pos.x;
  f.robot_y = s.pos.y;
  f.robot_vx = s.vel.x;
  f.robot_vy = s.vel.y;
  f.robot_heading =
      (s.vel.x == 0.0 && s.vel.y == 0.0) ? 0.0 : std::atan2(s.vel.y, s.vel.x);
  f.goal = s.goal;
  return f;
}

// SocialNav -------------------------------------------------------------------

void validate(const SocialNavConfig& c) {
  if (!(c.corridor_length > 0 && c.corridor_width > 0 && c.human_count >= 0 &&
        c.human_speed_min > 0 && c.human_speed_min <= c.human_speed_max &&
        c.human_radius > 0 && c.robot_radius > 0 && c.lidar_rays >= 4 &&
        c.lidar_range > 0 && c.gain_min >= 0 && c.gain_min < c.gain_max &&
        c.length_scale > 0 && c.interaction_range > 0 && c.dt > 0 &&
        c.episode_length > 0 && c.max_speed > 0 && c.goal_radius > 0)) {
    throw Error("invalid SocialNav configuration");
  }
}

Point2 social_force(Point2 robot, std::span<const Point2> entities, double gain,
                    double length_scale) {
  if (gain < 0) throw Error("social_force: negative gain");
  constexpr double kMinDistance = 0.01;
  Point2 f;
  for (const Point2& e : entities) {
    const Point2 diff = sub(robot, e);
    const double d = norm(diff);
    Point2 dir{1.0, 0.0};
    if (d > 0) dir = {diff.x / d, diff.y / d};
    const double mag = gain * std::exp(-std::max(d, kMinDistance) / length_scale);
    f.x += mag * dir.x;
    f.y += mag * dir.y;
  }
  return f;
}

std::vector<Point2> wall_points(const SocialNavConfig& c, Point2 p) {
  const double half = c.corridor_width / 2.0;
  const double x = std::clamp(p.x, 0.0, c.corridor_length);
  const double y = std::clamp(p.y, -half, half);
  return {{x, half}, {x, -half}, {0.0, y}, {c.corridor_length, y}};
}

namespace {

void place_human(const SocialNavConfig& c, Rng& rng, Human& h) {
  const double half = c.corridor_width / 2.0 - c.human_radius;
  h.waypoint_a = {rng.uniform(0.15, 0.4) * c.corridor_length, rng.uniform(-half, half)};
  h.waypoint_b = {rng.uniform(0.6, 0.85) * c.corridor_length, rng.uniform(-half, half)};
  const double frac = rng.uniform();
  h.pos = {h.waypoint_a.x + frac * (h.waypoint_b.x - h.waypoint_a.x),
           h.waypoint_a.y + frac * (h.waypoint_b.y - h.waypoint_a.y)};
  h.toward_b = rng.bernoulli(0.5);
  h.speed = rng.uniform(c.human_speed_min, c.human_speed_max);
  h.vel = {};
}

void advance_human(Human& h, double dt) {
  const Point2 target = h.toward_b ? h.waypoint_b : h.waypoint_a;
  const Point2 diff = sub(target, h.pos);
  const double d = norm(diff);
  const double step = h.speed * dt;
  if (d <= step) {
    h.vel = {diff.x / dt, diff.y / dt};
    h.pos = target;
    h.toward_b = !h.toward_b;
    return;
  }
  h.vel = {h.speed * diff.x / d, h.speed * diff.y / d};
  h.pos.x += h.vel.x * dt;
  h.pos.y += h.vel.y * dt;
}

std::vector<Point2> human_positions(const SocialNavState& s) {
  std::vector<Point2> out;
  out.reserve(s.humans.size());
  for (const auto& h : s.humans) out.push_back(h.pos);
  return out;
}

}  // namespace

double min_human_distance(Point2 robot, const std::vector<Point2>& humans) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& h : humans) best = std::min(best, norm(sub(robot, h)));
  return best;
}

SocialNavState reset_socialnav(const SocialNavConfig& c, Rng& rng) {
  SocialNavState s;
  const double margin = std::min(0.5, c.corridor_width / 4.0);
  const double half = c.corridor_width / 2.0 - margin;
  const double end = std::min(0.8, c.corridor_length / 4.0);
  s.pos = {end, rng.uniform(-half, half)};
  s.goal = {c.corridor_length - end, rng.uniform(-half, half)};
  s.heading = rng.uniform(-0.3, 0.3);
  s.speed = 0.0;
  s.gain = rng.uniform(c.gain_min, c.gain_max);
  s.humans.resize(static_cast<std::size_t>(c.human_count));
  for (auto& h : s.humans) {
    do {
      place_human(c, rng, h);
    } while (norm(sub(h.pos, s.pos)) < 1.0 + c.human_radius + c.robot_radius);
  }
  return s;
}

std::vector<double> compute_lidar(const SocialNavState& s,
                                  const SocialNavConfig& c) {
  constexpr double kMinRange = 1e-6;
  const double half = c.corridor_width / 2.0;
  std::vector<double> ranges(static_cast<std::size_t>(c.lidar_rays));
  for (int k = 0; k < c.lidar_rays; ++k) {
    const double angle = s.heading + 2.0 * std::numbers::pi * k / c.lidar_rays;
    const Point2 d{std::cos(angle), std::sin(angle)};
    double best = c.lidar_range;
    for (const auto& h : s.humans) {
      const Point2 oc = sub(s.pos, h.pos);
      const double b = oc.x * d.x + oc.y * d.y;
      const double cc = oc.x * oc.x + oc.y * oc.y - c.human_radius * c.human_radius;
      if (cc <= 0) {
        best = kMinRange;
        continue;
      }
      const double disc = b * b - cc;
      if (disc < 0) continue;
      const double t = -b - std::sqrt(disc);
      if (t > 0) best = std::min(best, t);
    }
    auto hit_horizontal = [&](double y0) {
      if (d.y == 0.0) return;
      const double t = (y0 - s.pos.y) / d.y;
      const double x = s.pos.x + t * d.x;
      if (t > 0 && x >= 0.0 && x <= c.corridor_length) best = std::min(best, t);
    };
    auto hit_vertical = [&](double x0) {
      if (d.x == 0.0) return;
      const double t = (x0 - s.pos.x) / d.x;
      const double y = s.pos.y + t * d.y;
      if (t > 0 && y >= -half && y <= half) best = std::min(best, t);
    };
    hit_horizontal(half);
    hit_horizontal(-half);
    hit_vertical(0.0);
    hit_vertical(c.corridor_length);
    ranges[static_cast<std::size_t>(k)] = std::max(best, kMinRange);
  }
  return ranges;
}

StateVector observe_socialnav(const SocialNavState& s, const SocialNavConfig& c) {
  StateVector obs = compute_lidar(s, c);
  const Point2 g = sub(s.goal, s.pos);
  const double ch = std::cos(s.heading), sh = std::sin(s.heading);
  obs.push_back(ch * g.x + sh * g.y);
  obs.push_back(-sh * g.x + ch * g.y);
  obs.push_back(s.speed);
  obs.push_back(s.gain);
  return obs;
}

StepOutcome<SocialNavState> step_socialnav(const SocialNavConfig& c,
                                           const SocialNavState& state,
                                           std::span<const double> action) {
  check_action(action, 3);
  StepOutcome<SocialNavState> out;
  SocialNavState& s = out.state;
  s = state;
  s.heading = wrap_angle(s.heading + clamp_unit(action[0]) * c.turn_rate * c.dt);
  s.speed = std::clamp(s.speed + clamp_unit(action[1]) * c.accel * c.dt, 0.0,
                       c.max_speed);
  s.gain = std::clamp(s.gain + clamp_unit(action[2]) * c.gain_rate * c.dt,
                      c.gain_min, c.gain_max);

  std::vector<Point2> sources;
  for (const auto& h : s.humans) {
    if (norm(sub(s.pos, h.pos)) <= c.interaction_range) sources.push_back(h.pos);
  }
  for (const auto& w : wall_points(c, s.pos)) {
    if (norm(sub(s.pos, w)) <= c.interaction_range) sources.push_back(w);
  }
  const Point2 force = social_force(s.pos, sources, s.gain, c.length_scale);
  s.vel = {s.speed * std::cos(s.heading) + force.x,
           s.speed * std::sin(s.heading) + force.y};
  const double goal_before = norm(sub(s.goal, s.pos));
  s.pos.x += s.vel.x * c.dt;
  s.pos.y += s.vel.y * c.dt;
  const double half = c.corridor_width / 2.0 - c.robot_radius;
  s.pos.x = std::clamp(s.pos.x, c.robot_radius, c.corridor_length - c.robot_radius);
  s.pos.y = std::clamp(s.pos.y, -half, half);
  for (auto& h : s.humans) advance_human(h, c.dt);
  s.t += 1;

  const double goal_after = norm(sub(s.goal, s.pos));
  const double dh = min_human_distance(s.pos, human_positions(s));
  const double proximity = std::max(0.0, (c.comfort_distance - dh) / c.comfort_distance);
  const bool collision = dh < c.robot_radius + c.human_radius;
  out.true_reward = c.w_goal * (goal_before - goal_after) - c.w_human * proximity -
                    (collision ? c.w_collision : 0.0);
  if (collision || goal_after < c.goal_radius) {
    out.done = true;
  } else if (s.t >= c.episode_length) {
    out.done = true;
    out.truncated = true;
  }
  out.observation = observe_socialnav(s, c);
  return out;
}

Frame socialnav_frame(const SocialNavState& s, const SocialNavConfig& c) {
  Frame f;
  f.t = s.t;
  f.robot_x = s.pos.x;
  f.robot_y = s.pos.y;
  f.robot_vx = s.vel.x;
  f.robot_vy = s.vel.y;
  f.robot_heading = s.heading;
  f.robot_gain = s.gain;
  f.humans = human_positions(s);
  f.goal = s.goal;
  f.lidar = compute_lidar(s, c);
  return f;
}

// Polymorphic wrappers ----------------------------------------------------------

namespace {

class PointReachEnv final : public Environment {
 public:
  explicit PointReachEnv(PointReachConfig c) : config_(c) { validate(config_); }
  std::string name() const override { return "pointreach"; }
  int observation_dim() const override { return 4; }
  int action_dim() const override { return 2; }
  StateVector reset(Rng& rng) override {
    state_ = reset_pointreach(config_, rng);
    last_reward_ = 0.0;
    return observe_pointreach(state_);
  }
  Transition step(std::span<const double> action) override {
    auto out = step_pointreach(config_, state_, action);
    state_ = out.state;
    last_reward_ = out.true_reward;
    return {std::move(out.observation), out.done, out.truncated};
  }
  double last_true_reward() override { return last_reward_; }
  Frame frame() const override { return pointreach_frame(state_); }
  std::unique_ptr<Environment> clone() const override {
    return std::make_unique<PointReachEnv>(*this);
  }

 private:
  PointReachConfig config_;
  PointReachState state_;
  double last_reward_ = 0.0;
};

class SocialNavEnv final : public Environment {
 public:
  explicit SocialNavEnv(SocialNavConfig c) : config_(c) { validate(config_); }
  std::string name() const override { return "socialnav"; }
  int observation_dim() const override { return config_.lidar_rays + 4; }
  int action_dim() const override { return 3; }
  StateVector reset(Rng& rng) override {
    state_ = reset_socialnav(config_, rng);
    last_reward_ = 0.0;
    return observe_socialnav(state_, config_);
  }
  Transition step(std::span<const double> action) override {
    auto out = step_socialnav(config_, state_, action);
    state_ = std::move(out.state);
    last_reward_ = out.true_reward;
    return {std::move(out.observation), out.done, out.truncated};
  }
  double last_true_reward() override { return last_reward_; }
  Frame frame() const override { return socialnav_frame(state_, config_); }
  std::unique_ptr<Environment> clone() const override {
    return std::make_unique<SocialNavEnv>(*this);
  }

 private:
  SocialNavConfig config_;
  SocialNavState state_;
  double last_reward_ = 0.0;
};

}  // namespace

std::unique_ptr<Environment> make_pointreach(PointReachConfig config) {
  return std::make_unique<PointReachEnv>(config);
}

std::unique_ptr<Environment> make_socialnav(SocialNavConfig config) {
  return std::make_unique<SocialNavEnv>(config);
}

// Features ----------------------------------------------------------------------

FeatureSet pointreach_features() { return {{kDistanceToGoal, "m"}}; }

FeatureSet socialnav_features() {
  return {{kDistanceToGoal, "m"}, {kDistanceToHuman, "m"}, {kSpeed, "m/s"}};
}

PolarityTable default_polarity(const std::string& env_name,
                               bool speed_high_is_positive) {
  PolarityTable table{{kDistanceToGoal, Sentiment::positive, Sentiment::negative}};
  if (env_name == "socialnav") {
    table.push_back({kDistanceToHuman, Sentiment::negative, Sentiment::positive});
    const Sentiment high = speed_high_is_positive ? Sentiment::positive : Sentiment::negative;
    const Sentiment low = speed_high_is_positive ? Sentiment::negative : Sentiment::positive;
    table.push_back({kSpeed, low, high});
  } else if (env_name != "pointreach") {
    throw Error("no polarity table for environment '" + env_name + "'");
  }
  return table;
}

const FeaturePolarity& polarity_for(const PolarityTable& table,
                                    const std::string& feature) {
  for (const auto& p : table) {
    if (p.feature == feature) return p;
  }
  throw Error("no polarity entry for feature '" + feature + "'");
}

double frame_metric(const Frame& f, const std::string& feature) {
  if (feature == kDistanceToGoal) {
    return std::hypot(f.goal.x - f.robot_x, f.goal.y - f.robot_y);
  }
  if (feature == kDistanceToHuman) {
    if (f.humans.empty()) throw Error("frame has no humans for '" + feature + "'");
    return min_human_distance({f.robot_x, f.robot_y}, f.humans);
  }
  if (feature == kSpeed) return std::hypot(f.robot_vx, f.robot_vy);
  throw Error("unknown feature '" + feature + "'");
}

MetricTensor map_segment_to_metrics(const TrajectorySegment& segment,
                                    const FeatureSet& features) {
  if (segment.frames.size() != segment.pairs.size()) {
    throw Error("segment " + segment.segment_id + " lacks ground-truth frames");
  }
  MetricTensor t;
  t.feature_order = feature_names(features);
  t.rows.reserve(segment.frames.size());
  for (const auto& frame : segment.frames) {
    std::vector<double> row;
    row.reserve(features.size());
    for (const auto& f : features) row.push_back(frame_metric(frame, f.name));
    t.rows.push_back(std::move(row));
  }
  return t;
}

}  // namespace predilect::envs
