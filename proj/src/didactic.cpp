#include "precog/didactic.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

namespace precog {

namespace {

// Position after travelling s metres from the turn point. Negative s lies
// before it on the approach. `left` bends counter-clockwise.
Eigen::Vector2d along_path(double s, const Eigen::Vector2d& start,
                           const Eigen::Vector2d& heading, bool turn,
                           bool left, double radius) {
  if (!turn || s <= 0.0) return start + s * heading;
  const Eigen::Vector2d normal =
      left ? Eigen::Vector2d(-heading.y(), heading.x())
           : Eigen::Vector2d(heading.y(), -heading.x());
  const double arc = 0.5 * std::numbers::pi * radius;
  if (s <= arc) {
    const double phi = s / radius;
    return start + radius * std::sin(phi) * heading +
           radius * (1.0 - std::cos(phi)) * normal;
  }
  return start + radius * heading + radius * normal + (s - arc) * normal;
}

std::string split_id(const std::string& split, Index i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s-%05ld", split.c_str(),
                static_cast<long>(i));
  return buf;
}

}  // namespace

void DidacticConfig::validate() const {
  if (!(turn_probability >= 0.0 && turn_probability <= 1.0)) {
    throw std::invalid_argument("turn_probability must lie in [0, 1]");
  }
  if (horizon < 1 || past_steps < 2) {
    throw std::invalid_argument("horizon >= 1 and past_steps >= 2 required");
  }
  if (!(scale_min > 0.0) || scale_max < scale_min) {
    throw std::invalid_argument("invalid scale range");
  }
  if (n_train < 0 || n_val < 0 || n_test < 0) {
    throw std::invalid_argument("split sizes must be non-negative");
  }
}

nlohmann::json to_json(const DidacticConfig& c) {
  return {{"horizon", c.horizon},
          {"past_steps", c.past_steps},
          {"dt", c.dt},
          {"turn_probability", c.turn_probability},
          {"straight_steps_before_reveal", c.straight_steps_before_reveal},
          {"human_speed", c.human_speed},
          {"human_turn_speed", c.human_turn_speed},
          {"robot_speed", c.robot_speed},
          {"human_start_x", c.human_start_x},
          {"robot_start_y", c.robot_start_y},
          {"robot_turn_y", c.robot_turn_y},
          {"turn_radius", c.turn_radius},
          {"scale_min", c.scale_min},
          {"scale_max", c.scale_max},
          {"lateral_offset", c.lateral_offset},
          {"jitter_std", c.jitter_std},
          {"lane_width", c.lane_width},
          {"grid_size", c.grid_size},
          {"resolution", c.resolution},
          {"n_train", c.n_train},
          {"n_val", c.n_val},
          {"n_test", c.n_test},
          {"seed", c.seed}};
}

DidacticConfig didactic_config_from_json(const nlohmann::json& j) {
  DidacticConfig c;
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("horizon", c.horizon);
  get("past_steps", c.past_steps);
  get("dt", c.dt);
  get("turn_probability", c.turn_probability);
  get("straight_steps_before_reveal", c.straight_steps_before_reveal);
  get("human_speed", c.human_speed);
  get("human_turn_speed", c.human_turn_speed);
  get("robot_speed", c.robot_speed);
  get("human_start_x", c.human_start_x);
  get("robot_start_y", c.robot_start_y);
  get("robot_turn_y", c.robot_turn_y);
  get("turn_radius", c.turn_radius);
  get("scale_min", c.scale_min);
  get("scale_max", c.scale_max);
  get("lateral_offset", c.lateral_offset);
  get("jitter_std", c.jitter_std);
  get("lane_width", c.lane_width);
  get("grid_size", c.grid_size);
  get("resolution", c.resolution);
  get("n_train", c.n_train);
  get("n_val", c.n_val);
  get("n_test", c.n_test);
  get("seed", c.seed);
  c.validate();
  return c;
}

ContextGrid didactic_grid(const DidacticConfig& c) {
  ContextGrid g;
  g.resolution = c.resolution;
  const double half = 0.5 * c.resolution * static_cast<double>(c.grid_size - 1);
  g.origin = Eigen::Vector2d(-half, -half);
  g.width = g.height = c.grid_size;
  g.channels = 2;
  g.data = Eigen::ArrayXd::Zero(g.width * g.height * g.channels);
  for (Index r = 0; r < g.height; ++r) {
    for (Index col = 0; col < g.width; ++col) {
      const Eigen::Vector2d p = g.to_world(Eigen::Vector2d(col, r));
      g.at(r, col, 0) = std::abs(p.y()) <= 0.5 * c.lane_width ? 1.0 : 0.0;
      g.at(r, col, 1) = std::abs(p.x()) <= 0.5 * c.lane_width ? 1.0 : 0.0;
    }
  }
  return g;
}

Scene generate_episode(const DidacticConfig& c, Rng& rng,
                       const std::string& scene_id,
                       std::optional<bool> force_turn) {
  const bool turn =
      force_turn.has_value() ? *force_turn : rng.bernoulli(c.turn_probability);
  const double scale = rng.uniform(c.scale_min, c.scale_max);
  const double human_offset = rng.uniform(-c.lateral_offset, c.lateral_offset);
  const double robot_offset = rng.uniform(-c.lateral_offset, c.lateral_offset);

  const Index reveal = c.straight_steps_before_reveal;
  const double human_turn_x = c.human_start_x + c.human_speed * reveal;
  auto human_s = [&](Index t) {
    if (t <= reveal) return c.human_speed * static_cast<double>(t - reveal);
    return c.human_turn_speed * static_cast<double>(t - reveal);
  };
  auto robot_s = [&](Index t) {
    return (c.robot_start_y - c.robot_turn_y) +
           c.robot_speed * static_cast<double>(t);
  };
  const Eigen::Vector2d human_start(human_turn_x, 0.0);
  const Eigen::Vector2d robot_start(0.0, c.robot_turn_y);

  Scene s;
  s.scene_id = scene_id;
  s.dt = c.dt;
  s.num_agents = 2;
  s.robot_index = 0;
  s.agent_mask = {true, true};
  s.past = Positions(c.past_steps, 4);
  s.future = Positions(c.horizon, 4);
  s.grid = didactic_grid(c);

  auto place = [&](Index t) {
    Eigen::Vector2d robot = along_path(robot_s(t), robot_start,
                                       Eigen::Vector2d::UnitY(), turn, false,
                                       c.turn_radius);
    Eigen::Vector2d human = along_path(human_s(t), human_start,
                                       Eigen::Vector2d::UnitX(), turn, true,
                                       c.turn_radius);
    robot = scale * robot + Eigen::Vector2d(robot_offset, 0.0);
    human = scale * human + Eigen::Vector2d(0.0, human_offset);
    robot.x() += rng.normal(0.0, c.jitter_std);
    robot.y() += rng.normal(0.0, c.jitter_std);
    human.x() += rng.normal(0.0, c.jitter_std);
    human.y() += rng.normal(0.0, c.jitter_std);
    return std::pair{robot, human};
  };
  for (Index i = 0; i < c.past_steps; ++i) {
    const Index t = i - (c.past_steps - 1);
    const auto [robot, human] = place(t);
    set_position(s.past, i, 0, robot);
    set_position(s.past, i, 1, human);
  }
  for (Index i = 0; i < c.horizon; ++i) {
    const auto [robot, human] = place(i + 1);
    set_position(s.future, i, 0, robot);
    set_position(s.future, i, 1, human);
  }
  return s;
}

DidacticSplits generate_dataset(const DidacticConfig& config) {
  config.validate();
  DidacticSplits out;
  auto make = [&config](const std::string& split, Index n) {
    Dataset ds;
    ds.split = split;
    for (Index i = 0; i < n; ++i) {
      const std::string id = split_id(split, i);
      Rng rng = Rng::stream(config.seed, "didactic/" + id);
      ds.scenes.push_back(generate_episode(config, rng, id));
    }
    return ds;
  };
  out.train = make("train", config.n_train);
  out.val = make("val", config.n_val);
  out.test = make("test", config.n_test);
  return out;
}

bool human_turned(const Scene& scene) {
  const Eigen::Vector2d end = position(scene.future, scene.horizon() - 1, 1);
  return end.y() > end.x();
}

}  // namespace precog
