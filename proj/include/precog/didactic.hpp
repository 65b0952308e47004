#pragma once

#include <optional>
#include <string>

#include "json.hpp"
#include "precog/rng.hpp"
#include "precog/scene.hpp"

namespace precog {

// Procedural two-agent intersection. The human (agent 1) drives east along
// the horizontal lane, reveals its choice after a few straight steps and
// either continues or turns left into the vertical lane. The robot (agent 0)
// drives north along the vertical lane; when the human turns into its lane
// the robot gives way by turning right onto the horizontal lane.
struct DidacticConfig {
  Index horizon = 20;
  Index past_steps = 4;
  double dt = 0.5;
  double turn_probability = 0.5;
  Index straight_steps_before_reveal = 4;
  double human_speed = 1.0;       // m/step until the reveal
  double human_turn_speed = 0.6;  // m/step after the reveal
  double robot_speed = 1.2;
  double human_start_x = -6.0;    // human position at t = 0 is (x, 0)
  double robot_start_y = -15.5;   // robot position at t = 0 is (0, y)
  double robot_turn_y = -2.0;
  double turn_radius = 2.0;
  // Per-episode geometric variation.
  double scale_min = 0.8;
  double scale_max = 1.2;
  double lateral_offset = 0.3;
  double jitter_std = 0.02;
  // Context grid.
  double lane_width = 4.0;
  Index grid_size = 64;
  double resolution = 0.5;
  Index n_train = 3000;
  Index n_val = 500;
  Index n_test = 1000;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const DidacticConfig& config);
DidacticConfig didactic_config_from_json(const nlohmann::json& j);

ContextGrid didactic_grid(const DidacticConfig& config);

// `force_turn` pins the human's choice instead of drawing it.
Scene generate_episode(const DidacticConfig& config, Rng& rng,
                       const std::string& scene_id,
                       std::optional<bool> force_turn = std::nullopt);

struct DidacticSplits {
  Dataset train;
  Dataset val;
  Dataset test;
};

DidacticSplits generate_dataset(const DidacticConfig& config);

// Whether the human of a generated episode turned, judged by its endpoint.
bool human_turned(const Scene& scene);

}  // namespace precog
