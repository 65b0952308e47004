#include "test_support.hpp"

#include <fstream>
#include <sstream>

namespace precog::testing {

EspConfig tiny_config(Index agents, Index horizon) {
  EspConfig c;
  c.agents = agents;
  c.horizon = horizon;
  c.grid_channels = 2;
  c.conv_layers = 2;
  c.conv_channels = 3;
  c.feature_channels = 2;
  c.kernel = 3;
  c.past_hidden = 3;
  c.social_hidden = 3;
  c.social_out = 2;
  c.future_hidden = 4;
  c.mlp_hidden = 5;
  return c;
}

EspModel random_model(const EspConfig& config, std::uint64_t seed,
                      double scale) {
  EspModel m = make_model(config, seed);
  Rng rng = Rng::stream(seed, "test-perturb-params");
  m.theta.array() += scale * rng.normals(m.theta.size());
  return m;
}

Scene random_scene(Index agents, Index past_rows, Index horizon, Rng& rng,
                   std::vector<bool> mask) {
  Scene s;
  s.scene_id = "scene-" + std::to_string(rng.next_u64() % 100000);
  s.dt = 0.5;
  s.num_agents = agents;
  s.robot_index = 0;
  s.agent_mask = mask.empty() ? std::vector<bool>(agents, true) : mask;
  s.past = Positions::Zero(past_rows, 2 * agents);
  s.future = Positions::Zero(horizon, 2 * agents);
  for (Index a = 0; a < agents; ++a) {
    if (!s.agent_mask[a]) continue;
    const Eigen::Vector2d start(rng.uniform(-3, 3), rng.uniform(-3, 3));
    const double yaw = rng.uniform(-3.1, 3.1);
    const Eigen::Vector2d v =
        rng.uniform(0.3, 1.0) * Eigen::Vector2d(std::cos(yaw), std::sin(yaw));
    Eigen::Vector2d p = start;
    for (Index t = 0; t < past_rows; ++t) {
      set_position(s.past, t, a, p);
      p += v + 0.05 * Eigen::Vector2d(rng.normal(), rng.normal());
    }
    for (Index t = 0; t < horizon; ++t) {
      set_position(s.future, t, a, p);
      p += v + 0.1 * Eigen::Vector2d(rng.normal(), rng.normal());
    }
  }
  s.grid.resolution = 1.0;
  s.grid.origin = Eigen::Vector2d(-4.0, -4.0);
  s.grid.width = 8;
  s.grid.height = 8;
  s.grid.channels = 2;
  s.grid.data = Eigen::ArrayXd(8 * 8 * 2);
  for (Index i = 0; i < s.grid.data.size(); ++i) {
    s.grid.data[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
  }
  return s;
}

Scene constant_velocity_scene(Index agents, Index past_rows, Index horizon,
                              Index grid_channels) {
  Scene s;
  s.scene_id = "cv";
  s.dt = 0.5;
  s.num_agents = agents;
  s.agent_mask = std::vector<bool>(agents, true);
  s.past = Positions(past_rows, 2 * agents);
  s.future = Positions(horizon, 2 * agents);
  for (Index a = 0; a < agents; ++a) {
    const Eigen::Vector2d start(-5.0 + 3.0 * a, 2.0 * a);
    const Eigen::Vector2d v(0.7, -0.3 + 0.4 * a);
    for (Index t = 0; t < past_rows; ++t) {
      set_position(s.past, t, a, start + static_cast<double>(t) * v);
    }
    for (Index t = 0; t < horizon; ++t) {
      set_position(s.future, t, a,
                   start + static_cast<double>(past_rows + t) * v);
    }
  }
  s.grid.resolution = 1.0;
  s.grid.origin = Eigen::Vector2d(-4.0, -4.0);
  s.grid.width = 6;
  s.grid.height = 6;
  s.grid.channels = grid_channels;
  s.grid.data = Eigen::ArrayXd::Zero(6 * 6 * grid_channels);
  return s;
}

std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("precog-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace precog::testing
