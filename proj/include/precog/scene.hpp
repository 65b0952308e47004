#pragma once

#include <Eigen/Core>

#include <cmath>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace precog {

using Index = Eigen::Index;

// Ground-plane positions. Rows are time steps; agent a occupies columns
// 2a and 2a + 1.
using Positions =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Vector2d position(const Positions& p, Index t, Index a) {
  return {p(t, 2 * a), p(t, 2 * a + 1)};
}

inline void set_position(Positions& p, Index t, Index a,
                         const Eigen::Vector2d& v) {
  p(t, 2 * a) = v.x();
  p(t, 2 * a + 1) = v.y();
}

inline Eigen::Matrix2d rotation(double yaw) {
  Eigen::Matrix2d r;
  const double c = std::cos(yaw);
  const double s = std::sin(yaw);
  r << c, -s, s, c;
  return r;
}

// Rigid transform taking local coordinates to parent coordinates:
// parent = R(yaw) * local + translation.
struct Pose2 {
  Eigen::Vector2d translation = Eigen::Vector2d::Zero();
  double yaw = 0.0;

  Eigen::Vector2d apply(const Eigen::Vector2d& local) const {
    return rotation(yaw) * local + translation;
  }
  Eigen::Vector2d inverse_apply(const Eigen::Vector2d& parent) const {
    return rotation(yaw).transpose() * (parent - translation);
  }
  // (this ∘ child): child-local -> this-parent.
  Pose2 compose(const Pose2& child) const {
    return {apply(child.translation), yaw + child.yaw};
  }
  Pose2 inverse() const {
    return {-(rotation(yaw).transpose() * translation), -yaw};
  }
};

// Rasterized context. Cell (row i, column j) is centred at
// origin + R(yaw) * resolution * (j, i); data is [height, width, channels].
struct ContextGrid {
  double resolution = 0.5;
  Eigen::Vector2d origin = Eigen::Vector2d::Zero();
  double yaw = 0.0;
  Index width = 0;
  Index height = 0;
  Index channels = 0;
  Eigen::ArrayXd data;

  double& at(Index row, Index col, Index ch) {
    return data[(row * width + col) * channels + ch];
  }
  double at(Index row, Index col, Index ch) const {
    return data[(row * width + col) * channels + ch];
  }
  // Continuous (column, row) coordinates of a scene-frame point.
  Eigen::Vector2d to_grid(const Eigen::Vector2d& p) const {
    return rotation(yaw).transpose() * (p - origin) / resolution;
  }
  Eigen::Vector2d to_world(const Eigen::Vector2d& g) const {
    return rotation(yaw) * (g * resolution) + origin;
  }

  bool operator==(const ContextGrid& o) const;
};

struct Scene {
  std::string scene_id;
  double dt = 1.0;
  Index num_agents = 0;
  Index robot_index = 0;
  std::vector<bool> agent_mask;
  Positions past;    // [tau + 1, 2A], last row is t = 0
  Positions future;  // [T, 2A]
  ContextGrid grid;
  // Maps this scene's coordinates to world coordinates.
  Pose2 frame;

  Index past_steps() const { return past.rows(); }
  Index horizon() const { return future.rows(); }
  Index present_agents() const;
};

struct Dataset {
  std::string split;
  std::vector<Scene> scenes;
};

class SceneError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Throws SceneError naming the scene and offending field.
void validate(const Scene& scene);

nlohmann::json to_json(const Scene& scene);
Scene scene_from_json(const nlohmann::json& j);

Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
std::string to_jsonl_line(const Scene& scene);

// [T, 2A] positions as nested T x A x [x, y] arrays, and back.
nlohmann::json positions_to_json(const Positions& p, Index agents);
Positions positions_from_json(const nlohmann::json& j, const char* field);

// Unit heading from a sequence of positions (oldest first): the last
// displacement, else the earliest non-zero one, else +x.
Eigen::Vector2d heading_from_history(const std::vector<Eigen::Vector2d>& pts);
Eigen::Vector2d agent_heading(const Scene& scene, Index agent);

// Rigidly re-expresses the scene so `agent` sits at the origin at t = 0
// facing +x. The transform is accumulated into scene.frame.
Scene to_local_frame(const Scene& scene, Index agent);
// Undoes every frame change recorded in scene.frame.
Scene to_world_frame(const Scene& scene);

// Euclidean distance (in cells) from every cell to the nearest cell where
// `target` is true; +inf when no target exists.
Eigen::ArrayXXd distance_transform(
    const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& target);

// Per channel: DT(ch >= threshold) - DT(ch < threshold), clipped to
// [-10, 1] and mapped affinely onto [0, 1].
ContextGrid signed_distance_transform(const ContextGrid& grid,
                                      double threshold);

}  // namespace precog
