#include "precog/scene.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_set>

namespace precog {

namespace {

using json = nlohmann::json;

[[noreturn]] void fail(const Scene& s, const std::string& field,
                       const std::string& what) {
  throw SceneError("scene '" + s.scene_id + "' field '" + field + "': " + what);
}

// Squared-distance transform of a sampled function along one line.
void edt_1d(const std::vector<double>& f, std::vector<double>& d) {
  const int n = static_cast<int>(f.size());
  std::vector<int> v(n);
  std::vector<double> z(n + 1);
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  auto intersect = [&](int q, int p) {
    return ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * (q - p));
  };
  for (int q = 1; q < n; ++q) {
    double s = intersect(q, v[k]);
    while (s <= z[k]) {
      --k;
      s = intersect(q, v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}

}  // namespace

json positions_to_json(const Positions& p, Index agents) {
  json out = json::array();
  for (Index t = 0; t < p.rows(); ++t) {
    json row = json::array();
    for (Index a = 0; a < agents; ++a) {
      row.push_back({p(t, 2 * a), p(t, 2 * a + 1)});
    }
    out.push_back(std::move(row));
  }
  return out;
}

Positions positions_from_json(const json& j, const char* field) {
  if (!j.is_array()) {
    throw std::invalid_argument(std::string(field) + " must be an array");
  }
  const Index steps = static_cast<Index>(j.size());
  const Index agents = steps > 0 ? static_cast<Index>(j[0].size()) : 0;
  Positions p(steps, 2 * agents);
  for (Index t = 0; t < steps; ++t) {
    const json& row = j[t];
    if (static_cast<Index>(row.size()) != agents) {
      throw std::invalid_argument(std::string(field) +
                                  " rows have inconsistent agent counts");
    }
    for (Index a = 0; a < agents; ++a) {
      const json& xy = row[a];
      if (!xy.is_array() || xy.size() != 2) {
        throw std::invalid_argument(std::string(field) +
                                    " entries must be [x, y] pairs");
      }
      p(t, 2 * a) = xy[0].get<double>();
      p(t, 2 * a + 1) = xy[1].get<double>();
    }
  }
  return p;
}

bool ContextGrid::operator==(const ContextGrid& o) const {
  return resolution == o.resolution && origin == o.origin && yaw == o.yaw &&
         width == o.width && height == o.height && channels == o.channels &&
         data.size() == o.data.size() && (data == o.data).all();
}

Index Scene::present_agents() const {
  return std::count(agent_mask.begin(), agent_mask.end(), true);
}

void validate(const Scene& s) {
  if (s.num_agents <= 0) fail(s, "num_agents", "must be positive");
  if (s.robot_index != 0) fail(s, "robot_index", "must be 0");
  if (!(s.dt > 0.0) || !std::isfinite(s.dt)) fail(s, "dt", "must be positive");
  if (static_cast<Index>(s.agent_mask.size()) != s.num_agents) {
    fail(s, "agent_mask", "length " + std::to_string(s.agent_mask.size()) +
                              " != num_agents " + std::to_string(s.num_agents));
  }
  if (!s.agent_mask[0]) fail(s, "agent_mask", "robot agent must be present");
  if (s.past.rows() < 2) fail(s, "past", "past length < 2");
  if (s.past.cols() != 2 * s.num_agents) {
    fail(s, "past", "expected " + std::to_string(s.num_agents) + " agents");
  }
  if (s.future.rows() > 0 && s.future.cols() != 2 * s.num_agents) {
    fail(s, "future", "expected " + std::to_string(s.num_agents) + " agents");
  }
  if (!s.past.allFinite()) fail(s, "past", "non-finite position");
  if (!s.future.allFinite()) fail(s, "future", "non-finite position");
  for (Index a = 0; a < s.num_agents; ++a) {
    if (s.agent_mask[a]) continue;
    const bool zero_past = s.past.middleCols(2 * a, 2).isZero(0.0);
    const bool zero_future =
        s.future.rows() == 0 || s.future.middleCols(2 * a, 2).isZero(0.0);
    if (!zero_past || !zero_future) {
      fail(s, "agent_mask",
           "masked agent " + std::to_string(a) + " has non-zero positions");
    }
  }
  const ContextGrid& g = s.grid;
  if (!(g.resolution > 0.0)) fail(s, "grid.resolution", "must be positive");
  if (g.width < 0 || g.height < 0 || g.channels < 0) {
    fail(s, "grid", "negative extent");
  }
  if (g.data.size() != g.width * g.height * g.channels) {
    fail(s, "grid.data", "size does not match height x width x channels");
  }
  if (!g.data.allFinite() || (g.data < 0.0).any()) {
    fail(s, "grid.data", "values must be finite and non-negative");
  }
}

json to_json(const Scene& s) {
  json grid = {{"resolution", s.grid.resolution},
               {"origin", {s.grid.origin.x(), s.grid.origin.y()}},
               {"width", s.grid.width},
               {"height", s.grid.height},
               {"channels", s.grid.channels}};
  if (s.grid.yaw != 0.0) grid["yaw"] = s.grid.yaw;
  json data = json::array();
  for (Index r = 0; r < s.grid.height; ++r) {
    json row = json::array();
    for (Index c = 0; c < s.grid.width; ++c) {
      json cell = json::array();
      for (Index ch = 0; ch < s.grid.channels; ++ch) {
        cell.push_back(s.grid.at(r, c, ch));
      }
      row.push_back(std::move(cell));
    }
    data.push_back(std::move(row));
  }
  grid["data"] = std::move(data);

  json j = {{"scene_id", s.scene_id},
            {"dt", s.dt},
            {"num_agents", s.num_agents},
            {"robot_index", s.robot_index},
            {"agent_mask", s.agent_mask},
            {"past", positions_to_json(s.past, s.num_agents)},
            {"future", positions_to_json(s.future, s.num_agents)},
            {"grid", std::move(grid)}};
  if (s.frame.yaw != 0.0 || !s.frame.translation.isZero(0.0)) {
    j["frame"] = {
        {"translation", {s.frame.translation.x(), s.frame.translation.y()}},
        {"yaw", s.frame.yaw}};
  }
  return j;
}

Scene scene_from_json(const json& j) {
  Scene s;
  s.scene_id = j.at("scene_id").get<std::string>();
  s.dt = j.at("dt").get<double>();
  s.num_agents = j.at("num_agents").get<Index>();
  s.robot_index = j.at("robot_index").get<Index>();
  s.agent_mask = j.at("agent_mask").get<std::vector<bool>>();
  s.past = positions_from_json(j.at("past"), "past");
  s.future = positions_from_json(j.at("future"), "future");
  if (s.future.rows() == 0) s.future.resize(0, 2 * s.num_agents);

  const json& g = j.at("grid");
  s.grid.resolution = g.at("resolution").get<double>();
  s.grid.origin = {g.at("origin")[0].get<double>(),
                   g.at("origin")[1].get<double>()};
  s.grid.yaw = g.value("yaw", 0.0);
  s.grid.width = g.at("width").get<Index>();
  s.grid.height = g.at("height").get<Index>();
  s.grid.channels = g.at("channels").get<Index>();
  s.grid.data.resize(s.grid.width * s.grid.height * s.grid.channels);
  const json& data = g.at("data");
  if (static_cast<Index>(data.size()) != s.grid.height) {
    throw SceneError("scene '" + s.scene_id +
                     "' field 'grid.data': row count != height");
  }
  for (Index r = 0; r < s.grid.height; ++r) {
    const json& row = data[r];
    if (static_cast<Index>(row.size()) != s.grid.width) {
      throw SceneError("scene '" + s.scene_id +
                       "' field 'grid.data': column count != width");
    }
    for (Index c = 0; c < s.grid.width; ++c) {
      const json& cell = row[c];
      if (static_cast<Index>(cell.size()) != s.grid.channels) {
        throw SceneError("scene '" + s.scene_id +
                         "' field 'grid.data': channel count mismatch");
      }
      for (Index ch = 0; ch < s.grid.channels; ++ch) {
        s.grid.at(r, c, ch) = cell[ch].get<double>();
      }
    }
  }
  if (j.contains("frame")) {
    const json& f = j["frame"];
    s.frame.translation = {f.at("translation")[0].get<double>(),
                           f.at("translation")[1].get<double>()};
    s.frame.yaw = f.at("yaw").get<double>();
  }
  validate(s);
  return s;
}

std::string to_jsonl_line(const Scene& scene) { return to_json(scene).dump(); }

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  Dataset ds;
  ds.split = path.stem().string();
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(e.what(), lineno);
    }
    Scene s;
    try {
      s = scene_from_json(j);
    } catch (const SceneError&) {
      throw;
    } catch (const std::exception& e) {
      throw ParseError(e.what(), lineno);
    }
    if (!ids.insert(s.scene_id).second) {
      throw SceneError("scene '" + s.scene_id +
                       "' field 'scene_id': duplicate within split");
    }
    ds.scenes.push_back(std::move(s));
  }
  return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write dataset " + path.string());
  for (const Scene& s : dataset.scenes) out << to_jsonl_line(s) << '\n';
}

Eigen::Vector2d heading_from_history(const std::vector<Eigen::Vector2d>& pts) {
  const std::size_t n = pts.size();
  if (n >= 2) {
    const Eigen::Vector2d last = pts[n - 1] - pts[n - 2];
    if (last.norm() > 0.0) return last.normalized();
    for (std::size_t i = 1; i < n; ++i) {
      const Eigen::Vector2d d = pts[i] - pts[i - 1];
      if (d.norm() > 0.0) return d.normalized();
    }
  }
  return Eigen::Vector2d::UnitX();
}

Eigen::Vector2d agent_heading(const Scene& scene, Index agent) {
  std::vector<Eigen::Vector2d> pts;
  for (Index t = 0; t < scene.past.rows(); ++t) {
    pts.push_back(position(scene.past, t, agent));
  }
  return heading_from_history(pts);
}

namespace {

Scene transformed(const Scene& scene, const Pose2& new_from_old) {
  Scene out = scene;
  auto map_rows = [&](Positions& p) {
    for (Index t = 0; t < p.rows(); ++t) {
      for (Index a = 0; a < scene.num_agents; ++a) {
        if (!scene.agent_mask[a]) continue;
        set_position(p, t, a, new_from_old.apply(position(p, t, a)));
      }
    }
  };
  map_rows(out.past);
  map_rows(out.future);
  out.grid.origin = new_from_old.apply(scene.grid.origin);
  out.grid.yaw = scene.grid.yaw + new_from_old.yaw;
  out.frame = scene.frame.compose(new_from_old.inverse());
  return out;
}

}  // namespace

Scene to_local_frame(const Scene& scene, Index agent) {
  const Eigen::Vector2d h = agent_heading(scene, agent);
  const Pose2 old_from_local{position(scene.past, scene.past.rows() - 1, agent),
                             std::atan2(h.y(), h.x())};
  return transformed(scene, old_from_local.inverse());
}

Scene to_world_frame(const Scene& scene) {
  Scene out = transformed(scene, scene.frame);
  out.frame = Pose2{};
  return out;
}

Eigen::ArrayXXd distance_transform(
    const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& target) {
  const Index rows = target.rows();
  const Index cols = target.cols();
  Eigen::ArrayXXd out(rows, cols);
  if (!target.any()) {
    out.setConstant(std::numeric_limits<double>::infinity());
    return out;
  }
  constexpr double kFar = 1e20;
  Eigen::ArrayXXd sq(rows, cols);
  std::vector<double> f;
  std::vector<double> d;
  f.resize(rows);
  d.resize(rows);
  for (Index c = 0; c < cols; ++c) {
    for (Index r = 0; r < rows; ++r) f[r] = target(r, c) ? 0.0 : kFar;
    edt_1d(f, d);
    for (Index r = 0; r < rows; ++r) sq(r, c) = d[r];
  }
  f.resize(cols);
  d.resize(cols);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) f[c] = sq(r, c);
    edt_1d(f, d);
    for (Index c = 0; c < cols; ++c) out(r, c) = std::sqrt(d[c]);
  }
  return out;
}

ContextGrid signed_distance_transform(const ContextGrid& grid,
                                      double threshold) {
  constexpr double kLow = -10.0;
  constexpr double kHigh = 1.0;
  ContextGrid out = grid;
  using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;
  for (Index ch = 0; ch < grid.channels; ++ch) {
    Mask above(grid.height, grid.width);
    for (Index r = 0; r < grid.height; ++r) {
      for (Index c = 0; c < grid.width; ++c) {
        above(r, c) = grid.at(r, c, ch) >= threshold;
      }
    }
    const Mask below = !above;
    // DT(above) measures how far an above cell is from the nearest below
    // cell; a side with no counterpart counts as the clip magnitude.
    Eigen::ArrayXXd dt_above = distance_transform(below);
    Eigen::ArrayXXd dt_below = distance_transform(above);
    const double cap = -kLow;
    dt_above = dt_above.min(cap);
    dt_below = dt_below.min(cap);
    for (Index r = 0; r < grid.height; ++r) {
      for (Index c = 0; c < grid.width; ++c) {
        const double v = std::clamp(dt_above(r, c) - dt_below(r, c), kLow, kHigh);
        out.at(r, c, ch) = (v - kLow) / (kHigh - kLow);
      }
    }
  }
  return out;
}

}  // namespace precog
