#include "precog/baselines.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace precog {

namespace {

Pose2 robot_pose(const Scene& scene) {
  const Eigen::Vector2d h = agent_heading(scene, scene.robot_index);
  return {position(scene.past, scene.past_steps() - 1, scene.robot_index),
          std::atan2(h.y(), h.x())};
}

// log mean_i exp(-d2_i / (2 bw²)) - dims/2 log(2π bw²).
double mixture_log_density(const Eigen::VectorXd& d2, double bandwidth,
                           double dims) {
  const double inv = -0.5 / (bandwidth * bandwidth);
  const double peak = d2.minCoeff() * inv;
  const double s = ((d2.array() * inv) - peak).exp().sum();
  return peak + std::log(s) - std::log(static_cast<double>(d2.size())) -
         0.5 * dims * std::log(2.0 * std::numbers::pi * bandwidth * bandwidth);
}

Eigen::VectorXd present_columns(const Scene& scene, Index horizon) {
  Eigen::VectorXd keep(horizon * scene.num_agents * 2);
  for (Index t = 0; t < horizon; ++t) {
    for (Index c = 0; c < 2 * scene.num_agents; ++c) {
      keep[t * 2 * scene.num_agents + c] = scene.agent_mask[c / 2] ? 1.0 : 0.0;
    }
  }
  return keep;
}

Eigen::VectorXd squared_distances(const KdeModel& model,
                                  const Eigen::VectorXd& q,
                                  const Eigen::VectorXd& keep) {
  return ((model.points.rowwise() - q.transpose()).array().square().rowwise() *
          keep.transpose().array())
      .rowwise()
      .sum();
}

}  // namespace

Eigen::VectorXd kde_features(const Scene& scene, const Positions& x) {
  const Pose2 pose = robot_pose(scene);
  Eigen::VectorXd v(x.size());
  for (Index t = 0; t < x.rows(); ++t) {
    for (Index a = 0; a < scene.num_agents; ++a) {
      const Eigen::Vector2d p = scene.agent_mask[a]
                                    ? pose.inverse_apply(position(x, t, a))
                                    : Eigen::Vector2d::Zero();
      v[t * x.cols() + 2 * a] = p.x();
      v[t * x.cols() + 2 * a + 1] = p.y();
    }
  }
  return v;
}

Positions kde_unflatten(const Scene& scene, const Eigen::VectorXd& v) {
  const Pose2 pose = robot_pose(scene);
  const Index cols = 2 * scene.num_agents;
  Positions x = Positions::Zero(v.size() / cols, cols);
  for (Index t = 0; t < x.rows(); ++t) {
    for (Index a = 0; a < scene.num_agents; ++a) {
      if (!scene.agent_mask[a]) continue;
      set_position(x, t, a,
                   pose.apply({v[t * cols + 2 * a], v[t * cols + 2 * a + 1]}));
    }
  }
  return x;
}

KdeModel kde_fit(const Dataset& train, double bandwidth) {
  if (train.scenes.empty()) throw std::invalid_argument("kde_fit: no scenes");
  if (!(bandwidth > 0.0)) throw std::invalid_argument("kde_fit: bandwidth <= 0");
  KdeModel m;
  m.bandwidth = bandwidth;
  m.horizon = train.scenes.front().horizon();
  m.agents = train.scenes.front().num_agents;
  m.points.resize(static_cast<Index>(train.scenes.size()),
                  m.horizon * m.agents * 2);
  for (std::size_t i = 0; i < train.scenes.size(); ++i) {
    const Scene& s = train.scenes[i];
    if (s.horizon() != m.horizon || s.num_agents != m.agents) {
      throw std::invalid_argument("kde_fit: scene " + s.scene_id +
                                  " has a different future shape");
    }
    m.points.row(static_cast<Index>(i)) = kde_features(s, s.future).transpose();
  }
  return m;
}

double kde_log_prob(const KdeModel& model, const Scene& scene,
                    const Positions& x) {
  if (x.size() != model.points.cols()) {
    throw std::invalid_argument("kde_log_prob: trajectory shape mismatch");
  }
  const Eigen::VectorXd keep = present_columns(scene, x.rows());
  return mixture_log_density(
      squared_distances(model, kde_features(scene, x), keep), model.bandwidth,
      keep.sum());
}

std::vector<Positions> kde_sample(const KdeModel& model, const Scene& scene,
                                  Index k, Rng& rng) {
  std::vector<Positions> out;
  for (Index i = 0; i < k; ++i) {
    const auto row = static_cast<Index>(
        rng.index(static_cast<std::size_t>(model.points.rows())));
    Eigen::VectorXd v = model.points.row(row).transpose();
    v.array() += model.bandwidth * rng.normals(v.size());
    out.push_back(kde_unflatten(scene, v));
  }
  return out;
}

std::vector<double> default_bandwidths() {
  std::vector<double> out;
  for (int i = 0; i < 13; ++i) {
    out.push_back(std::pow(10.0, -2.0 + 3.0 * i / 12.0));
  }
  return out;
}

double kde_select_bandwidth(const Dataset& train, const Dataset& val,
                            const std::vector<double>& candidates) {
  if (candidates.empty()) {
    throw std::invalid_argument("kde_select_bandwidth: no candidates");
  }
  if (val.scenes.empty()) {
    throw std::invalid_argument("kde_select_bandwidth: empty validation set");
  }
  const KdeModel model = kde_fit(train, candidates.front());
  std::vector<Eigen::VectorXd> d2;
  std::vector<double> dims;
  for (const Scene& s : val.scenes) {
    const Eigen::VectorXd keep = present_columns(s, s.horizon());
    d2.push_back(squared_distances(model, kde_features(s, s.future), keep));
    dims.push_back(keep.sum());
  }
  double best_bw = candidates.front();
  double best = -std::numeric_limits<double>::infinity();
  for (double bw : candidates) {
    if (!(bw > 0.0)) throw std::invalid_argument("bandwidth candidates must be > 0");
    double total = 0.0;
    for (std::size_t i = 0; i < d2.size(); ++i) {
      total += mixture_log_density(d2[i], bw, dims[i]);
    }
    const double mean = total / static_cast<double>(d2.size());
    if (mean > best || (mean == best && bw < best_bw)) {
      best = mean;
      best_bw = bw;
    }
  }
  return best_bw;
}

Sampler kde_sampler(const KdeModel& model) {
  return [&model](const Scene& scene, Index k, Rng& rng) {
    return kde_sample(model, scene, k, rng);
  };
}

LogDensity kde_log_density(const KdeModel& model) {
  return [&model](const Scene& scene, const Positions& x) {
    return kde_log_prob(model, scene, x);
  };
}

}  // namespace precog
