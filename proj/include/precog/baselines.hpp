#pragma once

#include <Eigen/Core>

#include <vector>

#include "precog/metrics.hpp"
#include "precog/rng.hpp"
#include "precog/scene.hpp"

namespace precog {

// Isotropic Gaussian kernel density over whole joint futures, flattened to
// T·A·2 vectors in the robot's frame at t = 0. Context is ignored.
struct KdeModel {
  Eigen::MatrixXd points;  // [n, T·A·2]
  double bandwidth = 1.0;
  Index horizon = 0;
  Index agents = 0;
};

// Flattened future of `x` in the robot frame of `scene`.
Eigen::VectorXd kde_features(const Scene& scene, const Positions& x);
Positions kde_unflatten(const Scene& scene, const Eigen::VectorXd& v);

KdeModel kde_fit(const Dataset& train, double bandwidth);

// Log density of the unmasked coordinates of x.
double kde_log_prob(const KdeModel& model, const Scene& scene,
                    const Positions& x);

// A uniformly chosen training future plus N(0, bandwidth² I), mapped back to
// the scene frame. Masked agents stay at zero.
std::vector<Positions> kde_sample(const KdeModel& model, const Scene& scene,
                                  Index k, Rng& rng);

// 13 log-spaced values from 0.01 to 10.
std::vector<double> default_bandwidths();

// Candidate with the highest mean validation log density; the smallest wins
// ties.
double kde_select_bandwidth(const Dataset& train, const Dataset& val,
                            const std::vector<double>& candidates);

Sampler kde_sampler(const KdeModel& model);
LogDensity kde_log_density(const KdeModel& model);

}  // namespace precog
