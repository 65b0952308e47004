#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "precog/espflow.hpp"
#include "precog/rng.hpp"
#include "precog/scene.hpp"

namespace precog {

struct PerturbSpec {
  double std = 0.1;  // metres; η = N(0, std² I)
  std::uint64_t seed = 0;
};

struct Estimate {
  double mean = 0.0;
  double std_error = 0.0;
};

// Mean and standard error of the mean.
Estimate summarize(const std::vector<double>& values);

// Differential entropy per dimension of N(0, std² I).
double perturbation_entropy_per_dim(double std);

// Adds iid N(0, std²) noise to every unmasked future coordinate.
Scene perturb_future(const Scene& scene, double std, Rng& rng);
// The evaluation perturbation of one scene: seeded by (spec.seed, scene_id)
// so every model sees identical noise.
Scene eval_perturbation(const Scene& scene, const PerturbSpec& spec);

// log q(future | past, grid) for every scene, batched.
std::vector<double> scene_log_probs(const EspModel& model,
                                    const std::vector<const Scene*>& scenes,
                                    std::size_t jobs = 1);

using LogDensity = std::function<double(const Scene&, const Positions&)>;

// Per-scene extra nats; the estimate is over scenes.
std::vector<double> extra_nats_per_scene(const EspModel& model,
                                         const Dataset& data,
                                         const PerturbSpec& spec,
                                         std::size_t jobs = 1);
Estimate extra_nats(const EspModel& model, const Dataset& data,
                    const PerturbSpec& spec, std::size_t jobs = 1);
Estimate extra_nats(const LogDensity& log_q, const Dataset& data,
                    const PerturbSpec& spec);

struct MinMsd {
  double value = 0.0;
  Index best = 0;  // k†, lowest index on ties
};

MinMsd min_msd(const std::vector<Positions>& samples, const Positions& gt,
               const std::vector<bool>& mask);
// Squared error of the joint winner k† per agent, normalised by T only.
// Masked agents report zero.
Eigen::VectorXd per_agent_min_msd(const std::vector<Positions>& samples,
                                  const Positions& gt,
                                  const std::vector<bool>& mask);

// Whether any pair of unmasked agents comes closer than `threshold`.
bool crashes(const Positions& x, const std::vector<bool>& mask,
             double threshold);
double crash_rate(const std::vector<std::vector<Positions>>& samples,
                  const std::vector<std::vector<bool>>& masks,
                  double threshold);

struct MetricReport {
  std::string model;
  Index scenes = 0;
  Index k = 0;
  Estimate e_hat;
  bool e_hat_suspicious = false;  // below -3 standard errors
  Estimate m_hat;
  std::vector<Estimate> per_agent_m_hat;
  double crash_rate = 0.0;
  double crash_threshold = 1.0;
};

nlohmann::json to_json(const MetricReport& report);
std::string metric_csv_header();
std::string metric_csv_row(const MetricReport& report);

// Samples for a scene; used to evaluate any forecaster uniformly.
using Sampler =
    std::function<std::vector<Positions>(const Scene&, Index k, Rng& rng)>;

// Joint samples from the flow's prior.
Sampler esp_sampler(const EspModel& model);

struct SampleMetrics {
  Estimate m_hat;
  std::vector<Estimate> per_agent;
  double crash_rate = 0.0;
};

// m̂_K, per-agent m̂_K and crash rate over a dataset. Scene i draws from
// Rng::stream(seed, "sampling/" + scene_id).
SampleMetrics sample_metrics(const Sampler& sampler, const Dataset& data,
                             Index k, double crash_threshold,
                             std::uint64_t seed, std::size_t jobs = 1);

// m̂_K for nested prefixes of one K_max sample set per scene.
std::vector<Estimate> min_msd_curve(const Sampler& sampler,
                                    const Dataset& data,
                                    const std::vector<Index>& ks,
                                    std::uint64_t seed,
                                    std::size_t jobs = 1);

}  // namespace precog
