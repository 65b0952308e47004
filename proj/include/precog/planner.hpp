#pragma once

#include <Eigen/Core>

#include <memory>
#include <optional>
#include <vector>

#include "json.hpp"
#include "precog/espflow.hpp"
#include "precog/rng.hpp"
#include "precog/scene.hpp"

namespace precog {

struct Goal {
  Eigen::Vector2d target = Eigen::Vector2d::Zero();
  double variance = 0.1;  // m², isotropic

  void validate() const;
};

// log N(x_T^robot; target, variance·I).
double goal_log_likelihood(const Positions& x, const Goal& goal);

struct ObjectiveValue {
  double value = 0.0;
  Positions grad;  // dL̂/dz_r, [T, 2]; empty when not requested
};

// L̂(z_r) = mean over the K human draws of log q(f(z)) + log p(G | f(z)),
// where z joins z_r with each draw. The scene context is prepared once and
// reused for every evaluation.
class PlanObjective {
 public:
  PlanObjective(const EspModel& model, const Scene& scene, const Goal& goal,
                Index k);
  ~PlanObjective();
  PlanObjective(const PlanObjective&) = delete;
  PlanObjective& operator=(const PlanObjective&) = delete;

  Index k() const { return k_; }
  Index horizon() const { return horizon_; }

  // `humans` holds K latents shaped like the scene future; their robot
  // columns are ignored.
  ObjectiveValue evaluate(const Positions& z_r,
                          const std::vector<Positions>& humans,
                          bool with_grad) const;

  std::vector<Positions> draw_humans(Rng& rng) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  Index k_;
  Index horizon_;
};

ObjectiveValue objective_lhat(const EspModel& model, const Scene& scene,
                              const Goal& goal, const Positions& z_r,
                              const std::vector<Positions>& humans,
                              bool with_grad = true);

struct PlanOptions {
  Index k = 12;
  Index init_draws = 15;
  Index patience = 10;
  Index max_iters = 200;
  double step_size = 0.1;
  // Reuse one human batch for every step instead of redrawing.
  bool common_random_numbers = false;

  void validate() const;
};

nlohmann::json to_json(const PlanOptions& options);

struct PlanResult {
  Positions z_r;                        // [T, 2]
  std::vector<double> objective_trace;  // best L̂ so far, per iteration
  double best_objective = 0.0;
  Index iterations_used = 0;
  std::vector<Positions> conditioned_samples;
};

nlohmann::json to_json(const PlanResult& result);

// Gradient ascent on L̂ over the robot latents with Adam.
PlanResult multi_imitative_plan(const EspModel& model, const Scene& scene,
                                const Goal& goal, const PlanOptions& options,
                                Rng& rng);

// Plans, then draws K joint forecasts with the robot latents fixed.
PlanResult precog_forecast(const EspModel& model, const Scene& scene,
                           const Goal& goal, const PlanOptions& options,
                           Rng& rng);

struct ScanCell {
  Eigen::Vector2d position;
  std::optional<double> objective;  // empty when planning failed
  std::string error;
};

// One plan per goal position; cell i draws from rng substream "cell/i".
std::vector<ScanCell> posterior_scan(const EspModel& model, const Scene& scene,
                                     const std::vector<Eigen::Vector2d>& goals,
                                     double variance, const PlanOptions& options,
                                     Rng& rng, std::size_t jobs = 1);

}  // namespace precog
