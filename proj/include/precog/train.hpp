#pragma once

#include <Eigen/Core>

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "precog/espflow.hpp"
#include "precog/metrics.hpp"
#include "precog/rng.hpp"
#include "precog/scene.hpp"

namespace precog {

struct TrainConfig {
  double learning_rate = 1e-4;
  Index batch_size = 10;
  Index patience_epochs = 10;
  Index max_epochs = 1000;
  // Std (metres) of the Gaussian added to past positions each epoch.
  double noise_std = 0.0;
  // Std (metres) of the Gaussian added to expert futures each epoch.
  double future_noise_std = 0.1;
  double clip_norm = 10.0;
  // Validation ê uses this perturbation std with a fixed per-run seed.
  double val_perturb_std = 0.1;
  // Use only the first n validation scenes when positive.
  Index val_scenes = 0;
  // Stop after the first epoch that ends past this many seconds. Wall-clock
  // limits make the epoch count machine dependent.
  std::optional<double> max_seconds;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  Index step = 0;
};

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad,
               AdamState& state, double lr, const AdamOptions& options = {});

// Rescales grad in place so its Euclidean norm is at most max_norm; returns
// the norm before clipping.
double clip_grad_norm(Eigen::VectorXd& grad, double max_norm);

// Mean over scenes of -log q(future | past, grid) / (T·A·D), where A counts
// unmasked agents.
double nll_loss(const EspModel& model, const std::vector<const Scene*>& batch);

struct LossAndGrad {
  double loss = 0.0;
  Eigen::VectorXd grad;
};

LossAndGrad nll_loss_and_grad(const EspModel& model,
                              const std::vector<const Scene*>& batch);

// Adds N(0, eps²) to every unmasked past coordinate.
Scene inject_noise(const Scene& scene, double eps, Rng& rng);

struct EpochRecord {
  Index epoch = 0;
  double train_nll = 0.0;
  double val_e_hat = 0.0;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  Index best_epoch = -1;

  // Columns epoch, train_nll, val_e_hat, seconds.
  std::string to_csv() const;
};

struct TrainResult {
  EspModel model;
  TrainHistory history;
};

using EpochCallback = std::function<void(const EpochRecord&, bool improved)>;

TrainResult train(const EspModel& initial, const Dataset& train_set,
                  const Dataset& val_set, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

}  // namespace precog
