#include "precog/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace precog {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) {
    throw std::invalid_argument("learning_rate must be positive");
  }
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (patience_epochs < 0) {
    throw std::invalid_argument("patience_epochs must be >= 0");
  }
  if (max_epochs < 1) throw std::invalid_argument("max_epochs must be >= 1");
  if (!(noise_std >= 0.0) || !(future_noise_std >= 0.0)) {
    throw std::invalid_argument("noise stds must be >= 0");
  }
  if (!(clip_norm > 0.0)) throw std::invalid_argument("clip_norm must be positive");
  if (!(val_perturb_std > 0.0)) {
    throw std::invalid_argument("val_perturb_std must be positive");
  }
  if (val_scenes < 0) throw std::invalid_argument("val_scenes must be >= 0");
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j = {{"learning_rate", c.learning_rate},
                      {"batch_size", c.batch_size},
                      {"patience_epochs", c.patience_epochs},
                      {"max_epochs", c.max_epochs},
                      {"noise_std", c.noise_std},
                      {"future_noise_std", c.future_noise_std},
                      {"clip_norm", c.clip_norm},
                      {"val_perturb_std", c.val_perturb_std},
                      {"val_scenes", c.val_scenes},
                      {"seed", c.seed}};
  j["max_seconds"] = c.max_seconds ? nlohmann::json(*c.max_seconds) : nullptr;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("learning_rate", c.learning_rate);
  get("batch_size", c.batch_size);
  get("patience_epochs", c.patience_epochs);
  get("max_epochs", c.max_epochs);
  get("noise_std", c.noise_std);
  get("future_noise_std", c.future_noise_std);
  get("clip_norm", c.clip_norm);
  get("val_perturb_std", c.val_perturb_std);
  get("val_scenes", c.val_scenes);
  get("seed", c.seed);
  if (j.contains("max_seconds") && !j.at("max_seconds").is_null()) {
    c.max_seconds = j.at("max_seconds").get<double>();
  }
  c.validate();
  return c;
}

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad,
               AdamState& state, double lr, const AdamOptions& o) {
  if (grad.size() != params.size()) {
    throw std::invalid_argument("adam_step: gradient size differs from params");
  }
  if (state.m.size() != params.size()) {
    state.m = Eigen::VectorXd::Zero(params.size());
    state.v = Eigen::VectorXd::Zero(params.size());
    state.step = 0;
  }
  ++state.step;
  state.m = o.beta1 * state.m + (1.0 - o.beta1) * grad;
  state.v = o.beta2 * state.v + (1.0 - o.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  params.array() -= lr * (state.m.array() / c1) /
                    ((state.v.array() / c2).sqrt() + o.eps);
}

double clip_grad_norm(Eigen::VectorXd& grad, double max_norm) {
  const double norm = grad.norm();
  if (norm > max_norm) grad *= max_norm / norm;
  return norm;
}

namespace {

double scene_dims(const Scene& s) {
  return static_cast<double>(s.horizon() * s.present_agents() * 2);
}

std::string scene_list(const std::vector<const Scene*>& batch) {
  std::string out;
  for (const Scene* s : batch) {
    if (!out.empty()) out += ", ";
    out += s->scene_id;
  }
  return out;
}

// Loss tensor of a batch; the per-scene weights fold in the TAD
// normalisation and the batch mean.
Tensor batch_loss(const EspModel& model, const std::vector<const Scene*>& batch,
                  const FlowBatch& flow, const BoundParams& params) {
  const FlowContext ctx = make_context(flow, model, params);
  std::vector<Positions> futures;
  for (const Scene* s : batch) futures.push_back(s->future);
  const Tensor lp = log_prob_route1(ctx, inverse(ctx, to_steps(futures)));
  Eigen::ArrayXd w(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    w[i] = -1.0 / (scene_dims(*batch[i]) * static_cast<double>(batch.size()));
  }
  return diff::sum(lp * Tensor::constant(w, {static_cast<Index>(w.size())}));
}

}  // namespace

double nll_loss(const EspModel& model, const std::vector<const Scene*>& batch) {
  if (batch.empty()) throw std::invalid_argument("nll_loss: empty batch");
  diff::NoGradGuard guard;
  try {
    const FlowBatch flow = make_batch(batch, model.config);
    return batch_loss(model, batch, flow, bind(model, false)).item();
  } catch (const diff::NumericalError& e) {
    throw diff::NumericalError(std::string(e.what()) + " (scenes " +
                               scene_list(batch) + ")");
  }
}

LossAndGrad nll_loss_and_grad(const EspModel& model,
                              const std::vector<const Scene*>& batch) {
  if (batch.empty()) throw std::invalid_argument("nll_loss: empty batch");
  try {
    const FlowBatch flow = make_batch(batch, model.config);
    const BoundParams params = bind(model, true);
    const Tensor loss = batch_loss(model, batch, flow, params);
    loss.backward();
    return {loss.item(), gather_grad(params, model.layout)};
  } catch (const diff::NumericalError& e) {
    throw diff::NumericalError(std::string(e.what()) + " (scenes " +
                               scene_list(batch) + ")");
  }
}

Scene inject_noise(const Scene& scene, double eps, Rng& rng) {
  if (!(eps >= 0.0)) throw std::invalid_argument("noise std must be >= 0");
  Scene out = scene;
  if (eps == 0.0) return out;
  for (Index t = 0; t < out.past.rows(); ++t) {
    for (Index c = 0; c < out.past.cols(); ++c) {
      const double v = rng.normal(0.0, eps);
      if (scene.agent_mask[c / 2]) out.past(t, c) += v;
    }
  }
  return out;
}

std::string TrainHistory::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "epoch,train_nll,val_e_hat,seconds\n";
  for (const EpochRecord& r : epochs) {
    os << r.epoch << ',' << r.train_nll << ',' << r.val_e_hat << ','
       << r.seconds << '\n';
  }
  return os.str();
}

TrainResult train(const EspModel& initial, const Dataset& train_set,
                  const Dataset& val_set, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.scenes.empty()) throw std::invalid_argument("empty train set");
  if (val_set.scenes.empty()) throw std::invalid_argument("empty val set");

  Dataset val = val_set;
  if (config.val_scenes > 0 &&
      config.val_scenes < static_cast<Index>(val.scenes.size())) {
    val.scenes.resize(config.val_scenes);
  }
  const PerturbSpec val_spec{config.val_perturb_std,
                             Rng::stream(config.seed, "val-perturb").next_u64()};

  Rng shuffle_rng = Rng::stream(config.seed, "train-shuffle");
  Rng perturb_rng = Rng::stream(config.seed, "train-perturb");
  Rng noise_rng = Rng::stream(config.seed, "train-noise");

  TrainResult result{initial, {}};
  EspModel model = initial;
  AdamState adam;
  double best = std::numeric_limits<double>::infinity();
  Index since_best = 0;
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::size_t> order(train_set.scenes.size());
  std::iota(order.begin(), order.end(), 0);

  for (Index epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng.engine());
    double loss_sum = 0.0;
    Index batches = 0;
    for (std::size_t b = 0; b < order.size();
         b += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end =
          std::min(order.size(), b + static_cast<std::size_t>(config.batch_size));
      std::vector<Scene> scenes;
      for (std::size_t i = b; i < end; ++i) {
        Scene s = train_set.scenes[order[i]];
        if (config.future_noise_std > 0.0) {
          s = perturb_future(s, config.future_noise_std, perturb_rng);
        }
        s = inject_noise(s, config.noise_std, noise_rng);
        scenes.push_back(std::move(s));
      }
      std::vector<const Scene*> ptrs;
      for (const Scene& s : scenes) ptrs.push_back(&s);
      LossAndGrad lg = nll_loss_and_grad(model, ptrs);
      if (!std::isfinite(lg.loss) || !lg.grad.allFinite()) {
        throw diff::NumericalError("non-finite loss at epoch " +
                                   std::to_string(epoch) + " (scenes " +
                                   scene_list(ptrs) + ")");
      }
      clip_grad_norm(lg.grad, config.clip_norm);
      adam_step(model.theta, lg.grad, adam, config.learning_rate);
      loss_sum += lg.loss;
      ++batches;
    }
    EpochRecord record;
    record.epoch = epoch;
    record.train_nll = loss_sum / static_cast<double>(batches);
    record.val_e_hat = extra_nats(model, val, val_spec).mean;
    record.seconds = std::chrono::duration<double>(
                         std::chrono::steady_clock::now() - start)
                         .count();
    const bool improved = record.val_e_hat < best;
    if (improved) {
      best = record.val_e_hat;
      result.model = model;
      result.history.best_epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
    }
    result.history.epochs.push_back(record);
    if (on_epoch) on_epoch(record, improved);
    if (since_best >= config.patience_epochs) break;
    if (config.max_seconds && record.seconds >= *config.max_seconds) break;
  }
  return result;
}

}  // namespace precog
