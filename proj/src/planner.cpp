#include "precog/planner.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "precog/parallel.hpp"
#include "precog/train.hpp"

namespace precog {

using diff::NumericalError;

void Goal::validate() const {
  if (!(variance > 0.0)) throw std::invalid_argument("goal variance must be > 0");
  if (!target.allFinite()) throw std::invalid_argument("goal target must be finite");
}

double goal_log_likelihood(const Positions& x, const Goal& goal) {
  goal.validate();
  const Eigen::Vector2d end = position(x, x.rows() - 1, 0);
  return -(end - goal.target).squaredNorm() / (2.0 * goal.variance) -
         std::log(2.0 * std::numbers::pi * goal.variance);
}

struct PlanObjective::Impl {
  const EspModel* model = nullptr;
  Scene scene;
  Goal goal;
  FlowBatch batch;
  FlowContext ctx;
  Tensor robot_select;  // [N, 2], ones on robot rows
  Tensor pick_robot;    // [K, N]
};

PlanObjective::PlanObjective(const EspModel& model, const Scene& scene,
                             const Goal& goal, Index k)
    : impl_(std::make_unique<Impl>()), k_(k) {
  if (k < 1) throw std::invalid_argument("plan objective: K must be >= 1");
  goal.validate();
  horizon_ = scene.horizon() > 0 ? scene.horizon() : model.config.horizon;
  impl_->model = &model;
  impl_->scene = scene;
  impl_->goal = goal;
  impl_->batch = make_batch(
      std::vector<const Scene*>(static_cast<std::size_t>(k), &impl_->scene),
      model.config);
  {
    diff::NoGradGuard guard;
    impl_->ctx = make_context(impl_->batch, model, bind(model, false));
  }
  const Index a = model.config.agents;
  const Index n = k * a;
  RowMatrix sel = RowMatrix::Zero(n, 2);
  RowMatrix pick = RowMatrix::Zero(k, n);
  for (Index i = 0; i < k; ++i) {
    sel.row(i * a).setOnes();
    pick(i, i * a) = 1.0;
  }
  impl_->robot_select = Tensor::constant(sel);
  impl_->pick_robot = Tensor::constant(pick);
}

PlanObjective::~PlanObjective() = default;

std::vector<Positions> PlanObjective::draw_humans(Rng& rng) const {
  std::vector<Positions> out;
  for (Index i = 0; i < k_; ++i) {
    out.push_back(draw_latents(impl_->scene, horizon_, rng));
  }
  return out;
}

ObjectiveValue PlanObjective::evaluate(const Positions& z_r,
                                       const std::vector<Positions>& humans,
                                       bool with_grad) const {
  if (z_r.rows() != horizon_ || z_r.cols() != 2) {
    throw std::invalid_argument("plan objective: z_r must be [T, 2]");
  }
  if (static_cast<Index>(humans.size()) != k_) {
    throw std::invalid_argument("plan objective: expected K human latents");
  }
  std::optional<diff::NoGradGuard> guard;
  if (!with_grad) guard.emplace();
  const Impl& m = *impl_;
  std::vector<Positions> others = humans;
  for (Positions& h : others) h.leftCols(2).setZero();
  const std::vector<Tensor> fixed = to_steps(others);
  const Tensor zr = Tensor::parameter(
      Eigen::Map<const Eigen::ArrayXd>(z_r.data(), z_r.size()), {horizon_, 2});
  const Index n = m.batch.rows();
  std::vector<Tensor> z;
  for (Index t = 0; t < horizon_; ++t) {
    const Tensor row = diff::reshape(diff::slice(zr, 0, t, t + 1), {2});
    z.push_back(fixed[t] + m.robot_select * diff::broadcast(row, n));
  }
  const FlowTrace trace = forward_rollout(m.ctx, z);
  const Tensor prior = log_prob_route2(m.ctx, trace);
  const Tensor end = diff::matmul(m.pick_robot, trace.x.back());
  const Tensor target = Tensor::constant(
      Eigen::ArrayXd(Eigen::Map<const Eigen::ArrayXd>(m.goal.target.data(), 2)),
      {2});
  const Tensor sq = diff::matmul(
      diff::square(end - target),
      Tensor::constant(Eigen::ArrayXd::Ones(2), {2, 1}));
  const Tensor goal_ll = diff::add_scalar(
      diff::reshape(sq, {k_}) * (-0.5 / m.goal.variance),
      -std::log(2.0 * std::numbers::pi * m.goal.variance));
  const Tensor lhat = diff::mean(prior + goal_ll);
  ObjectiveValue out;
  out.value = lhat.item();
  if (with_grad) {
    lhat.backward();
    const Eigen::ArrayXd g = zr.grad();
    out.grad = Eigen::Map<const Positions>(g.data(), horizon_, 2);
  }
  return out;
}

ObjectiveValue objective_lhat(const EspModel& model, const Scene& scene,
                              const Goal& goal, const Positions& z_r,
                              const std::vector<Positions>& humans,
                              bool with_grad) {
  const PlanObjective objective(model, scene, goal,
                                static_cast<Index>(humans.size()));
  return objective.evaluate(z_r, humans, with_grad);
}

void PlanOptions::validate() const {
  if (k < 1) throw std::invalid_argument("plan: K must be >= 1");
  if (init_draws < 1) throw std::invalid_argument("plan: init_draws must be >= 1");
  if (patience < 1) throw std::invalid_argument("plan: patience must be >= 1");
  if (max_iters < 0) throw std::invalid_argument("plan: max_iters must be >= 0");
  if (!(step_size > 0.0)) throw std::invalid_argument("plan: step_size must be > 0");
}

nlohmann::json to_json(const PlanOptions& o) {
  return {{"k", o.k},
          {"init_draws", o.init_draws},
          {"patience", o.patience},
          {"max_iters", o.max_iters},
          {"step_size", o.step_size},
          {"common_random_numbers", o.common_random_numbers}};
}

namespace {

nlohmann::json matrix_json(const Positions& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index t = 0; t < m.rows(); ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (Index c = 0; c < m.cols(); ++c) row.push_back(m(t, c));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

nlohmann::json to_json(const PlanResult& r) {
  nlohmann::json samples = nlohmann::json::array();
  for (const Positions& x : r.conditioned_samples) {
    samples.push_back(positions_to_json(x, x.cols() / 2));
  }
  return {{"z_r", matrix_json(r.z_r)},
          {"objective_trace", r.objective_trace},
          {"best_objective", r.best_objective},
          {"iterations_used", r.iterations_used},
          {"conditioned_samples", samples}};
}

PlanResult multi_imitative_plan(const EspModel& model, const Scene& scene,
                                const Goal& goal, const PlanOptions& options,
                                Rng& rng) {
  options.validate();
  const PlanObjective objective(model, scene, goal, options.k);
  const Index horizon = objective.horizon();
  PlanResult result;

  // Initialise from the best of several joint prior draws.
  const std::vector<Positions> init_humans = objective.draw_humans(rng);
  double best = -std::numeric_limits<double>::infinity();
  Positions best_z;
  for (Index i = 0; i < options.init_draws; ++i) {
    const Positions cand = draw_latents(scene, horizon, rng).leftCols(2);
    double v = -std::numeric_limits<double>::infinity();
    try {
      v = objective.evaluate(cand, init_humans, false).value;
    } catch (const NumericalError&) {
    }
    if (std::isfinite(v) && (best_z.size() == 0 || v > best)) {
      best = v;
      best_z = cand;
    }
  }
  if (best_z.size() == 0) {
    throw NumericalError("plan: every initial draw gave a non-finite objective");
  }

  Positions z = best_z;
  Eigen::VectorXd flat = Eigen::Map<const Eigen::VectorXd>(z.data(), z.size());
  AdamState adam;
  double step = options.step_size;
  bool reset_used = false;
  Index since_best = 0;
  std::vector<Positions> humans = init_humans;
  Index iter = 0;
  for (; iter < options.max_iters && since_best < options.patience; ++iter) {
    if (!options.common_random_numbers) humans = objective.draw_humans(rng);
    ObjectiveValue ov;
    bool finite = true;
    try {
      ov = objective.evaluate(z, humans, true);
      finite = std::isfinite(ov.value) && ov.grad.allFinite();
    } catch (const NumericalError&) {
      finite = false;
    }
    if (!finite) {
      if (reset_used) {
        throw NumericalError("plan: objective diverged after step-size reset");
      }
      reset_used = true;
      step *= 0.5;
      adam = AdamState{};
      z = best_z;
      flat = Eigen::Map<const Eigen::VectorXd>(z.data(), z.size());
      result.objective_trace.push_back(best);
      ++since_best;
      continue;
    }
    if (ov.value > best) {
      best = ov.value;
      best_z = z;
      since_best = 0;
    } else {
      ++since_best;
    }
    result.objective_trace.push_back(best);
    const Eigen::VectorXd g =
        -Eigen::Map<const Eigen::VectorXd>(ov.grad.data(), ov.grad.size());
    adam_step(flat, g, adam, step);
    z = Eigen::Map<const Positions>(flat.data(), horizon, 2);
  }
  result.z_r = best_z;
  result.best_objective = best;
  result.iterations_used = iter;
  return result;
}

PlanResult precog_forecast(const EspModel& model, const Scene& scene,
                           const Goal& goal, const PlanOptions& options,
                           Rng& rng) {
  PlanResult result = multi_imitative_plan(model, scene, goal, options, rng);
  result.conditioned_samples =
      conditional_sample(model, scene, result.z_r, options.k, rng).x;
  return result;
}

std::vector<ScanCell> posterior_scan(const EspModel& model, const Scene& scene,
                                     const std::vector<Eigen::Vector2d>& goals,
                                     double variance, const PlanOptions& options,
                                     Rng& rng, std::size_t jobs) {
  if (goals.empty()) throw std::invalid_argument("posterior_scan: empty grid");
  std::vector<Rng> streams;
  for (std::size_t i = 0; i < goals.size(); ++i) {
    streams.push_back(rng.substream("cell/" + std::to_string(i)));
  }
  std::vector<ScanCell> cells(goals.size());
  parallel_for(goals.size(), jobs, [&](std::size_t i) {
    cells[i].position = goals[i];
    try {
      const PlanResult r = multi_imitative_plan(
          model, scene, Goal{goals[i], variance}, options, streams[i]);
      cells[i].objective = r.best_objective;
    } catch (const std::exception& e) {
      cells[i].error = e.what();
    }
  });
  return cells;
}

}  // namespace precog
