#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

#include "json.hpp"
#include "precog/diff.hpp"
#include "precog/featurize.hpp"
#include "precog/rng.hpp"
#include "precog/scene.hpp"

namespace precog {

using diff::RowMatrix;

enum class Mode { kJoint, kIndependent };

std::string to_string(Mode mode);
Mode mode_from_string(const std::string& text);

struct EspConfig {
  Index agents = 2;  // capacity A_train; every scene must carry this many
  Index horizon = 20;
  Index grid_channels = 2;
  Index conv_layers = 4;
  Index conv_channels = 16;
  Index feature_channels = 8;
  Index kernel = 3;
  Index past_hidden = 32;
  Index social_hidden = 32;
  Index social_out = 16;
  Index future_hidden = 32;
  Index mlp_hidden = 64;
  // Multiplies metric coordinates before they enter the networks.
  double position_scale = 0.1;
  // Replace χ by its signed distance transform before the conv stack.
  bool signed_distance = true;
  double sdt_threshold = 0.5;
  Mode mode = Mode::kJoint;

  // Width of the per-step input ρ.
  Index step_input_width() const;
};

nlohmann::json to_json(const EspConfig& config);
EspConfig esp_config_from_json(const nlohmann::json& j);

struct ParamEntry {
  std::string name;
  diff::Shape shape;
  Index offset = 0;
  Index size() const { return diff::numel(shape); }
};

struct ParamLayout {
  std::vector<ParamEntry> entries;
  Index size = 0;

  void add(std::string name, diff::Shape shape);
  const ParamEntry& find(const std::string& name) const;
};

ParamLayout make_layout(const EspConfig& config);

// Parameters live in one flat vector so optimizers and checkpoints see a
// single buffer; networks are rebuilt from it for every forward pass.
struct EspModel {
  EspConfig config;
  ParamLayout layout;
  Eigen::VectorXd theta;
};

// Glorot-uniform weights, zero biases, and a zero output layer so the
// untrained model is exactly constant velocity with σ = I.
EspModel make_model(const EspConfig& config, std::uint64_t seed);

struct BoundParams {
  ConvStack conv;
  GruCell past_rnn;
  MlpBlock social;
  GruCell future_rnn;
  MlpBlock head;
  // One leaf per layout entry, in layout order.
  std::vector<Tensor> leaves;
};

BoundParams bind(const EspModel& model, bool requires_grad);
Eigen::VectorXd gather_grad(const BoundParams& params,
                            const ParamLayout& layout);

// Parameter-independent view of a batch of scenes. Rows are agents of
// consecutive scenes (row = scene * A + agent).
struct FlowBatch {
  AgentLayout layout;
  Index scenes = 0;
  Index past_steps = 0;
  std::vector<Eigen::Matrix2d> to_scene;  // local -> scene rotation per row
  std::vector<Eigen::Matrix2d> to_local;
  RowMatrix origins;      // [N, 2] x_0 per row
  RowMatrix fallback;     // [N, 2] heading used when motion stalls
  RowMatrix x0_features;  // [N, 2A]
  std::vector<RowMatrix> past;         // per past step, [N, 2]
  std::vector<RowMatrix> past_local;   // scaled local-frame inputs
  std::vector<ContextGrid> grids;      // unique, preprocessed
  std::vector<Index> grid_of_row;
  std::vector<Index> present;          // unmasked agents per scene

  Index rows() const { return layout.rows(); }
  Index agents() const { return layout.agents; }
};

FlowBatch make_batch(const std::vector<const Scene*>& scenes,
                     const EspConfig& config);

struct FlowContext {
  const FlowBatch* batch = nullptr;
  const EspConfig* config = nullptr;
  BoundParams params;
  std::vector<FeatureGrid> features;
  std::vector<Index> whisker_grid;
  PastEncoding past;
  Tensor x0;
  Tensor origins;
  Tensor log_det_select;  // [6, 1] picks 2(ξ00 + ξ11)
};

FlowContext make_context(const FlowBatch& batch, const EspModel& model,
                         BoundParams params);

struct StepDistribution {
  Tensor mu;        // [N, 2]
  Tensor sigma;     // [N, 4] row-major 2x2
  Tensor m_offset;  // [N, 2]
  Tensor xi;        // [N, 4] in the scene frame
  Tensor log_det;   // [N] trace(ξ + ξᵀ)
};

struct FlowState {
  Tensor h;
  Tensor x1;  // x_{t-1}
  Tensor x2;  // x_{t-2}
};

FlowState initial_state(const FlowContext& ctx);
// Distribution of x_t given the state; advances the recurrent state.
StepDistribution step_distribution(const FlowContext& ctx, FlowState& state);
void advance(FlowState& state, const Tensor& x_t);

struct FlowTrace {
  std::vector<Tensor> x;
  std::vector<Tensor> z;
  std::vector<StepDistribution> steps;
};

FlowTrace forward_rollout(const FlowContext& ctx, const std::vector<Tensor>& z);
FlowTrace inverse(const FlowContext& ctx, const std::vector<Tensor>& x);

// Per-scene log densities [B].
Tensor log_prob_route1(const FlowContext& ctx, const FlowTrace& trace);
Tensor log_prob_route2(const FlowContext& ctx, const FlowTrace& trace);
Tensor log_det_jacobian(const FlowContext& ctx, const FlowTrace& trace);
Tensor per_scene_sum(const FlowBatch& batch, const Tensor& rows);

// Fused differentiable 2x2 row ops. Matrices are stored row-major in
// four columns.
Tensor expm_sym2(const Tensor& xi);
Tensor conjugate_rows(const Tensor& s, const std::vector<Eigen::Matrix2d>& r);
Tensor rowwise_matvec(const Tensor& s, const Tensor& v);
// Solves S y = v; raises NumericalError when cond(S) > 1e12.
Tensor rowwise_solve(const Tensor& s, const Tensor& v);
// log N(x; mu, σσᵀ) per row, via the explicit covariance.
Tensor gaussian_logpdf_rows(const Tensor& x, const Tensor& mu,
                            const Tensor& sigma);

Eigen::Matrix2d matrix_exp_sym2(const Eigen::Matrix2d& xi);

// Step tensors [N, 2] <-> per-replica [T, 2A] matrices.
std::vector<Tensor> to_steps(const std::vector<Positions>& trajectories,
                             bool requires_grad = false);
std::vector<Positions> from_steps(const std::vector<Tensor>& steps,
                                  Index agents);

// Single-scene conveniences. Latents and trajectories share the scene's
// future layout [T, 2A]; masked agents stay at zero.
struct LogProb {
  double route1 = 0.0;
  double route2 = 0.0;
  double log_det = 0.0;         // Σ trace(ξ + ξᵀ)
  double log_det_direct = 0.0;  // Σ log det σ from the matrices
};

struct StepValues {
  RowMatrix mu, sigma, m_offset, xi;  // [A, 2] or [A, 4]
};

Positions forward_rollout(const EspModel& model, const Scene& scene,
                          const Positions& z);
Positions inverse(const EspModel& model, const Scene& scene,
                  const Positions& x);
LogProb log_prob(const EspModel& model, const Scene& scene,
                 const Positions& x);
double log_det_jacobian(const EspModel& model, const Scene& scene,
                        const Positions& x);
std::vector<StepValues> step_values(const EspModel& model, const Scene& scene,
                                    const Positions& x);

struct SampleSet {
  std::vector<Positions> x;
  std::vector<Positions> z;
  std::vector<double> log_prob;
};

SampleSet sample(const EspModel& model, const Scene& scene, Index k,
                 Rng& rng);
// Robot latents fixed to z_r [T, 2]; other agents' latents drawn fresh.
SampleSet conditional_sample(const EspModel& model, const Scene& scene,
                             const Positions& z_r, Index k, Rng& rng);
Positions draw_latents(const Scene& scene, Index horizon, Rng& rng);

// Model log density of many trajectories of one scene, batched.
std::vector<double> log_prob_many(const EspModel& model, const Scene& scene,
                                  const std::vector<Positions>& x);

}  // namespace precog
