#pragma once

#include <Eigen/Core>

#include <array>
#include <vector>

#include "precog/diff.hpp"
#include "precog/scene.hpp"

namespace precog {

using diff::Tensor;

// Γ: learned features laid out like the ContextGrid they came from.
struct FeatureGrid {
  Tensor data;  // [height, width, channels]
  double resolution = 0.5;
  Eigen::Vector2d origin = Eigen::Vector2d::Zero();
  double yaw = 0.0;

  Index height() const { return data.dim(0); }
  Index width() const { return data.dim(1); }
  Index channels() const { return data.dim(2); }
};

struct ConvLayer {
  Tensor weight;  // [k, k, in, out]
  Tensor bias;    // [out]
};

struct ConvStack {
  std::vector<ConvLayer> layers;
};

// Standard GRU with separate input and hidden biases; gate blocks are
// ordered (reset, update, candidate) along the 3H axis.
struct GruCell {
  Tensor w_x;  // [in, 3H]
  Tensor w_h;  // [H, 3H]
  Tensor b_x;  // [3H]
  Tensor b_h;  // [3H]

  Index hidden() const { return w_h.dim(0); }
};

enum class Activation { kIdentity, kTanh, kRelu };

struct DenseLayer {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]
  Activation activation = Activation::kIdentity;
};

struct MlpBlock {
  std::vector<DenseLayer> layers;
};

struct PastEncoding {
  Tensor per_agent;     // [N, E]
  Tensor with_context;  // [N, 2E]
};

// Rows of a batch are agents of consecutive scenes: row = scene * A + agent.
struct AgentLayout {
  Index agents = 1;
  std::vector<bool> mask;  // one flag per row

  Index rows() const { return static_cast<Index>(mask.size()); }
};

// Stride-1 convolution with zero padding that preserves the spatial size.
Tensor conv2d_same(const Tensor& input, const Tensor& weight,
                   const Tensor& bias);

// ReLU between layers, none after the last.
FeatureGrid conv_feature_grid(const ContextGrid& chi, const ConvStack& params);

// Bilinear interpolation of feature rows at scene-frame points [M, 2].
// Integer grid coordinates are cell centres. Points outside the grid are
// clamped to the border and receive no gradient along the clamped axis.
Tensor bilinear_interpolate(const FeatureGrid& grid, const Tensor& points);
// Point i samples grids[grid_of_point[i]].
Tensor bilinear_interpolate(const std::vector<FeatureGrid>& grids,
                            const std::vector<Index>& grid_of_point,
                            const Tensor& points);

inline constexpr std::array<double, 6> kWhiskerRadii = {1, 2, 4, 8, 16, 32};
inline constexpr Index kWhiskerArcPoints = 7;
inline constexpr Index kWhiskerPoints = 42;
inline constexpr double kWhiskerHalfAngle = 5.0 * 3.14159265358979323846 / 8;

// The 42 whisker positions, radius-major, for one agent. The heading is
// x_now - x_prev, or +x when the two coincide.
Eigen::Matrix<double, kWhiskerPoints, 2, Eigen::RowMajor> whisker_points(
    const Eigen::Vector2d& x_prev, const Eigen::Vector2d& x_now);

// Batched and differentiable: [N, 2] x [N, 2] -> [N * 42, 2]. Rows whose
// displacement vanishes use the matching row of `fallback_heading` and
// pass no gradient through the heading.
Tensor whisker_points(const Tensor& x_prev, const Tensor& x_now,
                      const diff::RowMatrix& fallback_heading);

// Row (s, a) receives M_a (x_a - x_b) for every b != a in ascending order,
// giving [N, 2(A - 1)]. Pairs touching a masked agent are zero. `frames`
// holds one matrix per row; empty means identity.
Tensor social_displacements(const Tensor& x, const AgentLayout& layout,
                            const std::vector<Eigen::Matrix2d>& frames = {});

// Row (s, a) receives its own features followed by the features of the
// other agents of scene s in ascending order: [N, F] -> [N, A * F]. The
// other-agent blocks are zero when `include_others` is false or the other
// agent is masked; masked rows are all zero.
Tensor gather_agents(const Tensor& x, const AgentLayout& layout,
                     bool include_others);

// Sum over the other unmasked agents of the same scene.
Tensor pool_others(const Tensor& x, const AgentLayout& layout);

// Zeroes the rows of masked agents.
Tensor mask_rows(const Tensor& x, const std::vector<bool>& mask);

// y_i = M_i x_i for [N, 2] inputs and one constant matrix per row.
Tensor transform_rows(const Tensor& x,
                      const std::vector<Eigen::Matrix2d>& mats);

Tensor dense_forward(const DenseLayer& layer, const Tensor& x);
Tensor mlp_forward(const MlpBlock& mlp, const Tensor& x);
Tensor gru_step(const GruCell& cell, const Tensor& x, const Tensor& h);

// Runs a shared GRU over `steps` (each [N, in], oldest first) from a zero
// state. Masked rows are zeroed before pooling.
PastEncoding encode_past(const std::vector<Tensor>& steps,
                         const GruCell& cell, const AgentLayout& layout);

}  // namespace precog
