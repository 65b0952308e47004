#include "precog/espflow.hpp"

#include <Eigen/LU>

#include <cmath>
#include <memory>
#include <stdexcept>

namespace precog {

using diff::make_op;
using diff::Node;
using diff::NumericalError;
using diff::ShapeError;

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kMaxCondition = 1e12;

Eigen::Matrix2d row_matrix(const Eigen::ArrayXd& v, Index row) {
  Eigen::Matrix2d m;
  m << v[4 * row], v[4 * row + 1], v[4 * row + 2], v[4 * row + 3];
  return m;
}

void store(Eigen::ArrayXd& v, Index row, const Eigen::Matrix2d& m) {
  v[4 * row] = m(0, 0);
  v[4 * row + 1] = m(0, 1);
  v[4 * row + 2] = m(1, 0);
  v[4 * row + 3] = m(1, 1);
}

void add_to(Eigen::ArrayXd& v, Index row, const Eigen::Matrix2d& m) {
  v[4 * row] += m(0, 0);
  v[4 * row + 1] += m(0, 1);
  v[4 * row + 2] += m(1, 0);
  v[4 * row + 3] += m(1, 1);
}

Eigen::Vector2d row_vector(const Eigen::ArrayXd& v, Index row) {
  return {v[2 * row], v[2 * row + 1]};
}

void require_cols(const Tensor& t, Index cols, const char* op) {
  if (t.rank() != 2 || t.dim(1) != cols) {
    throw ShapeError(std::string(op) + ": expected [N, " +
                     std::to_string(cols) + "], got " +
                     diff::to_string(t.shape()));
  }
}

// sinh(d) / d, accurate near zero.
double sinhc(double d) {
  if (std::abs(d) < 1e-4) return 1.0 + d * d / 6.0 + d * d * d * d / 120.0;
  return std::sinh(d) / d;
}

struct SymExp {
  double m, d, p, b;
};

SymExp sym_parts(const Eigen::Matrix2d& xi) {
  const double a = 2.0 * xi(0, 0);
  const double c = 2.0 * xi(1, 1);
  SymExp s;
  s.b = xi(0, 1) + xi(1, 0);
  s.m = 0.5 * (a + c);
  s.p = 0.5 * (a - c);
  s.d = std::hypot(s.p, s.b);
  return s;
}

Eigen::Matrix2d sym_exp_value(const SymExp& s) {
  const double em = std::exp(s.m);
  const double ch = std::cosh(s.d);
  const double sc = sinhc(s.d);
  Eigen::Matrix2d e;
  e << em * (ch + sc * s.p), em * sc * s.b, em * sc * s.b, em * (ch - sc * s.p);
  return e;
}

}  // namespace

std::string to_string(Mode mode) {
  return mode == Mode::kJoint ? "joint" : "independent";
}

Mode mode_from_string(const std::string& text) {
  if (text == "joint") return Mode::kJoint;
  if (text == "independent") return Mode::kIndependent;
  throw std::invalid_argument("mode must be 'joint' or 'independent', got '" +
                              text + "'");
}

Index EspConfig::step_input_width() const {
  return feature_channels * agents + 2 * agents + 4 + social_out +
         2 * past_hidden + feature_channels * kWhiskerPoints;
}

nlohmann::json to_json(const EspConfig& c) {
  return {{"agents", c.agents},
          {"horizon", c.horizon},
          {"grid_channels", c.grid_channels},
          {"conv_layers", c.conv_layers},
          {"conv_channels", c.conv_channels},
          {"feature_channels", c.feature_channels},
          {"kernel", c.kernel},
          {"past_hidden", c.past_hidden},
          {"social_hidden", c.social_hidden},
          {"social_out", c.social_out},
          {"future_hidden", c.future_hidden},
          {"mlp_hidden", c.mlp_hidden},
          {"position_scale", c.position_scale},
          {"signed_distance", c.signed_distance},
          {"sdt_threshold", c.sdt_threshold},
          {"mode", to_string(c.mode)}};
}

EspConfig esp_config_from_json(const nlohmann::json& j) {
  EspConfig c;
  c.agents = j.at("agents").get<Index>();
  c.horizon = j.at("horizon").get<Index>();
  c.grid_channels = j.at("grid_channels").get<Index>();
  c.conv_layers = j.at("conv_layers").get<Index>();
  c.conv_channels = j.at("conv_channels").get<Index>();
  c.feature_channels = j.at("feature_channels").get<Index>();
  c.kernel = j.at("kernel").get<Index>();
  c.past_hidden = j.at("past_hidden").get<Index>();
  c.social_hidden = j.at("social_hidden").get<Index>();
  c.social_out = j.at("social_out").get<Index>();
  c.future_hidden = j.at("future_hidden").get<Index>();
  c.mlp_hidden = j.at("mlp_hidden").get<Index>();
  c.position_scale = j.at("position_scale").get<double>();
  c.signed_distance = j.at("signed_distance").get<bool>();
  c.sdt_threshold = j.at("sdt_threshold").get<double>();
  c.mode = mode_from_string(j.at("mode").get<std::string>());
  return c;
}

void ParamLayout::add(std::string name, diff::Shape shape) {
  ParamEntry e{std::move(name), std::move(shape), size};
  size += e.size();
  entries.push_back(std::move(e));
}

const ParamEntry& ParamLayout::find(const std::string& name) const {
  for (const ParamEntry& e : entries) {
    if (e.name == name) return e;
  }
  throw std::out_of_range("no parameter named '" + name + "'");
}

ParamLayout make_layout(const EspConfig& c) {
  if (c.agents < 1 || c.conv_layers < 1 || c.kernel % 2 == 0) {
    throw std::invalid_argument("invalid model configuration");
  }
  ParamLayout layout;
  for (Index l = 0; l < c.conv_layers; ++l) {
    const Index in = l == 0 ? c.grid_channels : c.conv_channels;
    const Index out = l + 1 == c.conv_layers ? c.feature_channels
                                             : c.conv_channels;
    const std::string p = "conv." + std::to_string(l);
    layout.add(p + ".weight", {c.kernel, c.kernel, in, out});
    layout.add(p + ".bias", {out});
  }
  auto gru = [&layout](const std::string& p, Index in, Index h) {
    layout.add(p + ".w_x", {in, 3 * h});
    layout.add(p + ".w_h", {h, 3 * h});
    layout.add(p + ".b_x", {3 * h});
    layout.add(p + ".b_h", {3 * h});
  };
  gru("past_rnn", 2, c.past_hidden);
  layout.add("social.0.weight", {2 * (c.agents - 1), c.social_hidden});
  layout.add("social.0.bias", {c.social_hidden});
  layout.add("social.1.weight", {c.social_hidden, c.social_out});
  layout.add("social.1.bias", {c.social_out});
  gru("future_rnn", c.step_input_width(), c.future_hidden);
  layout.add("head.0.weight", {c.future_hidden, c.mlp_hidden});
  layout.add("head.0.bias", {c.mlp_hidden});
  layout.add("head.1.weight", {c.mlp_hidden, 6});
  layout.add("head.1.bias", {6});
  return layout;
}

EspModel make_model(const EspConfig& config, std::uint64_t seed) {
  EspModel model;
  model.config = config;
  model.layout = make_layout(config);
  model.theta = Eigen::VectorXd::Zero(model.layout.size);
  Rng rng = Rng::stream(seed, "init");
  for (const ParamEntry& e : model.layout.entries) {
    const bool is_weight = e.shape.size() >= 2;
    if (!is_weight || e.name.rfind("head.1.", 0) == 0) continue;
    Index fan_in = 0;
    Index fan_out = 0;
    if (e.shape.size() == 4) {
      const Index area = e.shape[0] * e.shape[1];
      fan_in = area * e.shape[2];
      fan_out = area * e.shape[3];
    } else {
      fan_in = e.shape[0];
      fan_out = e.shape[1];
    }
    if (fan_in + fan_out == 0) continue;
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (Index i = 0; i < e.size(); ++i) {
      model.theta[e.offset + i] = rng.uniform(-limit, limit);
    }
  }
  return model;
}

BoundParams bind(const EspModel& model, bool requires_grad) {
  BoundParams b;
  const EspConfig& c = model.config;
  std::size_t next = 0;
  auto take = [&]() {
    const ParamEntry& e = model.layout.entries.at(next++);
    Eigen::ArrayXd v = model.theta.segment(e.offset, e.size()).array();
    Tensor t = requires_grad ? Tensor::parameter(std::move(v), e.shape)
                             : Tensor::constant(std::move(v), e.shape);
    b.leaves.push_back(t);
    return t;
  };
  for (Index l = 0; l < c.conv_layers; ++l) {
    ConvLayer layer;
    layer.weight = take();
    layer.bias = take();
    b.conv.layers.push_back(layer);
  }
  auto gru = [&take]() {
    GruCell g;
    g.w_x = take();
    g.w_h = take();
    g.b_x = take();
    g.b_h = take();
    return g;
  };
  b.past_rnn = gru();
  for (int l = 0; l < 2; ++l) {
    DenseLayer d;
    d.weight = take();
    d.bias = take();
    d.activation = Activation::kTanh;
    b.social.layers.push_back(d);
  }
  b.future_rnn = gru();
  for (int l = 0; l < 2; ++l) {
    DenseLayer d;
    d.weight = take();
    d.bias = take();
    d.activation = l == 0 ? Activation::kTanh : Activation::kIdentity;
    b.head.layers.push_back(d);
  }
  return b;
}

Eigen::VectorXd gather_grad(const BoundParams& params,
                            const ParamLayout& layout) {
  Eigen::VectorXd g(layout.size);
  for (std::size_t i = 0; i < layout.entries.size(); ++i) {
    const ParamEntry& e = layout.entries[i];
    g.segment(e.offset, e.size()) = params.leaves[i].grad().matrix();
  }
  return g;
}

FlowBatch make_batch(const std::vector<const Scene*>& scenes,
                     const EspConfig& config) {
  if (scenes.empty()) throw std::invalid_argument("make_batch: no scenes");
  FlowBatch b;
  const Index a_count = config.agents;
  b.scenes = static_cast<Index>(scenes.size());
  b.past_steps = scenes.front()->past_steps();
  b.layout.agents = a_count;
  const Index n = b.scenes * a_count;
  const double scale = config.position_scale;
  b.to_scene.resize(n);
  b.to_local.resize(n);
  b.origins = RowMatrix::Zero(n, 2);
  b.fallback = RowMatrix::Zero(n, 2);
  b.x0_features = RowMatrix::Zero(n, 2 * a_count);
  b.past.assign(b.past_steps, RowMatrix::Zero(n, 2));
  b.past_local.assign(b.past_steps, RowMatrix::Zero(n, 2));

  std::vector<const ContextGrid*> raw;
  for (Index s = 0; s < b.scenes; ++s) {
    const Scene& sc = *scenes[s];
    if (sc.num_agents != a_count) {
      throw SceneError("scene '" + sc.scene_id + "' field 'num_agents': " +
                       std::to_string(sc.num_agents) +
                       " agents but the model expects " +
                       std::to_string(a_count));
    }
    if (sc.past_steps() != b.past_steps) {
      throw SceneError("scene '" + sc.scene_id +
                       "' field 'past': batch mixes past lengths");
    }
    if (sc.grid.channels != config.grid_channels) {
      throw SceneError("scene '" + sc.scene_id + "' field 'grid.channels': " +
                       std::to_string(sc.grid.channels) +
                       " but the model expects " +
                       std::to_string(config.grid_channels));
    }
    Index present = 0;
    for (Index a = 0; a < a_count; ++a) {
      const Index row = s * a_count + a;
      const bool on = sc.agent_mask[a];
      b.layout.mask.push_back(on);
      present += on ? 1 : 0;
      if (!on) {
        b.to_scene[row] = b.to_local[row] = Eigen::Matrix2d::Identity();
        b.fallback.row(row) = Eigen::RowVector2d::UnitX();
        continue;
      }
      const Eigen::Vector2d h = agent_heading(sc, a);
      b.to_scene[row] = rotation(std::atan2(h.y(), h.x()));
      b.to_local[row] = b.to_scene[row].transpose();
      const Eigen::Vector2d o = position(sc.past, b.past_steps - 1, a);
      b.origins.row(row) = o.transpose();
      b.fallback.row(row) = h.transpose();
      for (Index t = 0; t < b.past_steps; ++t) {
        const Eigen::Vector2d p = position(sc.past, t, a);
        b.past[t].row(row) = p.transpose();
        b.past_local[t].row(row) =
            (scale * (b.to_local[row] * (p - o))).transpose();
      }
      Index block = 1;
      for (Index other = 0; other < a_count; ++other) {
        if (other == a) continue;
        if (sc.agent_mask[other]) {
          const Eigen::Vector2d d =
              position(sc.past, b.past_steps - 1, other) - o;
          b.x0_features.block(row, 2 * block, 1, 2) =
              (scale * (b.to_local[row] * d)).transpose();
        }
        ++block;
      }
    }
    b.present.push_back(present);

    Index gi = -1;
    for (std::size_t g = 0; g < raw.size(); ++g) {
      if (*raw[g] == sc.grid) {
        gi = static_cast<Index>(g);
        break;
      }
    }
    if (gi < 0) {
      gi = static_cast<Index>(raw.size());
      raw.push_back(&sc.grid);
      b.grids.push_back(config.signed_distance
                            ? signed_distance_transform(sc.grid,
                                                        config.sdt_threshold)
                            : sc.grid);
    }
    for (Index a = 0; a < a_count; ++a) b.grid_of_row.push_back(gi);
  }
  return b;
}

FlowContext make_context(const FlowBatch& batch, const EspModel& model,
                         BoundParams params) {
  FlowContext ctx;
  ctx.batch = &batch;
  ctx.config = &model.config;
  ctx.params = std::move(params);
  for (const ContextGrid& g : batch.grids) {
    ctx.features.push_back(conv_feature_grid(g, ctx.params.conv));
  }
  ctx.whisker_grid.reserve(batch.rows() * kWhiskerPoints);
  for (Index row = 0; row < batch.rows(); ++row) {
    for (Index k = 0; k < kWhiskerPoints; ++k) {
      ctx.whisker_grid.push_back(batch.grid_of_row[row]);
    }
  }
  std::vector<Tensor> steps;
  for (const RowMatrix& p : batch.past_local) {
    steps.push_back(Tensor::constant(p));
  }
  ctx.past = encode_past(steps, ctx.params.past_rnn, batch.layout);
  ctx.x0 = Tensor::constant(batch.x0_features);
  ctx.origins = Tensor::constant(batch.origins);
  Eigen::ArrayXd sel = Eigen::ArrayXd::Zero(6);
  sel[2] = 2.0;
  sel[5] = 2.0;
  ctx.log_det_select = Tensor::constant(sel, {6, 1});
  return ctx;
}

FlowState initial_state(const FlowContext& ctx) {
  const FlowBatch& b = *ctx.batch;
  FlowState s;
  s.h = Tensor::zeros({b.rows(), ctx.config->future_hidden});
  s.x1 = Tensor::constant(b.past[b.past_steps - 1]);
  s.x2 = Tensor::constant(b.past[b.past_steps - 2]);
  return s;
}

StepDistribution step_distribution(const FlowContext& ctx, FlowState& state) {
  const FlowBatch& b = *ctx.batch;
  const EspConfig& c = *ctx.config;
  const bool joint = c.mode == Mode::kJoint;
  const double scale = c.position_scale;
  const Index n = b.rows();

  Tensor gamma = bilinear_interpolate(ctx.features, b.grid_of_row, state.x1);
  Tensor gamma_all = gather_agents(gamma, b.layout, joint);
  Tensor own1 = transform_rows(state.x1 - ctx.origins, b.to_local) * scale;
  Tensor own2 = transform_rows(state.x2 - ctx.origins, b.to_local) * scale;
  Tensor eta = joint ? social_displacements(state.x1, b.layout, b.to_local) *
                           scale
                     : Tensor::zeros({n, 2 * (b.agents() - 1)});
  Tensor social = mlp_forward(ctx.params.social, eta);
  Tensor whiskers = diff::reshape(
      bilinear_interpolate(ctx.features, ctx.whisker_grid,
                           whisker_points(state.x2, state.x1, b.fallback)),
      {n, kWhiskerPoints * c.feature_channels});
  Tensor rho = mask_rows(diff::concat({gamma_all, ctx.x0, own1, own2, social,
                                       ctx.past.with_context, whiskers},
                                      1),
                         b.layout.mask);
  state.h = gru_step(ctx.params.future_rnn, rho, state.h);
  Tensor out = mask_rows(mlp_forward(ctx.params.head, state.h), b.layout.mask);

  StepDistribution d;
  Tensor xi_local = diff::slice(out, 1, 2, 6);
  d.sigma = conjugate_rows(expm_sym2(xi_local), b.to_scene);
  d.xi = conjugate_rows(xi_local, b.to_scene);
  d.m_offset = transform_rows(diff::slice(out, 1, 0, 2), b.to_scene);
  d.mu = state.x1 * 2.0 - state.x2 + d.m_offset;
  d.log_det = diff::reshape(diff::matmul(out, ctx.log_det_select), {n});
  return d;
}

void advance(FlowState& state, const Tensor& x_t) {
  state.x2 = state.x1;
  state.x1 = x_t;
}

namespace {

void check_steps(const FlowContext& ctx, const std::vector<Tensor>& steps,
                 const char* what) {
  for (std::size_t t = 0; t < steps.size(); ++t) {
    const Tensor& s = steps[t];
    if (s.rank() != 2 || s.dim(0) != ctx.batch->rows() || s.dim(1) != 2) {
      throw ShapeError(std::string(what) + ": step " + std::to_string(t + 1) +
                       " has shape " + diff::to_string(s.shape()));
    }
    for (Index row = 0; row < s.dim(0); ++row) {
      if (!std::isfinite(s[2 * row]) || !std::isfinite(s[2 * row + 1])) {
        throw NumericalError(std::string(what) + ": non-finite input at t=" +
                             std::to_string(t + 1) + ", agent " +
                             std::to_string(row % ctx.batch->agents()));
      }
    }
  }
}

}  // namespace

FlowTrace forward_rollout(const FlowContext& ctx,
                          const std::vector<Tensor>& z) {
  check_steps(ctx, z, "forward_rollout");
  FlowTrace trace;
  FlowState state = initial_state(ctx);
  for (std::size_t t = 0; t < z.size(); ++t) {
    try {
      StepDistribution d = step_distribution(ctx, state);
      Tensor zt = mask_rows(z[t], ctx.batch->layout.mask);
      Tensor x = d.mu + rowwise_matvec(d.sigma, zt);
      advance(state, x);
      trace.x.push_back(x);
      trace.z.push_back(zt);
      trace.steps.push_back(std::move(d));
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) + " at t=" +
                           std::to_string(t + 1));
    }
  }
  return trace;
}

FlowTrace inverse(const FlowContext& ctx, const std::vector<Tensor>& x) {
  check_steps(ctx, x, "inverse");
  FlowTrace trace;
  FlowState state = initial_state(ctx);
  for (std::size_t t = 0; t < x.size(); ++t) {
    try {
      StepDistribution d = step_distribution(ctx, state);
      Tensor z = mask_rows(rowwise_solve(d.sigma, x[t] - d.mu),
                           ctx.batch->layout.mask);
      advance(state, x[t]);
      trace.x.push_back(x[t]);
      trace.z.push_back(z);
      trace.steps.push_back(std::move(d));
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) + " at t=" +
                           std::to_string(t + 1));
    }
  }
  return trace;
}

Tensor per_scene_sum(const FlowBatch& batch, const Tensor& rows) {
  const Index n = batch.rows();
  if (rows.size() != n) throw ShapeError("per_scene_sum: expected one value per row");
  RowMatrix agg = RowMatrix::Zero(batch.scenes, n);
  for (Index row = 0; row < n; ++row) agg(row / batch.agents(), row) = 1.0;
  return diff::reshape(
      diff::matmul(Tensor::constant(agg), diff::reshape(rows, {n, 1})),
      {batch.scenes});
}

Tensor log_prob_route1(const FlowContext& ctx, const FlowTrace& trace) {
  const FlowBatch& b = *ctx.batch;
  Tensor total = Tensor::zeros({b.rows()});
  for (std::size_t t = 0; t < trace.x.size(); ++t) {
    const StepDistribution& d = trace.steps[t];
    total = total + gaussian_logpdf_rows(trace.x[t], d.mu, d.sigma);
  }
  return per_scene_sum(b, mask_rows(total, b.layout.mask));
}

Tensor log_prob_route2(const FlowContext& ctx, const FlowTrace& trace) {
  const FlowBatch& b = *ctx.batch;
  const Index n = b.rows();
  Tensor ones = Tensor::constant(Eigen::ArrayXd::Ones(2), {2, 1});
  Tensor total = Tensor::zeros({n});
  for (std::size_t t = 0; t < trace.z.size(); ++t) {
    Tensor sq = diff::reshape(diff::matmul(diff::square(trace.z[t]), ones), {n});
    total = total - sq * 0.5 - trace.steps[t].log_det;
  }
  total = diff::add_scalar(total, -kLog2Pi * static_cast<double>(trace.z.size()));
  return per_scene_sum(b, mask_rows(total, b.layout.mask));
}

Tensor log_det_jacobian(const FlowContext& ctx, const FlowTrace& trace) {
  const FlowBatch& b = *ctx.batch;
  Tensor total = Tensor::zeros({b.rows()});
  for (const StepDistribution& d : trace.steps) total = total + d.log_det;
  return per_scene_sum(b, mask_rows(total, b.layout.mask));
}

Eigen::Matrix2d matrix_exp_sym2(const Eigen::Matrix2d& xi) {
  return sym_exp_value(sym_parts(xi));
}

Tensor expm_sym2(const Tensor& xi) {
  require_cols(xi, 4, "expm_sym2");
  const Index n = xi.dim(0);
  Eigen::ArrayXd v(4 * n);
  for (Index i = 0; i < n; ++i) {
    store(v, i, sym_exp_value(sym_parts(row_matrix(xi.values(), i))));
  }
  return make_op("expm_sym2", std::move(v), {n, 4}, {xi}, [n](Node& self) {
    Node& px = *self.parents[0];
    for (Index i = 0; i < n; ++i) {
      const SymExp s = sym_parts(row_matrix(px.value, i));
      const double theta = 0.5 * std::atan2(s.b, s.p);
      Eigen::Matrix2d q;
      q << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
      // Divided differences of exp at the eigenvalues m ± d.
      const double off = std::exp(s.m) * sinhc(s.d);
      Eigen::Matrix2d g;
      g << std::exp(s.m + s.d), off, off, std::exp(s.m - s.d);
      const Eigen::Matrix2d inner =
          (q.transpose() * row_matrix(self.grad, i) * q).cwiseProduct(g);
      const Eigen::Matrix2d gs = q * inner * q.transpose();
      add_to(px.grad, i, gs + gs.transpose());
    }
  });
}

Tensor conjugate_rows(const Tensor& s, const std::vector<Eigen::Matrix2d>& r) {
  require_cols(s, 4, "conjugate_rows");
  const Index n = s.dim(0);
  if (static_cast<Index>(r.size()) != n) {
    throw ShapeError("conjugate_rows: one rotation per row required");
  }
  Eigen::ArrayXd v(4 * n);
  for (Index i = 0; i < n; ++i) {
    store(v, i, r[i] * row_matrix(s.values(), i) * r[i].transpose());
  }
  return make_op("conjugate_rows", std::move(v), {n, 4}, {s},
                 [r, n](Node& self) {
                   Node& ps = *self.parents[0];
                   for (Index i = 0; i < n; ++i) {
                     add_to(ps.grad, i,
                            r[i].transpose() * row_matrix(self.grad, i) * r[i]);
                   }
                 });
}

Tensor rowwise_matvec(const Tensor& s, const Tensor& v) {
  require_cols(s, 4, "rowwise_matvec");
  require_cols(v, 2, "rowwise_matvec");
  const Index n = s.dim(0);
  if (v.dim(0) != n) throw ShapeError("rowwise_matvec: row count mismatch");
  Eigen::ArrayXd out(2 * n);
  for (Index i = 0; i < n; ++i) {
    out.segment(2 * i, 2) =
        (row_matrix(s.values(), i) * row_vector(v.values(), i)).array();
  }
  return make_op("rowwise_matvec", std::move(out), {n, 2}, {s, v},
                 [n](Node& self) {
                   Node& ps = *self.parents[0];
                   Node& pv = *self.parents[1];
                   for (Index i = 0; i < n; ++i) {
                     const Eigen::Vector2d g = row_vector(self.grad, i);
                     if (ps.requires_grad) {
                       add_to(ps.grad, i,
                              g * row_vector(pv.value, i).transpose());
                     }
                     if (pv.requires_grad) {
                       pv.grad.segment(2 * i, 2) +=
                           (row_matrix(ps.value, i).transpose() * g).array();
                     }
                   }
                 });
}

Tensor rowwise_solve(const Tensor& s, const Tensor& v) {
  require_cols(s, 4, "rowwise_solve");
  require_cols(v, 2, "rowwise_solve");
  const Index n = s.dim(0);
  if (v.dim(0) != n) throw ShapeError("rowwise_solve: row count mismatch");
  Eigen::ArrayXd out(2 * n);
  for (Index i = 0; i < n; ++i) {
    const Eigen::Matrix2d m = row_matrix(s.values(), i);
    const double det = m.determinant();
    const double fro2 = m.squaredNorm();
    const double disc = std::sqrt(std::max(0.0, fro2 * fro2 - 4.0 * det * det));
    const double cond = 0.5 * (fro2 + disc) / std::abs(det);
    if (!(std::abs(det) > 0.0) || !(cond <= kMaxCondition)) {
      throw NumericalError("rowwise_solve: condition number " +
                           std::to_string(cond) + " exceeds 1e12 at row " +
                           std::to_string(i));
    }
    out.segment(2 * i, 2) = (m.inverse() * row_vector(v.values(), i)).array();
  }
  return make_op("rowwise_solve", out, {n, 2}, {s, v}, [n, out](Node& self) {
    Node& ps = *self.parents[0];
    Node& pv = *self.parents[1];
    for (Index i = 0; i < n; ++i) {
      const Eigen::Matrix2d inv_t = row_matrix(ps.value, i).inverse().transpose();
      const Eigen::Vector2d gv = inv_t * row_vector(self.grad, i);
      if (pv.requires_grad) pv.grad.segment(2 * i, 2) += gv.array();
      if (ps.requires_grad) {
        add_to(ps.grad, i, -gv * row_vector(out, i).transpose());
      }
    }
  });
}

Tensor gaussian_logpdf_rows(const Tensor& x, const Tensor& mu,
                            const Tensor& sigma) {
  require_cols(x, 2, "gaussian_logpdf_rows");
  require_cols(mu, 2, "gaussian_logpdf_rows");
  require_cols(sigma, 4, "gaussian_logpdf_rows");
  const Index n = x.dim(0);
  if (mu.dim(0) != n || sigma.dim(0) != n) {
    throw ShapeError("gaussian_logpdf_rows: row count mismatch");
  }
  Eigen::ArrayXd v(n);
  for (Index i = 0; i < n; ++i) {
    const Eigen::Matrix2d s = row_matrix(sigma.values(), i);
    const Eigen::Matrix2d cov = s * s.transpose();
    const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
    if (!(det > 0.0)) {
      throw NumericalError("gaussian_logpdf_rows: singular covariance at row " +
                           std::to_string(i));
    }
    Eigen::Matrix2d prec;
    prec << cov(1, 1), -cov(0, 1), -cov(1, 0), cov(0, 0);
    prec /= det;
    const Eigen::Vector2d d = row_vector(x.values(), i) - row_vector(mu.values(), i);
    v[i] = -kLog2Pi - 0.5 * std::log(det) - 0.5 * d.dot(prec * d);
  }
  return make_op(
      "gaussian_logpdf_rows", std::move(v), {n}, {x, mu, sigma},
      [n](Node& self) {
        Node& px = *self.parents[0];
        Node& pm = *self.parents[1];
        Node& ps = *self.parents[2];
        for (Index i = 0; i < n; ++i) {
          const double g = self.grad[i];
          const Eigen::Matrix2d inv_t =
              row_matrix(ps.value, i).inverse().transpose();
          const Eigen::Vector2d d =
              row_vector(px.value, i) - row_vector(pm.value, i);
          const Eigen::Vector2d w = inv_t.transpose() * d;
          const Eigen::Vector2d gd = -g * (inv_t * w);
          if (px.requires_grad) px.grad.segment(2 * i, 2) += gd.array();
          if (pm.requires_grad) pm.grad.segment(2 * i, 2) -= gd.array();
          if (ps.requires_grad) {
            add_to(ps.grad, i, g * (-inv_t + inv_t * w * w.transpose()));
          }
        }
      });
}

std::vector<Tensor> to_steps(const std::vector<Positions>& trajectories,
                             bool requires_grad) {
  if (trajectories.empty()) return {};
  const Index horizon = trajectories.front().rows();
  const Index width = trajectories.front().cols();
  const Index k = static_cast<Index>(trajectories.size());
  std::vector<Tensor> steps;
  for (Index t = 0; t < horizon; ++t) {
    Eigen::ArrayXd v(k * width);
    for (Index i = 0; i < k; ++i) {
      v.segment(i * width, width) = trajectories[i].row(t).transpose().array();
    }
    steps.push_back(requires_grad
                        ? Tensor::parameter(std::move(v), {k * width / 2, 2})
                        : Tensor::constant(std::move(v), {k * width / 2, 2}));
  }
  return steps;
}

std::vector<Positions> from_steps(const std::vector<Tensor>& steps,
                                  Index agents) {
  if (steps.empty()) return {};
  const Index k = steps.front().dim(0) / agents;
  const Index horizon = static_cast<Index>(steps.size());
  std::vector<Positions> out(k, Positions(horizon, 2 * agents));
  for (Index t = 0; t < horizon; ++t) {
    for (Index i = 0; i < k; ++i) {
      out[i].row(t) =
          steps[t].values().segment(i * 2 * agents, 2 * agents).transpose();
    }
  }
  return out;
}

namespace {

struct SceneRun {
  FlowBatch batch;
  FlowContext ctx;
};

std::unique_ptr<SceneRun> prepare(const EspModel& model, const Scene& scene,
                                  Index replicas) {
  auto run = std::make_unique<SceneRun>();
  run->batch = make_batch(
      std::vector<const Scene*>(static_cast<std::size_t>(replicas), &scene),
      model.config);
  run->ctx = make_context(run->batch, model, bind(model, false));
  return run;
}

}  // namespace

Positions forward_rollout(const EspModel& model, const Scene& scene,
                          const Positions& z) {
  diff::NoGradGuard guard;
  auto run = prepare(model, scene, 1);
  return from_steps(forward_rollout(run->ctx, to_steps({z})).x,
                    model.config.agents)
      .front();
}

Positions inverse(const EspModel& model, const Scene& scene,
                  const Positions& x) {
  diff::NoGradGuard guard;
  auto run = prepare(model, scene, 1);
  return from_steps(inverse(run->ctx, to_steps({x})).z, model.config.agents)
      .front();
}

LogProb log_prob(const EspModel& model, const Scene& scene,
                 const Positions& x) {
  diff::NoGradGuard guard;
  auto run = prepare(model, scene, 1);
  const FlowTrace trace = inverse(run->ctx, to_steps({x}));
  LogProb lp;
  lp.route1 = log_prob_route1(run->ctx, trace).item();
  lp.route2 = log_prob_route2(run->ctx, trace).item();
  lp.log_det = log_det_jacobian(run->ctx, trace).item();
  for (const StepDistribution& d : trace.steps) {
    for (Index row = 0; row < run->batch.rows(); ++row) {
      if (!run->batch.layout.mask[row]) continue;
      lp.log_det_direct +=
          std::log(row_matrix(d.sigma.values(), row).determinant());
    }
  }
  return lp;
}

double log_det_jacobian(const EspModel& model, const Scene& scene,
                        const Positions& x) {
  return log_prob(model, scene, x).log_det;
}

std::vector<StepValues> step_values(const EspModel& model, const Scene& scene,
                                    const Positions& x) {
  diff::NoGradGuard guard;
  auto run = prepare(model, scene, 1);
  const FlowTrace trace = inverse(run->ctx, to_steps({x}));
  std::vector<StepValues> out;
  for (const StepDistribution& d : trace.steps) {
    out.push_back({RowMatrix(d.mu.matrix()), RowMatrix(d.sigma.matrix()),
                   RowMatrix(d.m_offset.matrix()), RowMatrix(d.xi.matrix())});
  }
  return out;
}

std::vector<double> log_prob_many(const EspModel& model, const Scene& scene,
                                  const std::vector<Positions>& x) {
  if (x.empty()) return {};
  diff::NoGradGuard guard;
  auto run = prepare(model, scene, static_cast<Index>(x.size()));
  const FlowTrace trace = inverse(run->ctx, to_steps(x));
  const Tensor lp = log_prob_route1(run->ctx, trace);
  return {lp.values().data(), lp.values().data() + lp.size()};
}

Positions draw_latents(const Scene& scene, Index horizon, Rng& rng) {
  Positions z(horizon, 2 * scene.num_agents);
  for (Index t = 0; t < horizon; ++t) {
    for (Index c = 0; c < z.cols(); ++c) {
      const double v = rng.normal();
      z(t, c) = scene.agent_mask[c / 2] ? v : 0.0;
    }
  }
  return z;
}

namespace {

SampleSet rollout_set(const EspModel& model, const Scene& scene,
                      std::vector<Positions> z) {
  diff::NoGradGuard guard;
  auto run = prepare(model, scene, static_cast<Index>(z.size()));
  const FlowTrace trace = forward_rollout(run->ctx, to_steps(z));
  const Tensor lp = log_prob_route2(run->ctx, trace);
  SampleSet out;
  out.x = from_steps(trace.x, model.config.agents);
  out.z = std::move(z);
  out.log_prob.assign(lp.values().data(), lp.values().data() + lp.size());
  return out;
}

Index horizon_for(const EspModel& model, const Scene& scene) {
  return scene.horizon() > 0 ? scene.horizon() : model.config.horizon;
}

}  // namespace

SampleSet sample(const EspModel& model, const Scene& scene, Index k,
                 Rng& rng) {
  if (k < 1) throw std::invalid_argument("sample: K must be at least 1");
  const Index horizon = horizon_for(model, scene);
  std::vector<Positions> z;
  for (Index i = 0; i < k; ++i) z.push_back(draw_latents(scene, horizon, rng));
  return rollout_set(model, scene, std::move(z));
}

SampleSet conditional_sample(const EspModel& model, const Scene& scene,
                             const Positions& z_r, Index k, Rng& rng) {
  if (k < 1) throw std::invalid_argument("conditional_sample: K must be >= 1");
  if (z_r.cols() != 2 || !z_r.allFinite()) {
    throw std::invalid_argument("conditional_sample: z_r must be finite [T, 2]");
  }
  std::vector<Positions> z;
  for (Index i = 0; i < k; ++i) {
    Positions zi = draw_latents(scene, z_r.rows(), rng);
    zi.leftCols(2) = z_r;
    z.push_back(std::move(zi));
  }
  return rollout_set(model, scene, std::move(z));
}

}  // namespace precog
