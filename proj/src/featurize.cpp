#include "precog/featurize.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace precog {

using diff::make_op;
using diff::Node;
using diff::RowMatrix;
using diff::ShapeError;

namespace {

void require_rows2(const Tensor& x, const char* op) {
  if (x.rank() != 2 || x.dim(1) != 2) {
    throw ShapeError(std::string(op) + ": expected [N, 2], got " +
                     diff::to_string(x.shape()));
  }
}

void require_layout(const Tensor& x, const AgentLayout& layout,
                    const char* op) {
  if (x.rank() != 2 || x.dim(0) != layout.rows() ||
      layout.rows() % layout.agents != 0) {
    throw ShapeError(std::string(op) + ": tensor " +
                     diff::to_string(x.shape()) + " does not match " +
                     std::to_string(layout.rows()) + " rows of " +
                     std::to_string(layout.agents) + " agents");
  }
}

struct Corner {
  Index i0, i1, j0, j1;
  double fu, fv;
  bool du_live, dv_live;
};

// Clamped continuous coordinate -> (lower index, upper index, fraction).
void bracket(double c, Index extent, Index& lo, Index& hi, double& frac,
             bool& live) {
  live = extent > 1 && c >= 0.0 && c <= static_cast<double>(extent - 1);
  if (extent == 1) {
    lo = hi = 0;
    frac = 0.0;
    return;
  }
  const double cc = std::clamp(c, 0.0, static_cast<double>(extent - 1));
  lo = std::min(static_cast<Index>(std::floor(cc)), extent - 2);
  hi = lo + 1;
  frac = cc - static_cast<double>(lo);
}

}  // namespace

Tensor conv2d_same(const Tensor& input, const Tensor& weight,
                   const Tensor& bias) {
  if (input.rank() != 3 || weight.rank() != 4 || bias.rank() != 1 ||
      weight.dim(0) != weight.dim(1) || weight.dim(0) % 2 == 0 ||
      weight.dim(2) != input.dim(2) || bias.dim(0) != weight.dim(3)) {
    throw ShapeError("conv2d_same: input " + diff::to_string(input.shape()) +
                     " weight " + diff::to_string(weight.shape()) + " bias " +
                     diff::to_string(bias.shape()));
  }
  const Index h = input.dim(0);
  const Index w = input.dim(1);
  const Index cin = input.dim(2);
  const Index k = weight.dim(0);
  const Index cout = weight.dim(3);
  const Index half = k / 2;
  const Index patch = k * k * cin;

  RowMatrix cols = RowMatrix::Zero(h * w, patch);
  const double* in = input.values().data();
  for (Index i = 0; i < h; ++i) {
    for (Index j = 0; j < w; ++j) {
      double* row = cols.row(i * w + j).data();
      for (Index di = 0; di < k; ++di) {
        const Index si = i + di - half;
        if (si < 0 || si >= h) continue;
        for (Index dj = 0; dj < k; ++dj) {
          const Index sj = j + dj - half;
          if (sj < 0 || sj >= w) continue;
          const double* src = in + (si * w + sj) * cin;
          std::copy(src, src + cin, row + (di * k + dj) * cin);
        }
      }
    }
  }
  Eigen::Map<const RowMatrix> wm(weight.values().data(), patch, cout);
  RowMatrix out = cols * wm;
  out.rowwise() += bias.values().matrix().transpose();
  Eigen::ArrayXd v = Eigen::Map<const Eigen::ArrayXd>(out.data(), out.size());

  return make_op(
      "conv2d_same", std::move(v), {h, w, cout}, {input, weight, bias},
      [cols = std::move(cols), h, w, cin, k, half, patch, cout](Node& self) {
        Eigen::Map<const RowMatrix> g(self.grad.data(), h * w, cout);
        Node& pin = *self.parents[0];
        Node& pw = *self.parents[1];
        Node& pb = *self.parents[2];
        if (pw.requires_grad) {
          Eigen::Map<RowMatrix> gw(pw.grad.data(), patch, cout);
          gw.noalias() += cols.transpose() * g;
        }
        if (pb.requires_grad) {
          pb.grad += g.colwise().sum().transpose().array();
        }
        if (pin.requires_grad) {
          Eigen::Map<const RowMatrix> wm(pw.value.data(), patch, cout);
          RowMatrix gcols = g * wm.transpose();
          double* gin = pin.grad.data();
          for (Index i = 0; i < h; ++i) {
            for (Index j = 0; j < w; ++j) {
              const double* row = gcols.row(i * w + j).data();
              for (Index di = 0; di < k; ++di) {
                const Index si = i + di - half;
                if (si < 0 || si >= h) continue;
                for (Index dj = 0; dj < k; ++dj) {
                  const Index sj = j + dj - half;
                  if (sj < 0 || sj >= w) continue;
                  double* dst = gin + (si * w + sj) * cin;
                  const double* src = row + (di * k + dj) * cin;
                  for (Index c = 0; c < cin; ++c) dst[c] += src[c];
                }
              }
            }
          }
        }
      });
}

FeatureGrid conv_feature_grid(const ContextGrid& chi, const ConvStack& params) {
  if (params.layers.empty()) throw ShapeError("conv_feature_grid: no layers");
  Tensor x = Tensor::constant(chi.data, {chi.height, chi.width, chi.channels});
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    x = conv2d_same(x, params.layers[l].weight, params.layers[l].bias);
    if (l + 1 < params.layers.size()) x = diff::relu(x);
  }
  FeatureGrid out;
  out.data = x;
  out.resolution = chi.resolution;
  out.origin = chi.origin;
  out.yaw = chi.yaw;
  return out;
}

Tensor bilinear_interpolate(const FeatureGrid& grid, const Tensor& points) {
  return bilinear_interpolate(std::vector<FeatureGrid>{grid},
                              std::vector<Index>(points.dim(0), 0), points);
}

Tensor bilinear_interpolate(const std::vector<FeatureGrid>& grids,
                            const std::vector<Index>& grid_of_point,
                            const Tensor& points) {
  require_rows2(points, "bilinear_interpolate");
  const Index m = points.dim(0);
  if (static_cast<Index>(grid_of_point.size()) != m || grids.empty()) {
    throw ShapeError("bilinear_interpolate: grid assignment size mismatch");
  }
  const Index c = grids.front().channels();
  for (const FeatureGrid& g : grids) {
    if (g.data.rank() != 3 || g.channels() != c) {
      throw ShapeError("bilinear_interpolate: grids disagree on channels");
    }
  }

  std::vector<Corner> corners(m);
  Eigen::ArrayXd v(m * c);
  const Eigen::ArrayXd& pv = points.values();
  for (Index p = 0; p < m; ++p) {
    const FeatureGrid& g = grids[grid_of_point[p]];
    const Eigen::Vector2d q =
        rotation(g.yaw).transpose() *
        (Eigen::Vector2d(pv[2 * p], pv[2 * p + 1]) - g.origin) / g.resolution;
    Corner& k = corners[p];
    bracket(q.x(), g.width(), k.j0, k.j1, k.fu, k.du_live);
    bracket(q.y(), g.height(), k.i0, k.i1, k.fv, k.dv_live);
    const double* d = g.data.values().data();
    const Index w = g.width();
    const double* v00 = d + (k.i0 * w + k.j0) * c;
    const double* v01 = d + (k.i0 * w + k.j1) * c;
    const double* v10 = d + (k.i1 * w + k.j0) * c;
    const double* v11 = d + (k.i1 * w + k.j1) * c;
    const double a00 = (1 - k.fu) * (1 - k.fv), a01 = k.fu * (1 - k.fv);
    const double a10 = (1 - k.fu) * k.fv, a11 = k.fu * k.fv;
    for (Index ch = 0; ch < c; ++ch) {
      v[p * c + ch] =
          a00 * v00[ch] + a01 * v01[ch] + a10 * v10[ch] + a11 * v11[ch];
    }
  }

  std::vector<Tensor> inputs{points};
  std::vector<Eigen::Matrix2d> back(grids.size());
  std::vector<Index> widths(grids.size());
  for (std::size_t i = 0; i < grids.size(); ++i) {
    inputs.push_back(grids[i].data);
    back[i] = rotation(grids[i].yaw) / grids[i].resolution;
    widths[i] = grids[i].width();
  }
  return make_op(
      "bilinear_interpolate", std::move(v), {m, c}, inputs,
      [corners = std::move(corners), grid_of_point, back = std::move(back),
       widths = std::move(widths), m, c](Node& self) {
        Node& pp = *self.parents[0];
        for (Index p = 0; p < m; ++p) {
          const Corner& k = corners[p];
          const std::size_t gi = static_cast<std::size_t>(grid_of_point[p]);
          Node& pg = *self.parents[gi + 1];
          const Index w = widths[gi];
          const double* gr = self.grad.data() + p * c;
          if (pg.requires_grad) {
            double* d = pg.grad.data();
            const double a00 = (1 - k.fu) * (1 - k.fv);
            const double a01 = k.fu * (1 - k.fv);
            const double a10 = (1 - k.fu) * k.fv, a11 = k.fu * k.fv;
            for (Index ch = 0; ch < c; ++ch) {
              d[(k.i0 * w + k.j0) * c + ch] += a00 * gr[ch];
              d[(k.i0 * w + k.j1) * c + ch] += a01 * gr[ch];
              d[(k.i1 * w + k.j0) * c + ch] += a10 * gr[ch];
              d[(k.i1 * w + k.j1) * c + ch] += a11 * gr[ch];
            }
          }
          if (pp.requires_grad && (k.du_live || k.dv_live)) {
            const double* d = pg.value.data();
            const double* v00 = d + (k.i0 * w + k.j0) * c;
            const double* v01 = d + (k.i0 * w + k.j1) * c;
            const double* v10 = d + (k.i1 * w + k.j0) * c;
            const double* v11 = d + (k.i1 * w + k.j1) * c;
            double du = 0.0;
            double dv = 0.0;
            for (Index ch = 0; ch < c; ++ch) {
              du += gr[ch] * ((1 - k.fv) * (v01[ch] - v00[ch]) +
                              k.fv * (v11[ch] - v10[ch]));
              dv += gr[ch] * ((1 - k.fu) * (v10[ch] - v00[ch]) +
                              k.fu * (v11[ch] - v01[ch]));
            }
            if (!k.du_live) du = 0.0;
            if (!k.dv_live) dv = 0.0;
            const Eigen::Vector2d gp = back[gi] * Eigen::Vector2d(du, dv);
            pp.grad[2 * p] += gp.x();
            pp.grad[2 * p + 1] += gp.y();
          }
        }
      });
}

namespace {

const std::array<Eigen::Matrix2d, kWhiskerArcPoints>& arc_rotations() {
  static const auto rots = [] {
    std::array<Eigen::Matrix2d, kWhiskerArcPoints> r;
    for (Index j = 0; j < kWhiskerArcPoints; ++j) {
      const double theta =
          -kWhiskerHalfAngle +
          2.0 * kWhiskerHalfAngle * static_cast<double>(j) /
              static_cast<double>(kWhiskerArcPoints - 1);
      r[j] = rotation(theta);
    }
    return r;
  }();
  return rots;
}

constexpr double kStationary = 1e-9;

}  // namespace

Eigen::Matrix<double, kWhiskerPoints, 2, Eigen::RowMajor> whisker_points(
    const Eigen::Vector2d& x_prev, const Eigen::Vector2d& x_now) {
  const Eigen::Vector2d d = x_now - x_prev;
  const Eigen::Vector2d h =
      d.norm() < kStationary ? Eigen::Vector2d::UnitX() : d.normalized();
  Eigen::Matrix<double, kWhiskerPoints, 2, Eigen::RowMajor> out;
  for (std::size_t r = 0; r < kWhiskerRadii.size(); ++r) {
    for (Index j = 0; j < kWhiskerArcPoints; ++j) {
      out.row(r * kWhiskerArcPoints + j) =
          (x_now + kWhiskerRadii[r] * (arc_rotations()[j] * h)).transpose();
    }
  }
  return out;
}

Tensor whisker_points(const Tensor& x_prev, const Tensor& x_now,
                      const RowMatrix& fallback_heading) {
  require_rows2(x_prev, "whisker_points");
  require_rows2(x_now, "whisker_points");
  const Index n = x_now.dim(0);
  if (x_prev.dim(0) != n || fallback_heading.rows() != n) {
    throw ShapeError("whisker_points: row count mismatch");
  }
  Eigen::ArrayXd v(n * kWhiskerPoints * 2);
  // Per row: heading, displacement norm (0 marks the fallback).
  RowMatrix heading(n, 2);
  Eigen::ArrayXd norms(n);
  const auto& rots = arc_rotations();
  for (Index i = 0; i < n; ++i) {
    const Eigen::Vector2d now(x_now.values()[2 * i], x_now.values()[2 * i + 1]);
    const Eigen::Vector2d d =
        now - Eigen::Vector2d(x_prev.values()[2 * i], x_prev.values()[2 * i + 1]);
    const double len = d.norm();
    Eigen::Vector2d h;
    if (len < kStationary) {
      h = fallback_heading.row(i).transpose().normalized();
      norms[i] = 0.0;
    } else {
      h = d / len;
      norms[i] = len;
    }
    heading.row(i) = h.transpose();
    for (std::size_t r = 0; r < kWhiskerRadii.size(); ++r) {
      for (Index j = 0; j < kWhiskerArcPoints; ++j) {
        const Eigen::Vector2d p = now + kWhiskerRadii[r] * (rots[j] * h);
        const Index row = i * kWhiskerPoints + r * kWhiskerArcPoints + j;
        v[2 * row] = p.x();
        v[2 * row + 1] = p.y();
      }
    }
  }
  return make_op(
      "whisker_points", std::move(v), {n * kWhiskerPoints, 2},
      {x_prev, x_now},
      [heading = std::move(heading), norms = std::move(norms), n](Node& self) {
        Node& pprev = *self.parents[0];
        Node& pnow = *self.parents[1];
        const auto& rots = arc_rotations();
        for (Index i = 0; i < n; ++i) {
          Eigen::Vector2d g_now = Eigen::Vector2d::Zero();
          Eigen::Vector2d g_d = Eigen::Vector2d::Zero();
          const Eigen::Vector2d h = heading.row(i).transpose();
          const Eigen::Matrix2d proj =
              norms[i] > 0.0
                  ? ((Eigen::Matrix2d::Identity() - h * h.transpose()) /
                     norms[i])
                        .eval()
                  : Eigen::Matrix2d::Zero().eval();
          for (std::size_t r = 0; r < kWhiskerRadii.size(); ++r) {
            for (Index j = 0; j < kWhiskerArcPoints; ++j) {
              const Index row = i * kWhiskerPoints + r * kWhiskerArcPoints + j;
              const Eigen::Vector2d g(self.grad[2 * row],
                                      self.grad[2 * row + 1]);
              g_now += g;
              g_d += kWhiskerRadii[r] * proj.transpose() *
                     (rots[j].transpose() * g);
            }
          }
          if (pnow.requires_grad) {
            pnow.grad[2 * i] += g_now.x() + g_d.x();
            pnow.grad[2 * i + 1] += g_now.y() + g_d.y();
          }
          if (pprev.requires_grad) {
            pprev.grad[2 * i] -= g_d.x();
            pprev.grad[2 * i + 1] -= g_d.y();
          }
        }
      });
}

Tensor social_displacements(const Tensor& x, const AgentLayout& layout,
                            const std::vector<Eigen::Matrix2d>& frames) {
  require_rows2(x, "social_displacements");
  require_layout(x, layout, "social_displacements");
  const Index n = layout.rows();
  const Index a_count = layout.agents;
  const Index width = 2 * (a_count - 1);
  if (!frames.empty() && static_cast<Index>(frames.size()) != n) {
    throw ShapeError("social_displacements: one frame per row required");
  }
  auto frame = [&frames](Index row) -> Eigen::Matrix2d {
    return frames.empty() ? Eigen::Matrix2d::Identity() : frames[row];
  };
  Eigen::ArrayXd v = Eigen::ArrayXd::Zero(n * width);
  const Eigen::ArrayXd& xv = x.values();
  for (Index row = 0; row < n; ++row) {
    if (!layout.mask[row]) continue;
    const Index base = row - row % a_count;
    const Index a = row % a_count;
    const Eigen::Matrix2d m = frame(row);
    Index slot = 0;
    for (Index b = 0; b < a_count; ++b) {
      if (b == a) continue;
      const Index other = base + b;
      if (layout.mask[other]) {
        const Eigen::Vector2d d(xv[2 * row] - xv[2 * other],
                                xv[2 * row + 1] - xv[2 * other + 1]);
        const Eigen::Vector2d md = m * d;
        v[row * width + 2 * slot] = md.x();
        v[row * width + 2 * slot + 1] = md.y();
      }
      ++slot;
    }
  }
  return make_op(
      "social_displacements", std::move(v), {n, width}, {x},
      [layout, frames, n, a_count, width](Node& self) {
        Node& px = *self.parents[0];
        for (Index row = 0; row < n; ++row) {
          if (!layout.mask[row]) continue;
          const Index base = row - row % a_count;
          const Index a = row % a_count;
          const Eigen::Matrix2d mt = frames.empty()
                                         ? Eigen::Matrix2d::Identity()
                                         : frames[row].transpose().eval();
          Index slot = 0;
          for (Index b = 0; b < a_count; ++b) {
            if (b == a) continue;
            const Index other = base + b;
            if (layout.mask[other]) {
              const Eigen::Vector2d g =
                  mt * Eigen::Vector2d(self.grad[row * width + 2 * slot],
                                       self.grad[row * width + 2 * slot + 1]);
              px.grad[2 * row] += g.x();
              px.grad[2 * row + 1] += g.y();
              px.grad[2 * other] -= g.x();
              px.grad[2 * other + 1] -= g.y();
            }
            ++slot;
          }
        }
      });
}

Tensor gather_agents(const Tensor& x, const AgentLayout& layout,
                     bool include_others) {
  require_layout(x, layout, "gather_agents");
  const Index n = layout.rows();
  const Index a_count = layout.agents;
  const Index f = x.dim(1);
  const Index width = a_count * f;
  // Source row for every (row, block), or -1 for zero.
  std::vector<Index> source(n * a_count, -1);
  for (Index row = 0; row < n; ++row) {
    if (!layout.mask[row]) continue;
    const Index base = row - row % a_count;
    const Index a = row % a_count;
    source[row * a_count] = row;
    if (!include_others) continue;
    Index block = 1;
    for (Index b = 0; b < a_count; ++b) {
      if (b == a) continue;
      if (layout.mask[base + b]) source[row * a_count + block] = base + b;
      ++block;
    }
  }
  Eigen::ArrayXd v = Eigen::ArrayXd::Zero(n * width);
  for (Index i = 0; i < n * a_count; ++i) {
    if (source[i] >= 0) v.segment(i * f, f) = x.values().segment(source[i] * f, f);
  }
  return make_op("gather_agents", std::move(v), {n, width}, {x},
                 [source = std::move(source), f](Node& self) {
                   Node& px = *self.parents[0];
                   for (std::size_t i = 0; i < source.size(); ++i) {
                     if (source[i] < 0) continue;
                     px.grad.segment(source[i] * f, f) +=
                         self.grad.segment(static_cast<Index>(i) * f, f);
                   }
                 });
}

Tensor pool_others(const Tensor& x, const AgentLayout& layout) {
  require_layout(x, layout, "pool_others");
  const Index n = layout.rows();
  const Index a_count = layout.agents;
  const Index f = x.dim(1);
  auto apply = [n, a_count, f, mask = layout.mask](const Eigen::ArrayXd& in,
                                                   Eigen::ArrayXd& out) {
    for (Index row = 0; row < n; ++row) {
      if (!mask[row]) continue;
      const Index base = row - row % a_count;
      for (Index b = 0; b < a_count; ++b) {
        const Index other = base + b;
        if (other == row || !mask[other]) continue;
        out.segment(row * f, f) += in.segment(other * f, f);
      }
    }
  };
  Eigen::ArrayXd v = Eigen::ArrayXd::Zero(n * f);
  apply(x.values(), v);
  // The pooling matrix is symmetric, so the adjoint applies it again.
  return make_op("pool_others", std::move(v), {n, f}, {x},
                 [apply](Node& self) {
                   Node& px = *self.parents[0];
                   if (px.requires_grad) apply(self.grad, px.grad);
                 });
}

Tensor mask_rows(const Tensor& x, const std::vector<bool>& mask) {
  if (x.rank() < 1 || x.dim(0) != static_cast<Index>(mask.size())) {
    throw ShapeError("mask_rows: " + diff::to_string(x.shape()) + " vs " +
                     std::to_string(mask.size()) + " flags");
  }
  const Index n = x.dim(0);
  const Index f = n > 0 ? x.size() / n : 0;
  Eigen::ArrayXd keep(x.size());
  for (Index row = 0; row < n; ++row) {
    keep.segment(row * f, f).setConstant(mask[row] ? 1.0 : 0.0);
  }
  Eigen::ArrayXd v = x.values() * keep;
  return make_op("mask_rows", std::move(v), x.shape(), {x},
                 [keep = std::move(keep)](Node& self) {
                   diff::accumulate(self, 0, self.grad * keep);
                 });
}

Tensor transform_rows(const Tensor& x,
                      const std::vector<Eigen::Matrix2d>& mats) {
  require_rows2(x, "transform_rows");
  const Index n = x.dim(0);
  if (static_cast<Index>(mats.size()) != n) {
    throw ShapeError("transform_rows: one matrix per row required");
  }
  Eigen::ArrayXd v(2 * n);
  for (Index i = 0; i < n; ++i) {
    const Eigen::Vector2d y =
        mats[i] * Eigen::Vector2d(x.values()[2 * i], x.values()[2 * i + 1]);
    v[2 * i] = y.x();
    v[2 * i + 1] = y.y();
  }
  return make_op("transform_rows", std::move(v), {n, 2}, {x},
                 [mats, n](Node& self) {
                   Node& px = *self.parents[0];
                   for (Index i = 0; i < n; ++i) {
                     const Eigen::Vector2d g =
                         mats[i].transpose() *
                         Eigen::Vector2d(self.grad[2 * i], self.grad[2 * i + 1]);
                     px.grad[2 * i] += g.x();
                     px.grad[2 * i + 1] += g.y();
                   }
                 });
}

Tensor dense_forward(const DenseLayer& layer, const Tensor& x) {
  Tensor y = diff::matmul(x, layer.weight) + layer.bias;
  switch (layer.activation) {
    case Activation::kTanh:
      return diff::tanh(y);
    case Activation::kRelu:
      return diff::relu(y);
    case Activation::kIdentity:
      break;
  }
  return y;
}

Tensor mlp_forward(const MlpBlock& mlp, const Tensor& x) {
  Tensor y = x;
  for (const DenseLayer& layer : mlp.layers) y = dense_forward(layer, y);
  return y;
}

Tensor gru_step(const GruCell& cell, const Tensor& x, const Tensor& h) {
  const Index hd = cell.hidden();
  Tensor gx = diff::matmul(x, cell.w_x) + cell.b_x;
  Tensor gh = diff::matmul(h, cell.w_h) + cell.b_h;
  Tensor r = diff::sigmoid(diff::slice(gx, 1, 0, hd) + diff::slice(gh, 1, 0, hd));
  Tensor u = diff::sigmoid(diff::slice(gx, 1, hd, 2 * hd) +
                           diff::slice(gh, 1, hd, 2 * hd));
  Tensor cand = diff::tanh(diff::slice(gx, 1, 2 * hd, 3 * hd) +
                           r * diff::slice(gh, 1, 2 * hd, 3 * hd));
  return cand + u * (h - cand);
}

PastEncoding encode_past(const std::vector<Tensor>& steps,
                         const GruCell& cell, const AgentLayout& layout) {
  if (steps.empty()) throw ShapeError("encode_past: empty sequence");
  Tensor h = Tensor::zeros({layout.rows(), cell.hidden()});
  for (const Tensor& x : steps) h = gru_step(cell, x, h);
  PastEncoding out;
  out.per_agent = mask_rows(h, layout.mask);
  out.with_context =
      diff::concat({out.per_agent, pool_others(out.per_agent, layout)}, 1);
  return out;
}

}  // namespace precog
