#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "precog/featurize.hpp"
#include "precog/rng.hpp"

namespace precog {
namespace {

using diff::GradCheckReport;
using diff::Shape;

Eigen::ArrayXd random_values(Index n, Rng& rng, double lo = -1.0,
                             double hi = 1.0) {
  Eigen::ArrayXd v(n);
  for (Index i = 0; i < n; ++i) v[i] = rng.uniform(lo, hi);
  return v;
}

// Projects a tensor output to a scalar with fixed random weights so that
// every output entry contributes to the checked gradient.
Tensor project(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  return diff::sum(y * Tensor::constant(random_values(y.size(), rng), y.shape()));
}

void expect_grad_ok(const std::function<Tensor(const Tensor&)>& fn,
                    const Eigen::ArrayXd& point, const Shape& shape,
                    double tol = 1e-6, double h = 1e-5) {
  const GradCheckReport r = diff::grad_check(fn, point, shape, h);
  EXPECT_TRUE(r.non_finite.empty());
  EXPECT_LT(r.max_rel_error, tol) << "analytic " << r.analytic.transpose()
                                  << "\nnumeric " << r.numeric.transpose();
}

FeatureGrid random_feature_grid(Index h, Index w, Index c, Rng& rng) {
  FeatureGrid g;
  g.data = Tensor::constant(random_values(h * w * c, rng), {h, w, c});
  g.resolution = 0.5;
  g.origin = Eigen::Vector2d(-1.0, 2.0);
  return g;
}

Eigen::VectorXd row_of(const FeatureGrid& g, Index i, Index j) {
  const Index c = g.channels();
  return g.data.values().segment((i * g.width() + j) * c, c).matrix();
}

Eigen::VectorXd interpolate_one(const FeatureGrid& g, const Eigen::Vector2d& p) {
  const Tensor out = bilinear_interpolate(
      g, Tensor::constant(Eigen::ArrayXd(p.array()), {1, 2}));
  return out.values().matrix();
}

// ---------------------------------------------------------------- conv

TEST(Featurize, ZeroGridAndZeroBiasGiveZeroFeatures) {
  Rng rng(1);
  ConvStack stack;
  for (Index l = 0; l < 3; ++l) {
    const Index cin = l == 0 ? 2 : 4;
    const Index cout = l == 2 ? 8 : 4;
    stack.layers.push_back(
        {Tensor::constant(random_values(9 * cin * cout, rng), {3, 3, cin, cout}),
         Tensor::zeros({cout})});
  }
  ContextGrid chi;
  chi.height = 5;
  chi.width = 7;
  chi.channels = 2;
  chi.data = Eigen::ArrayXd::Zero(70);
  const FeatureGrid g = conv_feature_grid(chi, stack);
  EXPECT_EQ(g.height(), 5);
  EXPECT_EQ(g.width(), 7);
  EXPECT_EQ(g.channels(), 8);
  EXPECT_TRUE((g.data.values() == 0.0).all());
}

TEST(Featurize, OneByOneGridIsAMatrixMultiply) {
  ContextGrid chi;
  chi.height = chi.width = 1;
  chi.channels = 2;
  chi.data = Eigen::ArrayXd(2);
  chi.data << 2.0, -1.0;
  // 3x3 kernel: only the centre tap sees the single cell.
  Eigen::ArrayXd w = Eigen::ArrayXd::Constant(9 * 2 * 3, 100.0);
  const double centre[2][3] = {{1.0, 0.5, -2.0}, {3.0, 0.0, 1.0}};
  for (Index ci = 0; ci < 2; ++ci) {
    for (Index co = 0; co < 3; ++co) w[((1 * 3 + 1) * 2 + ci) * 3 + co] = centre[ci][co];
  }
  Eigen::ArrayXd b(3);
  b << 0.1, 0.2, 0.3;
  ConvStack stack;
  stack.layers.push_back({Tensor::constant(w, {3, 3, 2, 3}), Tensor::constant(b, {3})});
  const FeatureGrid g = conv_feature_grid(chi, stack);
  EXPECT_NEAR(g.data[0], 2.0 * 1.0 - 1.0 * 3.0 + 0.1, 1e-15);
  EXPECT_NEAR(g.data[1], 2.0 * 0.5 + 0.2, 1e-15);
  EXPECT_NEAR(g.data[2], -4.0 - 1.0 + 0.3, 1e-15);
}

TEST(Featurize, ConvMatchesDirectLoopAndGradients) {
  Rng rng(2);
  const Index h = 4, w = 5, cin = 2, cout = 3, k = 3;
  const Eigen::ArrayXd in = random_values(h * w * cin, rng);
  const Eigen::ArrayXd wt = random_values(k * k * cin * cout, rng);
  const Eigen::ArrayXd b = random_values(cout, rng);
  const Tensor y = conv2d_same(Tensor::constant(in, {h, w, cin}),
                               Tensor::constant(wt, {k, k, cin, cout}),
                               Tensor::constant(b, {cout}));
  for (Index i = 0; i < h; ++i) {
    for (Index j = 0; j < w; ++j) {
      for (Index co = 0; co < cout; ++co) {
        double acc = b[co];
        for (Index di = -1; di <= 1; ++di) {
          for (Index dj = -1; dj <= 1; ++dj) {
            if (i + di < 0 || i + di >= h || j + dj < 0 || j + dj >= w) continue;
            for (Index ci = 0; ci < cin; ++ci) {
              acc += in[((i + di) * w + j + dj) * cin + ci] *
                     wt[(((di + 1) * k + dj + 1) * cin + ci) * cout + co];
            }
          }
        }
        EXPECT_NEAR(y[(i * w + j) * cout + co], acc, 1e-12);
      }
    }
  }
  expect_grad_ok(
      [&](const Tensor& x) {
        return project(conv2d_same(x, Tensor::constant(wt, {k, k, cin, cout}),
                                   Tensor::constant(b, {cout})), 7);
      },
      in, {h, w, cin});
  expect_grad_ok(
      [&](const Tensor& x) {
        return project(conv2d_same(Tensor::constant(in, {h, w, cin}), x,
                                   Tensor::constant(b, {cout})), 8);
      },
      wt, {k, k, cin, cout});
}

TEST(Featurize, ConvRejectsChannelMismatch) {
  EXPECT_THROW(conv2d_same(Tensor::zeros({3, 3, 2}), Tensor::zeros({3, 3, 4, 1}),
                           Tensor::zeros({1})),
               diff::ShapeError);
}

// ---------------------------------------------------------- bilinear

TEST(Featurize, BilinearAtCellCentreReturnsTheCell) {
  Rng rng(3);
  const FeatureGrid g = random_feature_grid(4, 6, 8, rng);
  for (Index i = 0; i < 4; ++i) {
    for (Index j = 0; j < 6; ++j) {
      const Eigen::Vector2d p = g.origin + g.resolution * Eigen::Vector2d(j, i);
      EXPECT_LT((interpolate_one(g, p) - row_of(g, i, j)).norm(), 1e-12);
    }
  }
}

TEST(Featurize, BilinearMidpointIsTheMean) {
  Rng rng(4);
  const FeatureGrid g = random_feature_grid(3, 3, 8, rng);
  const Eigen::Vector2d p = g.origin + g.resolution * Eigen::Vector2d(0.5, 1.0);
  EXPECT_LT((interpolate_one(g, p) - 0.5 * (row_of(g, 1, 0) + row_of(g, 1, 1))).norm(),
            1e-12);
}

TEST(Featurize, BilinearRespectsYaw) {
  Rng rng(5);
  FeatureGrid g = random_feature_grid(3, 4, 2, rng);
  g.yaw = std::numbers::pi / 2;
  // Grid column axis points along world +y once rotated by 90 degrees.
  const Eigen::Vector2d p = g.origin + g.resolution * Eigen::Vector2d(-2.0, 3.0);
  EXPECT_LT((interpolate_one(g, p) - row_of(g, 2, 3)).norm(), 1e-12);
}

TEST(Featurize, BilinearGradientMatchesFiniteDifferencesInside) {
  Rng rng(6);
  const FeatureGrid g = random_feature_grid(5, 5, 8, rng);
  Eigen::ArrayXd points(200);
  for (Index p = 0; p < 100; ++p) {
    // Interior points away from cell boundaries, where the map is smooth.
    const double u = static_cast<double>(rng.index(4)) + rng.uniform(0.05, 0.95);
    const double v = static_cast<double>(rng.index(4)) + rng.uniform(0.05, 0.95);
    points[2 * p] = g.origin.x() + g.resolution * u;
    points[2 * p + 1] = g.origin.y() + g.resolution * v;
  }
  expect_grad_ok(
      [&](const Tensor& x) { return project(bilinear_interpolate(g, x), 9); },
      points, {100, 2}, 1e-6, 1e-6 * g.resolution);
}

TEST(Featurize, BilinearGradientReachesTheGrid) {
  Rng rng(7);
  const FeatureGrid base = random_feature_grid(3, 4, 2, rng);
  const Tensor points = Tensor::constant(
      Eigen::ArrayXd(Eigen::Vector4d(-0.7, 2.3, 0.1, 2.9).array()), {2, 2});
  expect_grad_ok(
      [&](const Tensor& data) {
        FeatureGrid g = base;
        g.data = data;
        return project(bilinear_interpolate(g, points), 10);
      },
      base.data.values(), base.data.shape());
}

TEST(Featurize, BilinearIsContinuousAcrossCellBoundaries) {
  Rng rng(8);
  const FeatureGrid g = random_feature_grid(4, 4, 8, rng);
  for (double edge : {1.0, 2.0}) {
    const Eigen::Vector2d below = g.origin + g.resolution * Eigen::Vector2d(edge - 1e-12, 1.3);
    const Eigen::Vector2d above = g.origin + g.resolution * Eigen::Vector2d(edge + 1e-12, 1.3);
    EXPECT_LT((interpolate_one(g, below) - interpolate_one(g, above)).norm(), 1e-9);
  }
}

TEST(Featurize, BilinearClampsOutsideWithZeroNormalGradient) {
  Rng rng(9);
  const FeatureGrid g = random_feature_grid(3, 3, 2, rng);
  // Far left of the grid at row coordinate 1.25: equals the left edge value.
  const Eigen::Vector2d outside = g.origin + g.resolution * Eigen::Vector2d(-5.0, 1.25);
  const Eigen::Vector2d edge = g.origin + g.resolution * Eigen::Vector2d(0.0, 1.25);
  EXPECT_LT((interpolate_one(g, outside) - interpolate_one(g, edge)).norm(), 1e-12);

  Tensor p = Tensor::parameter(Eigen::ArrayXd(outside.array()), {1, 2});
  diff::sum(bilinear_interpolate(g, p)).backward();
  EXPECT_EQ(p.grad()[0], 0.0);
  const Eigen::VectorXd d = row_of(g, 2, 0) - row_of(g, 1, 0);
  EXPECT_NEAR(p.grad()[1], d.sum() / g.resolution, 1e-12);
}

TEST(Featurize, BilinearBatchedGridsPickTheirOwnGrid) {
  Rng rng(10);
  const FeatureGrid a = random_feature_grid(3, 3, 2, rng);
  const FeatureGrid b = random_feature_grid(3, 3, 2, rng);
  const Eigen::Vector2d p = a.origin + a.resolution * Eigen::Vector2d(1.2, 0.4);
  Eigen::ArrayXd pts(4);
  pts << p.x(), p.y(), p.x(), p.y();
  const Tensor out = bilinear_interpolate({a, b}, {1, 0}, Tensor::constant(pts, {2, 2}));
  EXPECT_LT((out.values().segment(0, 2).matrix() - interpolate_one(b, p)).norm(), 1e-15);
  EXPECT_LT((out.values().segment(2, 2).matrix() - interpolate_one(a, p)).norm(), 1e-15);
}

// ----------------------------------------------------------- whiskers

TEST(Featurize, WhiskerCountAndFeatureLength) {
  EXPECT_EQ(kWhiskerPoints, 42);
  EXPECT_EQ(kWhiskerPoints * 8, 336);
  const auto pts = whisker_points(Eigen::Vector2d(0, 0), Eigen::Vector2d(1, 0));
  EXPECT_EQ(pts.rows(), 42);
}

TEST(Featurize, WhiskerMidpointLiesOnTheRay) {
  const Eigen::Vector2d now(2.0, -1.0);
  const auto pts = whisker_points(Eigen::Vector2d(1.0, -1.0), now);
  EXPECT_LT((pts.row(3).transpose() - (now + Eigen::Vector2d(1.0, 0.0))).norm(), 1e-12);
  EXPECT_LT((pts.row(5 * 7 + 3).transpose() - (now + Eigen::Vector2d(32.0, 0.0))).norm(),
            1e-12);
}

TEST(Featurize, WhiskerArcEndpointsAtFiveEighthsPi) {
  const auto pts = whisker_points(Eigen::Vector2d(-1, 0), Eigen::Vector2d(0, 0));
  const double a = 5.0 * std::numbers::pi / 8.0;
  EXPECT_LT((pts.row(0).transpose() - Eigen::Vector2d(std::cos(a), -std::sin(a))).norm(), 1e-12);
  EXPECT_LT((pts.row(6).transpose() - Eigen::Vector2d(std::cos(a), std::sin(a))).norm(), 1e-12);
}

TEST(Featurize, WhiskerPointsSitAtTheirRadius) {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::Vector2d prev(rng.uniform(-5, 5), rng.uniform(-5, 5));
    const Eigen::Vector2d now(rng.uniform(-5, 5), rng.uniform(-5, 5));
    const auto pts = whisker_points(prev, now);
    for (Index r = 0; r < 6; ++r) {
      for (Index j = 0; j < 7; ++j) {
        EXPECT_NEAR((pts.row(r * 7 + j).transpose() - now).norm(),
                    kWhiskerRadii[r], 1e-12);
      }
    }
  }
}

TEST(Featurize, WhiskersAreRotationEquivariant) {
  const Eigen::Vector2d prev(0.3, -0.2), now(1.1, 0.4);
  const Eigen::Matrix2d r = rotation(0.77);
  const auto base = whisker_points(prev, now);
  const auto rotated = whisker_points(r * prev, r * now);
  for (Index i = 0; i < 42; ++i) {
    EXPECT_LT((rotated.row(i).transpose() - r * base.row(i).transpose()).norm(), 1e-12);
  }
}

TEST(Featurize, BatchedWhiskersMatchScalarAndDifferentiate) {
  Rng rng(12);
  const Eigen::ArrayXd prev = random_values(6, rng, -2, 2);
  const Eigen::ArrayXd now = random_values(6, rng, -2, 2);
  diff::RowMatrix fallback = diff::RowMatrix::Zero(3, 2);
  fallback.col(0).setOnes();
  const Tensor out = whisker_points(Tensor::constant(prev, {3, 2}),
                                    Tensor::constant(now, {3, 2}), fallback);
  for (Index i = 0; i < 3; ++i) {
    const auto scalar = whisker_points(Eigen::Vector2d(prev[2 * i], prev[2 * i + 1]),
                                       Eigen::Vector2d(now[2 * i], now[2 * i + 1]));
    for (Index p = 0; p < 42; ++p) {
      EXPECT_NEAR(out[2 * (i * 42 + p)], scalar(p, 0), 1e-12);
      EXPECT_NEAR(out[2 * (i * 42 + p) + 1], scalar(p, 1), 1e-12);
    }
  }
  expect_grad_ok(
      [&](const Tensor& x) {
        return project(whisker_points(Tensor::constant(prev, {3, 2}), x, fallback), 13);
      },
      now, {3, 2});
  expect_grad_ok(
      [&](const Tensor& x) {
        return project(whisker_points(x, Tensor::constant(now, {3, 2}), fallback), 14);
      },
      prev, {3, 2});
}

TEST(Featurize, StationaryWhiskersUseTheFallbackHeading) {
  diff::RowMatrix fallback(1, 2);
  fallback << 0.0, 2.0;
  Tensor now = Tensor::parameter(Eigen::ArrayXd(Eigen::Vector2d(1.0, 1.0).array()), {1, 2});
  const Tensor out = whisker_points(now.detach(), now, fallback);
  EXPECT_NEAR(out[2 * 3], 1.0, 1e-12);
  EXPECT_NEAR(out[2 * 3 + 1], 2.0, 1e-12);
  diff::sum(out).backward();
  // Only the translation part passes gradient: one per point.
  EXPECT_NEAR(now.grad()[0], 42.0, 1e-12);
  EXPECT_NEAR(now.grad()[1], 42.0, 1e-12);
}

// ------------------------------------------------------------- social

AgentLayout layout_of(Index agents, std::vector<bool> mask) {
  AgentLayout l;
  l.agents = agents;
  l.mask = std::move(mask);
  return l;
}

TEST(Featurize, SocialSingleAgentIsEmpty) {
  const Tensor out = social_displacements(Tensor::zeros({1, 2}), layout_of(1, {true}));
  EXPECT_EQ(out.dim(1), 0);
}

TEST(Featurize, SocialTwoAgentsAreAntisymmetric) {
  Eigen::ArrayXd x(4);
  x << 0.0, 0.0, 3.0, 4.0;
  const Tensor out = social_displacements(Tensor::constant(x, {2, 2}),
                                          layout_of(2, {true, true}));
  EXPECT_EQ(out.values()[0], -3.0);
  EXPECT_EQ(out.values()[1], -4.0);
  EXPECT_EQ(out.values()[2], 3.0);
  EXPECT_EQ(out.values()[3], 4.0);
}

TEST(Featurize, SocialMatchesBruteForceOverScenes) {
  Rng rng(15);
  const Index agents = 3;
  const std::vector<bool> mask = {true, true, true, true, false, true};
  Eigen::ArrayXd x = random_values(12, rng);
  x.segment(8, 2).setZero();
  std::vector<Eigen::Matrix2d> frames;
  for (Index i = 0; i < 6; ++i) frames.push_back(rotation(rng.uniform(-3, 3)));
  const AgentLayout layout = layout_of(agents, mask);
  const Tensor out = social_displacements(Tensor::constant(x, {6, 2}), layout, frames);
  ASSERT_EQ(out.dim(1), 4);
  for (Index row = 0; row < 6; ++row) {
    const Index scene = row / agents;
    Index slot = 0;
    for (Index b = 0; b < agents; ++b) {
      if (b == row % agents) continue;
      const Index other = scene * agents + b;
      Eigen::Vector2d expected = Eigen::Vector2d::Zero();
      if (mask[row] && mask[other]) {
        expected = frames[row] * Eigen::Vector2d(x[2 * row] - x[2 * other],
                                                 x[2 * row + 1] - x[2 * other + 1]);
      }
      EXPECT_NEAR(out[row * 4 + 2 * slot], expected.x(), 1e-12);
      EXPECT_NEAR(out[row * 4 + 2 * slot + 1], expected.y(), 1e-12);
      ++slot;
    }
  }
  expect_grad_ok(
      [&](const Tensor& t) { return project(social_displacements(t, layout, frames), 16); },
      x, {6, 2});
}

TEST(Featurize, GatherAgentsOrdersOwnThenOthers) {
  Eigen::ArrayXd x(6);
  x << 1, 2, 3, 4, 5, 6;  // one feature pair per agent
  const Tensor all = gather_agents(Tensor::constant(x, {3, 2}),
                                   layout_of(3, {true, true, false}), true);
  ASSERT_EQ(all.dim(1), 6);
  const Eigen::ArrayXd expected = (Eigen::ArrayXd(18) << 1, 2, 3, 4, 0, 0,  //
                                   3, 4, 1, 2, 0, 0,                        //
                                   0, 0, 0, 0, 0, 0).finished();
  EXPECT_TRUE((all.values() == expected).all());
  const Tensor own = gather_agents(Tensor::constant(x, {3, 2}),
                                   layout_of(3, {true, true, true}), false);
  EXPECT_EQ(own.values()[2 * 3 + 0], 3.0);  // row 1 own block
  EXPECT_EQ(own.values()[2 * 3 + 2], 0.0);  // others zeroed
  Rng rng(17);
  expect_grad_ok(
      [&](const Tensor& t) {
        return project(gather_agents(t, layout_of(3, {true, true, false}), true), 18);
      },
      random_values(6, rng), {3, 2});
}

TEST(Featurize, PoolOthersSumsOtherPresentAgents) {
  Eigen::ArrayXd x(8);
  x << 1, 10, 2, 20, 4, 40, 8, 80;
  const Tensor out = pool_others(Tensor::constant(x, {4, 2}),
                                 layout_of(4, {true, true, false, true}));
  const Eigen::ArrayXd expected =
      (Eigen::ArrayXd(8) << 10, 100, 9, 90, 0, 0, 3, 30).finished();
  EXPECT_TRUE((out.values() == expected).all());
}

TEST(Featurize, MaskedAgentValuesDoNotReachPresentAgents) {
  Rng rng(19);
  const AgentLayout layout = layout_of(3, {true, false, true});
  Eigen::ArrayXd x = random_values(6, rng);
  Tensor p = Tensor::parameter(x, {3, 2});
  Tensor y = diff::sum(social_displacements(p, layout) * 1.7) +
             diff::sum(gather_agents(p, layout, true)) + diff::sum(pool_others(p, layout));
  y.backward();
  EXPECT_EQ(p.grad()[2], 0.0);
  EXPECT_EQ(p.grad()[3], 0.0);
  Eigen::ArrayXd moved = x;
  moved.segment(2, 2) += 3.0;
  const Tensor a = social_displacements(Tensor::constant(x, {3, 2}), layout);
  const Tensor b = social_displacements(Tensor::constant(moved, {3, 2}), layout);
  EXPECT_TRUE((a.values() == b.values()).all());
}

// ---------------------------------------------------------------- GRU

GruCell random_gru(Index in, Index hidden, Rng& rng) {
  GruCell c;
  c.w_x = Tensor::constant(random_values(in * 3 * hidden, rng), {in, 3 * hidden});
  c.w_h = Tensor::constant(random_values(hidden * 3 * hidden, rng), {hidden, 3 * hidden});
  c.b_x = Tensor::constant(random_values(3 * hidden, rng), {3 * hidden});
  c.b_h = Tensor::constant(random_values(3 * hidden, rng), {3 * hidden});
  return c;
}

TEST(Featurize, GruStepMatchesHandEvaluatedGates) {
  Rng rng(20);
  const Index in = 3, hd = 2;
  const GruCell cell = random_gru(in, hd, rng);
  const Eigen::ArrayXd x = random_values(in, rng);
  const Eigen::ArrayXd h = random_values(hd, rng);
  const Tensor out = gru_step(cell, Tensor::constant(x, {1, in}), Tensor::constant(h, {1, hd}));
  auto wx = [&](Index i, Index j) { return cell.w_x.values()[i * 3 * hd + j]; };
  auto wh = [&](Index i, Index j) { return cell.w_h.values()[i * 3 * hd + j]; };
  auto pre = [&](Index j, bool hidden_part) {
    double s = hidden_part ? cell.b_h.values()[j] : cell.b_x.values()[j];
    if (hidden_part) {
      for (Index i = 0; i < hd; ++i) s += h[i] * wh(i, j);
    } else {
      for (Index i = 0; i < in; ++i) s += x[i] * wx(i, j);
    }
    return s;
  };
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  for (Index k = 0; k < hd; ++k) {
    const double r = sig(pre(k, false) + pre(k, true));
    const double u = sig(pre(hd + k, false) + pre(hd + k, true));
    const double n = std::tanh(pre(2 * hd + k, false) + r * pre(2 * hd + k, true));
    EXPECT_NEAR(out[k], (1.0 - u) * n + u * h[k], 1e-14);
  }
}

TEST(Featurize, GruGradientsMatchFiniteDifferences) {
  Rng rng(21);
  const GruCell cell = random_gru(2, 3, rng);
  const Eigen::ArrayXd x = random_values(4, rng);
  const Eigen::ArrayXd h = random_values(6, rng);
  expect_grad_ok(
      [&](const Tensor& t) {
        return project(gru_step(cell, Tensor::constant(x, {2, 2}), t), 22);
      },
      h, {2, 3});
  expect_grad_ok(
      [&](const Tensor& w) {
        GruCell c = cell;
        c.w_h = w;
        return project(gru_step(c, Tensor::constant(x, {2, 2}), Tensor::constant(h, {2, 3})), 23);
      },
      cell.w_h.values(), cell.w_h.shape());
}

TEST(Featurize, ZeroGruWeightsGiveZeroEncodings) {
  GruCell c;
  c.w_x = Tensor::zeros({2, 12});
  c.w_h = Tensor::zeros({4, 12});
  c.b_x = Tensor::zeros({12});
  c.b_h = Tensor::zeros({12});
  Rng rng(24);
  std::vector<Tensor> steps;
  for (int t = 0; t < 3; ++t) steps.push_back(Tensor::constant(random_values(4, rng), {2, 2}));
  const PastEncoding e = encode_past(steps, c, layout_of(2, {true, true}));
  EXPECT_TRUE((e.per_agent.values() == 0.0).all());
  EXPECT_TRUE((e.with_context.values() == 0.0).all());
}

TEST(Featurize, EncodePastPoolsOthersAndHonoursMask) {
  Rng rng(25);
  const GruCell cell = random_gru(2, 3, rng);
  std::vector<Tensor> steps;
  for (int t = 0; t < 4; ++t) steps.push_back(Tensor::constant(random_values(6, rng), {3, 2}));
  const PastEncoding all = encode_past(steps, cell, layout_of(3, {true, true, true}));
  const auto per = all.per_agent.matrix();
  const auto ctx = all.with_context.matrix();
  for (Index a = 0; a < 3; ++a) {
    Eigen::RowVectorXd others = per.colwise().sum() - per.row(a);
    EXPECT_LT((ctx.row(a).head(3) - per.row(a)).norm(), 1e-15);
    EXPECT_LT((ctx.row(a).tail(3) - others).norm(), 1e-14);
  }
  const PastEncoding masked = encode_past(
      std::vector<Tensor>(steps.begin(), steps.end()), cell,
      layout_of(3, {true, false, false}));
  EXPECT_TRUE((masked.with_context.matrix().row(0).tail(3).array() == 0.0).all());
  EXPECT_TRUE((masked.per_agent.matrix().row(1).array() == 0.0).all());
}

}  // namespace
}  // namespace precog
