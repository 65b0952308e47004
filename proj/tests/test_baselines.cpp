#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "precog/baselines.hpp"
#include "test_support.hpp"

namespace precog {
namespace {

using testing::random_scene;

Dataset random_dataset(Index n, std::uint64_t seed, Index horizon = 3,
                       std::vector<bool> mask = {}) {
  Rng rng(seed);
  Dataset d;
  for (Index i = 0; i < n; ++i) {
    Scene s = random_scene(2, 3, horizon, rng, mask);
    s.scene_id = "k" + std::to_string(seed) + "-" + std::to_string(i);
    d.scenes.push_back(std::move(s));
  }
  return d;
}

double brute_force_log_prob(const KdeModel& m, const Eigen::VectorXd& q) {
  const double d = static_cast<double>(q.size());
  double sum = 0.0;
  for (Index i = 0; i < m.points.rows(); ++i) {
    const double d2 = (m.points.row(i).transpose() - q).squaredNorm();
    sum += std::exp(-0.5 * d2 / (m.bandwidth * m.bandwidth)) /
           std::pow(2.0 * std::numbers::pi * m.bandwidth * m.bandwidth, 0.5 * d);
  }
  return std::log(sum / static_cast<double>(m.points.rows()));
}

TEST(Baselines, OnePointDensityAtThePoint) {
  const Dataset d = random_dataset(1, 1);
  const KdeModel m = kde_fit(d, 0.3);
  const Scene& s = d.scenes.front();
  const double dims = 3.0 * 2.0 * 2.0;
  EXPECT_NEAR(kde_log_prob(m, s, s.future),
              -0.5 * dims * std::log(2.0 * std::numbers::pi * 0.09), 1e-9);
}

TEST(Baselines, TwoPointMixtureIsSymmetric) {
  const Dataset d = random_dataset(2, 2);
  const KdeModel m = kde_fit(d, 0.7);
  EXPECT_NEAR(kde_log_prob(m, d.scenes[0], d.scenes[0].future),
              kde_log_prob(m, d.scenes[1], d.scenes[1].future), 1e-9);
}

TEST(Baselines, LogProbMatchesBruteForceKernelSum) {
  const Dataset d = random_dataset(5, 3);
  const KdeModel m = kde_fit(d, 1.5);
  const Dataset q = random_dataset(4, 4);
  for (const Scene& s : q.scenes) {
    EXPECT_NEAR(kde_log_prob(m, s, s.future), brute_force_log_prob(m, kde_features(s, s.future)),
                1e-9);
  }
}

TEST(Baselines, LogProbIsExchangeableInTrainingOrder) {
  Dataset d = random_dataset(6, 5);
  const KdeModel a = kde_fit(d, 0.5);
  std::reverse(d.scenes.begin(), d.scenes.end());
  const KdeModel b = kde_fit(d, 0.5);
  const Dataset q = random_dataset(3, 6);
  for (const Scene& s : q.scenes) {
    EXPECT_NEAR(kde_log_prob(a, s, s.future), kde_log_prob(b, s, s.future), 1e-10);
  }
}

TEST(Baselines, HugeBandwidthIsFlat) {
  const Dataset d = random_dataset(5, 7);
  const KdeModel m = kde_fit(d, 1e6);
  const Dataset q = random_dataset(5, 8);
  const double first = kde_log_prob(m, q.scenes[0], q.scenes[0].future);
  for (const Scene& s : q.scenes) EXPECT_NEAR(kde_log_prob(m, s, s.future), first, 1e-9);
}

TEST(Baselines, FeaturesUseTheRobotFrameAndRoundTrip) {
  Rng rng(9);
  const Scene s = random_scene(2, 3, 4, rng);
  const Eigen::VectorXd v = kde_features(s, s.future);
  EXPECT_LT((kde_unflatten(s, v) - s.future).cwiseAbs().maxCoeff(), 1e-9);
  // A rigidly moved scene gives the same features.
  const Scene local = to_local_frame(s, 0);
  EXPECT_LT((kde_features(local, local.future) - v).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Baselines, MaskedAgentsDropOutOfTheDensity) {
  const Dataset d = random_dataset(4, 10, 3, {true, false});
  const KdeModel m = kde_fit(d, 0.4);
  const Scene& s = d.scenes[0];
  Positions moved = s.future;
  moved.middleCols(2, 2).setConstant(50.0);
  EXPECT_EQ(kde_log_prob(m, s, moved), kde_log_prob(m, s, s.future));
  Dataset one;
  one.scenes.push_back(s);
  const KdeModel single = kde_fit(one, 0.4);
  EXPECT_NEAR(kde_log_prob(single, s, s.future),
              -0.5 * 6.0 * std::log(2.0 * std::numbers::pi * 0.16), 1e-9);
}

TEST(Baselines, SingleCandidateIsReturned) {
  const Dataset tr = random_dataset(5, 11);
  const Dataset va = random_dataset(3, 12);
  EXPECT_EQ(kde_select_bandwidth(tr, va, {0.42}), 0.42);
  EXPECT_THROW(kde_select_bandwidth(tr, va, {}), std::invalid_argument);
}

TEST(Baselines, ValidationEqualToTrainPicksTheSmallestBandwidth) {
  const Dataset tr = random_dataset(8, 13);
  EXPECT_EQ(kde_select_bandwidth(tr, tr, default_bandwidths()), 0.01);
}

TEST(Baselines, SelectedBandwidthAttainsTheMaximum) {
  const Dataset tr = random_dataset(30, 14);
  const Dataset va = random_dataset(10, 15);
  const std::vector<double> cands = default_bandwidths();
  ASSERT_EQ(cands.size(), 13u);
  EXPECT_NEAR(cands.front(), 0.01, 1e-15);
  EXPECT_NEAR(cands.back(), 10.0, 1e-12);
  const double chosen = kde_select_bandwidth(tr, va, cands);
  double best = -1e300;
  double chosen_score = 0.0;
  for (double bw : cands) {
    const KdeModel m = kde_fit(tr, bw);
    double total = 0.0;
    for (const Scene& s : va.scenes) total += kde_log_prob(m, s, s.future);
    best = std::max(best, total);
    if (bw == chosen) chosen_score = total;
  }
  EXPECT_NEAR(chosen_score, best, 1e-9 * std::abs(best));
}

TEST(Baselines, SampleMeanMatchesTheTrainingMean) {
  const Dataset tr = random_dataset(10, 16);
  const KdeModel m = kde_fit(tr, 0.5);
  Rng rng(17);
  const Scene& query = tr.scenes[3];
  const Index n = 10000;
  const std::vector<Positions> draws = kde_sample(m, query, n, rng);
  ASSERT_EQ(static_cast<Index>(draws.size()), n);
  const Index dims = m.points.cols();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(dims), sq = Eigen::VectorXd::Zero(dims);
  for (const Positions& x : draws) {
    const Eigen::VectorXd v = kde_features(query, x);
    sum += v;
    sq += v.cwiseProduct(v);
  }
  const Eigen::VectorXd mean = sum / n;
  const Eigen::VectorXd var = sq / n - mean.cwiseProduct(mean);
  const Eigen::VectorXd target = m.points.colwise().mean().transpose();
  // Sum of squared standardised deviations is chi-square with `dims`
  // degrees of freedom; allow three of its standard deviations.
  double chi2 = 0.0;
  for (Index i = 0; i < dims; ++i) {
    const double z = (mean[i] - target[i]) / std::sqrt(var[i] / n);
    chi2 += z * z;
  }
  EXPECT_LT(chi2, dims + 3.0 * std::sqrt(2.0 * dims));
}

TEST(Baselines, SamplingIsDeterministicAndAdaptersAgree) {
  const Dataset tr = random_dataset(6, 18);
  const KdeModel m = kde_fit(tr, 0.3);
  Rng a(19), b(19);
  const auto x = kde_sample(m, tr.scenes[0], 4, a);
  const auto y = kde_sampler(m)(tr.scenes[0], 4, b);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_TRUE((x[i].array() == y[i].array()).all());
  const Scene& s = tr.scenes[1];
  EXPECT_EQ(kde_log_density(m)(s, s.future), kde_log_prob(m, s, s.future));
}

TEST(Baselines, FitRejectsBadInput) {
  EXPECT_THROW(kde_fit(Dataset{}, 1.0), std::invalid_argument);
  EXPECT_THROW(kde_fit(random_dataset(2, 20), 0.0), std::invalid_argument);
  Dataset mixed = random_dataset(2, 21);
  mixed.scenes.push_back(random_dataset(1, 22, 5).scenes.front());
  EXPECT_THROW(kde_fit(mixed, 1.0), std::invalid_argument);
}

}  // namespace
}  // namespace precog
