#include "precog/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "precog/parallel.hpp"

namespace precog {

namespace {

constexpr Index kChunk = 50;

}  // namespace

Estimate summarize(const std::vector<double>& values) {
  Estimate e;
  const double n = static_cast<double>(values.size());
  if (values.empty()) return e;
  double sum = 0.0;
  for (double v : values) sum += v;
  e.mean = sum / n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - e.mean) * (v - e.mean);
    e.std_error = std::sqrt(ss / (n - 1.0) / n);
  }
  return e;
}

double perturbation_entropy_per_dim(double std) {
  return 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * std * std);
}

Scene perturb_future(const Scene& scene, double std, Rng& rng) {
  Scene out = scene;
  for (Index t = 0; t < out.future.rows(); ++t) {
    for (Index c = 0; c < out.future.cols(); ++c) {
      const double v = rng.normal(0.0, std);
      if (scene.agent_mask[c / 2]) out.future(t, c) += v;
    }
  }
  return out;
}

Scene eval_perturbation(const Scene& scene, const PerturbSpec& spec) {
  Rng rng = Rng::stream(spec.seed, "eval-perturb/" + scene.scene_id);
  return perturb_future(scene, spec.std, rng);
}

std::vector<double> scene_log_probs(const EspModel& model,
                                    const std::vector<const Scene*>& scenes,
                                    std::size_t jobs) {
  std::vector<double> out(scenes.size());
  const std::size_t chunks = (scenes.size() + kChunk - 1) / kChunk;
  parallel_for(chunks, jobs, [&](std::size_t c) {
    diff::NoGradGuard guard;
    const std::size_t begin = c * kChunk;
    const std::size_t end = std::min(scenes.size(), begin + kChunk);
    std::vector<const Scene*> part(scenes.begin() + begin,
                                   scenes.begin() + end);
    std::vector<Positions> futures;
    for (const Scene* s : part) futures.push_back(s->future);
    const FlowBatch batch = make_batch(part, model.config);
    const FlowContext ctx = make_context(batch, model, bind(model, false));
    const Tensor lp = log_prob_route1(ctx, inverse(ctx, to_steps(futures)));
    for (std::size_t i = 0; i < part.size(); ++i) out[begin + i] = lp[i];
  });
  return out;
}

namespace {

double dims(const Scene& s) {
  return static_cast<double>(s.horizon() * s.present_agents() * 2);
}

}  // namespace

std::vector<double> extra_nats_per_scene(const EspModel& model,
                                         const Dataset& data,
                                         const PerturbSpec& spec,
                                         std::size_t jobs) {
  std::vector<Scene> perturbed;
  perturbed.reserve(data.scenes.size());
  for (const Scene& s : data.scenes) {
    perturbed.push_back(eval_perturbation(s, spec));
  }
  std::vector<const Scene*> ptrs;
  for (const Scene& s : perturbed) ptrs.push_back(&s);
  const std::vector<double> lp = scene_log_probs(model, ptrs, jobs);
  const double h = perturbation_entropy_per_dim(spec.std);
  std::vector<double> out(lp.size());
  for (std::size_t i = 0; i < lp.size(); ++i) {
    out[i] = -lp[i] / dims(perturbed[i]) - h;
  }
  return out;
}

Estimate extra_nats(const EspModel& model, const Dataset& data,
                    const PerturbSpec& spec, std::size_t jobs) {
  return summarize(extra_nats_per_scene(model, data, spec, jobs));
}

Estimate extra_nats(const LogDensity& log_q, const Dataset& data,
                    const PerturbSpec& spec) {
  const double h = perturbation_entropy_per_dim(spec.std);
  std::vector<double> values;
  for (const Scene& s : data.scenes) {
    const Scene p = eval_perturbation(s, spec);
    values.push_back(-log_q(p, p.future) / dims(p) - h);
  }
  return summarize(values);
}

namespace {

void check_samples(const std::vector<Positions>& samples, const Positions& gt,
                   const std::vector<bool>& mask) {
  if (samples.empty()) throw std::invalid_argument("min_msd: K must be >= 1");
  for (const Positions& s : samples) {
    if (s.rows() != gt.rows() || s.cols() != gt.cols()) {
      throw std::invalid_argument("min_msd: sample shape differs from truth");
    }
  }
  if (static_cast<Index>(mask.size()) * 2 != gt.cols()) {
    throw std::invalid_argument("min_msd: mask length differs from agents");
  }
}

double agent_sq_error(const Positions& s, const Positions& gt, Index a) {
  return (s.middleCols(2 * a, 2) - gt.middleCols(2 * a, 2)).squaredNorm();
}

}  // namespace

MinMsd min_msd(const std::vector<Positions>& samples, const Positions& gt,
               const std::vector<bool>& mask) {
  check_samples(samples, gt, mask);
  Index present = 0;
  for (bool m : mask) present += m ? 1 : 0;
  const double norm = static_cast<double>(gt.rows() * std::max<Index>(present, 1));
  MinMsd best;
  best.value = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < samples.size(); ++k) {
    double err = 0.0;
    for (Index a = 0; a < static_cast<Index>(mask.size()); ++a) {
      if (mask[a]) err += agent_sq_error(samples[k], gt, a);
    }
    err /= norm;
    if (err < best.value) {
      best.value = err;
      best.best = static_cast<Index>(k);
    }
  }
  return best;
}

Eigen::VectorXd per_agent_min_msd(const std::vector<Positions>& samples,
                                  const Positions& gt,
                                  const std::vector<bool>& mask) {
  const MinMsd joint = min_msd(samples, gt, mask);
  const Index agents = static_cast<Index>(mask.size());
  Eigen::VectorXd out = Eigen::VectorXd::Zero(agents);
  for (Index a = 0; a < agents; ++a) {
    if (!mask[a]) continue;
    out[a] = agent_sq_error(samples[joint.best], gt, a) /
             static_cast<double>(gt.rows());
  }
  return out;
}

bool crashes(const Positions& x, const std::vector<bool>& mask,
             double threshold) {
  if (!(threshold > 0.0)) {
    throw std::invalid_argument("crash threshold must be positive");
  }
  const Index agents = static_cast<Index>(mask.size());
  const double limit = threshold * threshold;
  for (Index t = 0; t < x.rows(); ++t) {
    for (Index a = 0; a < agents; ++a) {
      if (!mask[a]) continue;
      for (Index b = a + 1; b < agents; ++b) {
        if (!mask[b]) continue;
        if ((position(x, t, a) - position(x, t, b)).squaredNorm() < limit) {
          return true;
        }
      }
    }
  }
  return false;
}

double crash_rate(const std::vector<std::vector<Positions>>& samples,
                  const std::vector<std::vector<bool>>& masks,
                  double threshold) {
  std::size_t total = 0;
  std::size_t crashed = 0;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    for (const Positions& x : samples[s]) {
      ++total;
      crashed += crashes(x, masks[s], threshold) ? 1 : 0;
    }
  }
  return total == 0 ? 0.0
                    : static_cast<double>(crashed) / static_cast<double>(total);
}

nlohmann::json to_json(const MetricReport& r) {
  nlohmann::json per_agent = nlohmann::json::array();
  for (const Estimate& e : r.per_agent_m_hat) {
    per_agent.push_back({{"mean", e.mean}, {"stderr", e.std_error}});
  }
  return {{"model", r.model},
          {"scenes", r.scenes},
          {"k", r.k},
          {"e_hat", {{"mean", r.e_hat.mean}, {"stderr", r.e_hat.std_error}}},
          {"e_hat_suspicious", r.e_hat_suspicious},
          {"m_hat", {{"mean", r.m_hat.mean}, {"stderr", r.m_hat.std_error}}},
          {"per_agent_m_hat", per_agent},
          {"crash_rate", r.crash_rate},
          {"crash_threshold", r.crash_threshold}};
}

std::string metric_csv_header() {
  return "model,scenes,k,e_hat,e_hat_stderr,m_hat,m_hat_stderr,"
         "per_agent_m_hat,crash_rate,crash_threshold";
}

std::string metric_csv_row(const MetricReport& r) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << r.model << ',' << r.scenes << ',' << r.k << ',' << r.e_hat.mean << ','
     << r.e_hat.std_error << ',' << r.m_hat.mean << ',' << r.m_hat.std_error
     << ',';
  for (std::size_t a = 0; a < r.per_agent_m_hat.size(); ++a) {
    if (a) os << ';';
    os << r.per_agent_m_hat[a].mean;
  }
  os << ',' << r.crash_rate << ',' << r.crash_threshold;
  return os.str();
}

Sampler esp_sampler(const EspModel& model) {
  return [&model](const Scene& scene, Index k, Rng& rng) {
    return sample(model, scene, k, rng).x;
  };
}

namespace {

std::vector<std::vector<Positions>> draw_all(const Sampler& sampler,
                                             const Dataset& data, Index k,
                                             std::uint64_t seed,
                                             std::size_t jobs) {
  std::vector<std::vector<Positions>> out(data.scenes.size());
  parallel_for(data.scenes.size(), jobs, [&](std::size_t i) {
    const Scene& s = data.scenes[i];
    Rng rng = Rng::stream(seed, "sampling/" + s.scene_id);
    out[i] = sampler(s, k, rng);
  });
  return out;
}

}  // namespace

SampleMetrics sample_metrics(const Sampler& sampler, const Dataset& data,
                             Index k, double crash_threshold,
                             std::uint64_t seed, std::size_t jobs) {
  const auto samples = draw_all(sampler, data, k, seed, jobs);
  SampleMetrics out;
  std::vector<double> joint;
  std::vector<std::vector<double>> per_agent;
  std::vector<std::vector<bool>> masks;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Scene& s = data.scenes[i];
    masks.push_back(s.agent_mask);
    joint.push_back(min_msd(samples[i], s.future, s.agent_mask).value);
    const Eigen::VectorXd pa =
        per_agent_min_msd(samples[i], s.future, s.agent_mask);
    per_agent.resize(std::max<std::size_t>(per_agent.size(), pa.size()));
    for (Index a = 0; a < pa.size(); ++a) per_agent[a].push_back(pa[a]);
  }
  out.m_hat = summarize(joint);
  for (const auto& v : per_agent) out.per_agent.push_back(summarize(v));
  out.crash_rate = crash_rate(samples, masks, crash_threshold);
  return out;
}

std::vector<Estimate> min_msd_curve(const Sampler& sampler,
                                    const Dataset& data,
                                    const std::vector<Index>& ks,
                                    std::uint64_t seed, std::size_t jobs) {
  Index k_max = 0;
  for (Index k : ks) k_max = std::max(k_max, k);
  const auto samples = draw_all(sampler, data, k_max, seed, jobs);
  std::vector<Estimate> out;
  for (Index k : ks) {
    std::vector<double> values;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      std::vector<Positions> prefix(samples[i].begin(),
                                    samples[i].begin() + k);
      values.push_back(
          min_msd(prefix, data.scenes[i].future, data.scenes[i].agent_mask)
              .value);
    }
    out.push_back(summarize(values));
  }
  return out;
}

}  // namespace precog
