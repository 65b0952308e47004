#include "commands.hpp"

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "precog/baselines.hpp"
#include "precog/checkpoint.hpp"
#include "precog/didactic.hpp"
#include "precog/espflow.hpp"
#include "precog/metrics.hpp"
#include "precog/parallel.hpp"
#include "precog/planner.hpp"
#include "precog/svg.hpp"
#include "precog/train.hpp"

namespace precog::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CommonOptions {
  std::string data;
  std::string out;
  std::uint64_t seed = 0;
  Index k = 12;
  std::string mode = "joint";
  double noise_std = 0.0;
  double goal_variance = 0.1;
  double crash_threshold = 1.0;
  std::size_t jobs = 1;
};

json to_json(const CommonOptions& o) {
  return {{"data", o.data},
          {"out", o.out},
          {"seed", o.seed},
          {"k", o.k},
          {"mode", o.mode},
          {"noise_std", o.noise_std},
          {"goal_variance", o.goal_variance},
          {"crash_threshold", o.crash_threshold},
          {"jobs", o.jobs}};
}

struct GenOptions {
  Index n_train = 3000;
  Index n_val = 500;
  Index n_test = 1000;
  double turn_probability = 0.5;
};

struct TrainOptions {
  Index max_epochs = 1000;
  Index patience = 10;
  double learning_rate = 1e-4;
  Index batch_size = 10;
  Index val_scenes = 0;
  double future_noise_std = 0.1;
};

struct EvalOptions {
  std::vector<std::string> models;
  bool kde = false;
  std::vector<Index> curve_ks;
  Index scenes = 0;
  double perturb_std = 0.1;
};

struct ForecastOptions {
  std::string model;
  Index scenes = 0;
  Index svg_count = 3;
};

struct PlanCliOptions {
  std::string model;
  Index scenes = 0;
  Index max_iters = 200;
  Index patience = 10;
  double step_size = 0.1;
  bool common_random_numbers = false;
};

struct ScanOptions {
  std::string model;
  Index scene_index = 0;
  Index grid_n = 5;
  double span = 20.0;
  std::vector<double> centre;
  Index max_iters = 200;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
}

fs::path prepare_out(const CommonOptions& o) {
  if (o.out.empty()) throw ValidationError("--out is required");
  fs::create_directories(o.out);
  return fs::path(o.out);
}

void write_config(const fs::path& dir, const std::string& command,
                  const json& options) {
  spdlog::debug("{} config: {}", command, options.dump());
  write_text(dir / "config.json",
             json({{"command", command}, {"options", options}}).dump(2) + "\n");
}

Dataset load_split(const std::string& data, const std::string& split) {
  if (data.empty()) throw ValidationError("--data is required");
  fs::path p(data);
  if (fs::is_directory(p)) p /= split + ".jsonl";
  if (!fs::exists(p)) throw ValidationError("dataset not found: " + p.string());
  Dataset d = load_dataset(p);
  d.split = split;
  return d;
}

void limit(Dataset& d, Index n) {
  if (n > 0 && n < static_cast<Index>(d.scenes.size())) d.scenes.resize(n);
}

EspModel load_model(const std::string& path) {
  if (path.empty()) throw ValidationError("--model is required");
  return load_checkpoint(path);
}

std::string model_name(const EspModel& m) {
  return m.config.mode == Mode::kJoint ? "esp" : "r2p2-ma";
}

void check_common(const CommonOptions& o) {
  if (o.k < 1) throw ValidationError("--k must be >= 1");
  if (!(o.crash_threshold > 0.0)) {
    throw ValidationError("--crash-threshold must be > 0");
  }
  if (!(o.goal_variance > 0.0)) throw ValidationError("--goal-variance must be > 0");
  if (!(o.noise_std >= 0.0)) throw ValidationError("--noise-std must be >= 0");
  if (o.jobs < 1) throw ValidationError("--jobs must be >= 1");
  mode_from_string(o.mode);
}

std::string fixed(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

// ---------------------------------------------------------------- commands

void cmd_gen(const CommonOptions& o, const GenOptions& g) {
  const fs::path dir = prepare_out(o);
  DidacticConfig c;
  c.n_train = g.n_train;
  c.n_val = g.n_val;
  c.n_test = g.n_test;
  c.turn_probability = g.turn_probability;
  c.seed = o.seed;
  c.validate();
  const DidacticSplits d = generate_dataset(c);
  save_dataset(d.train, dir / "train.jsonl");
  save_dataset(d.val, dir / "val.jsonl");
  save_dataset(d.test, dir / "test.jsonl");
  json opts = to_json(o);
  opts["didactic"] = precog::to_json(c);
  write_config(dir, "gen-didactic", opts);
  spdlog::info("wrote {} / {} / {} scenes to {}", d.train.scenes.size(),
               d.val.scenes.size(), d.test.scenes.size(), dir.string());
}

void cmd_train(const CommonOptions& o, const TrainOptions& t) {
  Dataset train_set = load_split(o.data, "train");
  Dataset val_set = load_split(o.data, "val");
  if (train_set.scenes.empty() || val_set.scenes.empty()) {
    throw ValidationError("train and val sets must be non-empty");
  }
  const fs::path dir = prepare_out(o);
  EspConfig ec;
  const Scene& first = train_set.scenes.front();
  ec.agents = first.num_agents;
  ec.horizon = first.horizon();
  ec.grid_channels = first.grid.channels;
  ec.mode = mode_from_string(o.mode);
  TrainConfig tc;
  tc.learning_rate = t.learning_rate;
  tc.batch_size = t.batch_size;
  tc.patience_epochs = t.patience;
  tc.max_epochs = t.max_epochs;
  tc.noise_std = o.noise_std;
  tc.future_noise_std = t.future_noise_std;
  tc.val_scenes = t.val_scenes;
  tc.seed = o.seed;
  tc.validate();

  json opts = to_json(o);
  opts["model"] = precog::to_json(ec);
  opts["train"] = precog::to_json(tc);
  write_config(dir, "train", opts);

  const EspModel init = make_model(ec, o.seed);
  const TrainResult r = train(
      init, train_set, val_set, tc, [](const EpochRecord& e, bool improved) {
        spdlog::info("epoch {} train_nll {:.5f} val_e_hat {:.5f}{}", e.epoch,
                     e.train_nll, e.val_e_hat, improved ? " *" : "");
      });
  save_checkpoint(r.model, dir / "model.ckpt");
  write_text(dir / "history.csv", r.history.to_csv());
  spdlog::info("best epoch {}", r.history.best_epoch);
}

void cmd_eval(const CommonOptions& o, const EvalOptions& e) {
  Dataset test = load_split(o.data, "test");
  limit(test, e.scenes);
  if (test.scenes.empty()) throw ValidationError("test set is empty");
  if (e.models.empty() && !e.kde) {
    throw ValidationError("eval needs --model and/or --kde");
  }
  if (!(e.perturb_std > 0.0)) throw ValidationError("--perturb-std must be > 0");
  const fs::path dir = prepare_out(o);
  json opts = to_json(o);
  opts["models"] = e.models;
  opts["kde"] = e.kde;
  opts["curve_ks"] = e.curve_ks;
  opts["scenes"] = e.scenes;
  opts["perturb_std"] = e.perturb_std;
  write_config(dir, "eval", opts);

  const PerturbSpec spec{e.perturb_std, o.seed};
  std::vector<MetricReport> reports;
  std::vector<Series> curves;
  auto evaluate = [&](const std::string& name, const Sampler& sampler,
                      const Estimate& e_hat) {
    MetricReport r;
    r.model = name;
    r.scenes = static_cast<Index>(test.scenes.size());
    r.k = o.k;
    r.e_hat = e_hat;
    r.e_hat_suspicious = e_hat.mean < -3.0 * e_hat.std_error;
    const SampleMetrics sm = sample_metrics(sampler, test, o.k,
                                            o.crash_threshold, o.seed, o.jobs);
    r.m_hat = sm.m_hat;
    r.per_agent_m_hat = sm.per_agent;
    r.crash_rate = sm.crash_rate;
    r.crash_threshold = o.crash_threshold;
    reports.push_back(r);
    spdlog::info("{}: e_hat {:.4f} m_hat {:.4f} crash {:.4f}", name,
                 r.e_hat.mean, r.m_hat.mean, r.crash_rate);
    if (!e.curve_ks.empty()) {
      const auto c = min_msd_curve(sampler, test, e.curve_ks, o.seed, o.jobs);
      Series s;
      s.label = name;
      for (std::size_t i = 0; i < c.size(); ++i) {
        s.x.push_back(static_cast<double>(e.curve_ks[i]));
        s.y.push_back(c[i].mean);
      }
      curves.push_back(s);
    }
  };

  json extra = json::object();
  std::vector<EspModel> models;
  models.reserve(e.models.size());
  for (const std::string& path : e.models) {
    models.push_back(load_model(path));
    const EspModel& m = models.back();
    evaluate(model_name(m), esp_sampler(m), extra_nats(m, test, spec, o.jobs));
  }
  KdeModel kde;
  if (e.kde) {
    const Dataset train_set = load_split(o.data, "train");
    const Dataset val_set = load_split(o.data, "val");
    const double bw =
        kde_select_bandwidth(train_set, val_set, default_bandwidths());
    kde = kde_fit(train_set, bw);
    extra["kde_bandwidth"] = bw;
    evaluate("kde", kde_sampler(kde), extra_nats(kde_log_density(kde), test, spec));
  }

  json j = {{"reports", json::array()}};
  std::string csv = metric_csv_header() + "\n";
  for (const MetricReport& r : reports) {
    j["reports"].push_back(precog::to_json(r));
    csv += metric_csv_row(r) + "\n";
  }
  for (auto& [key, value] : extra.items()) j[key] = value;
  write_text(dir / "metrics.json", j.dump(2) + "\n");
  write_text(dir / "metrics.csv", csv);
  if (!curves.empty()) {
    std::string c = "model,k,m_hat\n";
    for (const Series& s : curves) {
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        c += s.label + "," + fixed(s.x[i]) + "," + fixed(s.y[i]) + "\n";
      }
    }
    write_text(dir / "min_msd_curve.csv", c);
    write_text(dir / "min_msd_curve.svg",
               render_line_chart(curves, "minMSD vs K", "K", "m_hat"));
  }
}

void cmd_forecast(const CommonOptions& o, const ForecastOptions& f) {
  Dataset test = load_split(o.data, "test");
  limit(test, f.scenes);
  if (test.scenes.empty()) throw ValidationError("test set is empty");
  const EspModel model = load_model(f.model);
  const fs::path dir = prepare_out(o);
  json opts = to_json(o);
  opts["model"] = f.model;
  opts["scenes"] = f.scenes;
  opts["svg_count"] = f.svg_count;
  write_config(dir, "forecast", opts);

  std::vector<SampleSet> sets(test.scenes.size());
  parallel_for(test.scenes.size(), o.jobs, [&](std::size_t i) {
    const Scene& s = test.scenes[i];
    Rng rng = Rng::stream(o.seed, "sampling/" + s.scene_id);
    sets[i] = sample(model, s, o.k, rng);
  });
  json scenes = json::array();
  for (std::size_t i = 0; i < sets.size(); ++i) {
    json samples = json::array();
    for (const Positions& x : sets[i].x) {
      samples.push_back(positions_to_json(x, x.cols() / 2));
    }
    scenes.push_back({{"scene_id", test.scenes[i].scene_id},
                      {"samples", samples},
                      {"log_prob", sets[i].log_prob}});
  }
  write_text(dir / "samples.json",
             json({{"model", model_name(model)}, {"k", o.k}, {"seed", o.seed},
                   {"scenes", scenes}})
                     .dump() +
                 "\n");
  const Index n_svg = std::min<Index>(f.svg_count, static_cast<Index>(sets.size()));
  for (Index i = 0; i < n_svg; ++i) {
    const Scene& s = test.scenes[i];
    write_text(dir / ("forecast_" + s.scene_id + ".svg"),
               render_forecast(s, sets[i].x, s.scene_id));
  }
}

struct SceneOutcome {
  std::vector<Positions> prior;
  PlanResult plan;
  Goal goal;
};

void cmd_plan(const CommonOptions& o, const PlanCliOptions& p) {
  Dataset test = load_split(o.data, "test");
  limit(test, p.scenes);
  if (test.scenes.empty()) throw ValidationError("test set is empty");
  const EspModel model = load_model(p.model);
  PlanOptions po;
  po.k = o.k;
  po.max_iters = p.max_iters;
  po.patience = p.patience;
  po.step_size = p.step_size;
  po.common_random_numbers = p.common_random_numbers;
  po.validate();
  const fs::path dir = prepare_out(o);
  json opts = to_json(o);
  opts["model"] = p.model;
  opts["scenes"] = p.scenes;
  opts["plan"] = precog::to_json(po);
  write_config(dir, "plan", opts);

  std::vector<SceneOutcome> out(test.scenes.size());
  parallel_for(test.scenes.size(), o.jobs, [&](std::size_t i) {
    const Scene& s = test.scenes[i];
    SceneOutcome& r = out[i];
    Rng sampling = Rng::stream(o.seed, "sampling/" + s.scene_id);
    r.prior = sample(model, s, o.k, sampling).x;
    r.goal = Goal{position(s.future, s.horizon() - 1, s.robot_index),
                  o.goal_variance};
    Rng planning = Rng::stream(o.seed, "planning/" + s.scene_id);
    r.plan = precog_forecast(model, s, r.goal, po, planning);
  });

  std::string lines;
  for (std::size_t i = 0; i < out.size(); ++i) {
    lines += json({{"scene_id", test.scenes[i].scene_id},
                   {"goal", {{"target", {out[i].goal.target.x(), out[i].goal.target.y()}},
                             {"variance", out[i].goal.variance}}},
                   {"plan", precog::to_json(out[i].plan)}})
                 .dump() +
             "\n";
  }
  write_text(dir / "plans.jsonl", lines);

  const Index agents = model.config.agents;
  auto summarize_method = [&](const std::string& name, bool planned) {
    std::vector<double> joint;
    std::vector<std::vector<double>> per(static_cast<std::size_t>(agents));
    std::vector<std::vector<Positions>> all;
    std::vector<std::vector<bool>> masks;
    for (std::size_t i = 0; i < out.size(); ++i) {
      const Scene& s = test.scenes[i];
      const auto& x = planned ? out[i].plan.conditioned_samples : out[i].prior;
      joint.push_back(min_msd(x, s.future, s.agent_mask).value);
      const Eigen::VectorXd pa = per_agent_min_msd(x, s.future, s.agent_mask);
      for (Index a = 0; a < agents; ++a) per[a].push_back(pa[a]);
      all.push_back(x);
      masks.push_back(s.agent_mask);
    }
    const Estimate j = summarize(joint);
    std::string row = name + "," + fixed(j.mean) + "," + fixed(j.std_error);
    json pj = json::array();
    for (Index a = 0; a < agents; ++a) {
      const Estimate e = summarize(per[a]);
      row += "," + fixed(e.mean) + "," + fixed(e.std_error);
      pj.push_back({{"mean", e.mean}, {"stderr", e.std_error}});
    }
    const double crash = crash_rate(all, masks, o.crash_threshold);
    row += "," + fixed(crash);
    spdlog::info("{}: m_hat {:.4f} crash {:.4f}", name, j.mean, crash);
    return std::pair{row, json({{"method", name},
                                {"m_hat", {{"mean", j.mean}, {"stderr", j.std_error}}},
                                {"per_agent_m_hat", pj},
                                {"crash_rate", crash}})};
  };
  std::string header = "method,m_hat,m_hat_stderr";
  for (Index a = 0; a < agents; ++a) {
    header += ",m_hat_a" + std::to_string(a) + ",m_hat_a" + std::to_string(a) +
              "_stderr";
  }
  header += ",crash_rate\n";
  const auto before = summarize_method(model_name(model), false);
  const auto after = summarize_method("precog", true);
  write_text(dir / "comparison.csv",
             header + before.first + "\n" + after.first + "\n");
  write_text(dir / "comparison.json",
             json({{"k", o.k}, {"methods", {before.second, after.second}}}).dump(2) +
                 "\n");
}

void cmd_scan(const CommonOptions& o, const ScanOptions& sc) {
  const Dataset test = load_split(o.data, "test");
  if (test.scenes.empty()) throw ValidationError("test set is empty");
  if (sc.scene_index < 0 ||
      sc.scene_index >= static_cast<Index>(test.scenes.size())) {
    throw ValidationError("--scene-index out of range");
  }
  if (sc.grid_n < 1) throw ValidationError("--grid-n must be >= 1");
  if (!(sc.span >= 0.0)) throw ValidationError("--span must be >= 0");
  if (!sc.centre.empty() && sc.centre.size() != 2) {
    throw ValidationError("--centre takes two values");
  }
  const EspModel model = load_model(sc.model);
  const Scene& scene = test.scenes[sc.scene_index];
  PlanOptions po;
  po.k = o.k;
  po.max_iters = sc.max_iters;
  const fs::path dir = prepare_out(o);
  json opts = to_json(o);
  opts["model"] = sc.model;
  opts["scene_index"] = sc.scene_index;
  opts["grid_n"] = sc.grid_n;
  opts["span"] = sc.span;
  opts["centre"] = sc.centre;
  opts["plan"] = precog::to_json(po);
  write_config(dir, "scan", opts);

  const Eigen::Vector2d centre =
      sc.centre.empty()
          ? position(scene.future, scene.horizon() - 1, scene.robot_index)
          : Eigen::Vector2d(sc.centre[0], sc.centre[1]);
  const double cell = sc.grid_n > 1 ? sc.span / static_cast<double>(sc.grid_n - 1) : 1.0;
  std::vector<Eigen::Vector2d> goals;
  for (Index r = 0; r < sc.grid_n; ++r) {
    for (Index c = 0; c < sc.grid_n; ++c) {
      const double off = 0.5 * static_cast<double>(sc.grid_n - 1);
      goals.push_back(centre + cell * Eigen::Vector2d(c - off, r - off));
    }
  }
  Rng rng = Rng::stream(o.seed, "planning/scan/" + scene.scene_id);
  const std::vector<ScanCell> cells =
      posterior_scan(model, scene, goals, o.goal_variance, po, rng, o.jobs);
  std::string csv = "x,y,lhat\n";
  std::vector<double> values;
  std::vector<bool> present;
  for (const ScanCell& c : cells) {
    csv += fixed(c.position.x()) + "," + fixed(c.position.y()) + "," +
           (c.objective ? fixed(*c.objective) : std::string()) + "\n";
    values.push_back(c.objective.value_or(0.0));
    present.push_back(c.objective.has_value());
    if (!c.objective) spdlog::warn("cell ({}, {}) failed: {}", c.position.x(),
                                   c.position.y(), c.error);
  }
  write_text(dir / "scan.csv", csv);
  write_text(dir / "scan.svg",
             render_heatmap(goals, values, present, cell,
                            "planning objective, scene " + scene.scene_id));
}

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("precog");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::level::level_enum level = spdlog::level::info;
  if (const char* env = std::getenv("PRECOG_LOG")) {
    level = spdlog::level::from_str(env);
  }
  spdlog::set_level(level);
}

}  // namespace

int run(int argc, char** argv) {
  if (!spdlog::get("precog")) setup_logging();
  CLI::App app{"ESP multi-agent forecasting and PRECOG planning"};
  app.require_subcommand(1);
  app.fallthrough();

  CommonOptions o;
  app.add_option("--data", o.data,
                 "Dataset directory (train/val/test.jsonl) or a .jsonl file");
  app.add_option("--out", o.out, "Output directory");
  app.add_option("--seed", o.seed, "Run seed")->capture_default_str();
  app.add_option("--k", o.k, "Samples per scene")->capture_default_str();
  app.add_option("--mode", o.mode, "Model coupling")
      ->check(CLI::IsMember({"joint", "independent"}))
      ->capture_default_str();
  app.add_option("--noise-std", o.noise_std,
                 "Std (m) of training noise on past positions")
      ->capture_default_str();
  app.add_option("--goal-variance", o.goal_variance, "Goal likelihood variance (m^2)")
      ->capture_default_str();
  app.add_option("--crash-threshold", o.crash_threshold,
                 "Pairwise distance (m) counted as a crash")
      ->capture_default_str();
  app.add_option("--jobs", o.jobs, "Worker threads")->capture_default_str();

  GenOptions g;
  auto* gen = app.add_subcommand("gen-didactic", "Generate the didactic datasets");
  gen->add_option("--n-train", g.n_train)->capture_default_str();
  gen->add_option("--n-val", g.n_val)->capture_default_str();
  gen->add_option("--n-test", g.n_test)->capture_default_str();
  gen->add_option("--turn-probability", g.turn_probability)->capture_default_str();

  TrainOptions t;
  auto* tr = app.add_subcommand("train", "Train a model by maximum likelihood");
  tr->add_option("--epochs", t.max_epochs, "Maximum epochs")->capture_default_str();
  tr->add_option("--patience", t.patience)->capture_default_str();
  tr->add_option("--lr", t.learning_rate)->capture_default_str();
  tr->add_option("--batch-size", t.batch_size)->capture_default_str();
  tr->add_option("--val-scenes", t.val_scenes,
                 "Validation scenes used for early stopping (0 = all)")
      ->capture_default_str();
  tr->add_option("--future-noise-std", t.future_noise_std,
                 "Std (m) of the perturbation applied to expert futures")
      ->capture_default_str();

  EvalOptions e;
  auto* ev = app.add_subcommand("eval", "Compute extra nats, minMSD and crash rate");
  ev->add_option("--model", e.models, "Checkpoint (repeatable)");
  ev->add_flag("--kde", e.kde, "Also evaluate the KDE baseline");
  ev->add_option("--curve", e.curve_ks, "K values for a minMSD-vs-K curve");
  ev->add_option("--scenes", e.scenes, "Use only the first N test scenes");
  ev->add_option("--perturb-std", e.perturb_std)->capture_default_str();

  ForecastOptions f;
  auto* fc = app.add_subcommand("forecast", "Draw joint samples per scene");
  fc->add_option("--model", f.model, "Checkpoint");
  fc->add_option("--scenes", f.scenes, "Use only the first N scenes");
  fc->add_option("--svg-count", f.svg_count)->capture_default_str();

  PlanCliOptions p;
  auto* pl = app.add_subcommand("plan", "Goal-conditioned forecasting");
  pl->add_option("--model", p.model, "Checkpoint");
  pl->add_option("--scenes", p.scenes, "Use only the first N scenes");
  pl->add_option("--max-iters", p.max_iters)->capture_default_str();
  pl->add_option("--patience", p.patience)->capture_default_str();
  pl->add_option("--step-size", p.step_size)->capture_default_str();
  pl->add_flag("--common-random-numbers", p.common_random_numbers,
               "Keep one human latent batch for every ascent step");

  ScanOptions sc;
  auto* scn = app.add_subcommand("scan", "Planning objective over a goal grid");
  scn->add_option("--model", sc.model, "Checkpoint");
  scn->add_option("--scene-index", sc.scene_index)->capture_default_str();
  scn->add_option("--grid-n", sc.grid_n, "Cells per side")->capture_default_str();
  scn->add_option("--span", sc.span, "Grid side length (m)")->capture_default_str();
  scn->add_option("--centre", sc.centre, "Grid centre x y (default: expert endpoint)")
      ->expected(2);
  scn->add_option("--max-iters", sc.max_iters)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    if (app.get_subcommands().empty()) {
      std::cout << app.help("", CLI::AppFormatMode::All);
      return 0;
    }
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return 1;
  }

  try {
    check_common(o);
    if (gen->parsed()) cmd_gen(o, g);
    if (tr->parsed()) cmd_train(o, t);
    if (ev->parsed()) cmd_eval(o, e);
    if (fc->parsed()) cmd_forecast(o, f);
    if (pl->parsed()) cmd_plan(o, p);
    if (scn->parsed()) cmd_scan(o, sc);
  } catch (const diff::NumericalError& err) {
    spdlog::error("numerical failure: {}", err.what());
    return 2;
  } catch (const std::exception& err) {
    spdlog::error("{}", err.what());
    return 1;
  }
  return 0;
}

}  // namespace precog::cli
