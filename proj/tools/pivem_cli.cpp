// Command-line front end: generate, train, evaluate, animate, inspect.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pivem/pivem.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pivem;

namespace {

constexpr const char* kToolVersion = "0.1.0";

/// Invalid flag combination detected after parsing; exits with the usage code.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(p.string() + ": " + e.what());
  }
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

/// Appends one entry to the run directory's manifest.
void record(const fs::path& dir, const std::string& command, const std::vector<std::string>& argv,
            std::uint64_t seed, const std::vector<std::string>& outputs) {
  const fs::path path = dir / "manifest.json";
  json manifest = fs::exists(path) ? read_json(path) : json{{"tool_version", kToolVersion}, {"entries", json::array()}};
  manifest["entries"].push_back({{"command", command}, {"argv", argv}, {"seed", seed}, {"outputs", outputs}});
  write_json(path, manifest);
}

Checkpoint load_checkpoint(const fs::path& p) {
  if (!fs::exists(p)) throw std::runtime_error("missing checkpoint " + p.string());
  return checkpoint_from_json(read_json(p));
}

// ---------------------------------------------------------------------------
// generate

struct GenerateArgs {
  std::string kind = "prior";
  std::size_t nodes = 0;
  PriorNetworkSpec prior;
  BlockSpec block;
  std::string rate_mode = "per-unit-time";
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string out;
};

void add_generate(CLI::App& app, GenerateArgs& a) {
  app.add_option("--kind", a.kind, "prior: sampled from the latent prior; block: groups redrawn per interval")
      ->check(CLI::IsMember({"prior", "block"}));
  app.add_option("--nodes", a.nodes, "Number of nodes (default 25 for prior, 100 for block)");
  app.add_option("--dim", a.prior.dim, "[prior] Latent dimension")->capture_default_str();
  app.add_option("--bins", a.prior.bins, "[prior] Number of velocity bins")->capture_default_str();
  app.add_option("--rank", a.prior.rank, "[prior] Number of node communities")->capture_default_str();
  app.add_option("--lambda", a.prior.lambda, "[prior] Prior scale")->capture_default_str();
  app.add_option("--sigma", a.prior.sigma, "[prior] Prior noise standard deviation")->capture_default_str();
  app.add_option("--sigma-rbf", a.prior.sigma_rbf, "[prior] Velocity kernel length scale")->capture_default_str();
  app.add_option("--c-x0", a.prior.c_x0, "[prior] Initial position variance")->capture_default_str();
  app.add_option("--community-strength", a.prior.community_strength, "[prior] Community logit margin")
      ->capture_default_str();
  app.add_option("--time-scale", a.prior.generation_horizon, "[prior] Generation horizon mapped onto [0, 1]")
      ->capture_default_str();
  app.add_option("--intervals", a.block.num_intervals, "[block] Number of intervals")->capture_default_str();
  app.add_option("--groups", a.block.num_groups, "[block] Groups per interval")->capture_default_str();
  app.add_option("--rate", a.block.rate, "[block] Within-group intensity")->capture_default_str();
  app.add_option("--rate-mode", a.rate_mode, "[block] per-unit-time or per-interval")
      ->check(CLI::IsMember({"per-unit-time", "per-interval"}))
      ->capture_default_str();
  app.add_option("--seed", a.seed, "Random seed")->capture_default_str();
  app.add_option("--threads", a.threads, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--out", a.out, "Run directory")->required();
}

int run_generate(const CLI::App& app, GenerateArgs& a, const std::vector<std::string>& argv) {
  const std::vector<std::string> prior_only = {"--dim",   "--bins", "--rank",  "--lambda",    "--sigma",
                                               "--sigma-rbf", "--c-x0", "--community-strength", "--time-scale"};
  const std::vector<std::string> block_only = {"--intervals", "--groups", "--rate", "--rate-mode"};
  for (const auto& f : a.kind == "prior" ? block_only : prior_only)
    if (app.count(f) > 0) throw UsageError(f + " does not apply to --kind " + a.kind);

  const fs::path dir(a.out);
  fs::create_directories(dir);
  EventGraph g;
  json truth;
  if (a.kind == "prior") {
    a.prior.nodes = a.nodes ? a.nodes : 25;
    const PriorNetwork net = generate_prior_network(a.prior, a.seed, a.threads);
    g = net.graph;
    truth = {{"kind", "prior"},
             {"spec",
              {{"nodes", a.prior.nodes},
               {"dim", a.prior.dim},
               {"bins", a.prior.bins},
               {"rank", a.prior.rank},
               {"lambda", a.prior.lambda},
               {"sigma", a.prior.sigma},
               {"sigma_rbf", a.prior.sigma_rbf},
               {"c_x0", a.prior.c_x0},
               {"community_strength", a.prior.community_strength},
               {"time_scale", a.prior.generation_horizon}}},
             {"checkpoint", to_json(Checkpoint{net.truth, net.prior})}};
  } else {
    const std::size_t n = a.nodes ? a.nodes : 100;
    a.block.rate_mode = a.rate_mode == "per-interval" ? BlockRate::kPerInterval : BlockRate::kPerUnitTime;
    if (n < a.block.num_groups) throw UsageError("--nodes must be at least --groups");
    g = sample_block_network(a.block, n, a.seed);
    truth = {{"kind", "block"},
             {"spec",
              {{"nodes", n},
               {"intervals", a.block.num_intervals},
               {"groups", a.block.num_groups},
               {"rate", a.block.rate},
               {"rate_mode", a.rate_mode}}},
             {"assignments", block_assignments(a.block, n, a.seed)}};
  }
  save_events((dir / "events.txt").string(), g);
  write_json(dir / "truth.json", truth);
  record(dir, "generate", argv, a.seed, {"events.txt", "truth.json"});
  std::cout << graph_stats(g).line() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// inspect

struct InspectArgs {
  std::string path;
  bool weighted = false;
};

int run_inspect(const InspectArgs& a) {
  const fs::path p(a.path);
  if (p.extension() == ".json") {
    const Checkpoint c = load_checkpoint(p);
    std::cout << "nodes=" << c.model.num_nodes() << " dim=" << c.model.dim() << " bins=" << c.model.num_bins()
              << " horizon=" << c.model.horizon << " lambda=" << c.prior.lambda() << '\n';
    return 0;
  }
  std::cout << graph_stats(load_events(a.path, a.weighted)).line() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string events;
  std::string out;
  std::string config;
  bool weighted = false;
  bool keep_time = false;
  TrainConfig cfg;
};

void add_train(CLI::App& app, TrainArgs& a) {
  app.add_option("--events", a.events, "Edge list: i j t [w]")->required()->check(CLI::ExistingFile);
  app.add_option("--out", a.out, "Run directory")->required();
  app.add_option("--config", a.config, "JSON training config; explicit flags override it")->check(CLI::ExistingFile);
  app.add_flag("--weighted", a.weighted, "Replicate events by the integer weight column");
  app.add_flag("--keep-time", a.keep_time, "Skip mapping event times onto [0, 1]");
  TrainConfig& c = a.cfg;
  app.add_option("--seed", c.seed, "Random seed")->capture_default_str();
  app.add_option("--threads", c.threads, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--dim", c.dim, "Latent dimension")->capture_default_str();
  app.add_option("--bins", c.bins, "Number of velocity bins")->capture_default_str();
  app.add_option("--rank", c.rank, "Rank of the node covariance")->capture_default_str();
  app.add_option("--restarts", c.restarts, "Independent initializations")->capture_default_str();
  app.add_option("--phase-epochs", c.phase_epochs, "Epochs of each warm-up phase")->capture_default_str();
  app.add_option("--anneal-epochs", c.anneal_epochs, "Epochs per prior scale")->capture_default_str();
  app.add_option("--learning-rate", c.adam.learning_rate, "Adam step size")->capture_default_str();
  app.add_option("--batch-size", c.batch_size, "Nodes per epoch (0 selects min(N, 256))")->capture_default_str();
  app.add_option("--lambda-ladder", c.lambda_ladder, "Decreasing prior scales")->expected(1, -1);
  app.add_flag("--static", c.freeze_velocity, "Keep velocities at zero");
  app.add_flag("--rescale-batch", c.rescale_batch, "Weight batch likelihoods by inverse inclusion probability");
  app.add_flag("--select-by-masked-nll", c.select_by_masked_nll, "Pick the restart with the best masked likelihood");
  app.add_flag("--check-gradients", c.check_gradients, "Record finite-difference gradient checks");
}

/// Config file values, then every flag the user set explicitly.
TrainConfig resolve_config(const CLI::App& app, const TrainArgs& a) {
  if (a.config.empty()) {
    a.cfg.validate();
    return a.cfg;
  }
  TrainConfig c = train_config_from_json(read_json(a.config));
  const TrainConfig& f = a.cfg;
  auto set = [&](const char* flag) { return app.count(flag) > 0; };
  if (set("--seed")) c.seed = f.seed;
  if (set("--threads")) c.threads = f.threads;
  if (set("--dim")) c.dim = f.dim;
  if (set("--bins")) c.bins = f.bins;
  if (set("--rank")) c.rank = f.rank;
  if (set("--restarts")) c.restarts = f.restarts;
  if (set("--phase-epochs")) c.phase_epochs = f.phase_epochs;
  if (set("--anneal-epochs")) c.anneal_epochs = f.anneal_epochs;
  if (set("--learning-rate")) c.adam.learning_rate = f.adam.learning_rate;
  if (set("--batch-size")) c.batch_size = f.batch_size;
  if (set("--lambda-ladder")) c.lambda_ladder = f.lambda_ladder;
  if (set("--static")) c.freeze_velocity = true;
  if (set("--rescale-batch")) c.rescale_batch = true;
  if (set("--select-by-masked-nll")) c.select_by_masked_nll = true;
  if (set("--check-gradients")) c.check_gradients = true;
  c.validate();
  return c;
}

int run_train(const CLI::App& app, const TrainArgs& a, const std::vector<std::string>& argv) {
  TrainConfig cfg;
  try {
    cfg = resolve_config(app, a);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  EventGraph g = load_events(a.events, a.weighted);
  if (!a.keep_time) g = normalize_time(g);
  SplitOptions opt;
  opt.mask_fraction = cfg.mask_fraction;
  const SplitResult s = split(g, cfg.seed, opt);

  const fs::path dir(a.out);
  fs::create_directories(dir);
  write_json(dir / "config.json", to_json(cfg));
  write_json(dir / "split.json", to_json(s));
  const fs::path stage_path = dir / "stage_checkpoint.json";
  auto on_stage = [&](const StageSnapshot& snap) {
    json j = to_json(Checkpoint{*snap.model, *snap.prior});
    j["stage"] = {{"restart", snap.restart}, {"masked", snap.masked_run}, {"lambda", snap.lambda}};
    write_json(stage_path, j);
    std::cerr << "restart " << snap.restart << (snap.masked_run ? " masked" : " final") << " lambda=" << snap.lambda
              << '\n';
  };
  const FitResult r = fit(s.residual, cfg, s.masked_dyads, on_stage);
  write_json(dir / "checkpoint.json", to_json(Checkpoint{r.model, r.prior}));
  write_json(dir / "anneal_report.json", to_json(r.report));
  record(dir, "train", argv, cfg.seed,
         {"config.json", "split.json", "stage_checkpoint.json", "checkpoint.json", "anneal_report.json"});
  std::cout << "selected_lambda=" << r.report.selected_lambda << " best_restart=" << r.report.best_restart
            << " objective=" << r.report.restarts[r.report.best_restart].final_objective << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateArgs {
  std::string run;
  std::string checkpoint;
  std::string split;
  std::vector<std::string> tasks = {"reconstruction", "completion", "prediction"};
  std::string mode = "frozen";
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::size_t max_per_class = InstanceOptions{}.max_per_class;
  std::string out;
};

void add_evaluate(CLI::App& app, EvaluateArgs& a) {
  app.add_option("--run", a.run, "Run directory written by train")->required();
  app.add_option("--checkpoint", a.checkpoint, "Checkpoint to score (default: <run>/checkpoint.json)");
  app.add_option("--split", a.split, "Split to evaluate on (default: <run>/split.json)");
  app.add_option("--tasks", a.tasks, "Any of reconstruction, completion, prediction")
      ->check(CLI::IsMember({"reconstruction", "completion", "prediction"}))
      ->capture_default_str();
  app.add_option("--mode", a.mode, "Scoring beyond the training window: frozen or extrapolate")
      ->check(CLI::IsMember({"frozen", "extrapolate"}))
      ->capture_default_str();
  app.add_option("--seed", a.seed, "Seed for negative sampling")->capture_default_str();
  app.add_option("--threads", a.threads, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--max-per-class", a.max_per_class, "Instance cap per label")->capture_default_str();
  app.add_option("--out", a.out, "Metrics file (default: <run>/metrics.json)");
}

int run_evaluate(const EvaluateArgs& a, const std::vector<std::string>& argv) {
  const fs::path dir(a.run);
  const Checkpoint c = load_checkpoint(a.checkpoint.empty() ? dir / "checkpoint.json" : fs::path(a.checkpoint));
  const fs::path split_path = a.split.empty() ? dir / "split.json" : fs::path(a.split);
  if (!fs::exists(split_path)) throw std::runtime_error("missing split " + split_path.string());
  const SplitResult s = split_from_json(read_json(split_path));
  if (c.model.num_nodes() != s.residual.num_nodes)
    throw std::runtime_error("checkpoint has " + std::to_string(c.model.num_nodes()) + " nodes but the split has " +
                             std::to_string(s.residual.num_nodes));
  InstanceOptions opt;
  opt.max_per_class = a.max_per_class;
  const FutureScoring mode = future_scoring_from_string(a.mode);
  json rows = json::array();
  std::size_t failures = 0;
  for (const auto& name : a.tasks) {
    try {
      const TaskMetrics t = run_task(task_from_string(name), c.model, s, a.seed, mode, a.threads, opt);
      rows.push_back(to_json(t));
      std::cout << name << " roc_auc=" << t.roc_auc << " pr_auc=" << t.pr_auc << " n_pos=" << t.n_pos
                << " n_neg=" << t.n_neg << '\n';
    } catch (const std::runtime_error& e) {
      ++failures;
      rows.push_back({{"task", name}, {"error", e.what()}, {"seed", a.seed}, {"mode", a.mode}});
      std::cerr << name << ": " << e.what() << '\n';
    }
  }
  const fs::path out = a.out.empty() ? dir / "metrics.json" : fs::path(a.out);
  write_json(out, rows);
  record(dir, "evaluate", argv, a.seed, {fs::relative(out, dir).string()});
  return failures == a.tasks.size() ? 1 : 0;
}

// ---------------------------------------------------------------------------
// animate

struct AnimateArgs {
  std::string run;
  std::string checkpoint;
  std::size_t frames = 50;
  std::string out;
};

void add_animate(CLI::App& app, AnimateArgs& a) {
  app.add_option("--run", a.run, "Run directory written by train")->required();
  app.add_option("--checkpoint", a.checkpoint, "Checkpoint to animate (default: <run>/checkpoint.json)");
  app.add_option("--frames", a.frames, "Number of uniformly spaced frames over [0, T]")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  app.add_option("--out", a.out, "Frame directory (default: <run>/frames)");
}

int run_animate(const AnimateArgs& a, const std::vector<std::string>& argv) {
  const fs::path dir(a.run);
  const Checkpoint c = load_checkpoint(a.checkpoint.empty() ? dir / "checkpoint.json" : fs::path(a.checkpoint));
  const ModelState& m = c.model;
  const fs::path out = a.out.empty() ? dir / "frames" : fs::path(a.out);
  fs::create_directories(out);
  std::ofstream index(out / "frames.csv");
  index << "frame,time\n" << std::setprecision(17);
  for (std::size_t f = 0; f < a.frames; ++f) {
    const double t = a.frames == 1 ? 0.0 : m.horizon * double(f) / double(a.frames - 1);
    char name[32];
    std::snprintf(name, sizeof name, "frame_%05zu.csv", f);
    std::ofstream csv(out / name);
    if (!csv) throw std::runtime_error("cannot write frame " + std::string(name));
    csv << "node";
    for (std::size_t d = 0; d < m.dim(); ++d) csv << ",x" << d + 1;
    csv << '\n' << std::setprecision(17);
    for (NodeId i = 0; i < m.num_nodes(); ++i) {
      const Vector p = position(m, i, t);
      csv << i;
      for (Eigen::Index d = 0; d < p.size(); ++d) csv << ',' << p[d];
      csv << '\n';
    }
    index << f << ',' << t << '\n';
  }
  record(dir, "animate", argv, 0, {fs::relative(out, dir).string()});
  std::cout << "frames=" << a.frames << " dir=" << out.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Piecewise-velocity latent embeddings for continuous-time networks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  GenerateArgs gen;
  CLI::App* generate = app.add_subcommand("generate", "Sample a synthetic network and its ground truth");
  add_generate(*generate, gen);

  InspectArgs insp;
  CLI::App* inspect = app.add_subcommand("inspect", "Print summary statistics of an edge list or checkpoint");
  inspect->add_option("path", insp.path, "Edge list or checkpoint (.json)")->required()->check(CLI::ExistingFile);
  inspect->add_flag("--weighted", insp.weighted, "Replicate events by the integer weight column");

  TrainArgs tr;
  CLI::App* train = app.add_subcommand("train", "Split an edge list and fit the model with prior-scale annealing");
  add_train(*train, tr);

  EvaluateArgs ev;
  CLI::App* evaluate = app.add_subcommand("evaluate", "Score a trained model on the evaluation tasks");
  add_evaluate(*evaluate, ev);

  AnimateArgs an;
  CLI::App* animate = app.add_subcommand("animate", "Export node positions at uniformly spaced times as CSV");
  add_animate(*animate, an);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::vector<std::string> args(argv, argv + argc);
  try {
    if (*generate) return run_generate(*generate, gen, args);
    if (*inspect) return run_inspect(insp);
    if (*train) return run_train(*train, tr, args);
    if (*evaluate) return run_evaluate(ev, args);
    if (*animate) return run_animate(an, args);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
