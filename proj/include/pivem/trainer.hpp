#pragma once

// MAP training: Adam over the penalized likelihood with a sequential
// parameter schedule and a decreasing ladder of prior scales.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pivem/adam.hpp"
#include "pivem/gp_prior.hpp"
#include "pivem/latent_model.hpp"
#include "pivem/rng.hpp"
#include "pivem/temporal_graph.hpp"

namespace pivem {

inline std::vector<double> default_lambda_ladder() {
  std::vector<double> ladder;
  for (int e = 6; e >= -6; --e) ladder.push_back(std::pow(10.0, e));
  return ladder;
}

struct TrainConfig {
  AdamConfig adam;
  std::size_t dim = 2;
  std::size_t bins = 20;
  std::size_t rank = 5;
  std::size_t phase_epochs = 33;
  std::size_t anneal_epochs = 100;
  std::vector<double> lambda_ladder = default_lambda_ladder();
  std::size_t batch_size = 0;  // 0 selects min(N, 256)
  std::uint64_t seed = 0;
  std::size_t restarts = 5;
  double mask_fraction = 0.2;  // used only when no masked set is supplied
  bool freeze_velocity = false;
  bool rescale_batch = false;          // inverse inclusion-probability weighting
  bool select_by_masked_nll = false;   // restart selection rule
  int max_lr_halvings = 2;
  std::size_t threads = 1;
  bool check_gradients = false;
  std::size_t gradient_check_coords = 64;

  void validate() const {
    if (dim == 0 || bins == 0 || rank == 0 || restarts == 0 || anneal_epochs == 0)
      throw std::invalid_argument("dimension, bins, rank, restarts and anneal epochs must be positive");
    if (lambda_ladder.empty()) throw std::invalid_argument("empty lambda ladder");
    for (std::size_t k = 0; k < lambda_ladder.size(); ++k) {
      if (!(lambda_ladder[k] > 0.0)) throw std::invalid_argument("lambda values must be positive");
      if (k > 0 && !(lambda_ladder[k] < lambda_ladder[k - 1]))
        throw std::invalid_argument("lambda ladder must be strictly decreasing");
    }
    if (!(adam.learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (threads == 0) throw std::invalid_argument("thread count must be positive");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"learning_rate", c.adam.learning_rate},
          {"adam_beta1", c.adam.beta1},
          {"adam_beta2", c.adam.beta2},
          {"adam_epsilon", c.adam.epsilon},
          {"dim", c.dim},
          {"bins", c.bins},
          {"rank", c.rank},
          {"phase_epochs", c.phase_epochs},
          {"anneal_epochs", c.anneal_epochs},
          {"lambda_ladder", c.lambda_ladder},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"restarts", c.restarts},
          {"mask_fraction", c.mask_fraction},
          {"freeze_velocity", c.freeze_velocity},
          {"rescale_batch", c.rescale_batch},
          {"select_by_masked_nll", c.select_by_masked_nll},
          {"max_lr_halvings", c.max_lr_halvings},
          {"threads", c.threads},
          {"check_gradients", c.check_gradients},
          {"gradient_check_coords", c.gradient_check_coords}};
}

/// Reads a config; absent keys keep their defaults, unknown keys are errors.
inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "learning_rate") c.adam.learning_rate = value.get<double>();
    else if (key == "adam_beta1") c.adam.beta1 = value.get<double>();
    else if (key == "adam_beta2") c.adam.beta2 = value.get<double>();
    else if (key == "adam_epsilon") c.adam.epsilon = value.get<double>();
    else if (key == "dim") c.dim = value.get<std::size_t>();
    else if (key == "bins") c.bins = value.get<std::size_t>();
    else if (key == "rank") c.rank = value.get<std::size_t>();
    else if (key == "phase_epochs") c.phase_epochs = value.get<std::size_t>();
    else if (key == "anneal_epochs") c.anneal_epochs = value.get<std::size_t>();
    else if (key == "lambda_ladder") c.lambda_ladder = value.get<std::vector<double>>();
    else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
    else if (key == "seed") c.seed = value.get<std::uint64_t>();
    else if (key == "restarts") c.restarts = value.get<std::size_t>();
    else if (key == "mask_fraction") c.mask_fraction = value.get<double>();
    else if (key == "freeze_velocity") c.freeze_velocity = value.get<bool>();
    else if (key == "rescale_batch") c.rescale_batch = value.get<bool>();
    else if (key == "select_by_masked_nll") c.select_by_masked_nll = value.get<bool>();
    else if (key == "max_lr_halvings") c.max_lr_halvings = value.get<int>();
    else if (key == "threads") c.threads = value.get<std::size_t>();
    else if (key == "check_gradients") c.check_gradients = value.get<bool>();
    else if (key == "gradient_check_coords") c.gradient_check_coords = value.get<std::size_t>();
    else throw std::invalid_argument("unknown config key '" + key + "'");
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Objective and gradient

struct ObjectiveValue {
  double log_likelihood = 0.0;
  double log_prior = 0.0;
  double total() const { return log_likelihood + log_prior; }
};

struct ObjectiveGradient {
  ModelGradient model;
  PriorGradient prior;
};

/// Penalized log-likelihood over `dyads`; the likelihood term is multiplied
/// by `likelihood_weight`.
inline ObjectiveValue objective(const ModelState& m, const PriorState& prior, const BinCoefficients& coeffs,
                                std::span<const Dyad> dyads, std::size_t threads = 1,
                                double likelihood_weight = 1.0) {
  ObjectiveValue v;
  v.log_likelihood = likelihood_weight * log_likelihood(m, coeffs, dyads, nullptr, threads);
  v.log_prior = log_prior(prior, m);
  return v;
}

inline ObjectiveValue objective_gradient(const ModelState& m, const PriorState& prior, const BinCoefficients& coeffs,
                                         std::span<const Dyad> dyads, ObjectiveGradient& grad,
                                         std::size_t threads = 1, double likelihood_weight = 1.0) {
  ObjectiveValue v;
  grad.model = ModelGradient::zeros_like(m);
  v.log_likelihood = log_likelihood(m, coeffs, dyads, &grad.model, threads);
  if (likelihood_weight != 1.0) {
    v.log_likelihood *= likelihood_weight;
    grad.model.beta *= likelihood_weight;
    grad.model.x0 *= likelihood_weight;
    for (auto& g : grad.model.velocity) g *= likelihood_weight;
  }
  v.log_prior = log_prior(prior, m, &grad.prior);
  return v;
}

/// Flat view of every trainable quantity; lambda itself is set by the schedule.
class ParameterLayout {
 public:
  enum Block { kBeta, kX0, kVelocity, kHyper, kCommunity, kBlockCount };

  ParameterLayout(std::size_t nodes, std::size_t dim, std::size_t bins, std::size_t rank)
      : n_(nodes), d_(dim), b_(bins), k_(rank) {
    const std::size_t sizes[kBlockCount] = {n_, n_ * d_, b_ * n_ * d_, 3, n_ * k_};
    offset_[0] = 0;
    for (int k = 0; k < kBlockCount; ++k) offset_[k + 1] = offset_[k] + sizes[k];
  }

  std::size_t size() const { return offset_[kBlockCount]; }
  std::size_t begin(Block b) const { return offset_[b]; }
  std::size_t end(Block b) const { return offset_[b + 1]; }

  std::vector<double> pack(const ModelState& m, const PriorState& p) const {
    std::vector<double> x(size());
    auto out = x.begin();
    out = std::copy(m.beta.data(), m.beta.data() + n_, out);
    out = std::copy(m.x0.data(), m.x0.data() + n_ * d_, out);
    for (const auto& v : m.velocity) out = std::copy(v.data(), v.data() + n_ * d_, out);
    *out++ = p.log_sigma;
    *out++ = p.log_sigma_rbf;
    *out++ = p.log_c_x0;
    std::copy(p.q_raw.data(), p.q_raw.data() + n_ * k_, out);
    return x;
  }

  void unpack(std::span<const double> x, ModelState& m, PriorState& p) const {
    const double* in = x.data();
    std::copy(in, in + n_, m.beta.data());
    in += n_;
    std::copy(in, in + n_ * d_, m.x0.data());
    in += n_ * d_;
    for (auto& v : m.velocity) {
      std::copy(in, in + n_ * d_, v.data());
      in += n_ * d_;
    }
    p.log_sigma = *in++;
    p.log_sigma_rbf = *in++;
    p.log_c_x0 = *in++;
    std::copy(in, in + n_ * k_, p.q_raw.data());
  }

  /// Gradient of the loss (negated objective) in the packed layout.
  std::vector<double> pack_loss_gradient(const ObjectiveGradient& g) const {
    std::vector<double> x(size());
    auto out = x.begin();
    auto put = [&](const double* src, std::size_t count, const double* prior_src) {
      for (std::size_t k = 0; k < count; ++k) *out++ = -(src[k] + (prior_src ? prior_src[k] : 0.0));
    };
    put(g.model.beta.data(), n_, nullptr);
    put(g.model.x0.data(), n_ * d_, g.prior.x0.data());
    for (std::size_t b = 0; b < b_; ++b) put(g.model.velocity[b].data(), n_ * d_, g.prior.velocity[b].data());
    *out++ = -g.prior.log_sigma;
    *out++ = -g.prior.log_sigma_rbf;
    *out++ = -g.prior.log_c_x0;
    for (std::size_t k = 0; k < n_ * k_; ++k) *out++ = -g.prior.q_raw.data()[k];
    return x;
  }

  std::vector<bool> mask(std::initializer_list<Block> blocks) const {
    std::vector<bool> active(size(), false);
    for (Block b : blocks) std::fill(active.begin() + long(begin(b)), active.begin() + long(end(b)), true);
    return active;
  }

 private:
  std::size_t n_, d_, b_, k_;
  std::size_t offset_[kBlockCount + 1];
};

/// Largest relative deviation between the analytic gradient and central
/// differences (step h) over up to `max_coords` randomly chosen coordinates;
/// the denominator is max(1, |finite difference|).
inline double gradient_check(const ModelState& m, const PriorState& prior, const BinCoefficients& coeffs,
                             std::span<const Dyad> dyads, std::size_t max_coords, std::uint64_t seed,
                             double h = 1e-5) {
  const ParameterLayout layout(m.num_nodes(), m.dim(), m.num_bins(), prior.rank());
  ObjectiveGradient g;
  objective_gradient(m, prior, coeffs, dyads, g);
  const std::vector<double> analytic = layout.pack_loss_gradient(g);
  std::vector<double> x = layout.pack(m, prior);
  std::vector<std::size_t> coords(x.size());
  std::iota(coords.begin(), coords.end(), 0);
  if (coords.size() > max_coords) {
    Rng rng = make_rng(seed, 31);
    shuffle(coords.begin(), coords.end(), rng);
    coords.resize(max_coords);
  }
  ModelState mm = m;
  PriorState pp = prior;
  auto loss = [&] {
    layout.unpack(x, mm, pp);
    return -objective(mm, pp, coeffs, dyads).total();
  };
  double worst = 0.0;
  for (std::size_t c : coords) {
    const double keep = x[c];
    x[c] = keep + h;
    const double up = loss();
    x[c] = keep - h;
    const double down = loss();
    x[c] = keep;
    const double fd = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(fd - analytic[c]) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Batching and masking

/// Uniform node subset of size s, sorted.
inline std::vector<NodeId> sample_batch(std::size_t n, std::size_t s, Rng& rng) {
  if (s == 0 || s > n) throw std::invalid_argument("batch size must lie in [1, N]");
  std::vector<NodeId> nodes(n);
  std::iota(nodes.begin(), nodes.end(), NodeId{0});
  for (std::size_t k = 0; k < s; ++k) std::swap(nodes[k], nodes[k + uniform_index(rng, n - k)]);
  nodes.resize(s);
  std::sort(nodes.begin(), nodes.end());
  return nodes;
}

inline std::vector<NodeId> sample_batch(std::size_t n, std::size_t s, std::uint64_t seed) {
  Rng rng = make_rng(seed, 41);
  return sample_batch(n, s, rng);
}

/// Dyads among `nodes` (sorted) that are not in `excluded` (sorted).
inline std::vector<Dyad> dyads_within(std::span<const NodeId> nodes, std::span<const Dyad> excluded) {
  std::vector<Dyad> out;
  for (std::size_t a = 0; a < nodes.size(); ++a)
    for (std::size_t b = a + 1; b < nodes.size(); ++b) {
      const Dyad d{nodes[a], nodes[b]};
      if (!std::binary_search(excluded.begin(), excluded.end(), d)) out.push_back(d);
    }
  return out;
}

inline std::vector<Dyad> dyads_excluding(std::size_t n, std::span<const Dyad> excluded) {
  std::vector<NodeId> nodes(n);
  std::iota(nodes.begin(), nodes.end(), NodeId{0});
  return dyads_within(nodes, excluded);
}

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  ModelState model;
  PriorState prior;
};

inline nlohmann::json to_json(const Checkpoint& c) {
  return {{"version", kCheckpointVersion}, {"model", to_json(c.model)}, {"prior", to_json(c.prior)}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("model") || !j.contains("prior")) throw std::runtime_error("not a checkpoint");
  if (j.at("version").get<int>() != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + j.at("version").dump());
  Checkpoint c;
  c.model = model_from_json(j.at("model"));
  c.prior = prior_from_json(j.at("prior"), c.model.num_nodes());
  return c;
}

// ---------------------------------------------------------------------------
// Fitting

struct StageRecord {
  double lambda = 0.0;
  double masked_nll = std::numeric_limits<double>::quiet_NaN();
  double objective = 0.0;  // on all training dyads at the end of the stage
};

struct RestartRecord {
  std::uint64_t seed = 0;
  double learning_rate = 0.0;
  std::vector<StageRecord> masked_trace;
  std::vector<StageRecord> final_trace;
  double selected_lambda = 0.0;
  double final_objective = -std::numeric_limits<double>::infinity();
  double final_masked_nll = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> gradient_check_errors;
  bool failed = false;
  std::string failure;
};

struct AnnealReport {
  std::vector<RestartRecord> restarts;
  std::size_t best_restart = 0;
  double selected_lambda = 0.0;
};

inline nlohmann::json to_json(const StageRecord& s) {
  nlohmann::json j = {{"lambda", s.lambda}, {"objective", s.objective}};
  j["masked_nll"] = std::isnan(s.masked_nll) ? nlohmann::json(nullptr) : nlohmann::json(s.masked_nll);
  if (!std::isnan(s.masked_nll)) j["masked_log_likelihood"] = -s.masked_nll;
  return j;
}

inline nlohmann::json to_json(const AnnealReport& r) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& x : r.restarts) {
    nlohmann::json masked = nlohmann::json::array(), final_trace = nlohmann::json::array();
    for (const auto& s : x.masked_trace) masked.push_back(to_json(s));
    for (const auto& s : x.final_trace) final_trace.push_back(to_json(s));
    runs.push_back({{"seed", x.seed},
                    {"learning_rate", x.learning_rate},
                    {"masked_trace", masked},
                    {"final_trace", final_trace},
                    {"selected_lambda", x.selected_lambda},
                    {"final_objective", std::isfinite(x.final_objective) ? nlohmann::json(x.final_objective)
                                                                         : nlohmann::json(nullptr)},
                    {"gradient_check_errors", x.gradient_check_errors},
                    {"failed", x.failed},
                    {"failure", x.failure}});
  }
  return {{"restarts", runs}, {"best_restart", r.best_restart}, {"selected_lambda", r.selected_lambda}};
}

struct StageSnapshot {
  std::size_t restart = 0;
  bool masked_run = false;
  double lambda = 0.0;
  const ModelState* model = nullptr;
  const PriorState* prior = nullptr;
};

using StageCallback = std::function<void(const StageSnapshot&)>;

struct FitResult {
  ModelState model;
  PriorState prior;
  AnnealReport report;
};

namespace detail {

struct Divergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunOutcome {
  ModelState model;
  PriorState prior;
  std::vector<StageRecord> trace;
  std::vector<double> gradient_errors;
};

inline void initialize(ModelState& m, PriorState& p, Rng& rng) {
  for (auto& b : m.beta) b = uniform(rng, -1.0, 1.0);
  for (Eigen::Index k = 0; k < m.x0.size(); ++k) m.x0.data()[k] = uniform(rng, -1.0, 1.0);
  for (auto& v : m.velocity) v.setZero();
  p.log_sigma = uniform(rng, -1.0, 1.0);
  p.log_sigma_rbf = uniform(rng, -1.0, 1.0);
  p.log_c_x0 = uniform(rng, -1.0, 1.0);
  for (Eigen::Index k = 0; k < p.q_raw.size(); ++k) p.q_raw.data()[k] = uniform(rng, -1.0, 1.0);
}

/// One pass of the schedule: warm-up phases at the first ladder value, then
/// one stage per ladder value with every parameter free.
inline RunOutcome run_schedule(const EventGraph& g, const BinCoefficients& coeffs, const TrainConfig& cfg,
                               std::span<const double> ladder, std::span<const Dyad> masked, std::uint64_t seed,
                               double learning_rate, std::size_t restart, const StageCallback& on_stage) {
  const std::size_t n = g.num_nodes;
  RunOutcome out;
  out.model = ModelState::zeros(n, cfg.dim, cfg.bins, g.horizon);
  out.prior = PriorState::make(n, cfg.rank, ladder.front(), 1.0, 1.0, 1.0);
  Rng rng = make_rng(seed, 51);
  initialize(out.model, out.prior, rng);
  ModelState& m = out.model;
  PriorState& p = out.prior;

  const ParameterLayout layout(n, cfg.dim, cfg.bins, cfg.rank);
  AdamConfig adam_cfg = cfg.adam;
  adam_cfg.learning_rate = learning_rate;
  Adam adam(layout.size(), adam_cfg);
  std::vector<double> x = layout.pack(m, p);

  const std::size_t batch = cfg.batch_size == 0 ? std::min<std::size_t>(n, 256) : cfg.batch_size;
  if (batch > n || batch < 2) throw std::invalid_argument("batch size must lie in [2, N]");
  const std::vector<Dyad> train_dyads = dyads_excluding(n, masked);
  const double weight = cfg.rescale_batch && batch < n
                            ? double(n) * double(n - 1) / (double(batch) * double(batch - 1))
                            : 1.0;
  Rng batch_rng = make_rng(seed, 61);

  using L = ParameterLayout;
  auto epoch = [&](const std::vector<bool>& active) {
    std::vector<Dyad> batch_dyads;
    std::span<const Dyad> dyads = train_dyads;
    if (batch < n) {
      batch_dyads = dyads_within(sample_batch(n, batch, batch_rng), masked);
      dyads = batch_dyads;
    }
    ObjectiveGradient grad;
    const ObjectiveValue v = objective_gradient(m, p, coeffs, dyads, grad, cfg.threads, weight);
    const std::vector<double> gl = layout.pack_loss_gradient(grad);
    if (!std::isfinite(v.total()) || !std::all_of(gl.begin(), gl.end(), [](double z) { return std::isfinite(z); }))
      throw Divergence("non-finite objective or gradient");
    adam.step(x, gl, active);
    layout.unpack(x, m, p);
    if (!m.all_finite()) throw Divergence("non-finite parameters");
  };
  auto check = [&] {
    if (cfg.check_gradients)
      out.gradient_errors.push_back(
          gradient_check(m, p, coeffs, train_dyads, cfg.gradient_check_coords, seed + out.gradient_errors.size()));
  };

  check();
  const auto phase1 = layout.mask({L::kBeta, L::kX0});
  for (std::size_t e = 0; e < cfg.phase_epochs; ++e) epoch(phase1);
  check();
  adam.reset();
  const auto phase2 = cfg.freeze_velocity ? phase1 : layout.mask({L::kBeta, L::kX0, L::kVelocity});
  for (std::size_t e = 0; e < cfg.phase_epochs; ++e) epoch(phase2);
  check();
  adam.reset();
  const auto phase3 = cfg.freeze_velocity ? layout.mask({L::kBeta, L::kX0, L::kHyper, L::kCommunity})
                                          : layout.mask({L::kBeta, L::kX0, L::kVelocity, L::kHyper, L::kCommunity});
  for (double lambda : ladder) {
    p.log_lambda = std::log(lambda);
    for (std::size_t e = 0; e < cfg.anneal_epochs; ++e) epoch(phase3);
    StageRecord rec;
    rec.lambda = lambda;
    rec.objective = objective(m, p, coeffs, train_dyads, cfg.threads).total();
    if (!masked.empty()) rec.masked_nll = -log_likelihood(m, coeffs, masked, nullptr, cfg.threads);
    if (!std::isfinite(rec.objective)) throw Divergence("non-finite objective at stage end");
    out.trace.push_back(rec);
    if (on_stage) on_stage({restart, !masked.empty(), lambda, &m, &p});
  }
  check();
  return out;
}

template <typename Fn>
auto with_retries(const TrainConfig& cfg, RestartRecord& rec, Fn&& run) -> std::optional<decltype(run(0.0))> {
  double lr = cfg.adam.learning_rate;
  for (int attempt = 0; attempt <= cfg.max_lr_halvings; ++attempt, lr *= 0.5) {
    try {
      rec.learning_rate = lr;
      return run(lr);
    } catch (const Divergence& e) {
      rec.failure = e.what();
    }
  }
  rec.failed = true;
  return std::nullopt;
}

}  // namespace detail

/// Full protocol: for each restart, a masked run over the whole ladder picks
/// the prior scale with the lowest masked negative log-likelihood, then an
/// unmasked run repeats the schedule down to that scale.
inline FitResult fit(const EventGraph& g, const TrainConfig& cfg, std::vector<Dyad> masked = {},
                     const StageCallback& on_stage = {}) {
  cfg.validate();
  if (g.num_nodes < 2) throw std::invalid_argument("need at least two nodes");
  if (cfg.rank > g.num_nodes) throw std::invalid_argument("rank exceeds node count");
  const BinCoefficients coeffs(g, cfg.bins);
  if (masked.empty() && cfg.mask_fraction > 0.0) {
    const std::uint64_t total = dyad_count(g.num_nodes);
    const auto want = std::uint64_t(std::floor(cfg.mask_fraction * double(total)));
    std::vector<std::uint64_t> order(total);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_rng(cfg.seed, 71);
    shuffle(order.begin(), order.end(), rng);
    for (std::uint64_t k = 0; k < want; ++k) masked.push_back(dyad_from_index(order[k], g.num_nodes));
  }
  std::sort(masked.begin(), masked.end());

  FitResult best;
  AnnealReport report;
  bool have_best = false;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < cfg.restarts; ++r) {
    RestartRecord rec;
    rec.seed = derive_seed(cfg.seed, 1000 + r);
    std::vector<double> ladder = cfg.lambda_ladder;

    if (!masked.empty()) {
      auto outcome = detail::with_retries(cfg, rec, [&](double lr) {
        return detail::run_schedule(g, coeffs, cfg, cfg.lambda_ladder, masked, rec.seed, lr, r, on_stage);
      });
      if (!outcome) {
        report.restarts.push_back(rec);
        continue;
      }
      rec.masked_trace = outcome->trace;
      rec.gradient_check_errors = outcome->gradient_errors;
      std::size_t arg = 0;
      for (std::size_t k = 1; k < rec.masked_trace.size(); ++k)
        if (rec.masked_trace[k].masked_nll < rec.masked_trace[arg].masked_nll) arg = k;
      ladder.resize(arg + 1);
      rec.final_masked_nll = rec.masked_trace[arg].masked_nll;
    }
    rec.selected_lambda = ladder.back();

    auto outcome = detail::with_retries(cfg, rec, [&](double lr) {
      return detail::run_schedule(g, coeffs, cfg, ladder, {}, rec.seed, lr, r, on_stage);
    });
    if (!outcome) {
      report.restarts.push_back(rec);
      continue;
    }
    rec.final_trace = outcome->trace;
    rec.final_objective = outcome->trace.back().objective;
    for (double e : outcome->gradient_errors) rec.gradient_check_errors.push_back(e);

    const double score = cfg.select_by_masked_nll && !masked.empty() ? -rec.final_masked_nll : rec.final_objective;
    if (!have_best || score > best_score) {
      have_best = true;
      best_score = score;
      best.model = std::move(outcome->model);
      best.prior = std::move(outcome->prior);
      report.best_restart = r;
      report.selected_lambda = rec.selected_lambda;
    }
    report.restarts.push_back(std::move(rec));
  }
  if (!have_best) throw std::runtime_error("every restart diverged");
  best.report = std::move(report);
  return best;
}

}  // namespace pivem
