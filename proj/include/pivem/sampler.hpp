#pragma once

// Synthetic continuous-time networks: exact thinning from a latent model and
// a block model with groups redrawn on every interval.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "pivem/gp_prior.hpp"
#include "pivem/latent_model.hpp"
#include "pivem/parallel.hpp"
#include "pivem/rng.hpp"
#include "pivem/temporal_graph.hpp"

namespace pivem {

/// Inflation applied to the exact per-bin intensity supremum.
inline constexpr double kThinningSlack = 1.05;

/// Exact supremum of the intensity of a segment over [lo, hi].
inline double intensity_supremum(const SegmentQuadratic& q, double beta, double lo, double hi) {
  double qmin = std::min(q.at(lo), q.at(hi));
  if (q.a2 > 0.0) {
    const double s = q.critical_time();
    if (s > lo && s < hi) qmin = std::min(qmin, q.vertex);
  }
  return std::exp(beta - qmin);
}

namespace detail {

/// Homogeneous Poisson arrivals on [0, length) at `rate`.
template <typename Fn>
void poisson_arrivals(Rng& rng, double rate, double length, Fn&& emit) {
  if (!(rate > 0.0)) return;
  double s = 0.0;
  while (true) {
    s += -std::log1p(-uniform01(rng)) / rate;
    if (s >= length) return;
    emit(s);
  }
}

}  // namespace detail

/// Draws every dyad's events from the model's intensity by Lewis-Shedler
/// thinning, bin by bin. Each dyad uses its own derived stream, so the result
/// does not depend on `threads`.
inline EventGraph sample_network_from_model(const ModelState& m, std::uint64_t seed, std::size_t threads = 1) {
  const std::size_t n = m.num_nodes();
  const std::vector<Dyad> dyads = all_dyads(n);
  const std::vector<Matrix> starts = m.bin_starts();
  const double width = m.bin_width();
  std::vector<std::vector<Event>> per_dyad(dyads.size());
  const std::size_t chunks = std::max<std::size_t>(1, threads);
  std::vector<std::string> errors(chunks);
  for_each_chunk(dyads.size(), chunks, [&](std::size_t c, std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end && errors[c].empty(); ++k) {
      const Dyad d = dyads[k];
      Rng rng = make_rng(seed, 1'000'000 + k);
      const double beta = m.beta[d.i] + m.beta[d.j];
      for (std::size_t b = 0; b < m.num_bins(); ++b) {
        const SegmentQuadratic q = detail::bin_quadratic(starts, m, d.i, d.j, b);
        const double bound = kThinningSlack * intensity_supremum(q, beta, 0.0, width);
        if (!std::isfinite(bound)) {
          errors[c] = "intensity bound is not finite";
          break;
        }
        detail::poisson_arrivals(rng, bound, width, [&](double s) {
          if (uniform01(rng) * bound <= std::exp(beta - q.at(s)))
            per_dyad[k].push_back({d.i, d.j, std::min(double(b) * width + s, m.horizon)});
        });
      }
    }
  });
  for (const auto& e : errors)
    if (!e.empty()) throw std::runtime_error(e);
  EventGraph g;
  g.num_nodes = n;
  g.horizon = m.horizon;
  for (auto& v : per_dyad) g.events.insert(g.events.end(), v.begin(), v.end());
  std::sort(g.events.begin(), g.events.end(), event_less);
  return g;
}

// ---------------------------------------------------------------------------
// Block network

enum class BlockRate {
  kPerUnitTime,     // rate applies per unit time, scaled by interval length
  kPerInterval,     // rate is the expected count per interval
};

struct BlockSpec {
  std::size_t num_intervals = 10;
  std::size_t num_groups = 20;
  double rate = 5.0;
  BlockRate rate_mode = BlockRate::kPerUnitTime;
};

/// Group of every node on every interval: nodes are shuffled and dealt
/// round-robin into groups.
inline std::vector<std::vector<std::size_t>> block_assignments(const BlockSpec& spec, std::size_t n,
                                                               std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> out(spec.num_intervals, std::vector<std::size_t>(n));
  for (std::size_t k = 0; k < spec.num_intervals; ++k) {
    Rng rng = make_rng(seed, 2'000 + k);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    shuffle(order.begin(), order.end(), rng);
    for (std::size_t p = 0; p < n; ++p) out[k][order[p]] = p % spec.num_groups;
  }
  return out;
}

inline EventGraph sample_block_network(const BlockSpec& spec, std::size_t n, std::uint64_t seed) {
  if (spec.num_intervals == 0 || spec.num_groups == 0) throw std::invalid_argument("empty block specification");
  if (n < spec.num_groups) throw std::invalid_argument("need at least as many nodes as groups");
  if (!(spec.rate >= 0.0)) throw std::invalid_argument("rate must be non-negative");
  const auto groups = block_assignments(spec, n, seed);
  const double length = 1.0 / double(spec.num_intervals);
  const double density = spec.rate_mode == BlockRate::kPerUnitTime ? spec.rate : spec.rate / length;
  EventGraph g;
  g.num_nodes = n;
  g.horizon = 1.0;
  for (std::size_t k = 0; k < spec.num_intervals; ++k) {
    const double start = double(k) * length;
    for (NodeId i = 0; i < n; ++i)
      for (NodeId j = i + 1; j < n; ++j) {
        if (groups[k][i] != groups[k][j]) continue;
        Rng rng = make_rng(seed, derive_seed(k, dyad_index({i, j}, n)));
        detail::poisson_arrivals(rng, density, length, [&](double s) { g.events.push_back({i, j, start + s}); });
      }
  }
  std::sort(g.events.begin(), g.events.end(), event_less);
  return g;
}

// ---------------------------------------------------------------------------
// Prior-driven network

struct PriorNetworkSpec {
  std::size_t nodes = 25;
  std::size_t dim = 2;
  std::size_t bins = 20;
  std::size_t rank = 5;
  double lambda = 1.0;
  double sigma = 0.5;
  double sigma_rbf = 0.1;
  double c_x0 = 0.3;
  double community_strength = 30.0;  // logit margin of each node's own community
  double generation_horizon = 20.0;  // events are drawn on [0, this] and rescaled to [0, 1]
};

struct PriorNetwork {
  EventGraph graph;   // horizon 1
  ModelState truth;   // the generating model expressed on [0, 1]
  PriorState prior;
};

/// Nodes are split into `rank` equal communities; embeddings are drawn from
/// the prior with those communities, biases are zero, and events are sampled
/// by thinning on the generation horizon before the timeline is mapped to [0, 1].
inline PriorNetwork generate_prior_network(const PriorNetworkSpec& spec, std::uint64_t seed,
                                           std::size_t threads = 1) {
  if (spec.rank == 0 || spec.rank > spec.nodes) throw std::invalid_argument("rank must lie in [1, nodes]");
  if (!(spec.generation_horizon > 0.0)) throw std::invalid_argument("generation horizon must be positive");
  PriorNetwork out;
  out.prior = PriorState::make(spec.nodes, spec.rank, spec.lambda, spec.sigma, spec.sigma_rbf, spec.c_x0);
  for (std::size_t v = 0; v < spec.nodes; ++v)
    out.prior.q_raw(Eigen::Index(v), Eigen::Index(v * spec.rank / spec.nodes)) = spec.community_strength;
  ModelState m = sample_prior(out.prior, spec.bins, spec.generation_horizon, spec.dim, seed);
  EventGraph g = sample_network_from_model(m, derive_seed(seed, 7), threads);

  // Same trajectories and event law on the unit timeline: r'(u) = r(T u),
  // lambda'(u) = T lambda(T u).
  const double t_gen = spec.generation_horizon;
  for (auto& v : m.velocity) v *= t_gen;
  m.beta.array() += 0.5 * std::log(t_gen);
  m.horizon = 1.0;
  for (auto& e : g.events) e.t = std::min(1.0, e.t / t_gen);
  g.horizon = 1.0;
  out.graph = std::move(g);
  out.truth = std::move(m);
  return out;
}

}  // namespace pivem
