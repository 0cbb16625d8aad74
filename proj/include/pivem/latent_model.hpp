#pragma once

// Piecewise-linear latent trajectories and the Poisson-process likelihood
// they induce.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "pivem/parallel.hpp"
#include "pivem/special.hpp"
#include "pivem/temporal_graph.hpp"

namespace pivem {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

inline constexpr int kCheckpointVersion = 1;

/// Biases, initial positions and per-bin velocities of every node.
struct ModelState {
  Vector beta;                  // N
  Matrix x0;                    // N x D
  std::vector<Matrix> velocity; // B matrices of N x D
  double horizon = 1.0;

  static ModelState zeros(std::size_t nodes, std::size_t dim, std::size_t bins, double horizon = 1.0) {
    if (bins == 0) throw std::invalid_argument("bin count must be positive");
    ModelState m;
    m.beta = Vector::Zero(Eigen::Index(nodes));
    m.x0 = Matrix::Zero(Eigen::Index(nodes), Eigen::Index(dim));
    m.velocity.assign(bins, Matrix::Zero(Eigen::Index(nodes), Eigen::Index(dim)));
    m.horizon = horizon;
    return m;
  }

  std::size_t num_nodes() const { return std::size_t(beta.size()); }
  std::size_t dim() const { return std::size_t(x0.cols()); }
  std::size_t num_bins() const { return velocity.size(); }
  double bin_width() const { return horizon / double(num_bins()); }

  bool all_finite() const {
    if (!beta.allFinite() || !x0.allFinite()) return false;
    for (const auto& v : velocity)
      if (!v.allFinite()) return false;
    return true;
  }

  /// Positions of every node at the start of each bin, plus the end of the
  /// timeline: B + 1 matrices.
  std::vector<Matrix> bin_starts() const {
    std::vector<Matrix> out;
    out.reserve(num_bins() + 1);
    out.push_back(x0);
    for (const auto& v : velocity) out.push_back(out.back() + bin_width() * v);
    return out;
  }
};

/// Gradient with the same layout as ModelState.
struct ModelGradient {
  Vector beta;
  Matrix x0;
  std::vector<Matrix> velocity;

  static ModelGradient zeros_like(const ModelState& m) {
    ModelGradient g;
    g.beta = Vector::Zero(m.beta.size());
    g.x0 = Matrix::Zero(m.x0.rows(), m.x0.cols());
    g.velocity.assign(m.num_bins(), Matrix::Zero(m.x0.rows(), m.x0.cols()));
    return g;
  }

  ModelGradient& operator+=(const ModelGradient& o) {
    beta += o.beta;
    x0 += o.x0;
    for (std::size_t b = 0; b < velocity.size(); ++b) velocity[b] += o.velocity[b];
    return *this;
  }
};

/// Bin index and local offset of time t. Interior boundaries belong to the
/// bin on their right; t = horizon belongs to the last bin.
struct BinLocation {
  std::size_t bin = 0;
  double offset = 0.0;
};

inline BinLocation locate(double t, double horizon, std::size_t bins) {
  const double width = horizon / double(bins);
  auto b = static_cast<std::size_t>(std::max(0.0, std::floor(t / width)));
  if (b + 1 < bins && double(b + 1) * width <= t) ++b;
  if (b >= bins) b = bins - 1;
  return {b, std::max(0.0, t - double(b) * width)};
}

namespace detail {
inline void check_time(const ModelState& m, double t) {
  if (!(t >= 0.0 && t <= m.horizon))
    throw std::out_of_range("time " + std::to_string(t) + " outside [0, " + std::to_string(m.horizon) + "]");
}
inline void check_pair(const ModelState& m, NodeId i, NodeId j) {
  if (i == j) throw std::invalid_argument("intensity of a node with itself is undefined");
  if (i >= m.num_nodes() || j >= m.num_nodes()) throw std::out_of_range("node id out of range");
}
}  // namespace detail

inline Vector position(const ModelState& m, NodeId i, double t) {
  detail::check_time(m, t);
  const BinLocation loc = locate(t, m.horizon, m.num_bins());
  Vector r = m.x0.row(i).transpose();
  for (std::size_t b = 0; b < loc.bin; ++b) r += m.bin_width() * m.velocity[b].row(i).transpose();
  r += loc.offset * m.velocity[loc.bin].row(i).transpose();
  return r;
}

/// Position beyond the horizon, continuing along the last bin's velocity.
inline Vector position_extrapolated(const ModelState& m, NodeId i, double t) {
  if (t <= m.horizon) return position(m, i, t);
  const std::size_t last = m.num_bins() - 1;
  Vector r = position(m, i, double(last) * m.bin_width());
  return r + (t - double(last) * m.bin_width()) * m.velocity[last].row(i).transpose();
}

inline double intensity(const ModelState& m, NodeId i, NodeId j, double t) {
  detail::check_pair(m, i, j);
  return std::exp(m.beta[i] + m.beta[j] - (position(m, i, t) - position(m, j, t)).squaredNorm());
}

namespace detail {
/// Relative squared distance of (i, j) over bin b, parameterized by local time.
inline SegmentQuadratic bin_quadratic(const std::vector<Matrix>& starts, const ModelState& m, NodeId i,
                                      NodeId j, std::size_t b) {
  return SegmentQuadratic::from(starts[b].row(i) - starts[b].row(j),
                                m.velocity[b].row(i) - m.velocity[b].row(j));
}
}  // namespace detail

/// Exact integral of the intensity of (i, j) over [lower, upper].
inline double integrate_intensity(const ModelState& m, NodeId i, NodeId j, double lower, double upper) {
  detail::check_pair(m, i, j);
  if (lower > upper) throw std::invalid_argument("integration bounds are reversed");
  detail::check_time(m, lower);
  detail::check_time(m, upper);
  if (lower == upper) return 0.0;
  const double width = m.bin_width();
  const double beta = m.beta[i] + m.beta[j];
  const BinLocation first = locate(lower, m.horizon, m.num_bins());
  Eigen::RowVectorXd dx = m.x0.row(i) - m.x0.row(j);
  for (std::size_t b = 0; b < first.bin; ++b) dx += width * (m.velocity[b].row(i) - m.velocity[b].row(j));
  double total = 0.0;
  for (std::size_t b = first.bin; b < m.num_bins(); ++b) {
    const double start = double(b) * width;
    if (start >= upper) break;
    const double lo = std::max(lower - start, 0.0);
    const double hi = std::min(upper - start, width);
    Eigen::RowVectorXd dv = m.velocity[b].row(i) - m.velocity[b].row(j);
    if (hi > lo) total += segment_integral(SegmentQuadratic::from(dx, dv), beta, lo, hi);
    dx += width * dv;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Event statistics per (dyad, bin)

/// Event count and first two moments of local event times inside one bin.
struct BinStatistic {
  std::uint32_t bin = 0;
  std::size_t count = 0;
  double alpha1 = 0.0;
  double alpha2 = 0.0;
};

struct DyadStatistics {
  Dyad dyad;
  std::vector<BinStatistic> bins;  // increasing bin order, only nonempty bins
};

/// Sparse event summaries; once built, the likelihood never loops over events.
class BinCoefficients {
 public:
  BinCoefficients() = default;

  BinCoefficients(const EventGraph& g, std::size_t bins) : num_bins_(bins), horizon_(g.horizon) {
    if (bins == 0) throw std::invalid_argument("bin count must be positive");
    for (const Event& e : g.events) {
      if (dyads_.empty() || dyads_.back().dyad != e.dyad()) {
        index_.emplace(e.dyad().key(), dyads_.size());
        dyads_.push_back({e.dyad(), {}});
      }
      const BinLocation loc = locate(e.t, g.horizon, bins);
      auto& row = dyads_.back().bins;
      if (row.empty() || row.back().bin != loc.bin) row.push_back({static_cast<std::uint32_t>(loc.bin), 0, 0.0, 0.0});
      BinStatistic& s = row.back();
      ++s.count;
      s.alpha1 += loc.offset;
      s.alpha2 += loc.offset * loc.offset;
    }
  }

  std::size_t num_bins() const { return num_bins_; }
  double horizon() const { return horizon_; }
  std::span<const DyadStatistics> dyads() const { return dyads_; }

  const DyadStatistics* find(Dyad d) const {
    auto it = index_.find(d.key());
    return it == index_.end() ? nullptr : &dyads_[it->second];
  }

  std::size_t total_events() const {
    std::size_t n = 0;
    for (const auto& d : dyads_)
      for (const auto& s : d.bins) n += s.count;
    return n;
  }

 private:
  std::size_t num_bins_ = 1;
  double horizon_ = 1.0;
  std::vector<DyadStatistics> dyads_;
  std::unordered_map<std::uint64_t, std::size_t> index_;
};

inline BinCoefficients precompute_coefficients(const EventGraph& g, std::size_t bins) {
  return BinCoefficients(g, bins);
}

// ---------------------------------------------------------------------------
// Log-likelihood

namespace detail {

/// Log-likelihood of one dyad; accumulates into `grad` when non-null.
inline double dyad_log_likelihood(const ModelState& m, const std::vector<Matrix>& starts,
                                  const DyadStatistics* stats, Dyad d, ModelGradient* grad,
                                  std::vector<Eigen::RowVectorXd>& g_start) {
  const std::size_t bins = m.num_bins();
  const double width = m.bin_width();
  const double beta = m.beta[d.i] + m.beta[d.j];
  double value = 0.0;
  double g_beta = 0.0;
  std::size_t next = 0;
  for (std::size_t b = 0; b < bins; ++b) {
    const auto dx = starts[b].row(d.i) - starts[b].row(d.j);
    const auto dv = m.velocity[b].row(d.i) - m.velocity[b].row(d.j);
    const SegmentQuadratic q = SegmentQuadratic::from(dx, dv);
    const BinStatistic* s = nullptr;
    if (stats && next < stats->bins.size() && stats->bins[next].bin == b) s = &stats->bins[next++];

    if (s) {
      const double n = double(s->count);
      value += n * beta - (n * q.c + 2.0 * s->alpha1 * q.p + s->alpha2 * q.a2);
    }
    if (!grad) {
      value -= segment_integral(q, beta, 0.0, width);
      continue;
    }
    const SegmentMoments mom = segment_moments(q, beta, 0.0, width);
    value -= mom.m0;
    g_beta -= mom.m0;
    Eigen::RowVectorXd gx = 2.0 * (mom.m0 * dx + mom.m1 * dv);
    Eigen::RowVectorXd gv = 2.0 * (mom.m1 * dx + mom.m2 * dv);
    if (s) {
      const double n = double(s->count);
      g_beta += n;
      gx -= 2.0 * (n * dx + s->alpha1 * dv);
      gv -= 2.0 * (s->alpha1 * dx + s->alpha2 * dv);
    }
    g_start[b] = gx;
    grad->velocity[b].row(d.i) += gv;
    grad->velocity[b].row(d.j) -= gv;
  }
  if (!grad) return value;

  grad->beta[d.i] += g_beta;
  grad->beta[d.j] += g_beta;
  // Bin-start positions depend on x0 and on every earlier velocity.
  Eigen::RowVectorXd suffix = Eigen::RowVectorXd::Zero(Eigen::Index(m.dim()));
  for (std::size_t b = bins; b-- > 0;) {
    if (b + 1 < bins) {
      grad->velocity[b].row(d.i) += width * suffix;
      grad->velocity[b].row(d.j) -= width * suffix;
    }
    suffix += g_start[b];
  }
  grad->x0.row(d.i) += suffix;
  grad->x0.row(d.j) -= suffix;
  return value;
}

}  // namespace detail

/// Sum over `dyads` of [sum of log-intensities at events - integrated intensity].
/// Contributions are computed in `threads` fixed slices and reduced in order.
inline double log_likelihood(const ModelState& m, const BinCoefficients& coeffs, std::span<const Dyad> dyads,
                             ModelGradient* grad = nullptr, std::size_t threads = 1) {
  if (coeffs.num_bins() != m.num_bins()) throw std::invalid_argument("coefficients built for a different bin count");
  for (const Dyad& d : dyads)
    if (!(d.i < d.j) || d.j >= m.num_nodes()) throw std::out_of_range("dyad outside node range");
  const std::vector<Matrix> starts = m.bin_starts();
  const std::size_t chunks = std::max<std::size_t>(1, std::min(threads, dyads.size()));
  std::vector<double> partial(chunks, 0.0);
  std::vector<ModelGradient> partial_grad;
  if (grad) partial_grad.assign(chunks, ModelGradient::zeros_like(m));
  for_each_chunk(dyads.size(), chunks, [&](std::size_t c, std::size_t begin, std::size_t end) {
    std::vector<Eigen::RowVectorXd> g_start(m.num_bins());
    double sum = 0.0;
    for (std::size_t k = begin; k < end; ++k)
      sum += detail::dyad_log_likelihood(m, starts, coeffs.find(dyads[k]), dyads[k],
                                         grad ? &partial_grad[c] : nullptr, g_start);
    partial[c] = sum;
  });
  double total = 0.0;
  for (std::size_t c = 0; c < chunks; ++c) {
    total += partial[c];
    if (grad) *grad += partial_grad[c];
  }
  return total;
}

// ---------------------------------------------------------------------------
// Embedding-distance bounds

struct BoundRow {
  Dyad dyad;
  double mean_sq_distance = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double radius = 0.0;  // supremum of the squared distance on the interval
  double p_zero = 0.0;
  double p_positive = 0.0;
  bool violated = false;
};

struct BoundReport {
  double t_lower = 0.0;
  double t_upper = 0.0;
  std::vector<BoundRow> rows;
  std::vector<Dyad> skipped;  // zero-or-one event probability numerically degenerate
  std::size_t violations = 0;
};

/// Checks that the time-averaged squared distance of every dyad lies between
/// the bounds implied by its no-event probability over [t_lower, t_upper].
inline BoundReport check_bounds(const ModelState& m, double t_lower, double t_upper, double rel_tol = 1e-9) {
  if (!(t_lower < t_upper)) throw std::invalid_argument("bound interval must have positive length");
  detail::check_time(m, t_lower);
  detail::check_time(m, t_upper);
  BoundReport rep;
  rep.t_lower = t_lower;
  rep.t_upper = t_upper;
  const double length = t_upper - t_lower;
  const double width = m.bin_width();
  const std::vector<Matrix> starts = m.bin_starts();
  const std::size_t first = locate(t_lower, m.horizon, m.num_bins()).bin;
  for (NodeId i = 0; i < m.num_nodes(); ++i)
    for (NodeId j = i + 1; j < m.num_nodes(); ++j) {
      const double mass = integrate_intensity(m, i, j, t_lower, t_upper);
      const double p0 = std::exp(-mass);
      if (!(p0 > 0.0 && p0 < 1.0) || !(mass > 0.0)) {
        rep.skipped.push_back({i, j});
        continue;
      }
      double area = 0.0, sup = 0.0;
      for (std::size_t b = first; b < m.num_bins(); ++b) {
        const double start = double(b) * width;
        if (start >= t_upper) break;
        const double lo = std::max(t_lower - start, 0.0);
        const double hi = std::min(t_upper - start, width);
        if (!(hi > lo)) continue;
        const SegmentQuadratic q = detail::bin_quadratic(starts, m, i, j, b);
        auto cubic = [&](double s) { return q.c * s + q.p * s * s + q.a2 * s * s * s / 3.0; };
        area += cubic(hi) - cubic(lo);
        sup = std::max({sup, q.at(lo), q.at(hi)});
        if (q.a2 > 0.0 && q.critical_time() > lo && q.critical_time() < hi) sup = std::max(sup, q.at(q.critical_time()));
      }
      BoundRow row;
      row.dyad = {i, j};
      row.mean_sq_distance = area / length;
      row.p_zero = p0;
      row.p_positive = 1.0 - p0;
      row.radius = sup;
      row.lower = std::log(length / mass) + m.beta[i] + m.beta[j];
      row.upper = row.lower + sup;
      const double slack = rel_tol * (1.0 + std::abs(row.mean_sq_distance));
      row.violated = row.mean_sq_distance < row.lower - slack || row.mean_sq_distance > row.upper + slack;
      rep.violations += row.violated ? 1 : 0;
      rep.rows.push_back(row);
    }
  return rep;
}

// ---------------------------------------------------------------------------
// Approximation of a continuous curve

/// A curve sampled at increasing times covering [0, horizon]; values are rows.
struct SampledCurve {
  std::vector<double> times;
  Matrix values;  // samples x D
};

/// Sup-norm distance between a sampled curve and the piecewise-linear
/// trajectory that matches it at every bin boundary.
inline double piecewise_approximation_error(const SampledCurve& f, std::size_t bins) {
  const std::size_t n = f.times.size();
  if (bins == 0) throw std::invalid_argument("bin count must be positive");
  if (n < bins + 1) throw std::invalid_argument("need at least bins + 1 samples");
  if (std::size_t(f.values.rows()) != n) throw std::invalid_argument("sample count mismatch");
  const double t0 = f.times.front();
  const double horizon = f.times.back() - t0;
  if (!(horizon > 0.0)) throw std::invalid_argument("curve must span a positive interval");

  auto value_at = [&](double t) -> Eigen::RowVectorXd {
    auto it = std::lower_bound(f.times.begin(), f.times.end(), t);
    if (it == f.times.begin()) return f.values.row(0);
    if (it == f.times.end()) return f.values.row(Eigen::Index(n - 1));
    const auto k = Eigen::Index(it - f.times.begin());
    const double ta = f.times[std::size_t(k - 1)], tb = f.times[std::size_t(k)];
    if (tb == t) return f.values.row(k);
    const double w = (t - ta) / (tb - ta);
    return (1.0 - w) * f.values.row(k - 1) + w * f.values.row(k);
  };

  ModelState m = ModelState::zeros(1, std::size_t(f.values.cols()), bins, horizon);
  const double width = m.bin_width();
  Eigen::RowVectorXd prev = value_at(t0);
  m.x0.row(0) = prev;
  for (std::size_t b = 0; b < bins; ++b) {
    Eigen::RowVectorXd next = value_at(t0 + double(b + 1) * width);
    m.velocity[b].row(0) = (next - prev) / width;
    prev = next;
  }
  double worst = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double t = std::clamp(f.times[k] - t0, 0.0, horizon);
    worst = std::max(worst, (f.values.row(Eigen::Index(k)).transpose() - position(m, 0, t)).norm());
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Checkpoint

inline nlohmann::json matrix_to_json(const Matrix& a) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < a.cols(); ++c) row.push_back(a(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols) {
  if (!j.is_array() || Eigen::Index(j.size()) != rows) throw std::runtime_error("matrix row count mismatch");
  Matrix a(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[std::size_t(r)];
    if (!row.is_array() || Eigen::Index(row.size()) != cols) throw std::runtime_error("matrix column count mismatch");
    for (Eigen::Index c = 0; c < cols; ++c) a(r, c) = row[std::size_t(c)].get<double>();
  }
  return a;
}

// nlohmann emits the shortest decimal that parses back to the same double,
// so the round trip is bit-exact.
inline nlohmann::json to_json(const ModelState& m) {
  nlohmann::json v = nlohmann::json::array();
  for (const auto& vb : m.velocity) v.push_back(matrix_to_json(vb));
  return {{"version", kCheckpointVersion},
          {"N", m.num_nodes()},
          {"D", m.dim()},
          {"B", m.num_bins()},
          {"T", m.horizon},
          {"beta", std::vector<double>(m.beta.data(), m.beta.data() + m.beta.size())},
          {"x0", matrix_to_json(m.x0)},
          {"v", std::move(v)}};
}

inline ModelState model_from_json(const nlohmann::json& j) {
  if (j.at("version").get<int>() != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + j.at("version").dump());
  const auto n = j.at("N").get<Eigen::Index>();
  const auto d = j.at("D").get<Eigen::Index>();
  const auto b = j.at("B").get<std::size_t>();
  ModelState m = ModelState::zeros(std::size_t(n), std::size_t(d), b, j.at("T").get<double>());
  const auto beta = j.at("beta").get<std::vector<double>>();
  if (Eigen::Index(beta.size()) != n) throw std::runtime_error("beta length mismatch");
  m.beta = Eigen::Map<const Vector>(beta.data(), n);
  m.x0 = matrix_from_json(j.at("x0"), n, d);
  const auto& v = j.at("v");
  if (v.size() != b) throw std::runtime_error("velocity bin count mismatch");
  for (std::size_t k = 0; k < b; ++k) m.velocity[k] = matrix_from_json(v[k], n, d);
  return m;
}

}  // namespace pivem
