#pragma once

// Gaussian prior over initial positions and velocities with covariance
//   lambda^2 (sigma^2 I + (Bt kron C kron I_D)),  C = Q Q^T,
// evaluated through its low-rank factor K = L kron Q kron I_D, L L^T = Bt.

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "pivem/latent_model.hpp"
#include "pivem/rng.hpp"

namespace pivem {

/// Added to the diagonal of the RBF block before factorization.
inline constexpr double kTimeKernelJitter = 1e-8;

/// Prior hyperparameters; positive scalars are stored as logarithms.
struct PriorState {
  double log_lambda = 0.0;
  double log_sigma = 0.0;
  double log_sigma_rbf = 0.0;
  double log_c_x0 = 0.0;
  Matrix q_raw;  // N x k, mapped to row-stochastic Q by a row softmax

  static PriorState make(std::size_t nodes, std::size_t rank, double lambda, double sigma, double sigma_rbf,
                         double c_x0) {
    if (rank == 0 || rank > nodes) throw std::invalid_argument("rank must lie in [1, N]");
    if (!(lambda > 0 && sigma > 0 && sigma_rbf > 0 && c_x0 > 0))
      throw std::invalid_argument("prior scales must be positive");
    PriorState p;
    p.log_lambda = std::log(lambda);
    p.log_sigma = std::log(sigma);
    p.log_sigma_rbf = std::log(sigma_rbf);
    p.log_c_x0 = std::log(c_x0);
    p.q_raw = Matrix::Zero(Eigen::Index(nodes), Eigen::Index(rank));
    return p;
  }

  double lambda() const { return std::exp(log_lambda); }
  double sigma() const { return std::exp(log_sigma); }
  double sigma_rbf() const { return std::exp(log_sigma_rbf); }
  double c_x0() const { return std::exp(log_c_x0); }
  std::size_t num_nodes() const { return std::size_t(q_raw.rows()); }
  std::size_t rank() const { return std::size_t(q_raw.cols()); }
};

/// Row softmax of the unconstrained community weights.
inline Matrix effective_q(const Matrix& q_raw) {
  Matrix q(q_raw.rows(), q_raw.cols());
  for (Eigen::Index r = 0; r < q_raw.rows(); ++r) {
    const double mx = q_raw.row(r).maxCoeff();
    q.row(r) = (q_raw.row(r).array() - mx).exp().matrix();
    q.row(r) /= q.row(r).sum();
  }
  return q;
}

/// Dense node covariance Q Q^T; intended for small instances and tests.
inline Matrix build_node_kernel(const PriorState& p) {
  const Matrix q = effective_q(p.q_raw);
  return q * q.transpose();
}

inline std::vector<double> bin_centers(std::size_t bins, double horizon) {
  std::vector<double> c(bins);
  const double width = horizon / double(bins);
  for (std::size_t b = 0; b < bins; ++b) c[b] = (double(b) + 0.5) * width;
  return c;
}

/// [c_x0] direct-sum RBF over bin centers, without jitter.
inline Matrix build_time_kernel(std::size_t bins, double horizon, double sigma_rbf, double c_x0) {
  if (bins == 0) throw std::invalid_argument("bin count must be positive");
  if (!(sigma_rbf > 0.0)) throw std::invalid_argument("RBF lengthscale must be positive");
  const auto centers = bin_centers(bins, horizon);
  Matrix k = Matrix::Zero(Eigen::Index(bins + 1), Eigen::Index(bins + 1));
  k(0, 0) = c_x0;
  for (std::size_t a = 0; a < bins; ++a)
    for (std::size_t b = 0; b < bins; ++b) {
      const double d = centers[a] - centers[b];
      k(Eigen::Index(a + 1), Eigen::Index(b + 1)) = std::exp(-d * d / (2.0 * sigma_rbf * sigma_rbf));
    }
  return k;
}

/// Factorizations shared by every prior evaluation at fixed hyperparameters.
class CapacitanceCache {
 public:
  CapacitanceCache(const PriorState& p, std::size_t bins, double horizon, std::size_t dim)
      : bins_(bins), horizon_(horizon), dim_(dim), prior_(p) {
    if (!std::isfinite(p.log_lambda) || !std::isfinite(p.log_sigma) || !std::isfinite(p.log_sigma_rbf) ||
        !std::isfinite(p.log_c_x0) || !p.q_raw.allFinite())
      throw std::invalid_argument("non-finite prior hyperparameters");
    kernel_ = build_time_kernel(bins, horizon, p.sigma_rbf(), p.c_x0());
    time_cov_ = kernel_;
    for (std::size_t b = 1; b <= bins; ++b) time_cov_(Eigen::Index(b), Eigen::Index(b)) += kTimeKernelJitter;
    Eigen::LLT<Matrix> llt_t(time_cov_);
    if (llt_t.info() != Eigen::Success) throw std::runtime_error("time kernel is not positive definite");
    chol_ = llt_t.matrixL();
    q_ = effective_q(p.q_raw);
    gram_ = q_.transpose() * q_;
    s2_ = std::exp(2.0 * p.log_sigma);

    const Eigen::Index tk = Eigen::Index((bins + 1) * rank());
    const Matrix ltl = chol_.transpose() * chol_;
    cap_ = Matrix::Identity(tk, tk);
    const auto k = Eigen::Index(rank());
    for (Eigen::Index a = 0; a <= Eigen::Index(bins); ++a)
      for (Eigen::Index b = 0; b <= Eigen::Index(bins); ++b)
        cap_.block(a * k, b * k, k, k) += (ltl(a, b) / s2_) * gram_;
    cap_llt_.compute(cap_);
    if (cap_llt_.info() != Eigen::Success) {
      Eigen::SelfAdjointEigenSolver<Matrix> es(cap_, Eigen::EigenvaluesOnly);
      throw std::runtime_error("capacitance factorization failed; smallest eigenvalue " +
                               std::to_string(es.eigenvalues().minCoeff()));
    }
    const Matrix lc = cap_llt_.matrixL();
    logdet_cap_ = 2.0 * lc.diagonal().array().log().sum();
  }

  std::size_t num_bins() const { return bins_; }
  double horizon() const { return horizon_; }
  std::size_t dim() const { return dim_; }
  std::size_t num_nodes() const { return std::size_t(q_.rows()); }
  std::size_t rank() const { return std::size_t(q_.cols()); }
  const PriorState& prior() const { return prior_; }
  /// Time covariance including jitter; this is the matrix the prior uses.
  const Matrix& time_covariance() const { return time_cov_; }
  /// Time covariance without jitter.
  const Matrix& time_kernel() const { return kernel_; }
  const Matrix& time_factor() const { return chol_; }
  /// Q^T Q.
  const Matrix& gram() const { return gram_; }
  const Matrix& q() const { return q_; }
  const Matrix& capacitance() const { return cap_; }
  const Eigen::LLT<Matrix>& capacitance_llt() const { return cap_llt_; }
  double noise_variance() const { return s2_; }
  double total_dim() const { return double((bins_ + 1) * num_nodes() * dim_); }

  /// log det of the full covariance via the determinant lemma.
  double log_det_covariance() const {
    return total_dim() * (2.0 * prior_.log_lambda + std::log(s2_)) + double(dim_) * logdet_cap_;
  }

 private:
  std::size_t bins_;
  double horizon_;
  std::size_t dim_;
  PriorState prior_;
  Matrix kernel_, time_cov_, chol_, q_, gram_, cap_;
  Eigen::LLT<Matrix> cap_llt_;
  double s2_ = 1.0, logdet_cap_ = 0.0;
};

/// Gradient of the log prior density.
struct PriorGradient {
  Matrix x0;
  std::vector<Matrix> velocity;
  double log_lambda = 0.0;
  double log_sigma = 0.0;
  double log_sigma_rbf = 0.0;
  double log_c_x0 = 0.0;
  Matrix q_raw;
};

namespace detail {

/// Blocks of z: t = 0 is x0, t = b is the velocity of bin b.
inline const Matrix& prior_block(const ModelState& m, std::size_t t) { return t == 0 ? m.x0 : m.velocity[t - 1]; }

/// Stacks k x D blocks into a ((B+1) k) x D matrix.
inline Matrix stack(const std::vector<Matrix>& blocks) {
  const Eigen::Index k = blocks.front().rows(), d = blocks.front().cols();
  Matrix out(k * Eigen::Index(blocks.size()), d);
  for (std::size_t t = 0; t < blocks.size(); ++t) out.middleRows(Eigen::Index(t) * k, k) = blocks[t];
  return out;
}

/// (L kron Q) applied to stacked k x D blocks; returns N x D blocks.
inline std::vector<Matrix> apply_factor(const CapacitanceCache& c, const Matrix& stacked) {
  const std::size_t T1 = c.num_bins() + 1;
  const auto k = Eigen::Index(c.rank());
  std::vector<Matrix> qx(T1), out(T1);
  for (std::size_t t = 0; t < T1; ++t) qx[t] = c.q() * stacked.middleRows(Eigen::Index(t) * k, k);
  const Matrix& L = c.time_factor();
  for (std::size_t t = 0; t < T1; ++t) {
    out[t] = Matrix::Zero(Eigen::Index(c.num_nodes()), Eigen::Index(c.dim()));
    for (std::size_t s = 0; s <= t; ++s) out[t] += L(Eigen::Index(t), Eigen::Index(s)) * qx[s];
  }
  return out;
}

}  // namespace detail

/// Log density of [x0; v] under the prior. Cost is dominated by the
/// factorization held in the cache; the full covariance is never formed.
inline double log_prior(const CapacitanceCache& c, const ModelState& m, PriorGradient* grad = nullptr) {
  const std::size_t T1 = c.num_bins() + 1;
  const auto N = Eigen::Index(c.num_nodes()), D = Eigen::Index(c.dim()), k = Eigen::Index(c.rank());
  if (m.num_bins() != c.num_bins() || m.x0.rows() != N || m.x0.cols() != D)
    throw std::invalid_argument("model shape does not match the prior");
  if (!m.all_finite()) throw std::invalid_argument("non-finite positions or velocities");

  const Matrix& L = c.time_factor();
  const Matrix& Q = c.q();
  const double s2 = c.noise_variance();
  const double lam2 = std::exp(2.0 * c.prior().log_lambda);
  const double dim = c.total_dim();

  // W = K^T z, X = R^{-1} W, blockwise per dimension column.
  std::vector<Matrix> y(T1), w(T1);
  double zz = 0.0;
  for (std::size_t t = 0; t < T1; ++t) {
    const Matrix& z = detail::prior_block(m, t);
    zz += z.squaredNorm();
    y[t] = Q.transpose() * z;
  }
  for (std::size_t t = 0; t < T1; ++t) {
    w[t] = Matrix::Zero(k, D);
    for (std::size_t s = t; s < T1; ++s) w[t] += L(Eigen::Index(s), Eigen::Index(t)) * y[s];
  }
  const Matrix W = detail::stack(w);
  const Matrix X = c.capacitance_llt().solve(W);
  const double quad = (zz / s2 - (W.cwiseProduct(X)).sum() / (s2 * s2)) / lam2;
  const double logdet = c.log_det_covariance();
  const double value = -0.5 * quad - 0.5 * logdet - 0.5 * dim * std::log(2.0 * std::numbers::pi);
  if (!grad) return value;

  // alpha = Sigma^{-1} z; the density gradient in z is -alpha.
  const std::vector<Matrix> kx = detail::apply_factor(c, X);
  std::vector<Matrix> alpha(T1), ya(T1);
  double alpha_sq = 0.0;
  for (std::size_t t = 0; t < T1; ++t) {
    alpha[t] = (detail::prior_block(m, t) / s2 - kx[t] / (s2 * s2)) / lam2;
    alpha_sq += alpha[t].squaredNorm();
    ya[t] = Q.transpose() * alpha[t];
  }
  grad->x0 = -alpha[0];
  grad->velocity.resize(T1 - 1);
  for (std::size_t t = 1; t < T1; ++t) grad->velocity[t - 1] = -alpha[t];

  const Matrix P = c.capacitance_llt().solve(Matrix::Identity(Eigen::Index(T1) * k, Eigen::Index(T1) * k));
  const double r = double(T1) * double(k) * double(D);
  grad->log_lambda = quad - dim;
  grad->log_sigma = lam2 * s2 * alpha_sq - (dim - r + double(D) * P.trace());

  const Matrix& G = c.gram();
  const Matrix G2 = G * G;
  const Matrix& Bt = c.time_covariance();
  Matrix m_alpha(T1, T1), zm(T1, T1);
  for (std::size_t a = 0; a < T1; ++a)
    for (std::size_t b = 0; b < T1; ++b) {
      m_alpha(Eigen::Index(a), Eigen::Index(b)) = ya[a].cwiseProduct(ya[b]).sum();
      zm(Eigen::Index(a), Eigen::Index(b)) =
          P.block(Eigen::Index(a) * k, Eigen::Index(b) * k, k, k).cwiseProduct(G2).sum();
    }
  // Gradient with respect to the time covariance entries.
  const Matrix g_time = 0.5 * lam2 * m_alpha -
                        0.5 * (double(D) * G.trace() / s2 * Matrix::Identity(T1, T1) -
                               (double(D) / (s2 * s2)) * (L * zm.transpose() * L.transpose()));
  grad->log_c_x0 = g_time(0, 0) * c.prior().c_x0();
  const auto centers = bin_centers(c.num_bins(), c.horizon());
  const double srbf2 = std::exp(2.0 * c.prior().log_sigma_rbf);
  double g_rbf = 0.0;
  for (std::size_t a = 1; a < T1; ++a)
    for (std::size_t b = 1; b < T1; ++b) {
      const double d2 = (centers[a - 1] - centers[b - 1]) * (centers[a - 1] - centers[b - 1]);
      g_rbf += g_time(Eigen::Index(a), Eigen::Index(b)) * c.time_kernel()(Eigen::Index(a), Eigen::Index(b)) * d2 / srbf2;
    }
  grad->log_sigma_rbf = g_rbf;

  // Gradient with respect to the row-stochastic Q, then through the softmax.
  const Matrix xb = L.transpose() * Bt * L;
  Matrix wb = Matrix::Zero(k, k);
  for (std::size_t a = 0; a < T1; ++a)
    for (std::size_t b = 0; b < T1; ++b)
      wb += xb(Eigen::Index(b), Eigen::Index(a)) * P.block(Eigen::Index(a) * k, Eigen::Index(b) * k, k, k);
  Matrix g_q = Matrix::Zero(N, k);
  for (std::size_t a = 0; a < T1; ++a) {
    Matrix ytilde = Matrix::Zero(k, D);
    for (std::size_t b = 0; b < T1; ++b) ytilde += Bt(Eigen::Index(a), Eigen::Index(b)) * ya[b];
    g_q += lam2 * alpha[a] * ytilde.transpose();
  }
  g_q -= 0.5 * (2.0 * double(D) * Bt.trace() / s2 * Q -
                (double(D) / (s2 * s2)) * Q * (wb + wb.transpose()) * G);
  grad->q_raw.resize(N, k);
  for (Eigen::Index n = 0; n < N; ++n) {
    const double inner = g_q.row(n).dot(Q.row(n));
    grad->q_raw.row(n) = Q.row(n).cwiseProduct((g_q.row(n).array() - inner).matrix());
  }
  return value;
}

inline double log_prior(const PriorState& p, const ModelState& m, PriorGradient* grad = nullptr) {
  return log_prior(CapacitanceCache(p, m.num_bins(), m.horizon, m.dim()), m, grad);
}

/// Draws [x0; v] = lambda (sigma xi0 + K xi1); biases are zero.
inline ModelState sample_prior(const CapacitanceCache& c, std::uint64_t seed) {
  const std::size_t T1 = c.num_bins() + 1;
  const auto N = Eigen::Index(c.num_nodes()), D = Eigen::Index(c.dim()), k = Eigen::Index(c.rank());
  Rng rng = make_rng(seed, 11);
  const double lam = std::exp(c.prior().log_lambda);
  const double sigma = std::sqrt(c.noise_variance());
  Matrix xi1(Eigen::Index(T1) * k, D);
  for (Eigen::Index r = 0; r < xi1.rows(); ++r)
    for (Eigen::Index d = 0; d < D; ++d) xi1(r, d) = standard_normal(rng);
  const std::vector<Matrix> low_rank = detail::apply_factor(c, xi1);
  ModelState m = ModelState::zeros(std::size_t(N), std::size_t(D), c.num_bins(), c.horizon());
  for (std::size_t t = 0; t < T1; ++t) {
    Matrix z(N, D);
    for (Eigen::Index n = 0; n < N; ++n)
      for (Eigen::Index d = 0; d < D; ++d) z(n, d) = standard_normal(rng);
    z = lam * (sigma * z + low_rank[t]);
    if (t == 0)
      m.x0 = z;
    else
      m.velocity[t - 1] = z;
  }
  return m;
}

inline ModelState sample_prior(const PriorState& p, std::size_t bins, double horizon, std::size_t dim,
                               std::uint64_t seed) {
  return sample_prior(CapacitanceCache(p, bins, horizon, dim), seed);
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const PriorState& p) {
  return {{"log_lambda", p.log_lambda},     {"log_sigma", p.log_sigma}, {"log_sigma_rbf", p.log_sigma_rbf},
          {"log_c_x0", p.log_c_x0},         {"rank", p.rank()},         {"q_raw", matrix_to_json(p.q_raw)}};
}

inline PriorState prior_from_json(const nlohmann::json& j, std::size_t nodes) {
  PriorState p;
  p.log_lambda = j.at("log_lambda").get<double>();
  p.log_sigma = j.at("log_sigma").get<double>();
  p.log_sigma_rbf = j.at("log_sigma_rbf").get<double>();
  p.log_c_x0 = j.at("log_c_x0").get<double>();
  p.q_raw = matrix_from_json(j.at("q_raw"), Eigen::Index(nodes), j.at("rank").get<Eigen::Index>());
  return p;
}

}  // namespace pivem
