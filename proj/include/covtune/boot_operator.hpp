#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "covtune/boot_frobenius.hpp"
#include "covtune/eigen.hpp"
#include "covtune/error.hpp"
#include "covtune/estimators.hpp"
#include "covtune/matrix.hpp"
#include "covtune/rng.hpp"
#include "covtune/selection.hpp"

namespace covtune {

/**
 * Leave-one-out product moments of a dataset.
 *
 * estimate(k, l, k2, l2) estimates sigma_kl * sigma_k2l2 by
 *
 *   1/(n-1) sum_i (X_ik - Xbar_k)(X_il - Xbar_l)
 *                 * 1/(n-2) sum_{i' != i} (X_i'k2 - Xbar^(-i)_k2)(X_i'l2 - Xbar^(-i)_l2)
 *
 * Removing row i from a centered cross-product sum subtracts n/(n-1) d_ik2 d_il2
 * (d = centered data), which collapses the double sum to
 *
 *   (n-1)/(n-2) s_kl s_k2l2 - n / ((n-1)^2 (n-2)) sum_i d_ik d_il d_ik2 d_il2
 *
 * with s the sample covariance. Under Gaussian data this is exactly unbiased.
 */
class ProductMoments {
 public:
  explicit ProductMoments(const Dataset& data) : n_(data.n()), p_(data.p()) {
    if (n_ < 3) throw DomainError("product moments need at least 3 rows, got " + std::to_string(n_));
    const auto mean = data.column_means();
    centered_.resize(n_ * p_);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < p_; ++j) centered_[i * p_ + j] = data(i, j) - mean[j];
    cov_ = sample_cov(data);
    const double n = static_cast<double>(n_);
    c1_ = (n - 1.0) / (n - 2.0);
    c2_ = n / ((n - 1.0) * (n - 1.0) * (n - 2.0));
  }

  std::size_t n() const noexcept { return n_; }
  std::size_t p() const noexcept { return p_; }
  const SymMatrix& sample_covariance() const noexcept { return cov_; }

  double fourth_moment(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const noexcept {
    double s = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      const double* x = &centered_[i * p_];
      s += (x[a] * x[b]) * (x[c] * x[d]);
    }
    return s;
  }

  double estimate(std::size_t k, std::size_t l, std::size_t k2, std::size_t l2) const noexcept {
    return c1_ * cov_(k, l) * cov_(k2, l2) - c2_ * fourth_moment(k, l, k2, l2);
  }

  double c1() const noexcept { return c1_; }
  double c2() const noexcept { return c2_; }

  // G[j](k, l) = sum_i d_ij^2 d_ik d_il, the fourth moments the Gamma* assembly needs.
  const std::vector<SymMatrix>& diagonal_fourth_moments() const {
    if (!g_.empty()) return g_;
    g_.assign(p_, SymMatrix(p_));
    std::vector<double> sq(n_);
    for (std::size_t j = 0; j < p_; ++j) {
      for (std::size_t i = 0; i < n_; ++i) sq[i] = centered_[i * p_ + j] * centered_[i * p_ + j];
      auto dst = g_[j].packed();
      for (std::size_t i = 0; i < n_; ++i) {
        const double* x = &centered_[i * p_];
        const double w = sq[i];
        for (std::size_t k = 0; k < p_; ++k) {
          double* row = dst.data() + SymMatrix::index(k, 0);
          const double wk = w * x[k];
          for (std::size_t l = 0; l <= k; ++l) row[l] += wk * x[l];
        }
      }
    }
    return g_;
  }

 private:
  std::size_t n_, p_;
  std::vector<double> centered_;
  SymMatrix cov_;
  double c1_ = 0.0, c2_ = 0.0;
  mutable std::vector<SymMatrix> g_;
};

/// Estimate of sigma_kl * sigma_k2l2 (see ProductMoments).
inline double product_moment_estimate(const Dataset& data, std::size_t k, std::size_t l, std::size_t k2,
                                      std::size_t l2) {
  return ProductMoments(data).estimate(k, l, k2, l2);
}

/// Estimate of Gamma* = E[(est - Sigma)(est - Sigma)^T] for a linear-weight estimator.
struct GammaStar {
  SymMatrix matrix;
  EigenSystem eigen;
  double lambda = 0.0;
  // max |A_kl - A_lk| / max |A_kl| of the assembled matrix before symmetrization.
  double asymmetry = 0.0;
};

namespace detail {

inline void require_linear_weight(Family f, const char* what) {
  if (!is_linear_weight(f))
    throw UnsupportedFamily(std::string(what) + " is only available for banding and tapering, not " +
                            std::string(family_name(f)));
}

}  // namespace detail

/**
 * Plug-in assembly of
 *
 *   Gamma* = 1/(n-1) sum_j W_j [sigma_jj Sigma + Sigma_j Sigma_j^T] W_j
 *          + sum_j (W_j - I) Sigma_j Sigma_j^T (W_j - I)
 *
 * with W_j = diag(j-th column of the weight matrix) and every product of two
 * sigma entries replaced by its leave-one-out product estimate. Entry (k, l)
 * only needs the products sigma_jj sigma_kl and sigma_kj sigma_lj, whose fourth
 * moments come from ProductMoments::diagonal_fourth_moments.
 */
inline GammaStar gamma_star_estimate(const EstimatorSpec& spec, const ProductMoments& moments, double lambda) {
  detail::require_linear_weight(spec.family, "Gamma* estimation");
  const std::size_t p = moments.p();
  spec.check_lambda(lambda, p);
  const auto& s = moments.sample_covariance();
  const auto& g = moments.diagonal_fourth_moments();
  const double c1 = moments.c1(), c2 = moments.c2();
  const double inv = 1.0 / (static_cast<double>(moments.n()) - 1.0);

  std::vector<double> w(p);
  for (std::size_t d = 0; d < p; ++d) w[d] = lag_weight(spec.family, d, lambda);
  auto weight = [&](std::size_t a, std::size_t b) { return w[a > b ? a - b : b - a]; };

  std::vector<double> full(p * p, 0.0);
  for (std::size_t k = 0; k < p; ++k)
    for (std::size_t l = 0; l < p; ++l) {
      double acc = 0.0;
      for (std::size_t j = 0; j < p; ++j) {
        const double wk = weight(k, j), wl = weight(l, j);
        const double m4 = g[j](k, l);
        const double jj_kl = c1 * s(j, j) * s(k, l) - c2 * m4;
        const double kj_lj = c1 * s(k, j) * s(l, j) - c2 * m4;
        acc += wk * wl * (jj_kl + kj_lj) * inv + (wk - 1.0) * (wl - 1.0) * kj_lj;
      }
      full[k * p + l] = acc;
    }

  GammaStar out;
  out.lambda = lambda;
  double max_entry = 0.0, max_asym = 0.0;
  for (std::size_t k = 0; k < p; ++k)
    for (std::size_t l = 0; l < p; ++l) {
      max_entry = std::max(max_entry, std::abs(full[k * p + l]));
      max_asym = std::max(max_asym, std::abs(full[k * p + l] - full[l * p + k]));
    }
  out.asymmetry = max_entry > 0.0 ? max_asym / max_entry : 0.0;
  out.matrix = SymMatrix(p);
  for (std::size_t k = 0; k < p; ++k)
    for (std::size_t l = 0; l <= k; ++l) out.matrix.set(k, l, 0.5 * (full[k * p + l] + full[l * p + k]));
  out.eigen = eigen_decompose(out.matrix);
  return out;
}

inline GammaStar gamma_star_estimate(const EstimatorSpec& spec, const Dataset& data, double lambda) {
  detail::require_linear_weight(spec.family, "Gamma* estimation");
  return gamma_star_estimate(spec, ProductMoments(data), lambda);
}

/**
 * Pi = sum_{j >= 2} (l_1 - l_j)^{-1} b_j b_j^T, with each gap floored at
 * 1e-6 * max(l_1, 1).
 */
class SpectralProjector {
 public:
  explicit SpectralProjector(const EigenSystem& es) : es_(&es) {
    const std::size_t p = es.dim();
    weights_.assign(p, 0.0);
    if (p == 0) return;
    const double l1 = es.values[0];
    floor_ = 1e-6 * std::max(l1, 1.0);
    for (std::size_t j = 1; j < p; ++j) weights_[j] = 1.0 / std::max(l1 - es.values[j], floor_);
  }

  double gap_floor() const noexcept { return floor_; }

  /// u^T Pi u.
  double quadratic(std::span<const double> u) const noexcept {
    double s = 0.0;
    for (std::size_t j = 1; j < weights_.size(); ++j) {
      const auto& b = es_->vectors[j];
      double proj = 0.0;
      for (std::size_t i = 0; i < u.size(); ++i) proj += b[i] * u[i];
      s += weights_[j] * proj * proj;
    }
    return s;
  }

  /// Pi u.
  std::vector<double> apply(std::span<const double> u) const {
    std::vector<double> out(u.size(), 0.0);
    for (std::size_t j = 1; j < weights_.size(); ++j) {
      const auto& b = es_->vectors[j];
      double proj = 0.0;
      for (std::size_t i = 0; i < u.size(); ++i) proj += b[i] * u[i];
      proj *= weights_[j];
      for (std::size_t i = 0; i < u.size(); ++i) out[i] += proj * b[i];
    }
    return out;
  }

 private:
  const EigenSystem* es_;
  std::vector<double> weights_;
  double floor_ = 0.0;
};

namespace detail {

inline std::vector<double> sym_matvec(const SymMatrix& m, std::span<const double> x) {
  const std::size_t p = m.dim();
  const auto v = m.packed();
  std::vector<double> y(p, 0.0);
  for (std::size_t i = 0; i < p; ++i) {
    const std::size_t base = SymMatrix::index(i, 0);
    double acc = 0.0;
    for (std::size_t j = 0; j < i; ++j) {
      acc += v[base + j] * x[j];
      y[j] += v[base + j] * x[i];
    }
    y[i] += acc + v[base + i] * x[i];
  }
  return y;
}

// Leading eigenvalue plus the bootstrap mean of b1^T D Pi D b1 at one tuning value.
inline double operator_risk_at(const EstimatorSpec& spec, const ProductMoments& moments, double lambda,
                               const SymMatrix& truth, std::span<const SymMatrix> boot_covs) {
  const auto gamma = gamma_star_estimate(spec, moments, lambda);
  const SpectralProjector projector(gamma.eigen);
  const auto& b1 = gamma.eigen.vectors.front();
  const auto gamma_b1 = sym_matvec(gamma.matrix, b1);
  const std::size_t p = truth.dim();
  const auto t = truth.packed();

  double correction = 0.0;
  SymMatrix d(p);
  auto dv = d.packed();
  for (const auto& sb : boot_covs) {
    const auto v = sb.packed();
    for (std::size_t i = 0; i < p; ++i) {
      const std::size_t base = SymMatrix::index(i, 0);
      for (std::size_t j = 0; j <= i; ++j)
        dv[base + j] = lag_weight(spec.family, i - j, lambda) * v[base + j] - t[base + j];
    }
    // Delta b1 = D (D b1) - Gamma* b1
    const auto db1 = sym_matvec(d, b1);
    auto u = sym_matvec(d, db1);
    for (std::size_t i = 0; i < p; ++i) u[i] -= gamma_b1[i];
    correction += projector.quadratic(u);
  }
  correction /= static_cast<double>(boot_covs.size());
  return gamma.eigen.values.front() + correction;
}

}  // namespace detail

/**
 * Operator-norm risk approximation at one tuning value:
 *
 *   l_1 + mean_b b_1^T Delta^b Pi Delta^b b_1
 *
 * where (l_1, b_1) lead the eigen-system of the Gamma* estimate from the
 * original data, Pi is its spectral projector, and
 * Delta^b = (est^b - Sigma_0)^2 - Gamma* for bootstrap samples from `model`
 * (Sigma_0 = model.cov).
 */
inline double operator_risk_estimate(const EstimatorSpec& spec, const Dataset& data, double lambda,
                                     std::size_t resamples, const BootModel& model, const RngStream& rng) {
  detail::require_linear_weight(spec.family, "operator risk estimation");
  if (resamples < 2) throw DomainError("operator risk estimation needs at least 2 bootstrap samples");
  const ProductMoments moments(data);
  const auto covs = bootstrap_covariances(model, data.n(), resamples, rng);
  return detail::operator_risk_at(spec, moments, lambda, model.cov, covs);
}

/// Risk approximation over the whole grid, sharing one set of bootstrap samples.
inline std::vector<double> operator_risk_curve(const EstimatorSpec& spec, const Dataset& data, std::size_t resamples,
                                               const BootModel& model, const RngStream& rng) {
  detail::require_linear_weight(spec.family, "operator risk estimation");
  if (resamples < 2) throw DomainError("operator risk estimation needs at least 2 bootstrap samples");
  spec.validate(data.p());
  const ProductMoments moments(data);
  const auto covs = bootstrap_covariances(model, data.n(), resamples, rng);
  std::vector<double> out(spec.grid.size());
  for (std::size_t g = 0; g < spec.grid.size(); ++g)
    out[g] = detail::operator_risk_at(spec, moments, spec.grid[g], model.cov, covs);
  return out;
}

/// Operator-norm bootstrap selection with a known pilot value for the intermediate model.
inline SelectionResult boot_operator_select(const EstimatorSpec& spec, const Dataset& data, std::size_t resamples,
                                            const RngStream& rng, double pilot) {
  detail::require_linear_weight(spec.family, "operator-norm bootstrap selection");
  const auto model = intermediate_model(spec, data, pilot);
  const auto curve = operator_risk_curve(spec, data, resamples, model, rng.child(3));
  auto result = make_result(spec, curve, SelectionRule::boot_operator(resamples));
  result.pilot_lambda = pilot;
  result.clipped_mass = model.clipped_mass;
  return result;
}

/// The pilot value is the Frobenius ultimate-model selection drawn from rng.child(1).
inline SelectionResult boot_operator_select(const EstimatorSpec& spec, const Dataset& data, std::size_t resamples,
                                            const RngStream& rng) {
  detail::require_linear_weight(spec.family, "operator-norm bootstrap selection");
  return boot_operator_select(spec, data, resamples, rng, boot_frobenius_pilot(spec, data, resamples, rng));
}

// ---------------------------------------------------------------------------
// Second-order perturbation check of the leading eigenvalue

struct SecondVariationEntry {
  std::size_t perturbation = 0;
  double scale = 0.0;
  double exact = 0.0;      // leading eigenvalue of Gamma + t Delta
  double expansion = 0.0;  // l1 + t b1^T Delta b1 + t^2 b1^T Delta Pi Delta b1
  double error = 0.0;
};

struct SecondVariationReport {
  bool degenerate = false;  // leading gap at or below the floor: no expansion claim
  double leading_gap = 0.0;
  std::vector<SecondVariationEntry> entries;
  // Per perturbation: max |error| over scales, and log2(error(t) / error(t/2)) for successive halvings.
  std::vector<double> max_error;
  std::vector<std::vector<double>> halving_orders;
};

/**
 * Compares the leading eigenvalue of Gamma + t Delta with its second-order
 * expansion for each perturbation and scale. Scales are expected in
 * decreasing order; successive halvings should show an error ratio near 8.
 */
inline SecondVariationReport second_variation_check(const SymMatrix& gamma, std::span<const SymMatrix> perturbations,
                                                    std::span<const double> scales) {
  SecondVariationReport report;
  const auto es = eigen_decompose(gamma);
  const std::size_t p = gamma.dim();
  if (p == 0) return report;
  report.leading_gap = p > 1 ? es.values[0] - es.values[1] : std::numeric_limits<double>::infinity();
  const SpectralProjector projector(es);
  if (report.leading_gap <= projector.gap_floor()) {
    report.degenerate = true;
    return report;
  }
  const auto& b1 = es.vectors.front();
  for (std::size_t k = 0; k < perturbations.size(); ++k) {
    const auto& delta = perturbations[k];
    if (delta.dim() != p) throw DomainError("second_variation_check: perturbation dimension differs");
    const auto db1 = detail::sym_matvec(delta, b1);
    double first = 0.0;
    for (std::size_t i = 0; i < p; ++i) first += b1[i] * db1[i];
    const double second = projector.quadratic(db1);
    double max_err = 0.0;
    std::vector<double> errors;
    for (double t : scales) {
      SecondVariationEntry e;
      e.perturbation = k;
      e.scale = t;
      e.exact = symmetric_eigenvalues(gamma + t * delta).front();
      e.expansion = es.values[0] + t * first + t * t * second;
      e.error = std::abs(e.exact - e.expansion);
      max_err = std::max(max_err, e.error);
      errors.push_back(e.error);
      report.entries.push_back(e);
    }
    report.max_error.push_back(max_err);
    std::vector<double> orders;
    for (std::size_t s = 1; s < errors.size(); ++s)
      orders.push_back(errors[s] > 0.0 && errors[s - 1] > 0.0 ? std::log2(errors[s - 1] / errors[s])
                                                               : std::numeric_limits<double>::quiet_NaN());
    report.halving_orders.push_back(std::move(orders));
  }
  return report;
}

}  // namespace covtune
