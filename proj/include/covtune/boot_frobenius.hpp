#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "covtune/error.hpp"
#include "covtune/estimators.hpp"
#include "covtune/matrix.hpp"
#include "covtune/mvn.hpp"
#include "covtune/rng.hpp"
#include "covtune/selection.hpp"

namespace covtune {

enum class BootKind { ultimate, intermediate };

/// Gaussian bootstrap model N(mean, cov).
struct BootModel {
  std::vector<double> mean;
  SymMatrix cov;
  BootKind kind = BootKind::ultimate;
  // Negative eigenvalue mass removed when cov was projected onto the PSD cone.
  double clipped_mass = 0.0;
};

/// N(Xbar, sample covariance).
inline BootModel ultimate_model(const Dataset& data) {
  return {data.column_means(), sample_cov(data), BootKind::ultimate, 0.0};
}

/// N(Xbar, est(sample covariance, pilot)), clipped to the PSD cone.
inline BootModel intermediate_model(const EstimatorSpec& spec, const Dataset& data, double pilot) {
  auto clipped = psd_clip(apply(spec, sample_cov(data), pilot));
  return {data.column_means(), std::move(clipped.matrix), BootKind::intermediate, clipped.clipped_mass};
}

/// Sample covariances of B bootstrap samples of size n; sample b uses rng.child(b).
inline std::vector<SymMatrix> bootstrap_covariances(const BootModel& model, std::size_t n, std::size_t resamples,
                                                    const RngStream& rng) {
  const auto chol = pivoted_cholesky(model.cov);
  std::vector<SymMatrix> out;
  out.reserve(resamples);
  for (std::size_t b = 0; b < resamples; ++b) {
    auto stream = rng.child(b);
    out.push_back(sample_cov(sample_mvn(model.mean, chol, n, stream)));
  }
  return out;
}

/// ||est(S, lambda) - S||_F^2 for every grid value, S the sample covariance.
inline std::vector<double> apparent_errors(const EstimatorSpec& spec, const SymMatrix& s) {
  std::vector<double> out(spec.grid.size());
  const FitPair pair{s, s};
  for (std::size_t g = 0; g < spec.grid.size(); ++g) out[g] = detail::residual_frobenius_sq(spec, pair, spec.grid[g]);
  return out;
}

/**
 * Bootstrap covariance penalty at every grid value:
 *
 *   2 sum_ij [ (1/(B-1)) sum_b est_ij^b s_ij^b - (1/(B(B-1))) sum_b est_ij^b sum_b s_ij^b ]
 *
 * where s^b is the sample covariance of bootstrap sample b and est^b the
 * estimator applied to it.
 */
inline std::vector<double> boot_penalty(const EstimatorSpec& spec, std::span<const SymMatrix> boot_covs) {
  const std::size_t resamples = boot_covs.size();
  if (resamples < 2) throw DomainError("boot_penalty: needs at least 2 bootstrap samples, got " + std::to_string(resamples));
  const std::size_t p = boot_covs.front().dim();
  const std::size_t entries = p * (p + 1) / 2;
  const std::size_t grid_size = spec.grid.size();
  std::vector<double> sum_s(entries, 0.0), sum_est(grid_size * entries, 0.0), sum_prod(grid_size * entries, 0.0);

  for (const auto& s : boot_covs) {
    const auto v = s.packed();
    for (std::size_t e = 0; e < entries; ++e) sum_s[e] += v[e];
    for (std::size_t g = 0; g < grid_size; ++g) {
      const double lambda = spec.grid[g];
      double* se = &sum_est[g * entries];
      double* sp = &sum_prod[g * entries];
      for (std::size_t i = 0; i < p; ++i) {
        const std::size_t base = SymMatrix::index(i, 0);
        for (std::size_t j = 0; j <= i; ++j) {
          const double x = v[base + j];
          const double est = detail::estimate_entry(spec, x, i, j, lambda);
          se[base + j] += est;
          sp[base + j] += est * x;
        }
      }
    }
  }

  const double b = static_cast<double>(resamples);
  std::vector<double> penalty(grid_size, 0.0);
  for (std::size_t g = 0; g < grid_size; ++g) {
    const double* se = &sum_est[g * entries];
    const double* sp = &sum_prod[g * entries];
    double diag = 0.0, off = 0.0;
    for (std::size_t i = 0; i < p; ++i) {
      const std::size_t base = SymMatrix::index(i, 0);
      for (std::size_t j = 0; j <= i; ++j) {
        const std::size_t e = base + j;
        const double cov = sp[e] / (b - 1.0) - se[e] * sum_s[e] / (b * (b - 1.0));
        (i == j ? diag : off) += cov;
      }
    }
    penalty[g] = 2.0 * (diag + 2.0 * off);
  }
  return penalty;
}

/// Draws B samples of size n from `model` and returns the penalty curve.
inline std::vector<double> boot_penalty(const EstimatorSpec& spec, std::size_t n, const BootModel& model,
                                        std::size_t resamples, const RngStream& rng) {
  if (resamples < 2) throw DomainError("boot_penalty: needs at least 2 bootstrap samples, got " + std::to_string(resamples));
  return boot_penalty(spec, bootstrap_covariances(model, n, resamples, rng));
}

/// Frobenius risk estimate split into its parts; total = apparent + penalty.
struct RiskCurve {
  std::vector<double> grid;
  std::vector<double> apparent;
  std::vector<double> penalty;
  std::vector<double> total;
};

inline RiskCurve make_risk_curve(const EstimatorSpec& spec, std::vector<double> apparent, std::vector<double> penalty) {
  RiskCurve c;
  c.grid = spec.grid;
  c.total.resize(apparent.size());
  for (std::size_t g = 0; g < apparent.size(); ++g) c.total[g] = apparent[g] + penalty[g];
  c.apparent = std::move(apparent);
  c.penalty = std::move(penalty);
  return c;
}

inline RiskCurve boot_frobenius_curve(const EstimatorSpec& spec, const Dataset& data, const BootModel& model,
                                      std::size_t resamples, const RngStream& rng) {
  spec.validate(data.p());
  return make_risk_curve(spec, apparent_errors(spec, sample_cov(data)),
                         boot_penalty(spec, data.n(), model, resamples, rng));
}

/// Pilot value from the ultimate model; stage-one randomness is rng.child(1).
inline double boot_frobenius_pilot(const EstimatorSpec& spec, const Dataset& data, std::size_t resamples,
                                   const RngStream& rng) {
  const auto curve = boot_frobenius_curve(spec, data, ultimate_model(data), resamples, rng.child(1));
  return spec.grid[argmin_index(curve.total)];
}

/// Second stage only, from a known pilot value; stage-two randomness is rng.child(2).
inline SelectionResult boot_frobenius_select(const EstimatorSpec& spec, const Dataset& data, std::size_t resamples,
                                             const RngStream& rng, double pilot) {
  const auto model = intermediate_model(spec, data, pilot);
  const auto curve = boot_frobenius_curve(spec, data, model, resamples, rng.child(2));
  auto result = make_result(spec, curve.total, SelectionRule::boot_frobenius(resamples));
  result.pilot_lambda = pilot;
  result.clipped_mass = model.clipped_mass;
  return result;
}

/**
 * Two-stage bootstrap selection in the Frobenius norm: a pilot value from the
 * ultimate model N(Xbar, S), then the final curve from the intermediate model
 * N(Xbar, est(S, pilot)).
 */
inline SelectionResult boot_frobenius_select(const EstimatorSpec& spec, const Dataset& data, std::size_t resamples,
                                             const RngStream& rng) {
  if (data.n() < 2) throw DomainError("boot_frobenius_select: needs at least 2 rows");
  return boot_frobenius_select(spec, data, resamples, rng, boot_frobenius_pilot(spec, data, resamples, rng));
}

// ---------------------------------------------------------------------------
// Closed-form penalty for linear-weight estimators

/// Plug-in variance of each sample covariance entry: (s_ii s_jj + s_ij^2) / (n - 1).
inline SymMatrix entry_variances(const Dataset& data) {
  const auto s = sample_cov(data);
  const double m = static_cast<double>(data.n()) - 1.0;
  SymMatrix v(s.dim());
  for (std::size_t i = 0; i < s.dim(); ++i)
    for (std::size_t j = 0; j <= i; ++j) v.set(i, j, (s(i, i) * s(j, j) + s(i, j) * s(i, j)) / m);
  return v;
}

/// 2 sum_ij w_ij^lambda v_ij for banding and tapering.
inline std::vector<double> sure_penalty(const EstimatorSpec& spec, const Dataset& data) {
  if (!is_linear_weight(spec.family))
    throw UnsupportedFamily("SURE penalty is only available for banding and tapering, not " +
                            std::string(family_name(spec.family)));
  spec.validate(data.p());
  const auto v = entry_variances(data);
  const std::size_t p = data.p();
  // lag_total[d] = sum over entries with |i - j| = d, both triangles
  std::vector<double> lag_total(p, 0.0);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j <= i; ++j) lag_total[i - j] += (i == j ? 1.0 : 2.0) * v(i, j);
  std::vector<double> penalty(spec.grid.size(), 0.0);
  for (std::size_t g = 0; g < spec.grid.size(); ++g) {
    double s = 0.0;
    for (std::size_t d = 0; d < p; ++d) s += lag_weight(spec.family, d, spec.grid[g]) * lag_total[d];
    penalty[g] = 2.0 * s;
  }
  return penalty;
}

inline RiskCurve sure_curve(const EstimatorSpec& spec, const Dataset& data) {
  auto penalty = sure_penalty(spec, data);
  return make_risk_curve(spec, apparent_errors(spec, sample_cov(data)), std::move(penalty));
}

inline SelectionResult sure_select(const EstimatorSpec& spec, const Dataset& data) {
  const auto curve = sure_curve(spec, data);
  return make_result(spec, curve.total, SelectionRule::sure());
}

/// sum_ij v_ij: the constant dropped from the risk curves, for full risk reporting.
inline double frobenius_constant(const Dataset& data) {
  const auto v = entry_variances(data);
  double diag = 0.0, off = 0.0;
  for (std::size_t i = 0; i < v.dim(); ++i)
    for (std::size_t j = 0; j <= i; ++j) (i == j ? diag : off) += v(i, j);
  return diag + 2.0 * off;
}

}  // namespace covtune
