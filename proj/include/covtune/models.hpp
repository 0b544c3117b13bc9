#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "covtune/error.hpp"
#include "covtune/matrix.hpp"
#include "covtune/mvn.hpp"
#include "covtune/rng.hpp"

namespace covtune {

/**
 * Simulation covariance models:
 *   1: sigma_ij = rho |i-j|^-(alpha+1) off the diagonal, 1 on it
 *   2: sigma_ij = rho^|i-j|
 *   3: model 1 truncated to |i-j| <= 6
 */
struct ModelSpec {
  int id = 2;
  double rho = 0.5;
  double alpha = 0.1;
  std::size_t p = 100;

  // True when the parameters are outside the published settings (still accepted).
  bool nonstandard() const noexcept {
    if (id == 2) return false;
    return rho != 0.6 || (alpha != 0.1 && alpha != 0.5);
  }

  void validate() const {
    if (id < 1 || id > 3) throw DomainError("model id must be 1, 2 or 3, got " + std::to_string(id));
    if (p < 1) throw DomainError("model dimension must be positive");
    if (id == 2 && !(std::abs(rho) < 1.0)) throw DomainError("model 2 needs |rho| < 1, got " + std::to_string(rho));
    if (!std::isfinite(rho) || !std::isfinite(alpha)) throw DomainError("model parameters must be finite");
  }
};

inline constexpr std::size_t kModel3Band = 6;

inline double model_entry(const ModelSpec& m, std::size_t d) {
  if (m.id == 2) return std::pow(m.rho, static_cast<double>(d));
  if (d == 0) return 1.0;
  if (m.id == 3 && d > kModel3Band) return 0.0;
  return m.rho * std::pow(static_cast<double>(d), -(m.alpha + 1.0));
}

inline SymMatrix build_sigma(const ModelSpec& m) {
  m.validate();
  SymMatrix s(m.p);
  for (std::size_t i = 0; i < m.p; ++i)
    for (std::size_t j = 0; j <= i; ++j) s.set(i, j, model_entry(m, i - j));
  return s;
}

/// The covariance that actually generates data: build_sigma, clipped to the PSD cone when needed.
struct ModelTruth {
  ModelSpec model;
  SymMatrix sigma;
  double clipped_mass = 0.0;
  std::size_t clipped_count = 0;
  PivotedCholesky factor;
};

inline ModelTruth model_truth(const ModelSpec& m) {
  ModelTruth t;
  t.model = m;
  auto clipped = psd_clip(build_sigma(m));
  t.sigma = std::move(clipped.matrix);
  t.clipped_mass = clipped.clipped_mass;
  t.clipped_count = clipped.clipped_count;
  t.factor = pivoted_cholesky(t.sigma);
  return t;
}

struct Trial {
  Dataset data;
  SymMatrix sigma;
};

/// n draws from N(0, truth.sigma).
inline Trial generate_trial(const ModelTruth& truth, std::size_t n, RngStream& rng) {
  const std::vector<double> mean(truth.model.p, 0.0);
  return {sample_mvn(mean, truth.factor, n, rng), truth.sigma};
}

inline Trial generate_trial(const ModelSpec& m, std::size_t n, RngStream& rng) {
  return generate_trial(model_truth(m), n, rng);
}

}  // namespace covtune
