#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "covtune/eigen.hpp"
#include "covtune/error.hpp"
#include "covtune/matrix.hpp"
#include "covtune/rng.hpp"

namespace covtune {

/// Cov = P L L^T P^T with L lower-trapezoidal of width `rank`.
struct PivotedCholesky {
  std::size_t p = 0;
  std::size_t rank = 0;
  std::vector<std::size_t> perm;  // position k holds original variable perm[k]
  std::vector<double> factor;     // p x p row-major, only the first `rank` columns are used
};

/**
 * Diagonally pivoted Cholesky factorization of a positive semi-definite matrix.
 *
 * Stops once the largest remaining pivot falls below 1e-8 * max diagonal.
 * Throws DomainError naming the pivot when the matrix is indefinite beyond
 * that tolerance.
 */
inline PivotedCholesky pivoted_cholesky(const SymMatrix& cov) {
  const std::size_t p = cov.dim();
  PivotedCholesky out;
  out.p = p;
  out.perm.resize(p);
  std::iota(out.perm.begin(), out.perm.end(), 0);
  out.factor.assign(p * p, 0.0);
  if (p == 0) return out;

  auto a = cov.dense();
  double max_diag = 0.0;
  for (std::size_t i = 0; i < p; ++i) max_diag = std::max(max_diag, std::abs(a[i * p + i]));
  const double tol = 1e-8 * max_diag;
  auto& l = out.factor;

  for (std::size_t k = 0; k < p; ++k) {
    std::size_t q = k;
    for (std::size_t i = k + 1; i < p; ++i)
      if (a[i * p + i] > a[q * p + q]) q = i;
    const double pivot = a[q * p + q];
    if (pivot < -tol)
      throw DomainError("covariance is not positive semi-definite: pivot " + std::to_string(k) + " (variable " +
                        std::to_string(out.perm[q]) + ") is " + std::to_string(pivot));
    if (pivot <= tol) {
      for (std::size_t i = k; i < p; ++i)
        for (std::size_t j = k; j < i; ++j)
          if (std::abs(a[i * p + j]) > tol)
            throw DomainError("covariance is not positive semi-definite: pivot " + std::to_string(k) +
                              " leaves a zero-variance block with non-zero covariance between variables " +
                              std::to_string(out.perm[i]) + " and " + std::to_string(out.perm[j]));
      break;
    }
    if (q != k) {
      for (std::size_t j = 0; j < p; ++j) std::swap(a[k * p + j], a[q * p + j]);
      for (std::size_t i = 0; i < p; ++i) std::swap(a[i * p + k], a[i * p + q]);
      for (std::size_t j = 0; j < k; ++j) std::swap(l[k * p + j], l[q * p + j]);
      std::swap(out.perm[k], out.perm[q]);
    }
    const double lkk = std::sqrt(pivot);
    l[k * p + k] = lkk;
    for (std::size_t i = k + 1; i < p; ++i) l[i * p + k] = a[i * p + k] / lkk;
    for (std::size_t i = k + 1; i < p; ++i) {
      const double lik = l[i * p + k];
      for (std::size_t j = k + 1; j <= i; ++j) {
        a[i * p + j] -= lik * l[j * p + k];
        a[j * p + i] = a[i * p + j];
      }
    }
    out.rank = k + 1;
  }
  return out;
}

/// Draws n rows from N(mean, factor factor^T) using a precomputed factorization.
inline Dataset sample_mvn(std::span<const double> mean, const PivotedCholesky& chol, std::size_t n, RngStream& rng) {
  const std::size_t p = chol.p;
  if (mean.size() != p) throw DomainError("sample_mvn: mean has length " + std::to_string(mean.size()));
  std::vector<double> values(n * p);
  std::vector<double> z(chol.rank);
  for (std::size_t r = 0; r < n; ++r) {
    for (auto& v : z) v = rng.normal();
    double* row = &values[r * p];
    for (std::size_t i = 0; i < p; ++i) {
      const double* li = &chol.factor[i * p];
      double s = 0.0;
      const std::size_t width = std::min(i + 1, chol.rank);
      for (std::size_t j = 0; j < width; ++j) s += li[j] * z[j];
      row[chol.perm[i]] = mean[chol.perm[i]] + s;
    }
  }
  return Dataset(n, p, std::move(values));
}

/// Draws n rows from N(mean, cov); cov must be positive semi-definite.
inline Dataset sample_mvn(std::span<const double> mean, const SymMatrix& cov, std::size_t n, RngStream& rng) {
  if (mean.size() != cov.dim()) throw DomainError("sample_mvn: mean and covariance dimensions differ");
  return sample_mvn(mean, pivoted_cholesky(cov), n, rng);
}

/// Result of projecting a symmetric matrix onto the PSD cone.
struct ClippedCovariance {
  SymMatrix matrix;
  double clipped_mass = 0.0;  // sum of |negative eigenvalues| removed
  std::size_t clipped_count = 0;
};

/// Sets negative eigenvalues to zero. A matrix without negative eigenvalues is returned unchanged.
inline ClippedCovariance psd_clip(const SymMatrix& m) {
  ClippedCovariance out;
  auto es = eigen_decompose(m);
  for (double l : es.values)
    if (l < 0.0) {
      out.clipped_mass += -l;
      ++out.clipped_count;
    }
  if (out.clipped_count == 0) {
    out.matrix = m;
    return out;
  }
  for (double& l : es.values) l = std::max(l, 0.0);
  out.matrix = es.reconstruct();
  return out;
}

}  // namespace covtune
