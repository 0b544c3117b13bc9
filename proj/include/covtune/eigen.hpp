#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "covtune/error.hpp"
#include "covtune/matrix.hpp"

namespace covtune {

/// Eigenvalues in descending order; vectors[j] is the unit eigenvector of values[j].
struct EigenSystem {
  std::vector<double> values;
  std::vector<std::vector<double>> vectors;

  std::size_t dim() const noexcept { return values.size(); }

  SymMatrix reconstruct() const {
    const std::size_t p = values.size();
    SymMatrix m(p);
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j <= i; ++j) {
        double s = 0.0;
        for (std::size_t k = 0; k < p; ++k) s += values[k] * vectors[k][i] * vectors[k][j];
        m.set(i, j, s);
      }
    return m;
  }
};

namespace detail {

inline constexpr double kEigenTolerance = 1e-12;

// Householder reduction of a dense symmetric row-major matrix to tridiagonal
// form T = Q^T A Q. On return d holds the diagonal, e[k] = T(k+1, k), and the
// reflector H_k = I - tau[k] v v^T is stored with v = (1, a(k+2..p-1, k)).
inline void tridiagonalize(std::span<double> a, std::size_t p, std::vector<double>& d, std::vector<double>& e,
                           std::vector<double>& tau) {
  d.assign(p, 0.0);
  e.assign(p, 0.0);
  tau.assign(p, 0.0);
  std::vector<double> v(p), w(p);
  for (std::size_t k = 0; k + 2 < p; ++k) {
    const std::size_t m = p - k - 1;
    const double alpha = a[(k + 1) * p + k];
    double xnorm = 0.0;
    for (std::size_t i = k + 2; i < p; ++i) xnorm = std::hypot(xnorm, a[i * p + k]);
    if (xnorm == 0.0) {
      e[k] = alpha;
      d[k] = a[k * p + k];
      continue;
    }
    const double beta = -std::copysign(std::hypot(alpha, xnorm), alpha);
    const double t = (beta - alpha) / beta;
    const double scale = 1.0 / (alpha - beta);
    v[0] = 1.0;
    for (std::size_t i = k + 2; i < p; ++i) {
      a[i * p + k] *= scale;
      v[i - k - 1] = a[i * p + k];
    }
    tau[k] = t;
    e[k] = beta;
    d[k] = a[k * p + k];

    // w = t A22 v - (t^2/2)(v^T A22 v) v, then A22 -= v w^T + w v^T
    double vw = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double* row = &a[(k + 1 + i) * p + k + 1];
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += row[j] * v[j];
      w[i] = t * s;
      vw += w[i] * v[i];
    }
    const double half = -0.5 * t * vw;
    for (std::size_t i = 0; i < m; ++i) w[i] += half * v[i];
    for (std::size_t i = 0; i < m; ++i) {
      double* row = &a[(k + 1 + i) * p + k + 1];
      const double vi = v[i], wi = w[i];
      for (std::size_t j = 0; j < m; ++j) row[j] -= vi * w[j] + wi * v[j];
    }
  }
  if (p >= 2) {
    d[p - 2] = a[(p - 2) * p + p - 2];
    e[p - 2] = a[(p - 1) * p + p - 2];
  }
  if (p >= 1) d[p - 1] = a[(p - 1) * p + p - 1];
}

// x <- Q x with Q = H_0 H_1 ... H_{p-3}.
inline void apply_reflectors(std::span<const double> a, std::size_t p, const std::vector<double>& tau,
                             std::span<double> x) {
  for (std::size_t kk = p >= 2 ? p - 2 : 0; kk-- > 0;) {
    const std::size_t k = kk;
    if (tau[k] == 0.0) continue;
    double s = x[k + 1];
    for (std::size_t i = k + 2; i < p; ++i) s += a[i * p + k] * x[i];
    s *= tau[k];
    x[k + 1] -= s;
    for (std::size_t i = k + 2; i < p; ++i) x[i] -= s * a[i * p + k];
  }
}

// Implicit QL on a symmetric tridiagonal matrix (d, e with e[k] = T(k+1, k)).
// When z is non-null it holds a p x p row-major basis whose columns are rotated
// along. Eigenvalues come back unsorted.
inline void tridiagonal_ql(std::vector<double>& d, std::vector<double>& e, std::vector<double>* z) {
  const std::size_t n = d.size();
  if (n == 0) return;
  e[n - 1] = 0.0;
  const std::size_t max_iterations = 50 * n;
  std::size_t iterations = 0;
  double f = 0.0, tst1 = 0.0;
  for (std::size_t l = 0; l < n; ++l) {
    tst1 = std::max(tst1, std::abs(d[l]) + std::abs(e[l]));
    std::size_t m = l;
    while (m < n - 1 && std::abs(e[m]) > kEigenTolerance * tst1) ++m;
    if (m > l) {
      do {
        if (++iterations > max_iterations) throw NumericalError("symmetric eigen-solver did not converge", iterations);
        double g = d[l];
        double pp = (d[l + 1] - g) / (2.0 * e[l]);
        double r = std::hypot(pp, 1.0);
        if (pp < 0) r = -r;
        d[l] = e[l] / (pp + r);
        d[l + 1] = e[l] * (pp + r);
        const double dl1 = d[l + 1];
        double h = g - d[l];
        for (std::size_t i = l + 2; i < n; ++i) d[i] -= h;
        f += h;

        pp = d[m];
        double c = 1.0, c2 = 1.0, c3 = 1.0, s = 0.0, s2 = 0.0;
        const double el1 = e[l + 1];
        for (std::size_t ii = m; ii-- > l;) {
          const std::size_t i = ii;
          c3 = c2;
          c2 = c;
          s2 = s;
          g = c * e[i];
          h = c * pp;
          r = std::hypot(pp, e[i]);
          e[i + 1] = s * r;
          s = e[i] / r;
          c = pp / r;
          pp = c * d[i] - s * g;
          d[i + 1] = h + s * (c * g + s * d[i]);
          if (z) {
            auto& zz = *z;
            for (std::size_t k = 0; k < n; ++k) {
              double* zk = &zz[k * n];
              h = zk[i + 1];
              zk[i + 1] = s * zk[i] + c * h;
              zk[i] = c * zk[i] - s * h;
            }
          }
        }
        pp = -s * s2 * c3 * el1 * e[l] / dl1;
        e[l] = s * pp;
        d[l] = c * pp;
      } while (std::abs(e[l]) > kEigenTolerance * tst1);
    }
    d[l] += f;
    e[l] = 0.0;
  }
}

// Solves for the eigenvector of tridiagonal T belonging to eigenvalue theta by
// inverse iteration (LU with partial pivoting of T - sigma I).
inline std::vector<double> tridiagonal_eigenvector(const std::vector<double>& d, const std::vector<double>& e,
                                                   double theta) {
  const std::size_t n = d.size();
  std::vector<double> y(n, 1.0);
  if (n == 1) return y;
  double norm_t = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    norm_t = std::max(norm_t, std::abs(d[i]) + (i > 0 ? std::abs(e[i - 1]) : 0.0) + (i + 1 < n ? std::abs(e[i]) : 0.0));
  const double tiny = std::max(norm_t, 1e-300) * 1e-15;
  const double sigma = theta + tiny;

  std::vector<double> dl(n - 1), dd(n), du(n - 1), du2(n > 2 ? n - 2 : 0);
  std::vector<char> swapped(n - 1, 0);
  for (std::size_t i = 0; i < n; ++i) dd[i] = d[i] - sigma;
  for (std::size_t i = 0; i + 1 < n; ++i) dl[i] = du[i] = e[i];
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (std::abs(dd[i]) >= std::abs(dl[i])) {
      if (dd[i] == 0.0) dd[i] = tiny;
      const double fact = dl[i] / dd[i];
      dl[i] = fact;
      dd[i + 1] -= fact * du[i];
      if (i + 2 < n) du2[i] = 0.0;
    } else {
      const double fact = dd[i] / dl[i];
      dd[i] = dl[i];
      dl[i] = fact;
      const double temp = du[i];
      du[i] = dd[i + 1];
      dd[i + 1] = temp - fact * dd[i + 1];
      if (i + 2 < n) {
        du2[i] = du[i + 1];
        du[i + 1] = -fact * du[i + 1];
      }
      swapped[i] = 1;
    }
  }
  if (dd[n - 1] == 0.0) dd[n - 1] = tiny;

  for (int iter = 0; iter < 3; ++iter) {
    for (std::size_t i = 0; i + 1 < n; ++i) {
      if (!swapped[i]) {
        y[i + 1] -= dl[i] * y[i];
      } else {
        const double temp = y[i];
        y[i] = y[i + 1];
        y[i + 1] = temp - dl[i] * y[i];
      }
    }
    y[n - 1] /= dd[n - 1];
    y[n - 2] = (y[n - 2] - du[n - 2] * y[n - 1]) / dd[n - 2];
    for (std::size_t ii = n - 2; ii-- > 0;) y[ii] = (y[ii] - du[ii] * y[ii + 1] - du2[ii] * y[ii + 2]) / dd[ii];
    double norm = 0.0;
    for (double v : y) norm = std::hypot(norm, v);
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      std::fill(y.begin(), y.end(), 1.0);
      continue;
    }
    for (double& v : y) v /= norm;
  }
  return y;
}

}  // namespace detail

/// Full eigen-decomposition of a symmetric matrix; values sorted descending.
inline EigenSystem eigen_decompose(const SymMatrix& m) {
  const std::size_t p = m.dim();
  EigenSystem out;
  if (p == 0) return out;
  auto a = m.dense();
  std::vector<double> d, e, tau;
  detail::tridiagonalize(a, p, d, e, tau);

  // Accumulate Q explicitly: column j of z is Q e_j.
  std::vector<double> z(p * p, 0.0);
  std::vector<double> col(p);
  for (std::size_t j = 0; j < p; ++j) {
    std::fill(col.begin(), col.end(), 0.0);
    col[j] = 1.0;
    detail::apply_reflectors(a, p, tau, col);
    for (std::size_t i = 0; i < p; ++i) z[i * p + j] = col[i];
  }
  detail::tridiagonal_ql(d, e, &z);

  std::vector<std::size_t> order(p);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return d[x] > d[y]; });
  out.values.resize(p);
  out.vectors.assign(p, std::vector<double>(p));
  for (std::size_t k = 0; k < p; ++k) {
    out.values[k] = d[order[k]];
    for (std::size_t i = 0; i < p; ++i) out.vectors[k][i] = z[i * p + order[k]];
  }
  return out;
}

/// Eigenvalues only, descending. `dense` is a row-major p x p work array and is destroyed.
inline std::vector<double> symmetric_eigenvalues(std::span<double> dense, std::size_t p) {
  std::vector<double> d, e, tau;
  detail::tridiagonalize(dense, p, d, e, tau);
  detail::tridiagonal_ql(d, e, nullptr);
  std::sort(d.begin(), d.end(), std::greater<>());
  return d;
}

inline std::vector<double> symmetric_eigenvalues(const SymMatrix& m) {
  auto a = m.dense();
  return symmetric_eigenvalues(a, m.dim());
}

/// Eigenvalue of largest magnitude together with a unit eigenvector.
struct ExtremeEigenpair {
  double value = 0.0;
  std::vector<double> vector;
};

/// Computes the eigenvalue of largest magnitude of a dense symmetric matrix and
/// its eigenvector. `dense` is destroyed.
inline ExtremeEigenpair extreme_eigenpair(std::span<double> dense, std::size_t p) {
  std::vector<double> d, e, tau;
  detail::tridiagonalize(dense, p, d, e, tau);
  auto dv = d, ev = e;
  detail::tridiagonal_ql(dv, ev, nullptr);
  ExtremeEigenpair out;
  for (double l : dv)
    if (std::abs(l) > std::abs(out.value)) out.value = l;
  out.vector = detail::tridiagonal_eigenvector(d, e, out.value);
  detail::apply_reflectors(dense, p, tau, out.vector);
  return out;
}

/// sqrt(sum_ij m_ij^2), off-diagonal entries counted twice.
inline double frobenius_norm(const SymMatrix& m) noexcept {
  const auto v = m.packed();
  const std::size_t p = m.dim();
  double diag = 0.0, off = 0.0;
  for (std::size_t i = 0; i < p; ++i) {
    const double* row = v.data() + SymMatrix::index(i, 0);
    for (std::size_t j = 0; j < i; ++j) off += row[j] * row[j];
    diag += row[i] * row[i];
  }
  return std::sqrt(diag + 2.0 * off);
}

/// Spectral norm: the largest absolute eigenvalue.
inline double operator_norm(const SymMatrix& m) {
  if (m.dim() == 0) return 0.0;
  const auto l = symmetric_eigenvalues(m);
  return std::max(std::abs(l.front()), std::abs(l.back()));
}

}  // namespace covtune
