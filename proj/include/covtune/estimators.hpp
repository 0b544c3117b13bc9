#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "covtune/error.hpp"
#include "covtune/matrix.hpp"

namespace covtune {

enum class Family { hard, soft, banding, tapering };

inline std::string_view family_name(Family f) noexcept {
  switch (f) {
    case Family::hard: return "hard";
    case Family::soft: return "soft";
    case Family::banding: return "band";
    case Family::tapering: return "taper";
  }
  return "?";
}

inline Family parse_family(std::string_view s) {
  if (s == "hard") return Family::hard;
  if (s == "soft") return Family::soft;
  if (s == "band" || s == "banding") return Family::banding;
  if (s == "taper" || s == "tapering") return Family::tapering;
  throw DomainError("unknown estimator family '" + std::string(s) + "'");
}

inline bool is_linear_weight(Family f) noexcept { return f == Family::banding || f == Family::tapering; }

/// An estimator family together with its candidate tuning values.
struct EstimatorSpec {
  Family family = Family::banding;
  std::vector<double> grid;
  // Thresholding only: leave the diagonal untouched.
  bool preserve_diagonal = false;

  void validate(std::size_t p) const {
    if (grid.empty()) throw DomainError("estimator grid is empty");
    for (std::size_t k = 1; k < grid.size(); ++k)
      if (!(grid[k] > grid[k - 1])) throw DomainError("estimator grid must be strictly increasing");
    for (double l : grid) check_lambda(l, p);
  }

  void check_lambda(double lambda, std::size_t p) const {
    if (!std::isfinite(lambda) || lambda < 0.0)
      throw DomainError("tuning value must be finite and non-negative, got " + std::to_string(lambda));
    if (is_linear_weight(family)) {
      if (lambda != std::floor(lambda))
        throw DomainError(std::string(family_name(family)) + " needs an integer bandwidth, got " + std::to_string(lambda));
      if (p > 0 && lambda > static_cast<double>(p - 1))
        throw DomainError("bandwidth " + std::to_string(lambda) + " outside [0, " + std::to_string(p - 1) + "]");
    }
  }
};

// ---------------------------------------------------------------------------
// Unregularized covariance

/// (1/n) sum_i (X_i - Xbar)(X_i - Xbar)^T.
inline SymMatrix empirical_cov(const Dataset& data) {
  const std::size_t n = data.n(), p = data.p();
  if (n == 0) throw DomainError("empirical_cov: dataset has no rows");
  const auto mean = data.column_means();
  SymMatrix s(p);
  auto out = s.packed();
  std::vector<double> c(p);
  for (std::size_t r = 0; r < n; ++r) {
    const auto x = data.row(r);
    for (std::size_t j = 0; j < p; ++j) c[j] = x[j] - mean[j];
    for (std::size_t i = 0; i < p; ++i) {
      double* row = out.data() + SymMatrix::index(i, 0);
      const double ci = c[i];
      for (std::size_t j = 0; j <= i; ++j) row[j] += ci * c[j];
    }
  }
  s *= 1.0 / static_cast<double>(n);
  return s;
}

/// n/(n-1) times the empirical covariance.
inline SymMatrix sample_cov(const Dataset& data) {
  if (data.n() < 2) throw DomainError("sample_cov: needs at least 2 rows, got " + std::to_string(data.n()));
  auto s = empirical_cov(data);
  const double n = static_cast<double>(data.n());
  s *= n / (n - 1.0);
  return s;
}

// ---------------------------------------------------------------------------
// Entry-wise rules

inline double hard_value(double s, double lambda) noexcept { return std::abs(s) >= lambda ? s : 0.0; }

inline double soft_value(double s, double lambda) noexcept {
  const double m = std::abs(s) - lambda;
  return m > 0.0 ? std::copysign(m, s) : 0.0;
}

/// Trapezoidal taper weight for lag d = |i - j|.
inline double taper_weight(std::size_t d, double lambda) noexcept {
  const double dd = static_cast<double>(d);
  if (2.0 * dd <= lambda) return 1.0;
  if (dd < lambda) return 2.0 - 2.0 * dd / lambda;  // lambda > 0 here since 2d > lambda >= 0 and d < lambda
  return 0.0;
}

inline double band_weight(std::size_t d, double lambda) noexcept { return static_cast<double>(d) <= lambda ? 1.0 : 0.0; }

/// The weight matrix W^lambda of the tapering estimator.
inline SymMatrix taper_weights(std::size_t p, double lambda) {
  SymMatrix w(p);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t j = 0; j <= i; ++j) w.set(i, j, taper_weight(i - j, lambda));
  return w;
}

/// Weight of lag d for a linear-weight family.
inline double lag_weight(Family f, std::size_t d, double lambda) noexcept {
  return f == Family::banding ? band_weight(d, lambda) : taper_weight(d, lambda);
}

namespace detail {

template <class F>
SymMatrix map_entries(const SymMatrix& s, F&& f) {
  SymMatrix out(s.dim());
  const auto in = s.packed();
  auto dst = out.packed();
  for (std::size_t i = 0; i < s.dim(); ++i) {
    const std::size_t base = SymMatrix::index(i, 0);
    for (std::size_t j = 0; j <= i; ++j) dst[base + j] = f(in[base + j], i, j);
  }
  return out;
}

inline void check_threshold(double lambda) {
  if (!std::isfinite(lambda) || lambda < 0.0) throw DomainError("threshold must be finite and non-negative");
}

inline void check_bandwidth(double lambda, std::size_t p) {
  if (!(lambda >= 0.0) || lambda != std::floor(lambda) || lambda > static_cast<double>(p == 0 ? 0 : p - 1))
    throw DomainError("bandwidth " + std::to_string(lambda) + " outside [0, " + std::to_string(p == 0 ? 0 : p - 1) + "]");
}

}  // namespace detail

inline SymMatrix hard_threshold(const SymMatrix& s, double lambda, bool preserve_diagonal = false) {
  detail::check_threshold(lambda);
  return detail::map_entries(s, [&](double v, std::size_t i, std::size_t j) {
    return preserve_diagonal && i == j ? v : hard_value(v, lambda);
  });
}

inline SymMatrix soft_threshold(const SymMatrix& s, double lambda, bool preserve_diagonal = false) {
  detail::check_threshold(lambda);
  return detail::map_entries(s, [&](double v, std::size_t i, std::size_t j) {
    return preserve_diagonal && i == j ? v : soft_value(v, lambda);
  });
}

inline SymMatrix band(const SymMatrix& s, double lambda) {
  detail::check_bandwidth(lambda, s.dim());
  return detail::map_entries(s, [&](double v, std::size_t i, std::size_t j) { return band_weight(i - j, lambda) * v; });
}

inline SymMatrix taper(const SymMatrix& s, double lambda) {
  detail::check_bandwidth(lambda, s.dim());
  return detail::map_entries(s, [&](double v, std::size_t i, std::size_t j) { return taper_weight(i - j, lambda) * v; });
}

/// Applies the family of `spec` at tuning value `lambda`.
inline SymMatrix apply(const EstimatorSpec& spec, const SymMatrix& s, double lambda) {
  spec.check_lambda(lambda, s.dim());
  switch (spec.family) {
    case Family::hard: return hard_threshold(s, lambda, spec.preserve_diagonal);
    case Family::soft: return soft_threshold(s, lambda, spec.preserve_diagonal);
    case Family::banding: return band(s, lambda);
    case Family::tapering: return taper(s, lambda);
  }
  throw DomainError("unknown family");
}

/// Largest |s_ij| over i != j.
inline double max_off_diagonal(const SymMatrix& s) noexcept {
  double m = 0.0;
  for (std::size_t i = 0; i < s.dim(); ++i)
    for (std::size_t j = 0; j < i; ++j) m = std::max(m, std::abs(s(i, j)));
  return m;
}

/**
 * Default grids: thresholding uses 50 equally spaced values from 0 to the
 * largest off-diagonal |entry| of `s`; banding and tapering use every
 * bandwidth 0..min(p-1, n).
 */
inline EstimatorSpec default_spec(Family family, const SymMatrix& s, std::size_t n) {
  EstimatorSpec spec;
  spec.family = family;
  const std::size_t p = s.dim();
  if (is_linear_weight(family)) {
    const std::size_t top = std::min(p == 0 ? 0 : p - 1, n);
    for (std::size_t k = 0; k <= top; ++k) spec.grid.push_back(static_cast<double>(k));
  } else {
    const double top = max_off_diagonal(s);
    if (top == 0.0) {
      spec.grid = {0.0};
    } else {
      constexpr int kPoints = 50;
      for (int k = 0; k + 1 < kPoints; ++k) spec.grid.push_back(top * k / (kPoints - 1));
      spec.grid.push_back(top);
    }
  }
  return spec;
}

}  // namespace covtune
