#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "covtune/eigen.hpp"
#include "covtune/error.hpp"
#include "covtune/estimators.hpp"
#include "covtune/matrix.hpp"
#include "covtune/rng.hpp"

namespace covtune {

enum class Norm { frobenius, operator_norm };

inline std::string_view norm_tag(Norm n) noexcept { return n == Norm::frobenius ? "F" : "op"; }

enum class RuleKind { oracle, cv, reverse_cv, repeated_cv, boot_frobenius, sure, boot_operator };

/// How a tuning value is chosen.
struct SelectionRule {
  RuleKind kind = RuleKind::cv;
  std::size_t folds = 10;        // cv, reverse_cv, repeated_cv
  std::size_t splits = 1;        // repeated_cv
  std::size_t resamples = 200;   // boot_*
  Norm norm = Norm::frobenius;

  static SelectionRule oracle(Norm n) { return {RuleKind::oracle, 0, 1, 200, n}; }
  static SelectionRule cv(std::size_t v, Norm n = Norm::frobenius) { return {RuleKind::cv, v, 1, 200, n}; }
  static SelectionRule reverse_cv(std::size_t v, Norm n = Norm::frobenius) { return {RuleKind::reverse_cv, v, 1, 200, n}; }
  static SelectionRule repeated_cv(std::size_t v, std::size_t s, Norm n = Norm::frobenius) {
    return {RuleKind::repeated_cv, v, s, 200, n};
  }
  static SelectionRule boot_frobenius(std::size_t b) { return {RuleKind::boot_frobenius, 0, 1, b, Norm::frobenius}; }
  static SelectionRule sure() { return {RuleKind::sure, 0, 1, 200, Norm::frobenius}; }
  static SelectionRule boot_operator(std::size_t b) { return {RuleKind::boot_operator, 0, 1, b, Norm::operator_norm}; }

  bool is_cross_validation() const noexcept {
    return kind == RuleKind::cv || kind == RuleKind::reverse_cv || kind == RuleKind::repeated_cv;
  }

  void validate() const {
    if (is_cross_validation() && folds < 2) throw DomainError("cross-validation needs at least 2 folds");
    if (kind == RuleKind::repeated_cv && splits < 1) throw DomainError("repeated cross-validation needs at least 1 split");
    if ((kind == RuleKind::boot_frobenius || kind == RuleKind::boot_operator) && resamples < 2)
      throw DomainError("bootstrap needs at least 2 resamples");
  }

  // Label used in records, e.g. "cv10_F", "recv3_op", "rcv2_op", "boot_frobenius".
  std::string name() const {
    std::string base;
    switch (kind) {
      case RuleKind::oracle: base = "oracle"; break;
      case RuleKind::cv: base = "cv" + std::to_string(folds); break;
      case RuleKind::reverse_cv: base = "recv" + std::to_string(folds); break;
      case RuleKind::repeated_cv:
        base = "rcv" + std::to_string(folds);
        if (splits != 50) base += "x" + std::to_string(splits);
        break;
      case RuleKind::boot_frobenius: return "boot_frobenius";
      case RuleKind::sure: return "sure";
      case RuleKind::boot_operator: return "boot_operator";
    }
    return base + "_" + std::string(norm_tag(norm));
  }

  friend bool operator==(const SelectionRule&, const SelectionRule&) = default;
};

/**
 * Parses a rule label: oracle, cvV, recvV, rcvV[xS] (S defaults to 50), each
 * optionally suffixed _F or _op (default _F); or boot_frobenius, sure,
 * boot_operator.
 */
inline SelectionRule parse_rule(std::string_view text, std::size_t resamples = 200) {
  const std::string original(text);
  auto fail = [&]() -> SelectionRule { throw DomainError("unknown selection rule '" + original + "'"); };
  if (text == "boot_frobenius") return SelectionRule::boot_frobenius(resamples);
  if (text == "sure") return SelectionRule::sure();
  if (text == "boot_operator") return SelectionRule::boot_operator(resamples);

  Norm norm = Norm::frobenius;
  if (text.ends_with("_op")) {
    norm = Norm::operator_norm;
    text.remove_suffix(3);
  } else if (text.ends_with("_F")) {
    text.remove_suffix(2);
  }
  if (text == "oracle") return SelectionRule::oracle(norm);

  auto number = [&](std::string_view s) -> std::size_t {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) fail();
    return v;
  };
  SelectionRule rule;
  rule.norm = norm;
  if (text.starts_with("recv")) {
    rule.kind = RuleKind::reverse_cv;
    rule.folds = number(text.substr(4));
  } else if (text.starts_with("rcv")) {
    rule.kind = RuleKind::repeated_cv;
    auto rest = text.substr(3);
    const auto x = rest.find('x');
    rule.folds = number(rest.substr(0, x));
    rule.splits = x == std::string_view::npos ? 50 : number(rest.substr(x + 1));
  } else if (text.starts_with("cv")) {
    rule.kind = RuleKind::cv;
    rule.folds = number(text.substr(2));
  } else {
    fail();
  }
  rule.validate();
  return rule;
}

/// Balanced assignment of rows to folds 0..folds-1.
struct FoldPlan {
  std::size_t folds = 0;
  std::vector<std::size_t> assignment;

  std::vector<std::size_t> rows_in(std::size_t v) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment.size(); ++i)
      if (assignment[i] == v) out.push_back(i);
    return out;
  }

  std::vector<std::size_t> rows_not_in(std::size_t v) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment.size(); ++i)
      if (assignment[i] != v) out.push_back(i);
    return out;
  }

  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> s(folds, 0);
    for (auto a : assignment) ++s[a];
    return s;
  }
};

/// Uniformly random balanced partition of n rows into `folds` folds.
inline FoldPlan make_folds(std::size_t n, std::size_t folds, RngStream& rng) {
  if (folds < 2) throw DomainError("make_folds: need at least 2 folds");
  if (folds > n) throw DomainError("make_folds: " + std::to_string(folds) + " folds for " + std::to_string(n) + " rows");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  FoldPlan plan;
  plan.folds = folds;
  plan.assignment.assign(n, 0);
  for (std::size_t pos = 0; pos < n; ++pos) plan.assignment[order[pos]] = pos % folds;
  return plan;
}

struct CurvePoint {
  double lambda = 0.0;
  double score = 0.0;
  // False when the point was skipped by a pruned scan; score is then a lower bound.
  bool exact = true;
};

struct SelectionResult {
  double lambda = 0.0;
  std::size_t index = 0;
  std::vector<CurvePoint> curve;
  SelectionRule rule;
  // Pilot value from the ultimate bootstrap model (bootstrap rules only).
  std::optional<double> pilot_lambda;
  // Eigenvalue mass clipped from the bootstrap truth (bootstrap rules only).
  double clipped_mass = 0.0;
};

/// Index of the smallest score; ties go to the smallest tuning value.
inline std::size_t argmin_index(std::span<const double> scores) {
  std::size_t best = 0;
  for (std::size_t g = 1; g < scores.size(); ++g)
    if (scores[g] < scores[best]) best = g;
  return best;
}

inline SelectionResult make_result(const EstimatorSpec& spec, std::span<const double> scores, const SelectionRule& rule,
                                   std::span<const char> exact = {}) {
  SelectionResult r;
  r.rule = rule;
  r.curve.resize(scores.size());
  std::size_t best = scores.size();
  for (std::size_t g = 0; g < scores.size(); ++g) {
    const bool ex = exact.empty() || exact[g];
    r.curve[g] = {spec.grid[g], scores[g], ex};
    if (ex && (best == scores.size() || scores[g] < scores[best])) best = g;
  }
  r.index = best;
  r.lambda = spec.grid[best];
  return r;
}

// ---------------------------------------------------------------------------
// Score problems: score(lambda) = mean_k || est(input_k, lambda) - target_k ||^2

/// One training/validation pair of covariance matrices.
struct FitPair {
  SymMatrix input;
  SymMatrix target;
};

namespace detail {

inline double estimate_entry(const EstimatorSpec& spec, double s, std::size_t i, std::size_t j, double lambda) noexcept {
  switch (spec.family) {
    case Family::hard: return spec.preserve_diagonal && i == j ? s : hard_value(s, lambda);
    case Family::soft: return spec.preserve_diagonal && i == j ? s : soft_value(s, lambda);
    case Family::banding: return band_weight(i - j, lambda) * s;
    case Family::tapering: return taper_weight(i - j, lambda) * s;
  }
  return s;
}

// dense <- est(input, lambda) - target, row-major p x p.
inline void build_residual(const EstimatorSpec& spec, const FitPair& pair, double lambda, std::span<double> dense) {
  const std::size_t p = pair.input.dim();
  const auto a = pair.input.packed();
  const auto c = pair.target.packed();
  for (std::size_t i = 0; i < p; ++i) {
    const std::size_t base = SymMatrix::index(i, 0);
    for (std::size_t j = 0; j <= i; ++j) {
      const double v = estimate_entry(spec, a[base + j], i, j, lambda) - c[base + j];
      dense[i * p + j] = v;
      dense[j * p + i] = v;
    }
  }
}

inline double residual_frobenius_sq(const EstimatorSpec& spec, const FitPair& pair, double lambda) noexcept {
  const std::size_t p = pair.input.dim();
  const auto a = pair.input.packed();
  const auto c = pair.target.packed();
  double diag = 0.0, off = 0.0;
  for (std::size_t i = 0; i < p; ++i) {
    const std::size_t base = SymMatrix::index(i, 0);
    for (std::size_t j = 0; j < i; ++j) {
      const double v = estimate_entry(spec, a[base + j], i, j, lambda) - c[base + j];
      off += v * v;
    }
    const double v = estimate_entry(spec, a[base + i], i, i, lambda) - c[base + i];
    diag += v * v;
  }
  return diag + 2.0 * off;
}

// For a fixed unit vector x, evaluates x^T est(A, lambda) x for every grid value
// in O(p^2 + p * |grid|).
class QuadraticProfile {
 public:
  QuadraticProfile(const EstimatorSpec& spec, const SymMatrix& a) : spec_(&spec), a_(&a) {
    if (is_linear_weight(spec.family)) return;
    const std::size_t p = a.dim();
    const auto v = a.packed();
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j <= i; ++j)
        if (i != j || !spec.preserve_diagonal) order_.push_back(SymMatrix::index(i, j));
    std::stable_sort(order_.begin(), order_.end(),
                     [&](std::size_t x, std::size_t y) { return std::abs(v[x]) > std::abs(v[y]); });
    rows_.resize(v.size());
    cols_.resize(v.size());
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j <= i; ++j) {
        rows_[SymMatrix::index(i, j)] = i;
        cols_[SymMatrix::index(i, j)] = j;
      }
    // keep_[g]: number of leading entries in `order_` retained at grid[g]
    keep_.resize(spec.grid.size());
    for (std::size_t g = 0; g < spec.grid.size(); ++g) {
      const double lambda = spec.grid[g];
      const bool inclusive = spec.family == Family::hard;
      auto pred = [inclusive](double x, double l) { return inclusive ? std::abs(x) >= l : std::abs(x) > l; };
      std::size_t lo = 0, hi = order_.size();
      while (lo < hi) {
        const std::size_t mid = (lo + hi) / 2;
        if (pred(v[order_[mid]], lambda))
          lo = mid + 1;
        else
          hi = mid;
      }
      keep_[g] = lo;
    }
  }

  void evaluate(std::span<const double> x, std::vector<double>& out) const {
    const auto& spec = *spec_;
    const std::size_t p = a_->dim();
    const auto v = a_->packed();
    const std::size_t grid_size = spec.grid.size();
    out.assign(grid_size, 0.0);
    if (is_linear_weight(spec.family)) {
      std::vector<double> lag(p, 0.0);
      for (std::size_t i = 0; i < p; ++i) {
        const std::size_t base = SymMatrix::index(i, 0);
        for (std::size_t j = 0; j < i; ++j) lag[i - j] += 2.0 * x[i] * v[base + j] * x[j];
        lag[0] += x[i] * v[base + i] * x[i];
      }
      if (spec.family == Family::banding) {
        std::vector<double> prefix(p + 1, 0.0);
        for (std::size_t d = 0; d < p; ++d) prefix[d + 1] = prefix[d] + lag[d];
        for (std::size_t g = 0; g < grid_size; ++g) {
          const auto top = std::min<std::size_t>(static_cast<std::size_t>(spec.grid[g]), p - 1);
          out[g] = prefix[top + 1];
        }
      } else {
        for (std::size_t g = 0; g < grid_size; ++g) {
          double s = 0.0;
          for (std::size_t d = 0; d < p; ++d) s += taper_weight(d, spec.grid[g]) * lag[d];
          out[g] = s;
        }
      }
      return;
    }
    double fixed = 0.0;
    if (spec.preserve_diagonal)
      for (std::size_t i = 0; i < p; ++i) fixed += x[i] * v[SymMatrix::index(i, i)] * x[i];
    // Cumulative contributions in order of decreasing |a_ij|.
    std::vector<double> value_sum(order_.size() + 1, 0.0), sign_sum(order_.size() + 1, 0.0);
    for (std::size_t k = 0; k < order_.size(); ++k) {
      const std::size_t e = order_[k];
      const double mult = rows_[e] == cols_[e] ? 1.0 : 2.0;
      const double xx = mult * x[rows_[e]] * x[cols_[e]];
      value_sum[k + 1] = value_sum[k] + xx * v[e];
      sign_sum[k + 1] = sign_sum[k] + xx * (v[e] > 0 ? 1.0 : (v[e] < 0 ? -1.0 : 0.0));
    }
    for (std::size_t g = 0; g < grid_size; ++g) {
      const std::size_t k = keep_[g];
      out[g] = fixed + value_sum[k] - (spec.family == Family::soft ? spec.grid[g] * sign_sum[k] : 0.0);
    }
  }

 private:
  const EstimatorSpec* spec_;
  const SymMatrix* a_;
  std::vector<std::size_t> order_, rows_, cols_, keep_;
};

inline double quadratic_form(const SymMatrix& c, std::span<const double> x) noexcept {
  const auto v = c.packed();
  double s = 0.0;
  for (std::size_t i = 0; i < c.dim(); ++i) {
    const std::size_t base = SymMatrix::index(i, 0);
    double row = 0.0;
    for (std::size_t j = 0; j < i; ++j) row += v[base + j] * x[j];
    s += x[i] * (2.0 * row + v[base + i] * x[i]);
  }
  return s;
}

}  // namespace detail

/// Frobenius score curve: mean over pairs of the squared Frobenius residual.
inline std::vector<double> frobenius_scores(const EstimatorSpec& spec, std::span<const FitPair> pairs) {
  std::vector<double> scores(spec.grid.size(), 0.0);
  for (std::size_t g = 0; g < spec.grid.size(); ++g) {
    double s = 0.0;
    for (const auto& pair : pairs) s += detail::residual_frobenius_sq(spec, pair, spec.grid[g]);
    scores[g] = s / static_cast<double>(pairs.size());
  }
  return scores;
}

/// Operator-norm score curve.
struct OperatorScan {
  std::vector<double> scores;
  std::vector<char> exact;
  std::size_t evaluated = 0;  // number of grid points computed exactly
};

/// Exact operator score at every grid value.
inline OperatorScan operator_scores(const EstimatorSpec& spec, std::span<const FitPair> pairs) {
  OperatorScan out;
  const std::size_t grid_size = spec.grid.size();
  out.scores.assign(grid_size, 0.0);
  out.exact.assign(grid_size, 1);
  out.evaluated = grid_size;
  if (pairs.empty()) return out;
  const std::size_t p = pairs.front().input.dim();
  std::vector<double> work(p * p);
  for (std::size_t g = 0; g < grid_size; ++g) {
    double s = 0.0;
    for (const auto& pair : pairs) {
      detail::build_residual(spec, pair, spec.grid[g], work);
      const auto l = symmetric_eigenvalues(work, p);
      const double norm = std::max(std::abs(l.front()), std::abs(l.back()));
      s += norm * norm;
    }
    out.scores[g] = s / static_cast<double>(pairs.size());
  }
  return out;
}

/**
 * Branch-and-bound operator score scan that finds the same argmin as the full
 * scan while evaluating few grid points exactly.
 *
 * Every exact evaluation yields an extreme eigenvector x_k per pair; the
 * Rayleigh quotient |x_k^T M_k(lambda) x_k| bounds ||M_k(lambda)|| from below at
 * every other grid value and is cheap to profile over the whole grid. Grid
 * values whose bound already exceeds the best exact score are never computed.
 */
inline OperatorScan operator_scores_pruned(const EstimatorSpec& spec, std::span<const FitPair> pairs,
                                           std::size_t start) {
  OperatorScan out;
  const std::size_t grid_size = spec.grid.size();
  const std::size_t npairs = pairs.size();
  out.scores.assign(grid_size, 0.0);
  out.exact.assign(grid_size, 0);
  if (npairs == 0 || grid_size == 0) return out;
  const std::size_t p = pairs.front().input.dim();

  std::vector<detail::QuadraticProfile> profiles;
  profiles.reserve(npairs);
  for (const auto& pair : pairs) profiles.emplace_back(spec, pair.input);

  std::vector<double> bound(npairs * grid_size, 0.0);
  std::vector<double> work(p * p), q;
  constexpr double kSlack = 1.0 - 1e-9;
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_g = grid_size;
  std::size_t g = std::min(start, grid_size - 1);

  while (true) {
    double s = 0.0;
    for (std::size_t k = 0; k < npairs; ++k) {
      detail::build_residual(spec, pairs[k], spec.grid[g], work);
      const auto pair_eig = extreme_eigenpair(work, p);
      const double norm = std::abs(pair_eig.value);
      s += norm * norm;
      profiles[k].evaluate(pair_eig.vector, q);
      const double xcx = detail::quadratic_form(pairs[k].target, pair_eig.vector);
      double* bk = &bound[k * grid_size];
      for (std::size_t h = 0; h < grid_size; ++h) bk[h] = std::max(bk[h], std::abs(q[h] - xcx));
    }
    out.scores[g] = s / static_cast<double>(npairs);
    out.exact[g] = 1;
    ++out.evaluated;
    if (out.scores[g] < best || (out.scores[g] == best && g < best_g)) {
      best = out.scores[g];
      best_g = g;
    }

    std::size_t next = grid_size;
    double next_bound = std::numeric_limits<double>::infinity();
    for (std::size_t h = 0; h < grid_size; ++h) {
      if (out.exact[h]) continue;
      double lb = 0.0;
      for (std::size_t k = 0; k < npairs; ++k) lb += bound[k * grid_size + h] * bound[k * grid_size + h];
      lb /= static_cast<double>(npairs);
      out.scores[h] = lb;
      const double safe = lb * kSlack;
      const bool eligible = safe < best || (h < best_g && safe <= best);
      if (eligible && lb < next_bound) {
        next_bound = lb;
        next = h;
      }
    }
    if (next == grid_size) break;
    g = next;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fold covariances

namespace detail {

// Per-fold sufficient statistics of globally centered rows.
struct FoldMoments {
  std::size_t p = 0;
  std::vector<std::size_t> count;
  std::vector<std::vector<double>> sum;    // per fold, length p
  std::vector<std::vector<double>> cross;  // per fold, packed lower triangle

  FoldMoments(const Dataset& data, const FoldPlan& plan) : p(data.p()) {
    if (plan.assignment.size() != data.n()) throw DomainError("fold plan does not match the number of rows");
    const auto mean = data.column_means();
    count.assign(plan.folds, 0);
    sum.assign(plan.folds, std::vector<double>(p, 0.0));
    cross.assign(plan.folds, std::vector<double>(p * (p + 1) / 2, 0.0));
    std::vector<double> c(p);
    for (std::size_t r = 0; r < data.n(); ++r) {
      const std::size_t v = plan.assignment[r];
      const auto x = data.row(r);
      for (std::size_t j = 0; j < p; ++j) c[j] = x[j] - mean[j];
      ++count[v];
      auto& sv = sum[v];
      auto& cv = cross[v];
      for (std::size_t i = 0; i < p; ++i) {
        sv[i] += c[i];
        double* row = cv.data() + SymMatrix::index(i, 0);
        for (std::size_t j = 0; j <= i; ++j) row[j] += c[i] * c[j];
      }
    }
    for (std::size_t v = 0; v < plan.folds; ++v)
      if (count[v] < 2)
        throw DomainError("fold " + std::to_string(v) + " has " + std::to_string(count[v]) + " rows; at least 2 are needed");
  }

  // Empirical covariance (divisor = row count) of fold v, or of its complement.
  SymMatrix covariance(std::size_t v, bool complement) const {
    std::size_t m = count[v];
    std::vector<double> s = sum[v];
    std::vector<double> cr = cross[v];
    if (complement) {
      m = 0;
      std::fill(s.begin(), s.end(), 0.0);
      std::fill(cr.begin(), cr.end(), 0.0);
      for (std::size_t u = 0; u < count.size(); ++u) {
        if (u == v) continue;
        m += count[u];
        for (std::size_t i = 0; i < p; ++i) s[i] += sum[u][i];
        for (std::size_t k = 0; k < cr.size(); ++k) cr[k] += cross[u][k];
      }
    }
    SymMatrix out(p);
    auto dst = out.packed();
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j <= i; ++j) {
        const std::size_t k = SymMatrix::index(i, j);
        dst[k] = (cr[k] - s[i] * s[j] * inv) * inv;
      }
    return out;
  }
};

}  // namespace detail

/// Training/validation pairs of V-fold CV (train on the complement) or reverse CV (train on the fold).
inline std::vector<FitPair> fold_pairs(const Dataset& data, const FoldPlan& plan, bool reverse) {
  detail::FoldMoments moments(data, plan);
  std::vector<FitPair> pairs;
  pairs.reserve(plan.folds);
  for (std::size_t v = 0; v < plan.folds; ++v) {
    auto fold = moments.covariance(v, false);
    auto rest = moments.covariance(v, true);
    if (reverse)
      pairs.push_back({std::move(fold), std::move(rest)});
    else
      pairs.push_back({std::move(rest), std::move(fold)});
  }
  return pairs;
}

/// Fold plans used by a cross-validation rule; repeated CV draws one plan per split.
inline std::vector<FoldPlan> rule_plans(const SelectionRule& rule, std::size_t n, const RngStream& rng) {
  rule.validate();
  std::vector<FoldPlan> plans;
  if (rule.kind == RuleKind::repeated_cv) {
    for (std::size_t s = 0; s < rule.splits; ++s) {
      auto split_rng = rng.child(s);
      plans.push_back(make_folds(n, rule.folds, split_rng));
    }
  } else {
    auto plan_rng = rng;
    plans.push_back(make_folds(n, rule.folds, plan_rng));
  }
  return plans;
}

inline std::vector<FitPair> rule_pairs(const SelectionRule& rule, const Dataset& data, std::span<const FoldPlan> plans) {
  std::vector<FitPair> pairs;
  for (const auto& plan : plans) {
    auto more = fold_pairs(data, plan, rule.kind == RuleKind::reverse_cv);
    for (auto& m : more) pairs.push_back(std::move(m));
  }
  return pairs;
}

struct SelectionOptions {
  // Use the branch-and-bound operator scan; unevaluated curve points then hold lower bounds.
  bool prune_operator = false;
};

/// Selection over precomputed training/validation pairs.
inline SelectionResult select_from_pairs(const EstimatorSpec& spec, std::span<const FitPair> pairs,
                                         const SelectionRule& rule, SelectionOptions options = {}) {
  if (rule.norm == Norm::frobenius) {
    const auto scores = frobenius_scores(spec, pairs);
    return make_result(spec, scores, rule);
  }
  if (options.prune_operator) {
    const auto hint = argmin_index(frobenius_scores(spec, pairs));
    const auto scan = operator_scores_pruned(spec, pairs, hint);
    return make_result(spec, scan.scores, rule, scan.exact);
  }
  const auto scan = operator_scores(spec, pairs);
  return make_result(spec, scan.scores, rule);
}

/// Squared error of est(input, lambda) against truth in the given norm.
inline double squared_error(const EstimatorSpec& spec, const SymMatrix& input, double lambda, const SymMatrix& truth,
                            Norm norm) {
  const auto diff = apply(spec, input, lambda) - truth;
  const double e = norm == Norm::frobenius ? frobenius_norm(diff) : operator_norm(diff);
  return e * e;
}

/// Tuning value minimizing the true error against a known covariance.
inline SelectionResult oracle_select(const EstimatorSpec& spec, const SymMatrix& input, const SymMatrix& truth,
                                     Norm norm) {
  if (input.dim() != truth.dim()) throw DomainError("oracle_select: truth dimension differs from the input");
  spec.validate(input.dim());
  std::vector<double> scores(spec.grid.size());
  for (std::size_t g = 0; g < spec.grid.size(); ++g) scores[g] = squared_error(spec, input, spec.grid[g], truth, norm);
  return make_result(spec, scores, SelectionRule::oracle(norm));
}

/// V-fold cross-validation on a given fold plan.
inline SelectionResult cv_select(const EstimatorSpec& spec, const Dataset& data, const FoldPlan& plan, Norm norm,
                                 SelectionOptions options = {}) {
  spec.validate(data.p());
  const auto pairs = fold_pairs(data, plan, false);
  return select_from_pairs(spec, pairs, SelectionRule::cv(plan.folds, norm), options);
}

inline SelectionResult cv_select(const EstimatorSpec& spec, const Dataset& data, const SelectionRule& rule,
                                 RngStream& rng, SelectionOptions options = {}) {
  if (rule.kind != RuleKind::cv) throw DomainError("cv_select: rule is not cvV");
  auto plan = make_folds(data.n(), rule.folds, rng);
  return cv_select(spec, data, plan, rule.norm, options);
}

/// Reverse cross-validation: train on one fold, validate on the rest.
inline SelectionResult reverse_cv_select(const EstimatorSpec& spec, const Dataset& data, const FoldPlan& plan,
                                         Norm norm, SelectionOptions options = {}) {
  spec.validate(data.p());
  const auto pairs = fold_pairs(data, plan, true);
  return select_from_pairs(spec, pairs, SelectionRule::reverse_cv(plan.folds, norm), options);
}

inline SelectionResult reverse_cv_select(const EstimatorSpec& spec, const Dataset& data, const SelectionRule& rule,
                                         RngStream& rng, SelectionOptions options = {}) {
  if (rule.kind != RuleKind::reverse_cv) throw DomainError("reverse_cv_select: rule is not recvV");
  auto plan = make_folds(data.n(), rule.folds, rng);
  return reverse_cv_select(spec, data, plan, rule.norm, options);
}

/// CV scores averaged over several random plans.
inline SelectionResult repeated_cv_select(const EstimatorSpec& spec, const Dataset& data,
                                          std::span<const FoldPlan> plans, Norm norm, SelectionOptions options = {}) {
  spec.validate(data.p());
  if (plans.empty()) throw DomainError("repeated_cv_select: no fold plans");
  auto rule = SelectionRule::repeated_cv(plans.front().folds, plans.size(), norm);
  const auto pairs = rule_pairs(rule, data, plans);
  return select_from_pairs(spec, pairs, rule, options);
}

/// Split s uses the child stream rng.child(s).
inline SelectionResult repeated_cv_select(const EstimatorSpec& spec, const Dataset& data, const SelectionRule& rule,
                                          const RngStream& rng, SelectionOptions options = {}) {
  if (rule.kind != RuleKind::repeated_cv) throw DomainError("repeated_cv_select: rule is not rcvV");
  const auto plans = rule_plans(rule, data.n(), rng);
  return repeated_cv_select(spec, data, plans, rule.norm, options);
}

}  // namespace covtune
