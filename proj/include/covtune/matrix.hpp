#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "covtune/error.hpp"

namespace covtune {

/**
 * Dense symmetric p x p matrix.
 *
 * Only the lower triangle is stored (packed, row by row), so reading (i, j)
 * and (j, i) always returns the same value.
 */
class SymMatrix {
 public:
  SymMatrix() = default;

  explicit SymMatrix(std::size_t p, double fill = 0.0) : p_(p), data_(p * (p + 1) / 2, fill) {}

  static SymMatrix identity(std::size_t p) {
    SymMatrix m(p);
    for (std::size_t i = 0; i < p; ++i) m.set(i, i, 1.0);
    return m;
  }

  static SymMatrix diagonal(std::span<const double> values) {
    SymMatrix m(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) m.set(i, i, values[i]);
    return m;
  }

  // Builds from a row-major dense array, reading the lower triangle only.
  static SymMatrix from_dense(std::span<const double> dense, std::size_t p) {
    if (dense.size() != p * p) throw DomainError("from_dense: expected " + std::to_string(p * p) + " values");
    SymMatrix m(p);
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j <= i; ++j) m.data_[index(i, j)] = dense[i * p + j];
    return m;
  }

  std::size_t dim() const noexcept { return p_; }
  bool empty() const noexcept { return p_ == 0; }

  double operator()(std::size_t i, std::size_t j) const noexcept { return data_[packed_index(i, j)]; }

  void set(std::size_t i, std::size_t j, double v) noexcept { data_[packed_index(i, j)] = v; }

  // Packed lower triangle: entry (i, j) with j <= i lives at i*(i+1)/2 + j.
  std::span<const double> packed() const noexcept { return data_; }
  std::span<double> packed() noexcept { return data_; }

  static constexpr std::size_t index(std::size_t i, std::size_t j) noexcept { return i * (i + 1) / 2 + j; }

  std::vector<double> dense() const {
    std::vector<double> out(p_ * p_);
    for (std::size_t i = 0; i < p_; ++i)
      for (std::size_t j = 0; j <= i; ++j) out[i * p_ + j] = out[j * p_ + i] = data_[index(i, j)];
    return out;
  }

  std::vector<double> diag() const {
    std::vector<double> out(p_);
    for (std::size_t i = 0; i < p_; ++i) out[i] = data_[index(i, i)];
    return out;
  }

  bool all_finite() const noexcept {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double max_abs() const noexcept {
    double m = 0.0;
    for (double v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  SymMatrix& operator+=(const SymMatrix& o) {
    check_same(o);
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
    return *this;
  }
  SymMatrix& operator-=(const SymMatrix& o) {
    check_same(o);
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= o.data_[k];
    return *this;
  }
  SymMatrix& operator*=(double c) noexcept {
    for (double& v : data_) v *= c;
    return *this;
  }

  friend SymMatrix operator+(SymMatrix a, const SymMatrix& b) { return a += b; }
  friend SymMatrix operator-(SymMatrix a, const SymMatrix& b) { return a -= b; }
  friend SymMatrix operator*(SymMatrix a, double c) { return a *= c; }
  friend SymMatrix operator*(double c, SymMatrix a) { return a *= c; }
  friend bool operator==(const SymMatrix&, const SymMatrix&) = default;

 private:
  static std::size_t packed_index(std::size_t i, std::size_t j) noexcept { return i >= j ? index(i, j) : index(j, i); }

  void check_same(const SymMatrix& o) const {
    if (o.p_ != p_) throw DomainError("dimension mismatch: " + std::to_string(p_) + " vs " + std::to_string(o.p_));
  }

  std::size_t p_ = 0;
  std::vector<double> data_;
};

/// n observations of a p-dimensional variable, stored row-major.
class Dataset {
 public:
  Dataset() = default;

  Dataset(std::size_t n, std::size_t p) : n_(n), p_(p), values_(n * p, 0.0) {}

  Dataset(std::size_t n, std::size_t p, std::vector<double> values) : n_(n), p_(p), values_(std::move(values)) {
    if (values_.size() != n * p)
      throw DomainError("dataset: expected " + std::to_string(n * p) + " values, got " + std::to_string(values_.size()));
    for (double v : values_)
      if (!std::isfinite(v)) throw DomainError("dataset: non-finite value");
  }

  std::size_t n() const noexcept { return n_; }
  std::size_t p() const noexcept { return p_; }

  std::span<const double> row(std::size_t i) const noexcept { return {values_.data() + i * p_, p_}; }
  std::span<double> row(std::size_t i) noexcept { return {values_.data() + i * p_, p_}; }

  double operator()(std::size_t i, std::size_t j) const noexcept { return values_[i * p_ + j]; }

  std::span<const double> values() const noexcept { return values_; }

  std::vector<double> column_means() const {
    std::vector<double> mean(p_, 0.0);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < p_; ++j) mean[j] += values_[i * p_ + j];
    for (double& m : mean) m /= static_cast<double>(n_);
    return mean;
  }

  // Rows listed in `rows`, in that order.
  Dataset subset(std::span<const std::size_t> rows) const {
    Dataset out(rows.size(), p_);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      auto src = row(rows[k]);
      std::copy(src.begin(), src.end(), out.row(k).begin());
    }
    return out;
  }

  Dataset scaled(double c) const {
    Dataset out = *this;
    for (double& v : out.values_) v *= c;
    return out;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  std::size_t n_ = 0;
  std::size_t p_ = 0;
  std::vector<double> values_;
};

}  // namespace covtune
