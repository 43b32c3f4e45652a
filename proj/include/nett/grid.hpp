#pragma once
/*
 * Dense 2D grids of doubles.
 *
 * Image    : rows = height, cols = width, covering the square [-1,1]^2.
 *            Pixel (i,j) has center (-1 + (j+0.5)h, -1 + (i+0.5)h), h = 2/width.
 * Sinogram : rows = sensors, cols = radius samples.
 *
 * The pairing <a,b> is the plain Euclidean sum over all cells; no cell-area
 * weights. Every adjoint in the library is taken with respect to it.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nett/error.hpp"

namespace nett {

template <class Tag>
class Grid {
 public:
  Grid() = default;
  Grid(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {
    if (rows == 0 || cols == 0) throw ShapeError("grid dimensions must be positive");
  }
  Grid(std::size_t rows, std::size_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (rows == 0 || cols == 0) throw ShapeError("grid dimensions must be positive");
    if (values_.size() != rows * cols)
      throw ShapeError("grid value count " + std::to_string(values_.size()) + " != " +
                       std::to_string(rows) + "x" + std::to_string(cols));
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t width() const noexcept { return cols_; }
  std::size_t height() const noexcept { return rows_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  const std::vector<double>& vec() const noexcept { return values_; }
  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }

  bool same_shape(const Grid& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  bool all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  Grid zeros_like() const { return Grid(rows_, cols_, 0.0); }

  Grid& operator+=(const Grid& o) {
    require_same(o);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += o.values_[i];
    return *this;
  }
  Grid& operator-=(const Grid& o) {
    require_same(o);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= o.values_[i];
    return *this;
  }
  Grid& operator*=(double s) noexcept {
    for (double& v : values_) v *= s;
    return *this;
  }
  /// this += a * x
  Grid& axpy(double a, const Grid& x) {
    require_same(x);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += a * x.values_[i];
    return *this;
  }

  friend Grid operator+(Grid a, const Grid& b) { return a += b; }
  friend Grid operator-(Grid a, const Grid& b) { return a -= b; }
  friend Grid operator*(double s, Grid a) { return a *= s; }
  friend bool operator==(const Grid& a, const Grid& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.values_ == b.values_;
  }

  void require_same(const Grid& o) const {
    if (!same_shape(o))
      throw ShapeError("shape mismatch: " + std::to_string(rows_) + "x" + std::to_string(cols_) +
                       " vs " + std::to_string(o.rows_) + "x" + std::to_string(o.cols_));
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

struct ImageTag {};
struct SinogramTag {};

using Image = Grid<ImageTag>;
using Sinogram = Grid<SinogramTag>;

/// Square image of side n.
inline Image make_image(std::size_t n, double fill = 0.0) { return Image(n, n, fill); }

/// Image with a single row; used as a flat vector for small dense problems.
inline Image make_vector_image(std::vector<double> v) {
  const std::size_t n = v.size();
  return Image(1, n, std::move(v));
}

template <class Tag>
double inner_product(const Grid<Tag>& a, const Grid<Tag>& b) {
  a.require_same(b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

template <class Tag>
double norm2(const Grid<Tag>& a) {
  double s = 0.0;
  for (double v : a.values()) s += v * v;
  return std::sqrt(s);
}

inline double inner_product(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw ShapeError("inner_product: length " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(inner_product(a, a)); }

template <class Tag>
double distance(const Grid<Tag>& a, const Grid<Tag>& b) {
  a.require_same(b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

/// ||x - z|| / ||x||, where x is the reference.
inline double relative_error(const Image& x, const Image& z) {
  x.require_same(z);
  const double nx = norm2(x);
  if (nx == 0.0) throw InvalidArgument("relative_error: reference image has zero norm");
  return distance(x, z) / nx;
}

/// Physical coordinate of pixel centre index i on a grid of n cells over [-1,1].
inline double pixel_center(std::size_t i, std::size_t n) {
  return -1.0 + (static_cast<double>(i) + 0.5) * (2.0 / static_cast<double>(n));
}

}  // namespace nett
