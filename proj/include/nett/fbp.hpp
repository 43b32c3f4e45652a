#pragma once
/*
 * Filtered backprojection for circular means with sensors on the unit circle.
 *
 * log_kernel (default): the 2D circular-means inversion
 *     f(x) = 1/(2 pi) * int_{|z|=1} int_0^{2} (d/dr r d/dr Mf)(z,r) log|r^2 - |x-z|^2| dr dS(z)
 *   The two radial derivatives are central differences; the log kernel is
 *   integrated exactly over each radius cell, so its singularity at r = |x-z|
 *   needs no special handling. dS is replaced by 2*pi/|subset| per present sensor.
 *
 * derivative2: trace times r, second central difference in r, then the exact
 *   discrete adjoint of the circular-means operator. Cheap and local, but in 2D
 *   it reconstructs an edge-enhanced image rather than f itself.
 *
 * Both are scaled so that the full-sampling reconstruction of the centred
 * radius-0.5 disc at desk geometry has unit mean inside the disc; the stored
 * constants are produced by calibrate_fbp_scale().
 */

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "nett/error.hpp"
#include "nett/grid.hpp"
#include "nett/operators.hpp"

namespace nett {

enum class FbpFilter { log_kernel, derivative2 };

inline std::string to_string(FbpFilter f) {
  return f == FbpFilter::log_kernel ? "log_kernel" : "derivative2";
}
inline FbpFilter parse_fbp_filter(const std::string& s) {
  if (s == "log_kernel" || s == "ram-lak-style") return FbpFilter::log_kernel;
  if (s == "derivative2") return FbpFilter::derivative2;
  throw InvalidArgument("unknown FBP filter '" + s + "'");
}

struct FbpConfig {
  FbpFilter filter = FbpFilter::log_kernel;
  /// 0 selects the stored calibration constant for the filter.
  double scale = 0.0;

  // Calibration at desk geometry (64 grid, 64 sensors, 256 radii, r_max 2).
  static constexpr double kLogKernelScale = 1.0112868509521387;
  static constexpr double kDerivative2Scale = -0.44930922054761946;

  double effective_scale() const {
    if (scale != 0.0) return scale;
    return filter == FbpFilter::log_kernel ? kLogKernelScale : kDerivative2Scale;
  }
};

namespace fbp_detail {

// Antiderivative of log|t|, continuous at 0.
inline double xlogx_minus_x(double t) {
  const double a = std::abs(t);
  return a == 0.0 ? 0.0 : t * std::log(a) - t;
}

// int_a^b log|r^2 - d^2| dr = int log|r - d| + int log(r + d)
inline double log_kernel_cell(double a, double b, double d) {
  return xlogx_minus_x(b - d) - xlogx_minus_x(a - d) + xlogx_minus_x(b + d) -
         xlogx_minus_x(a + d);
}

// Zero data at r = 0 (sensor outside support) and beyond r_max.
inline std::vector<double> filter_log_kernel(std::span<const double> trace, double dr) {
  const std::size_t m = trace.size();
  auto at = [&](const std::vector<double>& v, long k) {
    return (k < 0 || k >= static_cast<long>(m)) ? 0.0 : v[static_cast<std::size_t>(k)];
  };
  std::vector<double> y(trace.begin(), trace.end());
  std::vector<double> u(m), g(m);
  for (std::size_t k = 0; k < m; ++k) {
    const long kk = static_cast<long>(k);
    const double r = dr * static_cast<double>(k + 1);
    u[k] = r * (at(y, kk + 1) - at(y, kk - 1)) / (2.0 * dr);
  }
  for (std::size_t k = 0; k < m; ++k) {
    const long kk = static_cast<long>(k);
    g[k] = (at(u, kk + 1) - at(u, kk - 1)) / (2.0 * dr);
  }
  return g;
}

inline std::vector<double> filter_derivative2(std::span<const double> trace, double dr) {
  const std::size_t m = trace.size();
  std::vector<double> ry(m);
  for (std::size_t k = 0; k < m; ++k) ry[k] = dr * static_cast<double>(k + 1) * trace[k];
  auto at = [&](long k) {
    return (k < 0 || k >= static_cast<long>(m)) ? 0.0 : ry[static_cast<std::size_t>(k)];
  };
  std::vector<double> g(m);
  for (std::size_t k = 0; k < m; ++k) {
    const long kk = static_cast<long>(k);
    g[k] = (at(kk + 1) - 2.0 * at(kk) + at(kk - 1)) / (dr * dr);
  }
  return g;
}

}  // namespace fbp_detail

/// Reusable reconstructor; caches the log-kernel table for the geometry.
class FbpReconstructor {
 public:
  FbpReconstructor(const PatOperator& op, FbpConfig cfg) : op_(&op), cfg_(cfg) {
    if (cfg_.filter == FbpFilter::log_kernel) build_kernel_table();
  }

  const FbpConfig& config() const noexcept { return cfg_; }

  /// Reconstruction without the calibration scale.
  Image reconstruct_unscaled(const Sinogram& y) const {
    if (y.rows() != op_->n_rows() || y.cols() != op_->n_radii())
      throw ShapeError("fbp_reconstruct: sinogram shape does not match operator");
    return cfg_.filter == FbpFilter::log_kernel ? log_kernel(y) : derivative2(y);
  }

  Image reconstruct(const Sinogram& y) const {
    Image x = reconstruct_unscaled(y);
    x *= cfg_.effective_scale();
    return x;
  }

 private:
  void build_kernel_table() {
    const std::size_t m = op_->n_radii();
    const double dr = op_->radius_step();
    d_step_ = dr / 4.0;
    // Farthest pixel centre from a unit-circle sensor is below 1 + sqrt(2).
    n_d_ = static_cast<std::size_t>(std::ceil((1.0 + std::numbers::sqrt2 + 0.1) / d_step_)) + 2;
    table_.assign(n_d_ * m, 0.0);
    for (std::size_t j = 0; j < n_d_; ++j) {
      const double d = d_step_ * static_cast<double>(j);
      for (std::size_t k = 0; k < m; ++k) {
        const double r = dr * static_cast<double>(k + 1);
        table_[j * m + k] = fbp_detail::log_kernel_cell(r - 0.5 * dr, r + 0.5 * dr, d);
      }
    }
  }

  Image log_kernel(const Sinogram& y) const {
    const std::size_t m = op_->n_radii();
    const std::size_t n = op_->grid_n();
    const double dr = op_->radius_step();
    Image x = op_->domain_zero();
    std::vector<double> h(n_d_);
    const double weight = 1.0 / static_cast<double>(op_->n_rows());
    for (std::size_t row = 0; row < op_->n_rows(); ++row) {
      const auto g = fbp_detail::filter_log_kernel(
          std::span<const double>(y.data() + row * m, m), dr);
      for (std::size_t j = 0; j < n_d_; ++j) {
        const double* kr = &table_[j * m];
        double s = 0.0;
        for (std::size_t k = 0; k < m; ++k) s += kr[k] * g[k];
        h[j] = s;
      }
      const auto [zx, zy] = op_->sensor_position(op_->subset()[row]);
      for (std::size_t i = 0; i < n; ++i) {
        const double py = pixel_center(i, n);
        for (std::size_t c = 0; c < n; ++c) {
          const double px = pixel_center(c, n);
          const double t = std::hypot(px - zx, py - zy) / d_step_;
          const auto j0 = static_cast<std::size_t>(t);
          const double f = t - static_cast<double>(j0);
          x(i, c) += weight * ((1.0 - f) * h[j0] + f * h[j0 + 1]);
        }
      }
    }
    return x;
  }

  Image derivative2(const Sinogram& y) const {
    const std::size_t m = op_->n_radii();
    Sinogram filtered = y.zeros_like();
    for (std::size_t row = 0; row < y.rows(); ++row) {
      const auto g = fbp_detail::filter_derivative2(
          std::span<const double>(y.data() + row * m, m), op_->radius_step());
      std::copy(g.begin(), g.end(), filtered.data() + row * m);
    }
    Image x = op_->adjoint(filtered);
    // Sparse sampling keeps the same per-sensor weight as full sampling would
    // give the full set, so F# F stays close to the identity in scale.
    x *= static_cast<double>(op_->geometry().n_sensors_full) / static_cast<double>(op_->n_rows());
    return x;
  }

  const PatOperator* op_;
  FbpConfig cfg_;
  double d_step_ = 0.0;
  std::size_t n_d_ = 0;
  std::vector<double> table_;
};

inline Image fbp_reconstruct(const PatOperator& op, const FbpConfig& cfg, const Sinogram& y) {
  return FbpReconstructor(op, cfg).reconstruct(y);
}

/// Centred disc of the given radius and intensity, rasterised by pixel centres.
inline Image disc_phantom(std::size_t n, double radius = 0.5, double intensity = 1.0,
                          double cx = 0.0, double cy = 0.0) {
  Image x = make_image(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < n; ++c) {
      const double px = pixel_center(c, n) - cx;
      const double py = pixel_center(i, n) - cy;
      if (px * px + py * py <= radius * radius) x(i, c) = intensity;
    }
  return x;
}

/// Scale making the full-sampling reconstruction of the reference disc
/// (radius 0.5, intensity 1) have unit mean over the disc pixels.
inline double calibrate_fbp_scale(FbpFilter filter, PatGeometry geometry) {
  geometry.sensor_subset.clear();
  const PatOperator op(geometry);
  const Image disc = disc_phantom(geometry.grid_n);
  const Image rec = FbpReconstructor(op, FbpConfig{filter, 1.0}).reconstruct_unscaled(op.apply(disc));
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < disc.size(); ++i)
    if (disc[i] > 0.0) {
      sum += rec[i];
      ++count;
    }
  if (count == 0 || sum == 0.0) throw NumericError("calibrate_fbp_scale: degenerate reconstruction");
  return static_cast<double>(count) / sum;
}

}  // namespace nett
