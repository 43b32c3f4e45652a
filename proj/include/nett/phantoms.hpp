#pragma once
/*
 * Random phantoms supported in the unit disc, noise injection, and the
 * artifact-detector training set.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <utility>

#include "nett/error.hpp"
#include "nett/fbp.hpp"
#include "nett/grid.hpp"
#include "nett/operators.hpp"
#include "nett/rng.hpp"
#include "nett/train_set.hpp"

namespace nett {

struct EllipsePhantomSpec {
  int min_ellipses = 3;
  int max_ellipses = 8;
  double intensity_lo = 0.0;  ///< bounds on the summed phantom value at every pixel
  double intensity_hi = 6.0;
  double ellipse_intensity_lo = -1.0;  ///< per-ellipse draw
  double ellipse_intensity_hi = 3.0;
  double axis_lo = 0.05;
  double axis_hi = 0.6;
  std::uint64_t seed = 0;
  std::size_t grid_n = 64;
};

struct BlobPhantomSpec {
  int n_blobs = 5;
  double width_lo = 0.08;
  double width_hi = 0.25;
  double amplitude_lo = 0.5;
  double amplitude_hi = 2.0;
  std::uint64_t seed = 0;
  std::size_t grid_n = 64;
};

inline constexpr int kMaxPhantomRejections = 10000;

/// Sum of constant-intensity ellipses. Each candidate ellipse is drawn
/// uniformly (centre, axes, angle, intensity) and rejected if it leaves the
/// unit disc or pushes any pixel outside [intensity_lo, intensity_hi].
inline Image gen_ellipse_phantom(const EllipsePhantomSpec& spec) {
  if (spec.min_ellipses < 1 || spec.max_ellipses < spec.min_ellipses)
    throw InvalidArgument("EllipsePhantomSpec: bad ellipse count range");
  if (spec.grid_n < 2) throw InvalidArgument("EllipsePhantomSpec: grid too small");
  SeededRng rng(spec.seed);
  const std::size_t n = spec.grid_n;
  const auto count = static_cast<int>(rng.uniform_int(spec.min_ellipses, spec.max_ellipses));
  Image x = make_image(n);
  Image trial = x;
  int rejections = 0;
  for (int e = 0; e < count;) {
    const double a = rng.uniform(spec.axis_lo, spec.axis_hi);
    const double b = rng.uniform(spec.axis_lo, spec.axis_hi);
    const double rho = std::sqrt(rng.uniform());
    const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double theta = rng.uniform(0.0, std::numbers::pi);
    const double value = rng.uniform(spec.ellipse_intensity_lo, spec.ellipse_intensity_hi);
    const double cx = rho * std::cos(phi);
    const double cy = rho * std::sin(phi);

    // |c| + max axis < 1 bounds the whole ellipse inside the open unit disc.
    bool ok = rho + std::max(a, b) < 0.98;
    if (ok) {
      trial = x;
      const double ct = std::cos(theta), st = std::sin(theta);
      for (std::size_t i = 0; i < n && ok; ++i) {
        const double py = pixel_center(i, n) - cy;
        for (std::size_t c = 0; c < n; ++c) {
          const double px = pixel_center(c, n) - cx;
          const double u = (ct * px + st * py) / a;
          const double v = (-st * px + ct * py) / b;
          if (u * u + v * v > 1.0) continue;
          double& t = trial(i, c);
          t += value;
          if (t < spec.intensity_lo || t > spec.intensity_hi) {
            ok = false;
            break;
          }
        }
      }
    }
    if (ok) {
      x = trial;
      ++e;
    } else if (++rejections > kMaxPhantomRejections) {
      throw NumericError("gen_ellipse_phantom: side constraints unsatisfiable after " +
                         std::to_string(kMaxPhantomRejections) + " rejections");
    }
  }
  return x;
}

/// Sum of Gaussian bumps truncated at three widths, each fully inside the disc.
inline Image gen_blob_phantom(const BlobPhantomSpec& spec) {
  if (spec.n_blobs < 0) throw InvalidArgument("BlobPhantomSpec: negative blob count");
  SeededRng rng(spec.seed);
  const std::size_t n = spec.grid_n;
  Image x = make_image(n);
  for (int k = 0; k < spec.n_blobs; ++k) {
    double w = 0, amp = 0, cx = 0, cy = 0;
    for (int attempt = 0;; ++attempt) {
      w = rng.uniform(spec.width_lo, spec.width_hi);
      amp = rng.uniform(spec.amplitude_lo, spec.amplitude_hi);
      const double rho = std::sqrt(rng.uniform());
      const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
      cx = rho * std::cos(phi);
      cy = rho * std::sin(phi);
      if (rho + 3.0 * w < 0.98) break;
      if (attempt > kMaxPhantomRejections)
        throw NumericError("gen_blob_phantom: cannot place blob inside the disc");
    }
    const double cutoff2 = 9.0 * w * w;
    for (std::size_t i = 0; i < n; ++i) {
      const double py = pixel_center(i, n) - cy;
      for (std::size_t c = 0; c < n; ++c) {
        const double px = pixel_center(c, n) - cx;
        const double d2 = px * px + py * py;
        if (d2 <= cutoff2) x(i, c) += amp * std::exp(-d2 / (2.0 * w * w));
      }
    }
  }
  return x;
}

struct NoisyData {
  Sinogram y_delta;
  double delta = 0.0;
};

/// Adds Gaussian noise rescaled so that ||y_delta - y|| = level * ||y|| exactly.
inline NoisyData add_noise(const Sinogram& y, double level, SeededRng& rng) {
  if (!(level >= 0.0) || !std::isfinite(level)) throw InvalidArgument("add_noise: level must be >= 0");
  if (level == 0.0) return {y, 0.0};
  const double ny = norm2(y);
  if (ny == 0.0) throw InvalidArgument("add_noise: relative noise on zero data is undefined");
  Sinogram xi = y.zeros_like();
  for (double& v : xi.values()) v = rng.normal();
  const double delta = level * ny;
  xi *= delta / norm2(xi);
  Sinogram out = y;
  out += xi;
  return {std::move(out), delta};
}

/// Which reconstruction supplies the artifact-bearing inputs.
enum class ArtifactSource { fbp, adjoint };

/// 2N pairs: n_half artifact pairs (input = reconstruction of F z, target =
/// z - input) followed by n_half clean pairs (input = z, target = 0). Phantom
/// n uses seed rng(seed).split(n), so the set does not depend on build order.
inline TrainSet build_training_set(const PatOperator& op, const FbpConfig& fbp, std::size_t n_half,
                                   std::uint64_t seed,
                                   ArtifactSource source = ArtifactSource::fbp,
                                   EllipsePhantomSpec base = {}) {
  if (n_half < 1) throw InvalidArgument("build_training_set: need at least one pair per kind");
  const SeededRng master(seed);
  const FbpReconstructor rec(op, fbp);
  base.grid_n = op.grid_n();
  TrainSet set;
  set.pairs.reserve(2 * n_half);
  for (std::size_t i = 0; i < 2 * n_half; ++i) {
    EllipsePhantomSpec spec = base;
    spec.seed = master.split(i).next_u64();
    Image z = gen_ellipse_phantom(spec);
    if (i < n_half) {
      const Sinogram y = op.apply(z);
      Image x = source == ArtifactSource::fbp ? rec.reconstruct(y) : op.adjoint(y);
      Image r = z;
      r -= x;
      set.pairs.push_back({std::move(x), std::move(r), PairKind::artifact, spec.seed});
    } else {
      Image zero = z.zeros_like();
      set.pairs.push_back({std::move(z), std::move(zero), PairKind::clean, spec.seed});
    }
  }
  return set;
}

}  // namespace nett
