#pragma once
/*
 * Regularizers R: Image -> [0, inf) with value and gradient.
 *
 *   WeightedLq    R(x) = sum_l v_l |<x, phi_l>|^q,  phi_l pixel basis or orthonormal 2D Haar
 *   NonconvexLq   R(x) = sum_l v_l |phi_l(x)|^q,    phi_l(x) = <a_l,x> + c tanh(<b_l,x>)
 *   NetworkRegularizer  R(x) = sum over bottleneck activations |a|^p
 *
 * q > 1 keeps the first two Gateaux differentiable. For the network
 * regularizer p = 1 is allowed; its gradient then uses sgn(0) = 0.
 */

#include <cmath>
#include <concepts>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "nett/error.hpp"
#include "nett/grid.hpp"
#include "nett/io.hpp"
#include "nett/net.hpp"
#include "nett/rng.hpp"

namespace nett {

template <class R>
concept Regularizer = requires(const R& r, const Image& x) {
  { r.value(x) } -> std::convertible_to<double>;
  { r.gradient(x) } -> std::same_as<Image>;
  { r.descriptor() } -> std::convertible_to<std::string>;
};

namespace reg_detail {

inline double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// d/dt |t|^q = q |t|^(q-1) sgn(t)
inline double pow_abs_derivative(double t, double q) {
  if (t == 0.0) return 0.0;
  return q * std::pow(std::abs(t), q - 1.0) * sgn(t);
}

}  // namespace reg_detail

// ---------------------------------------------------------------------------
// Orthonormal 2D Haar transform
// ---------------------------------------------------------------------------

/// Number of dyadic levels supported by an image (both sides halved evenly).
inline std::size_t haar_max_levels(std::size_t rows, std::size_t cols) {
  std::size_t levels = 0;
  while (rows % 2 == 0 && cols % 2 == 0 && rows > 1 && cols > 1) {
    rows /= 2;
    cols /= 2;
    ++levels;
  }
  return levels;
}

/// In-place Mallat layout: each level maps every 2x2 block (a b; c d) of the
/// current low-pass quadrant to LL=(a+b+c+d)/2, HL=(a-b+c-d)/2,
/// LH=(a+b-c-d)/2, HH=(a-b-c+d)/2.
inline Image haar_forward(const Image& x, std::size_t levels) {
  if (levels > haar_max_levels(x.rows(), x.cols())) throw ShapeError("haar_forward: too many levels");
  Image cur = x;
  std::size_t h = x.rows(), w = x.cols();
  for (std::size_t l = 0; l < levels; ++l) {
    Image next = cur;
    const std::size_t h2 = h / 2, w2 = w / 2;
    for (std::size_t i = 0; i < h2; ++i)
      for (std::size_t j = 0; j < w2; ++j) {
        const double a = cur(2 * i, 2 * j), b = cur(2 * i, 2 * j + 1);
        const double c = cur(2 * i + 1, 2 * j), d = cur(2 * i + 1, 2 * j + 1);
        next(i, j) = 0.5 * (a + b + c + d);
        next(i, j + w2) = 0.5 * (a - b + c - d);
        next(i + h2, j) = 0.5 * (a + b - c - d);
        next(i + h2, j + w2) = 0.5 * (a - b - c + d);
      }
    cur = std::move(next);
    h = h2;
    w = w2;
  }
  return cur;
}

/// Inverse (= transpose) of haar_forward.
inline Image haar_inverse(const Image& coef, std::size_t levels) {
  if (levels > haar_max_levels(coef.rows(), coef.cols())) throw ShapeError("haar_inverse: too many levels");
  Image cur = coef;
  for (std::size_t l = levels; l-- > 0;) {
    const std::size_t h = coef.rows() >> l, w = coef.cols() >> l;
    const std::size_t h2 = h / 2, w2 = w / 2;
    Image next = cur;
    for (std::size_t i = 0; i < h2; ++i)
      for (std::size_t j = 0; j < w2; ++j) {
        const double ll = cur(i, j), hl = cur(i, j + w2), lh = cur(i + h2, j), hh = cur(i + h2, j + w2);
        next(2 * i, 2 * j) = 0.5 * (ll + hl + lh + hh);
        next(2 * i, 2 * j + 1) = 0.5 * (ll - hl + lh - hh);
        next(2 * i + 1, 2 * j) = 0.5 * (ll + hl - lh - hh);
        next(2 * i + 1, 2 * j + 1) = 0.5 * (ll - hl - lh + hh);
      }
    cur = std::move(next);
  }
  return cur;
}

// ---------------------------------------------------------------------------
// Weighted lq over an orthonormal frame
// ---------------------------------------------------------------------------

enum class Frame { pixel, haar2d };

inline std::string to_string(Frame f) { return f == Frame::pixel ? "pixel" : "haar2d"; }

class WeightedLq {
 public:
  /// Uniform weight v for every coefficient.
  WeightedLq(Frame frame, double q, double weight = 1.0) : frame_(frame), q_(q), uniform_(weight) {
    if (!(q > 1.0) || !std::isfinite(q)) throw InvalidArgument("WeightedLq: q must be > 1");
    if (!(weight > 0.0)) throw InvalidArgument("WeightedLq: weights must be positive");
  }
  /// Per-coefficient weights (indexed like the coefficient image).
  WeightedLq(Frame frame, double q, std::vector<double> weights)
      : frame_(frame), q_(q), weights_(std::move(weights)) {
    if (!(q > 1.0) || !std::isfinite(q)) throw InvalidArgument("WeightedLq: q must be > 1");
    for (double v : weights_)
      if (!(v > 0.0) || !std::isfinite(v)) throw InvalidArgument("WeightedLq: weights must be positive");
  }

  Frame frame() const noexcept { return frame_; }
  double q() const noexcept { return q_; }
  double weight(std::size_t i) const { return weights_.empty() ? uniform_ : weights_[i]; }

  Image coefficients(const Image& x) const {
    if (!weights_.empty() && weights_.size() != x.size())
      throw ShapeError("WeightedLq: weight count does not match image size");
    return frame_ == Frame::pixel ? x : haar_forward(x, haar_max_levels(x.rows(), x.cols()));
  }
  Image synthesize(const Image& c) const {
    return frame_ == Frame::pixel ? c : haar_inverse(c, haar_max_levels(c.rows(), c.cols()));
  }

  double value(const Image& x) const {
    const Image c = coefficients(x);
    double s = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) s += weight(i) * std::pow(std::abs(c[i]), q_);
    return s;
  }

  Image gradient(const Image& x) const {
    Image c = coefficients(x);
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = weight(i) * reg_detail::pow_abs_derivative(c[i], q_);
    return synthesize(c);
  }

  std::string descriptor() const {
    return "weighted_lq(frame=" + to_string(frame_) + ", q=" + std::to_string(q_) + ")";
  }

 private:
  Frame frame_;
  double q_;
  double uniform_ = 1.0;
  std::vector<double> weights_;
};

// ---------------------------------------------------------------------------
// Non-convex lq over tanh-perturbed linear features
// ---------------------------------------------------------------------------

class NonconvexLq {
 public:
  struct Feature {
    std::vector<double> a;
    std::vector<double> b;
    double weight = 1.0;
  };

  NonconvexLq(std::size_t rows, std::size_t cols, std::vector<Feature> features, double c, double q)
      : rows_(rows), cols_(cols), features_(std::move(features)), c_(c), q_(q) {
    if (!(q > 1.0) || !std::isfinite(q)) throw InvalidArgument("NonconvexLq: q must be > 1");
    if (!(c >= 0.0) || !std::isfinite(c)) throw InvalidArgument("NonconvexLq: c must be >= 0");
    for (const auto& f : features_) {
      if (f.a.size() != rows * cols || f.b.size() != rows * cols)
        throw ShapeError("NonconvexLq: feature vector length mismatch");
      if (!(f.weight > 0.0)) throw InvalidArgument("NonconvexLq: weights must be positive");
      for (double v : f.a)
        if (!std::isfinite(v)) throw InvalidArgument("NonconvexLq: non-finite feature");
      for (double v : f.b)
        if (!std::isfinite(v)) throw InvalidArgument("NonconvexLq: non-finite feature");
    }
  }

  /// a_l = pixel basis vector e_l, b_l Gaussian with unit norm, all weights 1.
  static NonconvexLq pixel_features(std::size_t rows, std::size_t cols, double c, double q,
                                    SeededRng& rng) {
    const std::size_t n = rows * cols;
    std::vector<Feature> fs(n);
    for (std::size_t l = 0; l < n; ++l) {
      fs[l].a.assign(n, 0.0);
      fs[l].a[l] = 1.0;
      fs[l].b.resize(n);
      for (double& v : fs[l].b) v = rng.normal();
      const double nb = norm2(std::span<const double>(fs[l].b));
      for (double& v : fs[l].b) v /= nb;
    }
    return NonconvexLq(rows, cols, std::move(fs), c, q);
  }

  double c() const noexcept { return c_; }
  double q() const noexcept { return q_; }
  const std::vector<Feature>& features() const noexcept { return features_; }

  double feature_value(const Feature& f, const Image& x) const {
    return inner_product(std::span<const double>(f.a), x.values()) +
           c_ * std::tanh(inner_product(std::span<const double>(f.b), x.values()));
  }

  double value(const Image& x) const {
    check(x);
    double s = 0.0;
    for (const auto& f : features_) s += f.weight * std::pow(std::abs(feature_value(f, x)), q_);
    return s;
  }

  Image gradient(const Image& x) const {
    check(x);
    Image g = x.zeros_like();
    for (const auto& f : features_) {
      const double t = std::tanh(inner_product(std::span<const double>(f.b), x.values()));
      const double phi = inner_product(std::span<const double>(f.a), x.values()) + c_ * t;
      const double outer = f.weight * reg_detail::pow_abs_derivative(phi, q_);
      if (outer == 0.0) continue;
      const double cb = c_ * (1.0 - t * t);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += outer * (f.a[i] + cb * f.b[i]);
    }
    return g;
  }

  std::string descriptor() const {
    return "nonconvex_lq(features=" + std::to_string(features_.size()) + ", c=" + std::to_string(c_) +
           ", q=" + std::to_string(q_) + ")";
  }

 private:
  void check(const Image& x) const {
    if (x.rows() != rows_ || x.cols() != cols_) throw ShapeError("NonconvexLq: image shape mismatch");
  }

  std::size_t rows_, cols_;
  std::vector<Feature> features_;
  double c_, q_;
};

// ---------------------------------------------------------------------------
// Encoder bottleneck norm
// ---------------------------------------------------------------------------

/// Holds the trained network by shared pointer to const; parameters cannot
/// change while the regularizer is in use.
class NetworkRegularizer {
 public:
  NetworkRegularizer(std::shared_ptr<const Network> net, double p = 2.0) : net_(std::move(net)), p_(p) {
    if (!net_) throw InvalidArgument("NetworkRegularizer: null network");
    if (!(p >= 1.0) || !std::isfinite(p)) throw InvalidArgument("NetworkRegularizer: p must be >= 1");
  }

  const Network& network() const noexcept { return *net_; }
  double p() const noexcept { return p_; }

  double value(const Image& x) const {
    const ForwardCache cache = net_->encode(x);
    double s = 0.0;
    for (double a : cache.bottleneck().values) s += std::pow(std::abs(a), p_);
    return s;
  }

  Image gradient(const Image& x) const {
    const ForwardCache cache = net_->encode(x);
    Tensor3 g = cache.bottleneck();
    for (double& a : g.values) a = reg_detail::pow_abs_derivative(a, p_);
    return net_->backward(cache, nullptr, &g, false).input;
  }

  std::string descriptor() const {
    return "network(p=" + std::to_string(p_) + ", params=" + std::to_string(net_->parameter_count()) + ")";
  }

 private:
  std::shared_ptr<const Network> net_;
  double p_;
};

static_assert(Regularizer<WeightedLq>);
static_assert(Regularizer<NonconvexLq>);
static_assert(Regularizer<NetworkRegularizer>);

/// Type-erased regularizer for runtime selection (CLI, configs).
class AnyRegularizer {
 public:
  template <Regularizer R>
  AnyRegularizer(R r) : impl_(std::make_shared<Model<R>>(std::move(r))) {}

  double value(const Image& x) const { return impl_->value(x); }
  Image gradient(const Image& x) const { return impl_->gradient(x); }
  std::string descriptor() const { return impl_->descriptor(); }

 private:
  struct Concept {
    virtual ~Concept() = default;
    virtual double value(const Image&) const = 0;
    virtual Image gradient(const Image&) const = 0;
    virtual std::string descriptor() const = 0;
  };
  template <class R>
  struct Model final : Concept {
    explicit Model(R r) : reg(std::move(r)) {}
    double value(const Image& x) const override { return reg.value(x); }
    Image gradient(const Image& x) const override { return reg.gradient(x); }
    std::string descriptor() const override { return reg.descriptor(); }
    R reg;
  };
  std::shared_ptr<const Concept> impl_;
};

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

struct CoercivityReport {
  std::vector<double> scales;
  std::vector<double> values;  ///< R(s x) per scale
  bool nondecreasing = false;
  bool grows = false;           ///< last value >= 2 * first value
  bool degenerate = false;      ///< R(x) == 0 at the first scale
  bool indicates_coercive() const noexcept { return nondecreasing && grows && !degenerate; }
};

/// Evaluates R along the ray s*x. A heuristic indicator, not a proof.
template <Regularizer R>
CoercivityReport coercivity_probe(const R& reg, const Image& x, const std::vector<double>& scales) {
  if (scales.empty()) throw InvalidArgument("coercivity_probe: no scales");
  for (std::size_t i = 0; i < scales.size(); ++i) {
    if (!(scales[i] >= 1.0)) throw InvalidArgument("coercivity_probe: scales must be >= 1");
    if (i > 0 && !(scales[i] > scales[i - 1]))
      throw InvalidArgument("coercivity_probe: scales must be increasing");
  }
  CoercivityReport rep;
  rep.scales = scales;
  for (double s : scales) {
    Image xs = x;
    xs *= s;
    rep.values.push_back(reg.value(xs));
  }
  rep.nondecreasing = true;
  for (std::size_t i = 1; i < rep.values.size(); ++i)
    if (rep.values[i] < rep.values[i - 1]) rep.nondecreasing = false;
  rep.degenerate = rep.values.front() == 0.0;
  rep.grows = !rep.degenerate && rep.values.back() >= 2.0 * rep.values.front();
  return rep;
}

}  // namespace nett
