#pragma once
/*
 * Diagnostics for the convergence theory of NETT.
 *
 * Rate experiments only expose the log-log slope of error against noise
 * level; the constants in the rate estimates (and the neighbourhood in
 * which they hold) are not observable.
 */

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "nett/error.hpp"
#include "nett/grid.hpp"
#include "nett/operators.hpp"
#include "nett/rate_function.hpp"
#include "nett/regularizers.hpp"
#include "nett/rng.hpp"
#include "nett/solver.hpp"

namespace nett {

/// |R(xt) - R(x) - <grad R(x), xt - x>|
template <Regularizer R>
double absolute_bregman(const R& reg, const Image& x_tilde, const Image& x) {
  x_tilde.require_same(x);
  Image d = x_tilde;
  d -= x;
  return std::abs(reg.value(x_tilde) - reg.value(x) - inner_product(reg.gradient(x), d));
}

/// Minimum of the absolute Bregman distance over n_samples random points on
/// the sphere of radius t around x. An upper bound on the true infimum.
template <Regularizer R>
double modulus_total_nonlinearity(const R& reg, const Image& x, double t, int n_samples, SeededRng& rng) {
  if (!(t > 0.0) || !std::isfinite(t)) throw InvalidArgument("modulus_total_nonlinearity: t must be positive");
  if (n_samples < 1) throw InvalidArgument("modulus_total_nonlinearity: need at least one sample");
  const double rx = reg.value(x);
  const Image gx = reg.gradient(x);
  double best = std::numeric_limits<double>::infinity();
  for (int k = 0; k < n_samples; ++k) {
    Image u = x.zeros_like();
    for (double& v : u.values()) v = rng.normal();
    u *= t / norm2(u);
    Image xt = x;
    xt += u;
    best = std::min(best, std::abs(reg.value(xt) - rx - inner_product(gx, u)));
  }
  return best;
}

/// delta/alpha + Phi(tau delta) + Phi^{-*}(tau alpha)/(tau alpha). May be +inf.
inline double rate_bound(const RateFunction& rf, double delta, double alpha, double tau) {
  rf.validate();
  if (!(delta > 0.0) || !(alpha > 0.0)) throw InvalidArgument("rate_bound: delta and alpha must be positive");
  if (!(tau >= 1.0)) throw InvalidArgument("rate_bound: tau must be >= 1");
  const double ta = tau * alpha;
  return delta / alpha + rf(tau * delta) + rf.inverse_conjugate(ta) / ta;
}

// ---------------------------------------------------------------------------
// Dense test family with a prescribed source condition
// ---------------------------------------------------------------------------

enum class FamilyKind { quadratic, nonconvex };
enum class ErrorMeasure { bregman, norm_q, norm };

inline std::string to_string(FamilyKind k) { return k == FamilyKind::quadratic ? "quad" : "nclq"; }
inline std::string to_string(ErrorMeasure m) {
  return m == ErrorMeasure::bregman ? "bregman" : (m == ErrorMeasure::norm_q ? "norm_q" : "norm");
}

struct FamilySpec {
  FamilyKind kind = FamilyKind::quadratic;
  std::size_t n = 40;
  double sigma_max = 1.0;
  double sigma_min = 1e-5;  ///< geometric singular value decay
  double c = 0.1;           ///< tanh perturbation (nonconvex family)
  std::uint64_t seed = 2018;
};

/// F = U diag(sigma) V^T with x_plus chosen so that grad R(x_plus) = F^T xi.
struct RateFamily {
  FamilySpec spec;
  DenseOperator op;
  std::vector<double> sigma;
  std::vector<double> xi;
  Image x_plus;
  Sinogram y;
  WeightedLq quadratic;
  std::optional<NonconvexLq> nonconvex;

  double reg_value(const Image& x) const {
    return spec.kind == FamilyKind::quadratic ? quadratic.value(x) : nonconvex->value(x);
  }
  Image reg_gradient(const Image& x) const {
    return spec.kind == FamilyKind::quadratic ? quadratic.gradient(x) : nonconvex->gradient(x);
  }
  double bregman(const Image& xt, const Image& x) const {
    return spec.kind == FamilyKind::quadratic ? absolute_bregman(quadratic, xt, x)
                                              : absolute_bregman(*nonconvex, xt, x);
  }
};

namespace analysis_detail {

inline Eigen::MatrixXd random_orthogonal(std::size_t n, SeededRng& rng) {
  Eigen::MatrixXd g(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (Eigen::Index c = 0; c < g.cols(); ++c)
    for (Eigen::Index r = 0; r < g.rows(); ++r) g(r, c) = rng.normal();
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  // Sign fix makes Q independent of the Householder sign convention.
  const Eigen::MatrixXd rm = qr.matrixQR();
  for (Eigen::Index k = 0; k < q.cols(); ++k)
    if (rm(k, k) < 0.0) q.col(k) = -q.col(k);
  return q;
}

inline Image to_image(const Eigen::VectorXd& v) {
  return make_vector_image(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Eigen::VectorXd to_vec(std::span<const double> v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace analysis_detail

inline RateFamily make_rate_family(const FamilySpec& spec) {
  using namespace analysis_detail;
  if (spec.n < 2) throw InvalidArgument("make_rate_family: n must be >= 2");
  if (!(spec.sigma_min > 0.0 && spec.sigma_min <= spec.sigma_max))
    throw InvalidArgument("make_rate_family: need 0 < sigma_min <= sigma_max");
  SeededRng rng(spec.seed);
  SeededRng rng_u = rng.split(0), rng_v = rng.split(1), rng_xi = rng.split(2), rng_b = rng.split(3);
  const std::size_t n = spec.n;
  const Eigen::MatrixXd U = random_orthogonal(n, rng_u);
  const Eigen::MatrixXd V = random_orthogonal(n, rng_v);
  std::vector<double> sigma(n);
  Eigen::VectorXd s(static_cast<Eigen::Index>(n));
  for (std::size_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) / static_cast<double>(n - 1);
    sigma[k] = spec.sigma_max * std::pow(spec.sigma_min / spec.sigma_max, t);
    s(static_cast<Eigen::Index>(k)) = sigma[k];
  }
  const Eigen::MatrixXd F = U * s.asDiagonal() * V.transpose();
  std::vector<double> entries(n * n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) entries[r * n + c] = F(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  DenseOperator op(n, n, std::move(entries), 1, n);

  std::vector<double> xi(n);
  for (double& v : xi) v = rng_xi.normal();
  const double nxi = norm2(std::span<const double>(xi));
  for (double& v : xi) v /= nxi;
  const Image target = op.adjoint(Sinogram(n, 1, xi));  // F^T xi

  RateFamily fam{spec, op, sigma, xi, Image{}, Sinogram{}, WeightedLq(Frame::pixel, 2.0), std::nullopt};
  if (spec.kind == FamilyKind::quadratic) {
    fam.x_plus = target;
    fam.x_plus *= 0.5;
  } else {
    fam.nonconvex = NonconvexLq::pixel_features(1, n, spec.c, 2.0, rng_b);
    // grad R(x) = 2x + N(x) with N small for small c: iterate x <- (F^T xi - N(x)) / 2.
    Image x = target;
    x *= 0.5;
    for (int it = 0; it < 500; ++it) {
      Image g = fam.nonconvex->gradient(x);
      g.axpy(-2.0, x);  // N(x)
      Image next = target;
      next -= g;
      next *= 0.5;
      const double step = distance(next, x);
      x = std::move(next);
      if (step <= 1e-15 * (1.0 + norm2(x))) break;
    }
    Image res = fam.nonconvex->gradient(x);
    res -= target;
    if (norm2(res) > 1e-10 * norm2(target))
      throw NumericError("make_rate_family: source condition fixed point did not converge");
    fam.x_plus = std::move(x);
  }
  fam.y = op.apply(fam.x_plus);
  return fam;
}

/// Minimizer of 1/2||F x - y||^2 + alpha R(x) on a rate family.
///
/// Quadratic R: direct normal-equation solve. Nonconvex R = ||.||^2 + small
/// perturbation: semi-implicit iteration
///   (F^T F + 2 alpha I) x_{k+1} = F^T y - alpha (grad R(x_k) - 2 x_k)
/// until the gradient of the functional is below `tol` relative.
inline Image solve_family(const RateFamily& fam, const Sinogram& y, double alpha, double tol = 1e-13,
                          int max_outer = 2000) {
  using namespace analysis_detail;
  const Eigen::MatrixXd F = to_eigen(fam.op);
  Eigen::MatrixXd N = F.transpose() * F;
  N.diagonal().array() += 2.0 * alpha;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(N);
  if (ldlt.info() != Eigen::Success) throw NumericError("solve_family: factorization failed");
  const Eigen::VectorXd fty = F.transpose() * to_vec(y.values());
  Eigen::VectorXd x = ldlt.solve(fty);
  if (fam.spec.kind == FamilyKind::quadratic) return to_image(x);

  const double scale = fty.norm() + 1e-300;
  for (int it = 0; it < max_outer; ++it) {
    const Image xi = to_image(x);
    const Eigen::VectorXd g = to_vec(fam.nonconvex->gradient(xi).values());
    const Eigen::VectorXd full = F.transpose() * (F * x) - fty + alpha * g;
    if (full.norm() <= tol * scale) return xi;
    x = ldlt.solve(fty - alpha * (g - 2.0 * x));
    if (!x.allFinite()) throw NumericError("solve_family: non-finite iterate");
  }
  throw NumericError("solve_family: no convergence at alpha=" + std::to_string(alpha));
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

/// Least-squares slope of log(err) against log(delta).
inline double fit_loglog_slope(const std::vector<double>& deltas, const std::vector<double>& errors) {
  if (deltas.size() != errors.size() || deltas.size() < 2) throw InvalidArgument("fit_loglog_slope: need >= 2 points");
  double mx = 0, my = 0;
  const double n = static_cast<double>(deltas.size());
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    if (!(deltas[i] > 0.0) || !(errors[i] > 0.0)) throw NumericError("fit_loglog_slope: nonpositive value");
    mx += std::log(deltas[i]);
    my += std::log(errors[i]);
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    const double dx = std::log(deltas[i]) - mx;
    sxy += dx * (std::log(errors[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

struct RateReport {
  ErrorMeasure measure = ErrorMeasure::bregman;
  std::vector<double> deltas;
  std::vector<double> alphas;
  std::vector<double> errors;
  double fitted_slope = 0.0;
  double expected_slope = 0.0;
  double tolerance = 0.0;

  bool pass() const { return std::abs(fitted_slope - expected_slope) <= tolerance; }
};

inline void save_rate_csv(const std::filesystem::path& path, const RateReport& r) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open for writing: " + path.string());
  os.precision(17);
  os << "delta,alpha,error\n";
  for (std::size_t i = 0; i < r.deltas.size(); ++i) os << r.deltas[i] << ',' << r.alphas[i] << ',' << r.errors[i] << '\n';
  os << "# measure=" << to_string(r.measure) << " fitted_slope=" << r.fitted_slope
     << " expected=" << r.expected_slope << " tolerance=" << r.tolerance << " result=" << (r.pass() ? "pass" : "fail")
     << '\n';
}

inline void check_deltas(const std::vector<double>& deltas) {
  if (deltas.size() < 2) throw InvalidArgument("need at least two noise levels");
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    if (!(deltas[i] > 0.0)) throw InvalidArgument("noise levels must be positive");
    if (i > 0 && !(deltas[i] < deltas[i - 1])) throw InvalidArgument("noise levels must be strictly decreasing");
  }
}

/// Unit noise direction shared by every delta of an experiment.
inline Sinogram noise_direction(std::size_t rows, SeededRng& rng) {
  Sinogram e(rows, 1, 0.0);
  for (double& v : e.values()) v = rng.normal();
  e *= 1.0 / norm2(e);
  return e;
}

inline double measure_error(const RateFamily& fam, const Image& x, ErrorMeasure m) {
  switch (m) {
    case ErrorMeasure::bregman: return fam.bregman(x, fam.x_plus);
    case ErrorMeasure::norm: return distance(x, fam.x_plus);
    case ErrorMeasure::norm_q: {
      const double d = distance(x, fam.x_plus);
      return d * d;  // q = 2 in both families
    }
  }
  return 0.0;
}

/// Expected slope for alpha ~ delta: Bregman and ||.||^q are O(delta),
/// the norm O(delta^(1/2)).
inline double expected_rate_slope(ErrorMeasure m) { return m == ErrorMeasure::norm ? 0.5 : 1.0; }

inline RateReport rate_experiment(const RateFamily& fam, const AlphaRule& rule, const std::vector<double>& deltas,
                                  ErrorMeasure measure, SeededRng& rng, double tolerance = 0.2) {
  check_deltas(deltas);
  const Sinogram e = noise_direction(fam.op.rows(), rng);
  RateReport rep;
  rep.measure = measure;
  rep.expected_slope = expected_rate_slope(measure);
  rep.tolerance = tolerance;
  for (double delta : deltas) {
    Sinogram yd = fam.y;
    yd.axpy(delta, e);
    const double alpha = choose_alpha(rule, delta);
    Image x;
    try {
      x = solve_family(fam, yd, alpha);
    } catch (const Error& err) {
      throw NumericError("rate_experiment at delta=" + std::to_string(delta) + ": " + err.what());
    }
    rep.deltas.push_back(delta);
    rep.alphas.push_back(alpha);
    rep.errors.push_back(measure_error(fam, x, measure));
  }
  rep.fitted_slope = fit_loglog_slope(rep.deltas, rep.errors);
  return rep;
}

struct ConvergenceReport {
  std::vector<double> deltas;
  std::vector<double> alphas;
  std::vector<double> errors;     ///< ||x_{alpha,delta} - x_plus||
  std::vector<double> reg_gaps;   ///< |R(x_{alpha,delta}) - R(x_plus)|
  bool eventually_decreasing = false;  ///< errors strictly decrease after the first step
  bool reduced_fivefold = false;       ///< last error < first error / 5
};

inline ConvergenceReport convergence_experiment(const RateFamily& fam, const AlphaRule& rule,
                                                const std::vector<double>& deltas, SeededRng& rng) {
  check_deltas(deltas);
  const Sinogram e = noise_direction(fam.op.rows(), rng);
  const double r_plus = fam.reg_value(fam.x_plus);
  ConvergenceReport rep;
  for (double delta : deltas) {
    Sinogram yd = fam.y;
    yd.axpy(delta, e);
    const double alpha = choose_alpha(rule, delta);
    const Image x = solve_family(fam, yd, alpha);
    rep.deltas.push_back(delta);
    rep.alphas.push_back(alpha);
    rep.errors.push_back(distance(x, fam.x_plus));
    rep.reg_gaps.push_back(std::abs(fam.reg_value(x) - r_plus));
  }
  rep.eventually_decreasing = true;
  for (std::size_t i = 2; i < rep.errors.size(); ++i)
    if (!(rep.errors[i] < rep.errors[i - 1])) rep.eventually_decreasing = false;
  rep.reduced_fivefold = rep.errors.back() < rep.errors.front() / 5.0;
  return rep;
}

}  // namespace nett
