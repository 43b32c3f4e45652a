#pragma once
/*
 * Minimizes  T(x) = 1/2 ||F x - y||^2 + alpha R(x)  by incremental gradient
 * descent. Each iteration takes a data step, then a regularizer step at the
 * intermediate point:
 *
 *     xbar_i = x_{i-1} - s_i F*(F x_{i-1} - y)
 *     x_i    = xbar_i  - s_i alpha grad R(xbar_i)
 *
 * With a constant step s and R = ||x||^2 the fixed point is the Tikhonov
 * solution for alpha / (1 - 2 s alpha), not alpha. Shrinking s reduces the
 * gap at the price of slower contraction.
 */

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nett/error.hpp"
#include "nett/grid.hpp"
#include "nett/operators.hpp"
#include "nett/rate_function.hpp"
#include "nett/regularizers.hpp"

namespace nett {

template <LinearOperator Op, Regularizer Reg>
struct NettProblem {
  const Op& op;
  Sinogram data;
  const Reg& reg;
  double alpha = 1.0;

  void validate() const {
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw InvalidArgument("NettProblem: alpha must be >= 0");
    const Sinogram z = op.range_zero();
    if (!z.same_shape(data)) throw ShapeError("NettProblem: data shape does not match operator range");
  }

  double data_term(const Image& x) const {
    Sinogram r = op.apply(x);
    r -= data;
    const double n = norm2(r);
    return 0.5 * n * n;
  }
  double objective(const Image& x) const { return data_term(x) + alpha * reg.value(x); }
};

template <LinearOperator Op, Regularizer Reg>
NettProblem(const Op&, Sinogram, const Reg&, double) -> NettProblem<Op, Reg>;

struct SolveConfig {
  std::vector<double> steps{0.1};  ///< one entry = constant step; otherwise s_1..s_K
  int max_iter = 50;
  std::optional<Image> initial;    ///< zero image if empty
  int record_every = 0;            ///< also keep every k-th iterate when > 0
  std::vector<int> snapshots;      ///< iterations whose iterates are kept
  bool trace = true;

  double step(int i) const { return steps.size() == 1 ? steps[0] : steps[static_cast<std::size_t>(i - 1)]; }

  void validate() const {
    if (max_iter <= 0) throw InvalidArgument("SolveConfig: max_iter must be positive");
    if (steps.empty()) throw InvalidArgument("SolveConfig: no step sizes");
    if (steps.size() > 1 && steps.size() < static_cast<std::size_t>(max_iter))
      throw InvalidArgument("SolveConfig: step sequence shorter than max_iter");
    for (double s : steps)
      if (!(s > 0.0) || !std::isfinite(s)) throw InvalidArgument("SolveConfig: step sizes must be positive");
    if (record_every < 0) throw InvalidArgument("SolveConfig: record_every must be >= 0");
    for (int k : snapshots)
      if (k < 0) throw InvalidArgument("SolveConfig: negative snapshot iteration");
  }
};

struct TraceRow {
  int iter = 0;
  double data_term = 0.0;
  double reg_term = 0.0;  ///< R(x_i), not scaled by alpha
  double objective = 0.0;
};

struct SolveResult {
  Image final;
  std::vector<std::pair<int, Image>> iterates;  ///< (iteration, x_i), ascending
  std::vector<TraceRow> trace;                  ///< one row per iteration 1..max_iter

  const Image* iterate(int k) const {
    for (const auto& [i, x] : iterates)
      if (i == k) return &x;
    return nullptr;
  }
};

template <LinearOperator Op, Regularizer Reg>
SolveResult nett_minimize(const NettProblem<Op, Reg>& p, const SolveConfig& cfg) {
  p.validate();
  cfg.validate();
  Image x = cfg.initial ? *cfg.initial : p.op.domain_zero();
  if (!x.same_shape(p.op.domain_zero())) throw ShapeError("nett_minimize: initial iterate has wrong shape");

  SolveResult out;
  if (cfg.trace) out.trace.reserve(static_cast<std::size_t>(cfg.max_iter));
  auto wanted = [&](int i) {
    if (cfg.record_every > 0 && i % cfg.record_every == 0) return true;
    return std::find(cfg.snapshots.begin(), cfg.snapshots.end(), i) != cfg.snapshots.end();
  };
  if (wanted(0)) out.iterates.emplace_back(0, x);

  Sinogram residual = p.op.apply(x);
  residual -= p.data;
  for (int i = 1; i <= cfg.max_iter; ++i) {
    const double s = cfg.step(i);
    x.axpy(-s, p.op.adjoint(residual));
    if (p.alpha != 0.0) x.axpy(-s * p.alpha, p.reg.gradient(x));
    if (!x.all_finite()) throw NumericError("nett_minimize: non-finite iterate at iteration " + std::to_string(i));

    residual = p.op.apply(x);
    residual -= p.data;
    if (cfg.trace) {
      const double rn = norm2(residual);
      TraceRow row{i, 0.5 * rn * rn, p.reg.value(x), 0.0};
      row.objective = row.data_term + p.alpha * row.reg_term;
      if (!std::isfinite(row.objective))
        throw NumericError("nett_minimize: non-finite objective at iteration " + std::to_string(i));
      out.trace.push_back(row);
    }
    if (wanted(i)) out.iterates.emplace_back(i, x);
  }
  out.final = std::move(x);
  return out;
}

inline void save_trace_csv(const std::filesystem::path& path, const std::vector<TraceRow>& trace) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open for writing: " + path.string());
  os.precision(17);
  os << "iter,data_term,reg_term,objective\n";
  for (const auto& r : trace) os << r.iter << ',' << r.data_term << ',' << r.reg_term << ',' << r.objective << '\n';
}

// ---------------------------------------------------------------------------
// Closed-form quadratic case
// ---------------------------------------------------------------------------

inline Eigen::MatrixXd to_eigen(const DenseOperator& A) {
  Eigen::MatrixXd m(A.rows(), A.cols());
  for (std::size_t r = 0; r < A.rows(); ++r)
    for (std::size_t c = 0; c < A.cols(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = A(r, c);
  return m;
}

/// Solves (A^T A + 2 alpha I) x = A^T y, the minimizer of
/// 1/2 ||A x - y||^2 + alpha ||x||^2.
inline std::vector<double> tikhonov_dense_oracle(const DenseOperator& A, std::span<const double> y, double alpha) {
  if (y.size() != A.rows()) throw ShapeError("tikhonov_dense_oracle: data length mismatch");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw InvalidArgument("tikhonov_dense_oracle: alpha must be >= 0");
  const Eigen::MatrixXd M = to_eigen(A);
  const Eigen::Map<const Eigen::VectorXd> yv(y.data(), static_cast<Eigen::Index>(y.size()));
  Eigen::MatrixXd N = M.transpose() * M;
  N.diagonal().array() += 2.0 * alpha;
  const Eigen::VectorXd rhs = M.transpose() * yv;
  const Eigen::FullPivLU<Eigen::MatrixXd> lu(N);
  if (lu.rank() < N.rows()) throw NumericError("tikhonov_dense_oracle: singular normal equations");
  const Eigen::VectorXd x = lu.solve(rhs);
  return {x.data(), x.data() + x.size()};
}

// ---------------------------------------------------------------------------
// Parameter choice
// ---------------------------------------------------------------------------

struct AlphaRule {
  enum class Kind { proportional_delta, rate_matched };

  Kind kind = Kind::proportional_delta;
  double c = 1.0;
  RateFunction rate = RateFunction::sqrt_rate();
  double tau = 1.0;

  static AlphaRule proportional(double c) { return {Kind::proportional_delta, c, RateFunction::sqrt_rate(), 1.0}; }
  static AlphaRule matched(double c, RateFunction rf, double tau = 1.0) { return {Kind::rate_matched, c, rf, tau}; }

  void validate() const {
    if (!(c > 0.0) || !std::isfinite(c)) throw InvalidArgument("AlphaRule: c must be positive");
    if (!(tau >= 1.0) || !std::isfinite(tau)) throw InvalidArgument("AlphaRule: tau must be >= 1");
    rate.validate();
  }
};

/// proportional: c delta.  rate_matched: c delta / Phi(tau delta).
inline double choose_alpha(const AlphaRule& rule, double delta) {
  rule.validate();
  if (!(delta > 0.0) || !std::isfinite(delta)) throw InvalidArgument("choose_alpha: delta must be positive");
  if (rule.kind == AlphaRule::Kind::proportional_delta) return rule.c * delta;
  return rule.c * delta / rule.rate(rule.tau * delta);
}

}  // namespace nett
