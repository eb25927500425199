#pragma once

// Full-batch damped Newton for the regularized objective
//   L_{\M}(beta) = lambda r(beta) + sum_{i not in M} l(y_i | x_i' beta).

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "unlearn/dataset.hpp"
#include "unlearn/errors.hpp"
#include "unlearn/glm.hpp"

namespace unlearn {

enum class line_search_kind { none, backtracking };

struct SolverConfig {
  /// Stop once ||grad L||_2 <= grad_tol. Unset means 1e-10 * max(1, ||y||_2).
  std::optional<double> grad_tol;
  int max_iter = 100;
  line_search_kind line_search = line_search_kind::backtracking;
  double armijo_slope = 1e-4;
  double backtrack_factor = 0.5;
  /// Jitter escalation on a failed Cholesky: ridge_jitter, x10, ..., up to max_jitter.
  double ridge_jitter = 1e-12;
  double max_jitter = 1e-8;
  /// Keep the Hessian and its factor at the solution.
  bool cache_hessian = true;
  /// Iteration cap for the frozen-Hessian refinement in fit_rerm_chord.
  int max_chord_iter = 60;

  void validate() const {
    if (grad_tol && !(*grad_tol > 0.0)) throw std::invalid_argument("SolverConfig: grad_tol must be > 0");
    if (max_iter < 1) throw std::invalid_argument("SolverConfig: max_iter must be >= 1");
    if (ridge_jitter < 0.0) throw std::invalid_argument("SolverConfig: ridge_jitter must be >= 0");
  }

  double tolerance_for(const Dataset& d) const {
    return grad_tol ? *grad_tol : 1e-10 * std::max(1.0, d.y.norm());
  }
};

using spd_factor = Eigen::LLT<Eigen::MatrixXd>;

struct FittedModel {
  Eigen::VectorXd beta;
  double grad_norm = 0.0;
  int iterations = 0;
  std::optional<Eigen::MatrixXd> hessian;
  std::optional<spd_factor> hessian_factor;
  index_set excluded;
  /// Objective value after each accepted iterate, starting with the initial point.
  std::vector<double> objective_trace;
  double jitter = 0.0;
};

// ---------------------------------------------------------------------------
// objective pieces

namespace detail {

struct row_terms {
  Eigen::VectorXd first;   // weighted l'
  Eigen::VectorXd second;  // weighted l''
};

inline row_terms row_derivatives(const ModelSpec& model, const Dataset& data,
                                 const Eigen::VectorXd& w, const Eigen::VectorXd& beta) {
  const Eigen::VectorXd z = data.X * beta;
  row_terms t{Eigen::VectorXd(z.size()), Eigen::VectorXd(z.size())};
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    if (w[i] == 0.0) {
      t.first[i] = 0.0;
      t.second[i] = 0.0;
      continue;
    }
    auto d = derivs_unchecked(model.loss.family, data.y[i], z[i]);
    t.first[i] = w[i] * d.first;
    t.second[i] = w[i] * d.second;
  }
  return t;
}

inline void check_beta(const Dataset& data, const Eigen::VectorXd& beta) {
  if (static_cast<std::size_t>(beta.size()) != data.p())
    throw std::invalid_argument("beta length " + std::to_string(beta.size()) + " != p = " +
                                std::to_string(data.p()));
}

inline double objective_weighted(const ModelSpec& model, const Dataset& data,
                                 const Eigen::VectorXd& w, const Eigen::VectorXd& beta) {
  const Eigen::VectorXd z = data.X * beta;
  double s = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i)
    if (w[i] != 0.0) s += w[i] * loss_unchecked(model.loss.family, data.y[i], z[i]);
  return model.lambda * reg_eval(model.reg, beta).value + s;
}

inline Eigen::VectorXd gradient_weighted(const ModelSpec& model, const Dataset& data,
                                         const Eigen::VectorXd& w, const Eigen::VectorXd& beta) {
  const auto t = row_derivatives(model, data, w, beta);
  Eigen::VectorXd g = data.X.transpose() * t.first;
  g += model.lambda * reg_eval(model.reg, beta).gradient;
  return g;
}

inline Eigen::MatrixXd hessian_weighted(const ModelSpec& model, const Dataset& data,
                                        const Eigen::VectorXd& w, const Eigen::VectorXd& beta) {
  const auto t = row_derivatives(model, data, w, beta);
  const auto p = static_cast<Eigen::Index>(data.p());
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(p, p);
  // X' diag(l'') X as a symmetric rank-n update with sqrt-scaled rows
  const Eigen::MatrixXd Xs = t.second.cwiseSqrt().asDiagonal() * data.X;
  H.selfadjointView<Eigen::Lower>().rankUpdate(Xs.transpose());
  H.diagonal() += model.lambda * reg_eval(model.reg, beta).hessian_diag;
  H.triangularView<Eigen::StrictlyUpper>() = H.transpose();
  return H;
}

}  // namespace detail

inline double objective_value(const ModelSpec& model, const Dataset& data, const index_set& exclude,
                              const Eigen::VectorXd& beta) {
  detail::check_beta(data, beta);
  return detail::objective_weighted(model, data, inclusion_weights(data.n(), exclude), beta);
}

inline Eigen::VectorXd objective_gradient(const ModelSpec& model, const Dataset& data,
                                          const index_set& exclude, const Eigen::VectorXd& beta) {
  detail::check_beta(data, beta);
  return detail::gradient_weighted(model, data, inclusion_weights(data.n(), exclude), beta);
}

inline Eigen::MatrixXd objective_hessian(const ModelSpec& model, const Dataset& data,
                                         const index_set& exclude, const Eigen::VectorXd& beta) {
  detail::check_beta(data, beta);
  return detail::hessian_weighted(model, data, inclusion_weights(data.n(), exclude), beta);
}

/// Cholesky with diagonal jitter escalation. `jitter_used` receives the
/// jitter that succeeded (0 when none was needed).
inline spd_factor factorize(const Eigen::MatrixXd& H, const SolverConfig& cfg,
                                double* jitter_used = nullptr) {
  spd_factor llt(H);
  if (llt.info() == Eigen::Success) {
    if (jitter_used) *jitter_used = 0.0;
    return llt;
  }
  const double scale = std::max(1.0, H.diagonal().cwiseAbs().mean());
  double jitter = std::max(cfg.ridge_jitter, 1e-16);
  for (; jitter <= cfg.max_jitter * (1.0 + 1e-12); jitter *= 10.0) {
    Eigen::MatrixXd Hj = H;
    Hj.diagonal().array() += jitter * scale;
    llt.compute(Hj);
    if (llt.info() == Eigen::Success) {
      if (jitter_used) *jitter_used = jitter * scale;
      return llt;
    }
  }
  throw factorization_failed("Hessian not positive definite after jitter " +
                                 std::to_string(cfg.max_jitter),
                             cfg.max_jitter);
}

namespace detail {

inline void attach_hessian(FittedModel& fit, const ModelSpec& model, const Dataset& data,
                           const Eigen::VectorXd& w, const SolverConfig& cfg) {
  Eigen::MatrixXd H = hessian_weighted(model, data, w, fit.beta);
  fit.hessian_factor = factorize(H, cfg, &fit.jitter);
  fit.hessian = std::move(H);
}

}  // namespace detail

/// Damped Newton with Armijo backtracking. Throws max_iter_exceeded when the
/// gradient tolerance is not reached within cfg.max_iter iterations.
inline FittedModel fit_rerm(const ModelSpec& model, const Dataset& data, const index_set& exclude,
                            const SolverConfig& cfg = {},
                            const std::optional<Eigen::VectorXd>& warm_start = std::nullopt) {
  model.validate();
  cfg.validate();
  const Eigen::VectorXd w = inclusion_weights(data.n(), exclude);
  const double tol = cfg.tolerance_for(data);

  FittedModel fit;
  fit.excluded = exclude;
  std::sort(fit.excluded.begin(), fit.excluded.end());
  fit.beta = warm_start ? *warm_start : Eigen::VectorXd::Zero(static_cast<Eigen::Index>(data.p()));
  detail::check_beta(data, fit.beta);

  double f = detail::objective_weighted(model, data, w, fit.beta);
  fit.objective_trace.push_back(f);
  Eigen::VectorXd g = detail::gradient_weighted(model, data, w, fit.beta);
  fit.grad_norm = g.norm();

  while (fit.grad_norm > tol) {
    if (fit.iterations >= cfg.max_iter)
      throw max_iter_exceeded("fit_rerm: no convergence after " + std::to_string(cfg.max_iter) +
                                  " iterations (grad norm " + std::to_string(fit.grad_norm) + ")",
                              fit.beta, fit.grad_norm);
    const Eigen::MatrixXd H = detail::hessian_weighted(model, data, w, fit.beta);
    const spd_factor llt = factorize(H, cfg);
    const Eigen::VectorXd step = llt.solve(g);
    const double slope = g.dot(step);

    double t = 1.0;
    Eigen::VectorXd trial = fit.beta - step;
    double f_trial = detail::objective_weighted(model, data, w, trial);
    // A Newton decrement below the roundoff of f means the quadratic model
    // is exact to working precision: take the full step.
    const bool below_roundoff = slope <= 64.0 * 2.2e-16 * std::max(1.0, std::abs(f));
    if (cfg.line_search == line_search_kind::backtracking && !below_roundoff) {
      int halvings = 0;
      while (!(f_trial <= f - cfg.armijo_slope * t * slope) && halvings < 60) {
        t *= cfg.backtrack_factor;
        trial = fit.beta - t * step;
        f_trial = detail::objective_weighted(model, data, w, trial);
        ++halvings;
      }
      if (!(f_trial <= f - cfg.armijo_slope * t * slope)) {
        // Near the optimum the decrease drops below roundoff; accept the full
        // step only if it does not measurably increase the objective.
        trial = fit.beta - step;
        f_trial = detail::objective_weighted(model, data, w, trial);
        if (!(f_trial <= f + 64.0 * 2.2e-16 * std::abs(f))) {
          throw max_iter_exceeded("fit_rerm: line search failed", fit.beta, fit.grad_norm);
        }
        f_trial = std::min(f_trial, f);
      }
    }
    fit.beta = std::move(trial);
    f = f_trial;
    fit.objective_trace.push_back(f);
    g = detail::gradient_weighted(model, data, w, fit.beta);
    fit.grad_norm = g.norm();
    ++fit.iterations;
  }
  if (cfg.cache_hessian) detail::attach_hessian(fit, model, data, w, cfg);
  return fit;
}

/// Minimizes L_{\M} starting from `start` with a frozen Hessian factor
/// (chord iteration), falling back to fit_rerm if the iteration stalls. With
/// start = beta_hat and the leave-M-out Hessian at beta_hat, the first
/// iterate is the one-step Newton unlearning estimate.
inline FittedModel fit_rerm_chord(const ModelSpec& model, const Dataset& data,
                                  const index_set& exclude, const Eigen::VectorXd& start,
                                  const spd_factor& frozen, const SolverConfig& cfg = {}) {
  const Eigen::VectorXd w = inclusion_weights(data.n(), exclude);
  const double tol = cfg.tolerance_for(data);

  FittedModel fit;
  fit.excluded = exclude;
  std::sort(fit.excluded.begin(), fit.excluded.end());
  fit.beta = start;
  detail::check_beta(data, fit.beta);
  Eigen::VectorXd g = detail::gradient_weighted(model, data, w, fit.beta);
  fit.grad_norm = g.norm();
  int stalls = 0;
  while (fit.grad_norm > tol && fit.iterations < cfg.max_chord_iter) {
    fit.beta -= frozen.solve(g);
    g = detail::gradient_weighted(model, data, w, fit.beta);
    const double gn = g.norm();
    ++fit.iterations;
    // contraction slower than 0.5 per step: let full Newton finish
    stalls = (gn > 0.5 * fit.grad_norm) ? stalls + 1 : 0;
    fit.grad_norm = gn;
    if (stalls >= 3 || !std::isfinite(gn)) break;
  }
  if (fit.grad_norm > tol || !fit.beta.allFinite()) {
    SolverConfig c2 = cfg;
    c2.cache_hessian = false;
    const Eigen::VectorXd warm = fit.beta.allFinite() ? fit.beta : start;
    FittedModel full = fit_rerm(model, data, exclude, c2, warm);
    full.iterations += fit.iterations;
    fit = std::move(full);
  }
  if (cfg.cache_hessian) detail::attach_hessian(fit, model, data, w, cfg);
  return fit;
}

}  // namespace unlearn
