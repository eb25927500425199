#pragma once

// Per-example GLM losses and separable regularizers.
//
// Losses are written as functions of the linear predictor z = x'beta and
// every derivative is taken with respect to z.

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>

#include <Eigen/Core>

#include "unlearn/errors.hpp"

namespace unlearn {

enum class loss_family { quadratic, logistic, poisson };
enum class reg_family { ridge, elastic_smooth };

/// Bound max{l, |l'|, |l'''|} <= C (1 + |y|^s + |z|^s), valid for |z| <= z_bound.
struct growth_witness {
  double C;
  double s;
  double z_bound;
};

struct LossSpec {
  loss_family family = loss_family::logistic;
};

/// Per-coordinate regularizer r_k. `elastic_smooth` adds a pseudo-Huber
/// smoothed l1 term: r_k(t) = t^2 + l1_weight * delta * (sqrt(1 + (t/delta)^2) - 1).
struct RegSpec {
  reg_family family = reg_family::ridge;
  double l1_weight = 1.0;
  double huber_delta = 0.1;

  /// Strong convexity constant: r''_k >= nu everywhere.
  double nu() const noexcept { return 2.0; }
};

struct ModelSpec {
  LossSpec loss;
  RegSpec reg;
  double lambda = 0.5;

  void validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda))
      throw std::invalid_argument("ModelSpec: lambda must be positive and finite");
    if (reg.family == reg_family::elastic_smooth &&
        (!(reg.huber_delta > 0.0) || !(reg.l1_weight >= 0.0)))
      throw std::invalid_argument("ModelSpec: elastic_smooth needs delta > 0, l1_weight >= 0");
  }
  /// Strong convexity of the full objective.
  double strong_convexity() const noexcept { return lambda * reg.nu(); }
};

inline std::string_view to_string(loss_family f) {
  switch (f) {
    case loss_family::quadratic: return "quadratic";
    case loss_family::logistic: return "logistic";
    case loss_family::poisson: return "poisson";
  }
  return "?";
}

inline std::string_view to_string(reg_family f) {
  switch (f) {
    case reg_family::ridge: return "ridge";
    case reg_family::elastic_smooth: return "elastic_smooth";
  }
  return "?";
}

inline loss_family parse_loss_family(std::string_view s) {
  if (s == "quadratic") return loss_family::quadratic;
  if (s == "logistic") return loss_family::logistic;
  if (s == "poisson") return loss_family::poisson;
  throw std::invalid_argument("unknown loss family: " + std::string(s));
}

inline reg_family parse_reg_family(std::string_view s) {
  if (s == "ridge") return reg_family::ridge;
  if (s == "elastic_smooth") return reg_family::elastic_smooth;
  throw std::invalid_argument("unknown regularizer family: " + std::string(s));
}

struct loss_derivs {
  double first;
  double second;
};

namespace detail {

inline void check_response(const LossSpec& spec, double y, double z) {
  if (!std::isfinite(y) || !std::isfinite(z))
    throw domain_error("loss: non-finite input");
  switch (spec.family) {
    case loss_family::quadratic:
      return;
    case loss_family::logistic:
      if (y != 0.0 && y != 1.0)
        throw domain_error("logistic loss: response must be 0 or 1, got " + std::to_string(y));
      return;
    case loss_family::poisson:
      if (y < 0.0 || y != std::floor(y))
        throw domain_error("poisson loss: response must be a non-negative integer, got " +
                           std::to_string(y));
      return;
  }
}

// sigmoid without overflow in either tail
inline double sigmoid(double z) noexcept {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace detail

/// l(y|z). Logistic uses y in {0,1}: log(1 + e^z) - y z. Poisson keeps the
/// log(y!) term so the loss is non-negative.
inline double loss_value(const LossSpec& spec, double y, double z) {
  detail::check_response(spec, y, z);
  switch (spec.family) {
    case loss_family::quadratic: {
      const double r = y - z;
      return r * r;
    }
    case loss_family::logistic:
      return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - y * z;
    case loss_family::poisson:
      return std::exp(z) - y * z + std::lgamma(y + 1.0);
  }
  return 0.0;
}

inline loss_derivs loss_derivatives(const LossSpec& spec, double y, double z) {
  detail::check_response(spec, y, z);
  switch (spec.family) {
    case loss_family::quadratic:
      return {-2.0 * (y - z), 2.0};
    case loss_family::logistic: {
      const double s = detail::sigmoid(z);
      return {s - y, s * (1.0 - s)};
    }
    case loss_family::poisson: {
      const double e = std::exp(z);
      return {e - y, e};
    }
  }
  return {0.0, 0.0};
}

/// d^3 l / dz^3. Only the growth checks use it; the Newton machinery does not.
inline double loss_third_derivative(const LossSpec& spec, double y, double z) {
  detail::check_response(spec, y, z);
  switch (spec.family) {
    case loss_family::quadratic:
      return 0.0;
    case loss_family::logistic: {
      const double s = detail::sigmoid(z);
      return s * (1.0 - s) * (1.0 - 2.0 * s);
    }
    case loss_family::poisson:
      return std::exp(z);
  }
  return 0.0;
}

/// Poisson grows exponentially, so its witness only holds on a bounded z range.
inline growth_witness loss_growth_witness(const LossSpec& spec) {
  switch (spec.family) {
    case loss_family::quadratic: return {2.0, 2.0, INFINITY};
    case loss_family::logistic: return {2.0, 1.0, INFINITY};
    case loss_family::poisson: return {3.0, 22.0, 100.0};
  }
  return {0.0, 0.0, 0.0};
}

// Unchecked kernels used inside the solver loops, after the dataset has been
// validated once.
namespace detail {

inline double loss_unchecked(loss_family f, double y, double z) noexcept {
  switch (f) {
    case loss_family::quadratic: return (y - z) * (y - z);
    case loss_family::logistic: return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - y * z;
    case loss_family::poisson: return std::exp(z) - y * z + std::lgamma(y + 1.0);
  }
  return 0.0;
}

inline loss_derivs derivs_unchecked(loss_family f, double y, double z) noexcept {
  switch (f) {
    case loss_family::quadratic: return {-2.0 * (y - z), 2.0};
    case loss_family::logistic: {
      const double s = sigmoid(z);
      return {s - y, s * (1.0 - s)};
    }
    case loss_family::poisson: {
      const double e = std::exp(z);
      return {e - y, e};
    }
  }
  return {0.0, 0.0};
}

}  // namespace detail

struct reg_values {
  double value;
  Eigen::VectorXd gradient;
  Eigen::VectorXd hessian_diag;
};

/// (r(beta), grad r(beta), diag of the Hessian of r).
inline reg_values reg_eval(const RegSpec& spec, const Eigen::VectorXd& beta) {
  if (!beta.allFinite()) throw domain_error("reg_eval: non-finite coefficient");
  reg_values out{0.0, Eigen::VectorXd(beta.size()), Eigen::VectorXd(beta.size())};
  switch (spec.family) {
    case reg_family::ridge:
      out.value = beta.squaredNorm();
      out.gradient = 2.0 * beta;
      out.hessian_diag.setConstant(2.0);
      break;
    case reg_family::elastic_smooth: {
      const double d = spec.huber_delta;
      const double a = spec.l1_weight;
      for (Eigen::Index k = 0; k < beta.size(); ++k) {
        const double t = beta[k];
        const double u = t / d;
        const double q = std::sqrt(1.0 + u * u);
        out.value += t * t + a * d * (q - 1.0);
        out.gradient[k] = 2.0 * t + a * u / q;
        out.hessian_diag[k] = 2.0 + a / (d * q * q * q);
      }
      break;
    }
  }
  return out;
}

}  // namespace unlearn
