#pragma once

// Trade-off functions and removal certification checks.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "unlearn/dataset_io.hpp"
#include "unlearn/errors.hpp"

namespace unlearn {

// ---------------------------------------------------------------------------
// standard normal

/// Phi(x) via erfc; accurate to a few ulp in both tails.
inline double normal_cdf(double x) noexcept { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double normal_pdf(double x) noexcept {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

namespace detail {

// Acklam's rational approximation for the lower half, p in (0, 0.5].
inline double acklam_lower(double p) noexcept {
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  if (p < 0.02425) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

// Lower-tail quantile for p in (0, 0.5], polished by Halley steps on Phi.
inline double quantile_lower(double p) noexcept {
  double x = acklam_lower(p);
  for (int k = 0; k < 3; ++k) {
    const double e = normal_cdf(x) - p;
    const double u = e / normal_pdf(x);
    const double dx = u / (1.0 + 0.5 * x * u);
    x -= dx;
    if (std::abs(dx) <= 1e-17 * std::max(1.0, std::abs(x))) break;
  }
  return x;
}

}  // namespace detail

/// Phi^{-1}(p). The upper half is computed through 1 - p, which is exact in
/// floating point for p >= 0.5.
inline double normal_quantile(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw domain_error("normal_quantile: p outside [0,1]");
  if (p == 0.0) return -std::numeric_limits<double>::infinity();
  if (p == 1.0) return std::numeric_limits<double>::infinity();
  if (p <= 0.5) return detail::quantile_lower(p);
  return -detail::quantile_lower(1.0 - p);
}

// ---------------------------------------------------------------------------
// analytic trade-off functions

/// f_{G,eps}(alpha) = Phi(Phi^{-1}(1 - alpha) - eps).
inline double gaussian_tradeoff(double eps, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw domain_error("gaussian_tradeoff: alpha outside [0,1]");
  if (!(eps >= 0.0)) throw domain_error("gaussian_tradeoff: eps must be >= 0");
  if (alpha == 0.0) return 1.0;
  if (alpha == 1.0) return 0.0;
  // Phi^{-1}(1 - alpha) = -Phi^{-1}(alpha), which avoids forming 1 - alpha
  const double t = -normal_quantile(alpha);
  return normal_cdf(t - eps);
}

/// f_{eps,delta}(alpha) = max{0, 1 - delta - e^eps alpha, e^{-eps}(1 - delta - alpha)}.
inline double eps_delta_tradeoff(double eps, double delta, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw domain_error("eps_delta_tradeoff: alpha outside [0,1]");
  if (!(delta >= 0.0 && delta <= 1.0)) throw domain_error("eps_delta_tradeoff: delta outside [0,1]");
  if (!(eps >= 0.0)) throw domain_error("eps_delta_tradeoff: eps must be >= 0");
  return std::max({0.0, 1.0 - delta - std::exp(eps) * alpha, std::exp(-eps) * (1.0 - delta - alpha)});
}

enum class curve_provenance { analytic_gaussian, analytic_eps_delta, empirical };

inline std::string_view to_string(curve_provenance p) {
  switch (p) {
    case curve_provenance::analytic_gaussian: return "analytic_gaussian";
    case curve_provenance::analytic_eps_delta: return "analytic_eps_delta";
    case curve_provenance::empirical: return "empirical";
  }
  return "?";
}

struct TradeoffCurve {
  std::vector<double> alphas;
  std::vector<double> betas;
  curve_provenance provenance = curve_provenance::analytic_gaussian;

  double sup_distance(const TradeoffCurve& other) const {
    if (alphas.size() != other.alphas.size())
      throw std::invalid_argument("sup_distance: grid size mismatch");
    double d = 0.0;
    for (std::size_t i = 0; i < betas.size(); ++i) d = std::max(d, std::abs(betas[i] - other.betas[i]));
    return d;
  }

  /// Non-increasing betas inside [0, 1 - alpha + tol].
  bool is_valid(double tol = 1e-12) const {
    for (std::size_t i = 0; i < betas.size(); ++i) {
      if (betas[i] < -tol || betas[i] > 1.0 - alphas[i] + tol) return false;
      if (i > 0 && betas[i] > betas[i - 1] + tol) return false;
    }
    return true;
  }
};

/// Evenly spaced grid on [0,1] with `points` >= 2 entries.
inline std::vector<double> alpha_grid(std::size_t points) {
  if (points < 2) throw std::invalid_argument("alpha_grid: need at least two points");
  std::vector<double> a(points);
  for (std::size_t i = 0; i < points; ++i)
    a[i] = static_cast<double>(i) / static_cast<double>(points - 1);
  return a;
}

inline void check_alphas(std::span<const double> alphas) {
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (!(alphas[i] >= 0.0 && alphas[i] <= 1.0)) throw domain_error("alpha outside [0,1]");
    if (i > 0 && alphas[i] < alphas[i - 1]) throw std::invalid_argument("alphas must be sorted");
  }
}

inline TradeoffCurve gaussian_curve(double eps, std::span<const double> alphas) {
  check_alphas(alphas);
  TradeoffCurve c{{alphas.begin(), alphas.end()}, {}, curve_provenance::analytic_gaussian};
  c.betas.reserve(alphas.size());
  for (double a : alphas) c.betas.push_back(gaussian_tradeoff(eps, a));
  return c;
}

inline TradeoffCurve eps_delta_curve(double eps, double delta, std::span<const double> alphas) {
  check_alphas(alphas);
  TradeoffCurve c{{alphas.begin(), alphas.end()}, {}, curve_provenance::analytic_eps_delta};
  c.betas.reserve(alphas.size());
  for (double a : alphas) c.betas.push_back(eps_delta_tradeoff(eps, delta, a));
  return c;
}

/// T(mu1 + sigma N(0,I), mu2 + sigma N(0,I)) = f_{G, ||mu1 - mu2|| / sigma}.
inline TradeoffCurve tradeoff_between_gaussians(const Eigen::VectorXd& mu1, const Eigen::VectorXd& mu2,
                                                double sigma, std::span<const double> alphas) {
  if (mu1.size() != mu2.size()) throw std::invalid_argument("tradeoff_between_gaussians: dimension mismatch");
  if (!(sigma > 0.0)) throw std::invalid_argument("tradeoff_between_gaussians: sigma must be > 0");
  return gaussian_curve((mu1 - mu2).norm() / sigma, alphas);
}

/// Empirical trade-off of one-sided threshold tests "reject P when s > t".
/// For each alpha the threshold admits at most floor(alpha * |P|) false
/// rejections; beta is the fraction of Q-samples not rejected. No test
/// randomization, so the estimate is conservative by at most 1/|P|.
inline TradeoffCurve empirical_tradeoff_curve(std::span<const double> samples_p,
                                              std::span<const double> samples_q,
                                              std::span<const double> alphas) {
  if (samples_p.empty() || samples_q.empty())
    throw std::invalid_argument("empirical_tradeoff_curve: empty sample set");
  check_alphas(alphas);
  std::vector<double> sp(samples_p.begin(), samples_p.end());
  std::vector<double> sq(samples_q.begin(), samples_q.end());
  std::sort(sp.begin(), sp.end(), std::greater<>());
  std::sort(sq.begin(), sq.end());
  const auto np = sp.size();
  TradeoffCurve c{{alphas.begin(), alphas.end()}, {}, curve_provenance::empirical};
  c.betas.reserve(alphas.size());
  for (double a : alphas) {
    const auto k = static_cast<std::size_t>(std::floor(a * static_cast<double>(np) + 1e-12));
    if (k >= np) {
      c.betas.push_back(0.0);
      continue;
    }
    // at most k P-samples strictly above t = sp[k]
    const double t = sp[k];
    const auto accepted = static_cast<std::size_t>(std::upper_bound(sq.begin(), sq.end(), t) - sq.begin());
    c.betas.push_back(static_cast<double>(accepted) / static_cast<double>(sq.size()));
  }
  return c;
}

/// Likelihood-ratio statistic for shifted isotropic Gaussians: projection of
/// each row onto `direction` (normalized internally).
inline std::vector<double> project_rows(const Eigen::MatrixXd& samples, const Eigen::VectorXd& direction) {
  const double nrm = direction.norm();
  if (!(nrm > 0.0)) throw std::invalid_argument("project_rows: zero direction");
  const Eigen::VectorXd s = samples * (direction / nrm);
  return {s.data(), s.data() + s.size()};
}

// ---------------------------------------------------------------------------
// certification report

struct GparReport {
  std::optional<double> eps;
  std::optional<double> sigma;
  double r_used = 0.0;
  int violations = 0;
  int trials = 0;
  double phi_hat = 0.0;
  double phi_budget = 0.0;
  bool pass = false;
};

/// Counts datasets whose removal gap exceeds the sensitivity radius.
/// `gaps[d]` is the supremum over scanned removal sets for dataset d.
inline GparReport check_gpar(std::span<const double> gaps, std::span<const double> radii,
                             double phi_budget, std::optional<double> eps = std::nullopt) {
  if (gaps.empty()) throw std::invalid_argument("check_gpar: empty gaps");
  if (radii.size() != 1 && radii.size() != gaps.size())
    throw std::invalid_argument("check_gpar: need one radius or one per dataset");
  GparReport rep;
  rep.trials = static_cast<int>(gaps.size());
  double rsum = 0.0;
  for (std::size_t d = 0; d < gaps.size(); ++d) {
    if (!(gaps[d] >= 0.0)) throw std::invalid_argument("check_gpar: gaps must be non-negative");
    const double r = radii.size() == 1 ? radii[0] : radii[d];
    rsum += r;
    if (gaps[d] > r) ++rep.violations;
  }
  rep.r_used = rsum / static_cast<double>(gaps.size());
  rep.phi_hat = static_cast<double>(rep.violations) / static_cast<double>(rep.trials);
  rep.phi_budget = phi_budget;
  rep.pass = rep.phi_hat <= phi_budget;
  if (eps && *eps > 0.0) {
    rep.eps = eps;
    rep.sigma = rep.r_used / *eps;
  }
  return rep;
}

inline GparReport check_gpar(std::span<const double> gaps, double r, double phi_budget,
                             std::optional<double> eps = std::nullopt) {
  const double radius[] = {r};
  return check_gpar(gaps, std::span<const double>(radius), phi_budget, eps);
}

// ---------------------------------------------------------------------------
// serialization

inline nlohmann::json to_json(const GparReport& r) {
  nlohmann::json j;
  j["eps"] = r.eps ? nlohmann::json(*r.eps) : nlohmann::json(nullptr);
  j["sigma"] = r.sigma ? nlohmann::json(*r.sigma) : nlohmann::json(nullptr);
  j["r_used"] = r.r_used;
  j["violations"] = r.violations;
  j["trials"] = r.trials;
  j["phi_hat"] = r.phi_hat;
  j["phi_budget"] = r.phi_budget;
  j["pass"] = r.pass;
  return j;
}

inline void write_curve_csv(const TradeoffCurve& c, std::ostream& os) {
  os << io::csv_schema_line << '\n' << "alpha,beta,provenance\n";
  for (std::size_t i = 0; i < c.alphas.size(); ++i)
    os << io::format_double(c.alphas[i]) << ',' << io::format_double(c.betas[i]) << ','
       << to_string(c.provenance) << '\n';
}

}  // namespace unlearn
