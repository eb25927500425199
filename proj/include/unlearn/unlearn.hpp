#pragma once

// One-step Newton unlearning, noise mechanisms and sensitivity calibration.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "unlearn/dataset.hpp"
#include "unlearn/errors.hpp"
#include "unlearn/glm.hpp"
#include "unlearn/random.hpp"
#include "unlearn/solver.hpp"

namespace unlearn {

/// Indices M of the training rows to forget.
struct RemovalRequest {
  index_set indices;

  std::size_t m() const noexcept { return indices.size(); }

  void validate(std::size_t n) const {
    std::set<std::size_t> seen;
    for (auto i : indices) {
      if (i >= n)
        throw std::out_of_range("RemovalRequest: index " + std::to_string(i) + " outside [0," +
                                std::to_string(n) + ")");
      if (!seen.insert(i).second)
        throw std::invalid_argument("RemovalRequest: duplicate index " + std::to_string(i));
    }
  }
};

/// Uniformly random subset of size m from [0, n), sorted.
inline RemovalRequest uniform_subset(std::size_t n, std::size_t m, rng_type& rng) {
  if (m > n) throw std::invalid_argument("uniform_subset: m > n");
  // Floyd's algorithm: m draws, no O(n) scratch
  std::set<std::size_t> chosen;
  for (std::size_t j = n - m; j < n; ++j) {
    std::uniform_int_distribution<std::size_t> pick(0, j);
    const std::size_t t = pick(rng);
    if (!chosen.insert(t).second) chosen.insert(j);
  }
  return RemovalRequest{{chosen.begin(), chosen.end()}};
}

using RemovalSampler = std::function<RemovalRequest(std::size_t n, std::size_t m, rng_type&)>;

// ---------------------------------------------------------------------------
// noise

enum class mechanism_kind { gaussian, laplace_isotropic, none };

inline std::string_view to_string(mechanism_kind k) {
  switch (k) {
    case mechanism_kind::gaussian: return "gaussian";
    case mechanism_kind::laplace_isotropic: return "laplace";
    case mechanism_kind::none: return "none";
  }
  return "?";
}

inline mechanism_kind parse_mechanism(std::string_view s) {
  if (s == "gaussian") return mechanism_kind::gaussian;
  if (s == "laplace" || s == "laplace_isotropic") return mechanism_kind::laplace_isotropic;
  if (s == "none") return mechanism_kind::none;
  throw std::invalid_argument("unknown mechanism: " + std::string(s));
}

/// Gaussian: b ~ N(0, sigma^2 I). Isotropic Laplace: density proportional to
/// exp(-||b|| / sigma). A zero scale is always represented as kind = none.
struct NoiseMechanism {
  mechanism_kind kind = mechanism_kind::none;
  double sigma = 0.0;

  static NoiseMechanism make(mechanism_kind kind, double sigma) {
    if (!(sigma >= 0.0) || !std::isfinite(sigma))
      throw std::invalid_argument("NoiseMechanism: sigma must be finite and >= 0");
    if (sigma == 0.0 || kind == mechanism_kind::none) return {mechanism_kind::none, 0.0};
    return {kind, sigma};
  }
};

inline Eigen::VectorXd draw_noise(const NoiseMechanism& mech, std::size_t p, rng_type& rng) {
  if (p < 1) throw std::invalid_argument("draw_noise: p must be >= 1");
  const auto dim = static_cast<Eigen::Index>(p);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(dim);
  switch (mech.kind) {
    case mechanism_kind::none:
      break;
    case mechanism_kind::gaussian: {
      std::normal_distribution<double> nd(0.0, mech.sigma);
      for (Eigen::Index k = 0; k < dim; ++k) b[k] = nd(rng);
      break;
    }
    case mechanism_kind::laplace_isotropic: {
      // radius ~ Gamma(p, sigma) times a uniform direction
      std::gamma_distribution<double> radius(static_cast<double>(p), mech.sigma);
      std::normal_distribution<double> nd(0.0, 1.0);
      double nrm = 0.0;
      do {
        for (Eigen::Index k = 0; k < dim; ++k) b[k] = nd(rng);
        nrm = b.norm();
      } while (nrm == 0.0);
      b *= radius(rng) / nrm;
      break;
    }
  }
  return b;
}

// ---------------------------------------------------------------------------
// Newton step

enum class newton_solve { fresh, downdate };

/// Rank-m downdates of the cached factor are used only up to this size.
inline constexpr std::size_t max_downdate_rank = 32;

struct newton_step_result {
  Eigen::VectorXd beta;      // one-step estimate
  spd_factor factor;         // leave-M-out Hessian at beta_hat
  double relative_residual;  // ||H d - g|| / ||g||
};

namespace detail {

inline void require_full_fit(const FittedModel& fitted, const Dataset& data) {
  if (!fitted.excluded.empty())
    throw std::invalid_argument("newton unlearning needs the full-data fit (excluded must be empty)");
  if (static_cast<std::size_t>(fitted.beta.size()) != data.p())
    throw std::invalid_argument("fitted model dimension does not match data");
}

}  // namespace detail

inline newton_step_result newton_unlearn_detail(const FittedModel& fitted, const ModelSpec& model,
                                                const Dataset& data, const RemovalRequest& removal,
                                                newton_solve mode = newton_solve::fresh,
                                                const SolverConfig& cfg = {}) {
  detail::require_full_fit(fitted, data);
  removal.validate(data.n());
  const Eigen::VectorXd& beta = fitted.beta;

  Eigen::VectorXd g = objective_gradient(model, data, removal.indices, beta);

  // l'' of the removed rows at beta_hat
  std::vector<Eigen::VectorXd> removed_rows;
  std::vector<double> removed_curv;
  removed_rows.reserve(removal.m());
  for (auto i : removal.indices) {
    const auto row = static_cast<Eigen::Index>(i);
    const double z = data.X.row(row).dot(beta);
    removed_rows.emplace_back(data.X.row(row).transpose());
    removed_curv.push_back(detail::derivs_unchecked(model.loss.family, data.y[row], z).second);
  }

  std::optional<Eigen::MatrixXd> full_h;
  auto full_hessian = [&]() -> const Eigen::MatrixXd& {
    if (fitted.hessian) return *fitted.hessian;
    if (!full_h) full_h = objective_hessian(model, data, {}, beta);
    return *full_h;
  };
  auto apply_leave_out = [&](const Eigen::VectorXd& v) {
    Eigen::VectorXd out = full_hessian() * v;
    for (std::size_t k = 0; k < removed_rows.size(); ++k)
      out -= removed_curv[k] * removed_rows[k].dot(v) * removed_rows[k];
    return out;
  };

  std::optional<spd_factor> factor;
  if (mode == newton_solve::downdate && removal.m() <= max_downdate_rank && fitted.hessian_factor) {
    spd_factor f = *fitted.hessian_factor;
    bool ok = true;
    for (std::size_t k = 0; k < removed_rows.size() && ok; ++k) {
      f.rankUpdate(std::sqrt(removed_curv[k]) * removed_rows[k], -1.0);
      ok = f.info() == Eigen::Success;
    }
    if (ok) factor = std::move(f);
  }
  if (!factor) {
    Eigen::MatrixXd H = full_hessian();
    for (std::size_t k = 0; k < removed_rows.size(); ++k)
      H.noalias() -= removed_curv[k] * removed_rows[k] * removed_rows[k].transpose();
    factor = factorize(H, cfg);
  }

  Eigen::VectorXd d = factor->solve(g);
  // one round of iterative refinement
  Eigen::VectorXd res = g - apply_leave_out(d);
  d += factor->solve(res);
  res = g - apply_leave_out(d);
  const double gn = g.norm();
  const double rel = gn > 0.0 ? res.norm() / gn : 0.0;
  return {beta - d, std::move(*factor), rel};
}

/// beta_hat - G(L_{\M})(beta_hat)^{-1} grad L_{\M}(beta_hat).
inline Eigen::VectorXd newton_unlearn_step(const FittedModel& fitted, const ModelSpec& model,
                                           const Dataset& data, const RemovalRequest& removal,
                                           newton_solve mode = newton_solve::fresh) {
  return newton_unlearn_detail(fitted, model, data, removal, mode).beta;
}

struct removal_gap {
  Eigen::VectorXd beta_newton;
  Eigen::VectorXd beta_retrained;
  double gap;  // ||beta_newton - beta_retrained||
};

/// Newton estimate and exact retrain for one removal set. The retrain is
/// warm-started at the Newton estimate and reuses its Hessian factor.
inline removal_gap evaluate_removal(const FittedModel& fitted, const ModelSpec& model,
                                    const Dataset& data, const RemovalRequest& removal,
                                    newton_solve mode = newton_solve::fresh,
                                    SolverConfig retrain = {}) {
  auto step = newton_unlearn_detail(fitted, model, data, removal, mode, retrain);
  retrain.cache_hessian = false;
  auto re = fit_rerm_chord(model, data, removal.indices, step.beta, step.factor, retrain);
  const double gap = (step.beta - re.beta).norm();
  return {std::move(step.beta), std::move(re.beta), gap};
}

// ---------------------------------------------------------------------------
// calibration

enum class calibration_mode { oracle, theory };

inline std::string_view to_string(calibration_mode m) {
  return m == calibration_mode::oracle ? "oracle" : "theory";
}

inline calibration_mode parse_calibration_mode(std::string_view s) {
  if (s == "oracle") return calibration_mode::oracle;
  if (s == "theory") return calibration_mode::theory;
  throw std::invalid_argument("unknown calibration mode: " + std::string(s));
}

struct CalibrationOptions {
  calibration_mode mode = calibration_mode::oracle;
  /// Polylog constants of the theory radius; c2 unset means log(n)^2.
  double c1 = 1.0;
  std::optional<double> c2;
  /// Number of sampled removal sets when m > 1 (singletons are scanned exhaustively).
  std::size_t subsets = 1000;
  RemovalSampler sampler;
  /// Removal sets scanned in addition to the sampled ones (counted in `subsets`).
  std::vector<RemovalRequest> forced;
  std::size_t max_subsets = 1'000'000;
  std::optional<double> time_cap_seconds;
  newton_solve solve = newton_solve::fresh;
  SolverConfig retrain;
  unsigned threads = 1;
};

struct CalibrationResult {
  double r = 0.0;
  double sigma = 0.0;
  double eps = 0.0;
  calibration_mode mode = calibration_mode::oracle;
  std::size_t m = 0;
  std::size_t subsets_scanned = 0;
  double c1 = 1.0;
  double c2 = 1.0;
  std::map<std::string, double> details;
  /// Per-subset gaps of the oracle scan, in scan order.
  std::vector<double> gaps;
};

/// C1 sqrt(C2 m^3 / (2 lambda nu n)).
inline double theory_radius(const ModelSpec& model, std::size_t n, std::size_t m, double c1, double c2) {
  const double md = static_cast<double>(m);
  return c1 * std::sqrt(c2 * md * md * md / (2.0 * model.lambda * model.reg.nu() * static_cast<double>(n)));
}

/// 8 n^-3 + n e^{-p/2} + 2 e^{-p}; the response-tail term n q_n is not
/// observable and left out.
inline double phi_n_diagnostic(std::size_t n, std::size_t p) {
  const double nd = static_cast<double>(n), pd = static_cast<double>(p);
  return 8.0 / (nd * nd * nd) + nd * std::exp(-pd / 2.0) + 2.0 * std::exp(-pd);
}

inline CalibrationResult calibrate_noise(const ModelSpec& model, const Dataset& data,
                                         const FittedModel& fitted, std::size_t m, double eps,
                                         const CalibrationOptions& opt, rng_type& rng) {
  if (m < 1) throw std::invalid_argument("calibrate_noise: m must be >= 1");
  if (m > data.n()) throw std::invalid_argument("calibrate_noise: m > n");
  if (!(eps > 0.0)) throw std::invalid_argument("calibrate_noise: eps must be > 0");
  model.validate();

  const auto t0 = std::chrono::steady_clock::now();
  const double logn = std::log(static_cast<double>(data.n()));
  CalibrationResult out;
  out.eps = eps;
  out.mode = opt.mode;
  out.m = m;
  out.c1 = opt.c1;
  out.c2 = opt.c2 ? *opt.c2 : logn * logn;
  out.details["theory_r"] = theory_radius(model, data.n(), m, out.c1, out.c2);
  out.details["phi_n"] = phi_n_diagnostic(data.n(), data.p());

  if (opt.mode == calibration_mode::theory) {
    out.r = out.details["theory_r"];
    out.sigma = out.r / eps;
    return out;
  }

  detail::require_full_fit(fitted, data);
  std::vector<RemovalRequest> scan;
  if (m == 1) {
    scan.reserve(data.n());
    for (std::size_t i = 0; i < data.n(); ++i) scan.push_back(RemovalRequest{{i}});
    out.details["exhaustive"] = 1.0;
  } else {
    for (const auto& f : opt.forced) {
      if (f.m() != m) throw std::invalid_argument("calibrate_noise: forced removal set has wrong size");
      scan.push_back(f);
    }
    const std::uint64_t master = rng();
    const RemovalSampler sampler = opt.sampler ? opt.sampler : RemovalSampler(uniform_subset);
    for (std::size_t k = scan.size(); k < std::max(opt.subsets, scan.size()); ++k) {
      rng_type sub = make_rng(derive_seed(master, {k}));
      scan.push_back(sampler(data.n(), m, sub));
    }
    out.details["exhaustive"] = 0.0;
  }
  if (scan.size() > opt.max_subsets)
    throw infeasible_budget("calibrate_noise: scan of " + std::to_string(scan.size()) +
                            " subsets exceeds cap " + std::to_string(opt.max_subsets));

  std::vector<double> gaps(scan.size(), 0.0);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> over_budget{false};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    try {
      while (true) {
        const std::size_t k = next.fetch_add(1);
        if (k >= scan.size() || over_budget.load()) return;
        if (opt.time_cap_seconds) {
          const std::chrono::duration<double> el = std::chrono::steady_clock::now() - t0;
          if (el.count() > *opt.time_cap_seconds) {
            over_budget = true;
            return;
          }
        }
        gaps[k] = evaluate_removal(fitted, model, data, scan[k], opt.solve, opt.retrain).gap;
      }
    } catch (...) {
      std::lock_guard lk(failure_mu);
      if (!failure) failure = std::current_exception();
      over_budget = true;
    }
  };
  const unsigned nthreads = std::max(1u, std::min<unsigned>(opt.threads, static_cast<unsigned>(scan.size())));
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  if (over_budget)
    throw infeasible_budget("calibrate_noise: time cap of " + std::to_string(*opt.time_cap_seconds) +
                            " s exceeded during the oracle scan");

  out.r = *std::max_element(gaps.begin(), gaps.end());
  out.sigma = out.r / eps;
  out.subsets_scanned = scan.size();
  std::vector<double> sorted = gaps;
  std::sort(sorted.begin(), sorted.end());
  out.details["max_gap"] = out.r;
  out.details["median_gap"] = sorted[sorted.size() / 2];
  out.details["mean_gap"] = std::accumulate(gaps.begin(), gaps.end(), 0.0) / static_cast<double>(gaps.size());
  out.details["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.gaps = std::move(gaps);
  return out;
}

// ---------------------------------------------------------------------------
// composed mechanism

struct UnlearnOutput {
  Eigen::VectorXd beta_newton;
  Eigen::VectorXd beta_tilde;
  Eigen::VectorXd noise;
  CalibrationResult calibration;
};

/// beta_tilde = one-step Newton estimate + noise at the calibrated scale.
inline UnlearnOutput unlearn(const FittedModel& fitted, const ModelSpec& model, const Dataset& data,
                             const RemovalRequest& removal, const CalibrationResult& calib,
                             mechanism_kind kind, rng_type& rng,
                             newton_solve mode = newton_solve::fresh) {
  if (!std::isfinite(calib.sigma)) throw std::invalid_argument("unlearn: calibration sigma not finite");
  if (removal.m() > calib.m)
    throw std::invalid_argument("unlearn: removal of " + std::to_string(removal.m()) +
                                " points exceeds calibrated m = " + std::to_string(calib.m));
  UnlearnOutput out;
  out.beta_newton = newton_unlearn_step(fitted, model, data, removal, mode);
  out.beta_tilde = out.beta_newton + draw_noise(NoiseMechanism::make(kind, calib.sigma), data.p(), rng);
  // the applied perturbation, so that beta_tilde - beta_newton == noise holds bitwise
  out.noise = out.beta_tilde - out.beta_newton;
  out.calibration = calib;
  return out;
}

// ---------------------------------------------------------------------------
// serialization

inline nlohmann::json to_json(const CalibrationResult& c) {
  nlohmann::json j;
  j["r"] = c.r;
  j["sigma"] = c.sigma;
  j["eps"] = c.eps;
  j["mode"] = std::string(to_string(c.mode));
  j["m"] = c.m;
  j["subsets_scanned"] = c.subsets_scanned;
  j["c1"] = c.c1;
  j["c2"] = c.c2;
  j["details"] = c.details;
  return j;
}

inline CalibrationResult calibration_from_json(const nlohmann::json& j) {
  CalibrationResult c;
  c.r = j.at("r").get<double>();
  c.sigma = j.at("sigma").get<double>();
  c.eps = j.at("eps").get<double>();
  c.mode = parse_calibration_mode(j.at("mode").get<std::string>());
  c.m = j.at("m").get<std::size_t>();
  c.subsets_scanned = j.at("subsets_scanned").get<std::size_t>();
  c.c1 = j.at("c1").get<double>();
  c.c2 = j.at("c2").get<double>();
  if (j.contains("details")) c.details = j.at("details").get<std::map<std::string, double>>();
  return c;
}

inline std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

inline nlohmann::json to_json(const UnlearnOutput& u) {
  return {{"beta_newton", to_std(u.beta_newton)},
          {"beta_tilde", to_std(u.beta_tilde)},
          {"noise", to_std(u.noise)},
          {"calibration", to_json(u.calibration)}};
}

}  // namespace unlearn
