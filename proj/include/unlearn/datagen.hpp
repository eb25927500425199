#pragma once

// Synthetic GLM samples: isotropic features with covariance I/n, beta* ~ N(0, I).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <variant>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

#include "unlearn/dataset.hpp"
#include "unlearn/glm.hpp"
#include "unlearn/random.hpp"
#include "unlearn/solver.hpp"

namespace unlearn {

enum class feature_dist { gaussian, rademacher, uniform };
enum class link_kind { linear_gaussian, logistic, poisson };

inline std::string_view to_string(feature_dist f) {
  switch (f) {
    case feature_dist::gaussian: return "gaussian";
    case feature_dist::rademacher: return "rademacher";
    case feature_dist::uniform: return "uniform";
  }
  return "?";
}
inline feature_dist parse_feature_dist(std::string_view s) {
  if (s == "gaussian") return feature_dist::gaussian;
  if (s == "rademacher") return feature_dist::rademacher;
  if (s == "uniform") return feature_dist::uniform;
  throw std::invalid_argument("unknown feature distribution: " + std::string(s));
}
inline std::string_view to_string(link_kind l) {
  switch (l) {
    case link_kind::linear_gaussian: return "linear_gaussian";
    case link_kind::logistic: return "logistic";
    case link_kind::poisson: return "poisson";
  }
  return "?";
}
inline link_kind parse_link(std::string_view s) {
  if (s == "linear_gaussian" || s == "linear") return link_kind::linear_gaussian;
  if (s == "logistic") return link_kind::logistic;
  if (s == "poisson") return link_kind::poisson;
  throw std::invalid_argument("unknown link: " + std::string(s));
}

/// Loss family matching a link's negative log-likelihood.
inline loss_family loss_for(link_kind l) {
  switch (l) {
    case link_kind::linear_gaussian: return loss_family::quadratic;
    case link_kind::logistic: return loss_family::logistic;
    case link_kind::poisson: return loss_family::poisson;
  }
  return loss_family::quadratic;
}

inline constexpr double poisson_clamp = 30.0;

struct DataGenSpec {
  std::size_t n = 100;
  std::size_t p = 100;
  feature_dist features = feature_dist::gaussian;
  link_kind link = link_kind::logistic;
  double noise_std = 1.0;  // linear_gaussian only
  /// Unset: beta* ~ N(0, I_p). Otherwise a fixed vector of length p.
  std::optional<Eigen::VectorXd> beta_star;
  std::uint64_t seed = 0;
  /// Feature variance is 1/scale_n; defaults to n. Set it to draw extra
  /// rows (e.g. a test set) from the training distribution.
  std::optional<std::size_t> scale_n;

  void validate() const {
    if (n < 1 || p < 1) throw std::invalid_argument("DataGenSpec: n and p must be >= 1");
    if (beta_star && static_cast<std::size_t>(beta_star->size()) != p)
      throw std::invalid_argument("DataGenSpec: fixed beta* has wrong length");
    if (link == link_kind::linear_gaussian && !(noise_std >= 0.0))
      throw std::invalid_argument("DataGenSpec: noise_std must be >= 0");
  }
  double feature_variance() const { return 1.0 / static_cast<double>(scale_n ? *scale_n : n); }
  /// Bound C_X on p * lambda_max(Sigma).
  double c_x() const { return static_cast<double>(p) * feature_variance(); }
};

struct GenerationStats {
  std::size_t clamped_rates = 0;  // poisson rows with |x'beta*| > 30
};

inline Dataset generate_dataset(const DataGenSpec& spec, GenerationStats* stats = nullptr) {
  spec.validate();
  rng_type rng = make_rng(spec.seed);
  const auto n = static_cast<Eigen::Index>(spec.n);
  const auto p = static_cast<Eigen::Index>(spec.p);
  const double s = std::sqrt(spec.feature_variance());

  Dataset d;
  if (spec.beta_star) {
    d.beta_star = *spec.beta_star;
  } else {
    std::normal_distribution<double> nd(0.0, 1.0);
    Eigen::VectorXd b(p);
    for (Eigen::Index k = 0; k < p; ++k) b[k] = nd(rng);
    d.beta_star = std::move(b);
  }

  // row by row so every row consumes the stream in the same order
  d.X.resize(n, p);
  switch (spec.features) {
    case feature_dist::gaussian: {
      std::normal_distribution<double> nd(0.0, s);
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index k = 0; k < p; ++k) d.X(i, k) = nd(rng);
      break;
    }
    case feature_dist::rademacher: {
      std::bernoulli_distribution coin(0.5);
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index k = 0; k < p; ++k) d.X(i, k) = coin(rng) ? s : -s;
      break;
    }
    case feature_dist::uniform: {
      // U(-a, a) has variance a^2 / 3
      const double a = std::sqrt(3.0) * s;
      std::uniform_real_distribution<double> ud(-a, a);
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index k = 0; k < p; ++k) d.X(i, k) = ud(rng);
      break;
    }
  }

  const Eigen::VectorXd z = d.X * *d.beta_star;
  d.y.resize(n);
  GenerationStats st;
  for (Eigen::Index i = 0; i < n; ++i) {
    switch (spec.link) {
      case link_kind::linear_gaussian: {
        std::normal_distribution<double> nd(0.0, spec.noise_std);
        d.y[i] = z[i] + (spec.noise_std > 0.0 ? nd(rng) : 0.0);
        break;
      }
      case link_kind::logistic: {
        std::bernoulli_distribution coin(detail::sigmoid(z[i]));
        d.y[i] = coin(rng) ? 1.0 : 0.0;
        break;
      }
      case link_kind::poisson: {
        const double zc = std::clamp(z[i], -poisson_clamp, poisson_clamp);
        if (zc != z[i]) ++st.clamped_rates;
        std::poisson_distribution<long long> pd(std::exp(zc));
        d.y[i] = static_cast<double>(pd(rng));
        break;
      }
    }
  }
  if (stats) *stats = st;
  return d;
}

/// Fresh rows from the same distribution (same beta*, same feature scale).
inline Dataset generate_companion(const DataGenSpec& train, const Eigen::VectorXd& beta_star,
                                  std::size_t rows, std::uint64_t seed) {
  DataGenSpec s = train;
  s.scale_n = train.scale_n ? *train.scale_n : train.n;
  s.n = rows;
  s.beta_star = beta_star;
  s.seed = seed;
  return generate_dataset(s);
}

// ---------------------------------------------------------------------------
// assumption diagnostics

struct AssumptionThresholds {
  double c_y = 3.0;       // responses: max|y| <= c_y (log n)^k
  double log_power = 1.0;
  double norm_band = 0.5; // row norms within (1 +- band) sqrt(C_X)
};

struct AssumptionReport {
  double max_abs_y = 0.0;
  double y_threshold = 0.0;
  bool responses_ok = true;
  double c_x = 0.0;
  double min_row_norm = 0.0;
  double max_row_norm = 0.0;
  double mean_row_norm_sq = 0.0;
  bool features_ok = true;
  double strong_convexity = 0.0;   // lambda * nu
  double hessian_min_eig = 0.0;    // at beta = 0
  bool convexity_ok = true;
  std::size_t clamped_rates = 0;
};

/// Advisory only: flags, never throws on a violation.
inline AssumptionReport validate_assumptions(const Dataset& data, const ModelSpec& model,
                                             const AssumptionThresholds& th = {},
                                             std::optional<double> c_x = std::nullopt) {
  AssumptionReport rep;
  const double n = static_cast<double>(data.n());
  rep.max_abs_y = data.y.size() ? data.y.cwiseAbs().maxCoeff() : 0.0;
  rep.y_threshold = th.c_y * std::pow(std::log(std::max(n, 2.0)), th.log_power);
  rep.responses_ok = rep.max_abs_y <= rep.y_threshold;

  const Eigen::VectorXd norms = data.X.rowwise().norm();
  rep.mean_row_norm_sq = norms.squaredNorm() / n;
  rep.c_x = c_x ? *c_x : static_cast<double>(data.p()) / n;
  rep.min_row_norm = norms.minCoeff();
  rep.max_row_norm = norms.maxCoeff();
  const double centre = std::sqrt(rep.c_x);
  rep.features_ok = rep.min_row_norm >= (1.0 - th.norm_band) * centre &&
                    rep.max_row_norm <= (1.0 + th.norm_band) * centre;

  rep.strong_convexity = model.strong_convexity();
  const Eigen::MatrixXd H =
      objective_hessian(model, data, {}, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(data.p())));
  rep.hessian_min_eig = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(H, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
  rep.convexity_ok = rep.hessian_min_eig >= rep.strong_convexity - 1e-9 * std::max(1.0, rep.strong_convexity);
  return rep;
}

inline nlohmann::json to_json(const AssumptionReport& r) {
  return {{"max_abs_y", r.max_abs_y},           {"y_threshold", r.y_threshold},
          {"responses_ok", r.responses_ok},     {"c_x", r.c_x},
          {"min_row_norm", r.min_row_norm},     {"max_row_norm", r.max_row_norm},
          {"mean_row_norm_sq", r.mean_row_norm_sq}, {"features_ok", r.features_ok},
          {"strong_convexity", r.strong_convexity}, {"hessian_min_eig", r.hessian_min_eig},
          {"convexity_ok", r.convexity_ok},     {"clamped_rates", r.clamped_rates}};
}

inline nlohmann::json to_json(const DataGenSpec& s) {
  nlohmann::json j{{"n", s.n},
                   {"p", s.p},
                   {"features", std::string(to_string(s.features))},
                   {"link", std::string(to_string(s.link))},
                   {"noise_std", s.noise_std},
                   {"seed", s.seed}};
  if (s.beta_star) j["beta_star"] = std::vector<double>(s.beta_star->data(), s.beta_star->data() + s.beta_star->size());
  else j["beta_star"] = "std_normal";
  if (s.scale_n) j["scale_n"] = *s.scale_n;
  return j;
}

inline DataGenSpec datagen_from_json(const nlohmann::json& j) {
  DataGenSpec s;
  s.n = j.value("n", s.n);
  s.p = j.value("p", s.p);
  if (j.contains("features")) s.features = parse_feature_dist(j.at("features").get<std::string>());
  if (j.contains("link")) s.link = parse_link(j.at("link").get<std::string>());
  s.noise_std = j.value("noise_std", s.noise_std);
  s.seed = j.value("seed", s.seed);
  if (j.contains("beta_star") && j.at("beta_star").is_array()) {
    auto v = j.at("beta_star").get<std::vector<double>>();
    s.beta_star = Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  }
  if (j.contains("scale_n")) s.scale_n = j.at("scale_n").get<std::size_t>();
  return s;
}

}  // namespace unlearn
