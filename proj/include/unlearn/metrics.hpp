#pragma once

// Error divergence between retrained and unlearned predictors.

#include <cmath>
#include <concepts>
#include <stdexcept>

#include <Eigen/Core>

#include "unlearn/dataset.hpp"
#include "unlearn/glm.hpp"
#include "unlearn/random.hpp"

namespace unlearn {

struct MetricEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t n_mc = 0;  // number of noise draws
};

template <class S>
concept beta_sampler = std::invocable<S&, rng_type&> &&
    std::convertible_to<std::invoke_result_t<S&, rng_type&>, Eigen::VectorXd>;

/// Mean over `n_noise` draws of beta_tilde and over all rows of `points` of
/// |l(y | x'beta_retrained) - l(y | x'beta_tilde)|, with the standard error
/// of that mean.
template <beta_sampler Sampler>
MetricEstimate error_divergence(const ModelSpec& model, const Eigen::VectorXd& retrained,
                                Sampler&& sampler, const Dataset& points, std::size_t n_noise,
                                rng_type& rng) {
  if (points.n() == 0) throw std::invalid_argument("error_divergence: no evaluation points");
  if (n_noise < 1) throw std::invalid_argument("error_divergence: n_noise must be >= 1");
  if (static_cast<std::size_t>(retrained.size()) != points.p())
    throw std::invalid_argument("error_divergence: dimension mismatch");

  const Eigen::VectorXd z_ref = points.X * retrained;
  Eigen::VectorXd loss_ref(z_ref.size());
  for (Eigen::Index i = 0; i < z_ref.size(); ++i) loss_ref[i] = loss_value(model.loss, points.y[i], z_ref[i]);

  // Welford accumulation keeps sums independent of magnitude
  double mean = 0.0, m2 = 0.0;
  std::size_t count = 0;
  for (std::size_t d = 0; d < n_noise; ++d) {
    const Eigen::VectorXd beta = sampler(rng);
    const Eigen::VectorXd z = points.X * beta;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      const double v = std::abs(loss_ref[i] - loss_value(model.loss, points.y[i], z[i]));
      ++count;
      const double delta = v - mean;
      mean += delta / static_cast<double>(count);
      m2 += delta * (v - mean);
    }
  }
  MetricEstimate est;
  est.value = mean;
  est.std_error = count > 1 ? std::sqrt(m2 / static_cast<double>(count - 1) / static_cast<double>(count)) : 0.0;
  est.n_mc = n_noise;
  return est;
}

/// Generalization error divergence on fresh test points.
template <beta_sampler Sampler>
MetricEstimate ged(const ModelSpec& model, const Eigen::VectorXd& retrained, Sampler&& sampler,
                   const Dataset& test_set, std::size_t n_noise, rng_type& rng) {
  if (test_set.n() == 0) throw std::invalid_argument("ged: empty test set");
  return error_divergence(model, retrained, std::forward<Sampler>(sampler), test_set, n_noise, rng);
}

/// Unlearned error divergence: the same average over the removed rows.
template <beta_sampler Sampler>
MetricEstimate ued(const ModelSpec& model, const Eigen::VectorXd& retrained, Sampler&& sampler,
                   const Dataset& removed, std::size_t n_noise, rng_type& rng) {
  if (removed.n() == 0) throw std::invalid_argument("ued: empty removal set");
  return error_divergence(model, retrained, std::forward<Sampler>(sampler), removed, n_noise, rng);
}

}  // namespace unlearn
