#pragma once

#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Core>

namespace unlearn {

class error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Input outside a loss family's response domain, or a probability outside [0,1].
class domain_error : public error {
public:
  using error::error;
};

class factorization_failed : public error {
public:
  factorization_failed(const std::string& what, double last_jitter)
    : error(what), last_jitter_(last_jitter) {}
  double last_jitter() const noexcept { return last_jitter_; }

private:
  double last_jitter_;
};

/// Newton iterations ran out before the gradient tolerance was met.
/// Carries the last iterate so callers can inspect or warm-start from it.
class max_iter_exceeded : public error {
public:
  max_iter_exceeded(const std::string& what, Eigen::VectorXd last, double grad_norm)
    : error(what), last_(std::move(last)), grad_norm_(grad_norm) {}
  const Eigen::VectorXd& last_iterate() const noexcept { return last_; }
  double grad_norm() const noexcept { return grad_norm_; }

private:
  Eigen::VectorXd last_;
  double grad_norm_;
};

class infeasible_budget : public error {
public:
  using error::error;
};

class io_error : public error {
public:
  using error::error;
};

class schema_error : public error {
public:
  using error::error;
};

}  // namespace unlearn
