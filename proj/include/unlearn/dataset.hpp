#pragma once

#include <algorithm>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "unlearn/glm.hpp"

namespace unlearn {

using index_set = std::vector<std::size_t>;

/// GLM sample: rows of X are the feature vectors x_i, y the responses.
struct Dataset {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  std::optional<Eigen::VectorXd> beta_star;

  std::size_t n() const noexcept { return static_cast<std::size_t>(X.rows()); }
  std::size_t p() const noexcept { return static_cast<std::size_t>(X.cols()); }
  double gamma() const noexcept { return static_cast<double>(n()) / static_cast<double>(p()); }

  void validate() const {
    if (X.rows() != y.size())
      throw std::invalid_argument("Dataset: rows(X) != len(y)");
    if (X.cols() < 1) throw std::invalid_argument("Dataset: p must be positive");
    if (!X.allFinite() || !y.allFinite())
      throw std::invalid_argument("Dataset: non-finite entry");
    if (beta_star && beta_star->size() != X.cols())
      throw std::invalid_argument("Dataset: beta_star length != p");
  }

  /// Checks every response against the loss family's domain.
  void validate_for(const LossSpec& loss) const {
    validate();
    for (Eigen::Index i = 0; i < y.size(); ++i) (void)loss_value(loss, y[i], 0.0);
  }

  /// Copy of the listed rows (beta_star carried along).
  Dataset rows(const index_set& idx) const {
    Dataset out;
    out.X.resize(static_cast<Eigen::Index>(idx.size()), X.cols());
    out.y.resize(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (idx[k] >= n()) throw std::out_of_range("Dataset::rows: index out of range");
      out.X.row(static_cast<Eigen::Index>(k)) = X.row(static_cast<Eigen::Index>(idx[k]));
      out.y[static_cast<Eigen::Index>(k)] = y[static_cast<Eigen::Index>(idx[k])];
    }
    out.beta_star = beta_star;
    return out;
  }

  /// Copy with the listed rows physically removed.
  Dataset without(const index_set& idx) const {
    std::vector<char> drop(n(), 0);
    for (auto i : idx) {
      if (i >= n()) throw std::out_of_range("Dataset::without: index out of range");
      drop[i] = 1;
    }
    index_set keep;
    for (std::size_t i = 0; i < n(); ++i)
      if (!drop[i]) keep.push_back(i);
    return rows(keep);
  }
};

/// 1.0 for included rows, 0.0 for excluded ones.
inline Eigen::VectorXd inclusion_weights(std::size_t n, const index_set& exclude) {
  Eigen::VectorXd w = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(n));
  for (auto i : exclude) {
    if (i >= n)
      throw std::out_of_range("exclude index " + std::to_string(i) + " out of range [0," +
                              std::to_string(n) + ")");
    w[static_cast<Eigen::Index>(i)] = 0.0;
  }
  return w;
}

}  // namespace unlearn
