#include <cmath>
#include <random>

#include <gtest/gtest.h>
#include <Eigen/Eigenvalues>

#include "oracles.hpp"
#include "unlearn/datagen.hpp"
#include "unlearn/solver.hpp"

using namespace unlearn;

namespace {

ModelSpec make_model(loss_family f, double lambda, reg_family r = reg_family::ridge) {
  ModelSpec m;
  m.loss.family = f;
  m.reg.family = r;
  m.lambda = lambda;
  return m;
}

Dataset logistic_data(std::size_t n, std::size_t p, std::uint64_t seed) {
  DataGenSpec s;
  s.n = n;
  s.p = p;
  s.link = link_kind::logistic;
  s.seed = seed;
  return generate_dataset(s);
}

// rows come in pairs (x, y), (-x, y)
Dataset paired_logistic(std::size_t half, std::size_t p, std::uint64_t seed) {
  const Dataset base = logistic_data(half, p, seed);
  Dataset d;
  d.X.resize(2 * base.X.rows(), base.X.cols());
  d.y.resize(2 * base.y.size());
  d.X << base.X, -base.X;
  d.y << base.y, base.y;
  return d;
}

}  // namespace

TEST(ObjectiveGradient, ZeroAtRidgeClosedForm) {
  const Dataset d = oracle::random_regression(100, 20, 1);
  const auto model = make_model(loss_family::quadratic, 0.7);
  const Eigen::VectorXd b = oracle::ridge_closed_form(d.X, d.y, 0.7);
  EXPECT_LE(objective_gradient(model, d, {}, b).norm(), 1e-8);
}

TEST(ObjectiveGradient, ZeroForSymmetricLogistic) {
  const Dataset d = paired_logistic(40, 5, 2);
  const auto model = make_model(loss_family::logistic, 0.5);
  EXPECT_LE(objective_gradient(model, d, {}, Eigen::VectorXd::Zero(5)).norm(), 1e-14);
}

TEST(ObjectiveGradient, AllExcludedIsRegularizerGradient) {
  const Dataset d = logistic_data(30, 4, 3);
  const auto model = make_model(loss_family::logistic, 0.3, reg_family::elastic_smooth);
  index_set all(30);
  std::iota(all.begin(), all.end(), 0);
  const Eigen::VectorXd b = Eigen::VectorXd::LinSpaced(4, -1.0, 2.0);
  const Eigen::VectorXd expected = 0.3 * reg_eval(model.reg, b).gradient;
  EXPECT_LE((objective_gradient(model, d, all, b) - expected).norm(), 1e-15);
  const Eigen::MatrixXd H = objective_hessian(model, d, all, b);
  EXPECT_LE((H - Eigen::MatrixXd(0.3 * reg_eval(model.reg, b).hessian_diag.asDiagonal())).norm(), 1e-15);
}

TEST(ObjectiveGradient, MatchesFiniteDifferences) {
  for (auto f : {loss_family::quadratic, loss_family::logistic, loss_family::poisson}) {
    DataGenSpec s;
    s.n = 60;
    s.p = 8;
    s.link = f == loss_family::quadratic ? link_kind::linear_gaussian
             : f == loss_family::logistic ? link_kind::logistic : link_kind::poisson;
    s.seed = 4;
    const Dataset d = generate_dataset(s);
    const auto model = make_model(f, 0.4, reg_family::elastic_smooth);
    const index_set ex{3, 17};
    const Eigen::VectorXd b = 0.3 * *d.beta_star;
    const Eigen::VectorXd g = objective_gradient(model, d, ex, b);
    const Eigen::MatrixXd H = objective_hessian(model, d, ex, b);
    const double h = 1e-6;
    for (Eigen::Index k = 0; k < b.size(); ++k) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(b.size());
      e[k] = h;
      const double fd = (objective_value(model, d, ex, b + e) - objective_value(model, d, ex, b - e)) / (2 * h);
      EXPECT_NEAR(g[k], fd, 1e-5 * std::max(1.0, std::abs(fd)));
      const Eigen::VectorXd hd = (objective_gradient(model, d, ex, b + e) - objective_gradient(model, d, ex, b - e)) / (2 * h);
      EXPECT_LE((H.col(k) - hd).norm(), 1e-5 * std::max(1.0, hd.norm()));
    }
  }
}

TEST(ObjectiveGradient, ExcludeOutOfRange) {
  const Dataset d = logistic_data(10, 3, 1);
  const auto model = make_model(loss_family::logistic, 0.5);
  EXPECT_THROW(objective_gradient(model, d, {10}, Eigen::VectorXd::Zero(3)), std::out_of_range);
  EXPECT_THROW(objective_hessian(model, d, {99}, Eigen::VectorXd::Zero(3)), std::out_of_range);
}

TEST(ObjectiveHessian, QuadraticRidgeClosedForm) {
  const Dataset d = oracle::random_regression(50, 12, 7);
  const auto model = make_model(loss_family::quadratic, 0.9);
  const Eigen::VectorXd b = Eigen::VectorXd::Random(12);
  const Eigen::MatrixXd expected = 2.0 * d.X.transpose() * d.X + 2.0 * 0.9 * Eigen::MatrixXd::Identity(12, 12);
  const Eigen::MatrixXd H = objective_hessian(model, d, {}, b);
  EXPECT_LE((H - expected).norm(), 1e-13 * expected.norm());
  EXPECT_EQ(H, H.transpose());
}

TEST(ObjectiveHessian, SaturatedLogisticApproachesRegularizer) {
  Dataset d = logistic_data(20, 2, 8);
  d.X.col(0).setConstant(1.0);
  d.X.col(1).setZero();
  const auto model = make_model(loss_family::logistic, 0.5);
  const Eigen::MatrixXd H = objective_hessian(model, d, {}, Eigen::Vector2d(50.0, 0.0));
  EXPECT_LE((H - Eigen::Matrix2d::Identity()).norm(), 1e-18 * 20 + 20 * std::exp(-50.0));
}

TEST(ObjectiveHessian, StrongConvexityGuard) {
  rng_type g(9);
  std::normal_distribution<double> nd(0.0, 2.0);
  std::uniform_real_distribution<double> ld(0.05, 3.0);
  for (int t = 0; t < 100; ++t) {
    const auto f = t % 3 == 0 ? loss_family::quadratic : t % 3 == 1 ? loss_family::logistic : loss_family::poisson;
    DataGenSpec s;
    s.n = 25;
    s.p = 10;
    s.link = f == loss_family::quadratic ? link_kind::linear_gaussian
             : f == loss_family::logistic ? link_kind::logistic : link_kind::poisson;
    s.seed = 100 + t;
    const Dataset d = generate_dataset(s);
    const auto model = make_model(f, ld(g), t % 2 ? reg_family::ridge : reg_family::elastic_smooth);
    Eigen::VectorXd b(10);
    for (auto& x : b) x = nd(g);
    const Eigen::MatrixXd H = objective_hessian(model, d, {}, b);
    const double mn = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(H).eigenvalues().minCoeff();
    EXPECT_GE(mn, model.strong_convexity() - 1e-9);
  }
}

TEST(FitRerm, ScalarExample) {
  Dataset d;
  d.X = Eigen::MatrixXd::Ones(1, 1);
  d.y = Eigen::VectorXd::Ones(1);
  const auto fit = fit_rerm(make_model(loss_family::quadratic, 1.0), d, {});
  EXPECT_NEAR(fit.beta[0], 0.5, 1e-14);
}

TEST(FitRerm, QuadraticMatchesClosedForm) {
  const Dataset d = oracle::random_regression(100, 20, 10);
  const auto fit = fit_rerm(make_model(loss_family::quadratic, 0.5), d, {});
  EXPECT_LE((fit.beta - oracle::ridge_closed_form(d.X, d.y, 0.5)).norm(), 1e-8);
  EXPECT_LE(fit.grad_norm, SolverConfig{}.tolerance_for(d));
}

TEST(FitRerm, SymmetricLogisticGivesZero) {
  const Dataset d = paired_logistic(50, 6, 11);
  const auto fit = fit_rerm(make_model(loss_family::logistic, 0.5), d, {});
  EXPECT_LE(fit.beta.norm(), 1e-12);
}

TEST(FitRerm, CachedHessianFactorReconstructs) {
  const Dataset d = logistic_data(120, 30, 12);
  const auto model = make_model(loss_family::logistic, 0.5);
  const auto fit = fit_rerm(model, d, {});
  ASSERT_TRUE(fit.hessian_factor.has_value());
  const Eigen::MatrixXd H = objective_hessian(model, d, {}, fit.beta);
  const Eigen::MatrixXd L = fit.hessian_factor->matrixL();
  EXPECT_LE((L * L.transpose() - H).norm(), 1e-10 * H.norm());
}

TEST(FitRerm, UniqueUnderWarmStarts) {
  const Dataset d = logistic_data(80, 20, 13);
  const auto model = make_model(loss_family::logistic, 0.5, reg_family::elastic_smooth);
  rng_type g(1);
  std::normal_distribution<double> nd(0.0, 3.0);
  Eigen::VectorXd w1(20), w2(20);
  for (auto& x : w1) x = nd(g);
  for (auto& x : w2) x = nd(g);
  const auto a = fit_rerm(model, d, {}, {}, w1);
  const auto b = fit_rerm(model, d, {}, {}, w2);
  EXPECT_LE((a.beta - b.beta).norm(), 1e-6);
}

TEST(FitRerm, MonotoneDescent) {
  DataGenSpec s;
  s.n = 100;
  s.p = 40;
  s.link = link_kind::poisson;
  s.seed = 14;
  const Dataset d = generate_dataset(s);
  const auto fit = fit_rerm(make_model(loss_family::poisson, 0.5), d, {}, {}, Eigen::VectorXd::Constant(40, 2.0));
  ASSERT_GE(fit.objective_trace.size(), 2u);
  for (std::size_t k = 1; k < fit.objective_trace.size(); ++k)
    EXPECT_LE(fit.objective_trace[k], fit.objective_trace[k - 1]);
}

TEST(FitRerm, ExcludeEqualsPhysicalRemoval) {
  const Dataset d = logistic_data(90, 25, 15);
  const auto model = make_model(loss_family::logistic, 0.5);
  const index_set M{4, 20, 33, 88};
  const auto a = fit_rerm(model, d, M);
  const auto b = fit_rerm(model, d.without(M), {});
  EXPECT_LE((a.beta - b.beta).norm(), 1e-9);
}

TEST(FitRerm, MaxIterCarriesLastIterate) {
  const Dataset d = logistic_data(50, 10, 16);
  SolverConfig cfg;
  cfg.max_iter = 1;
  try {
    fit_rerm(make_model(loss_family::logistic, 0.5), d, {}, cfg);
    FAIL() << "expected max_iter_exceeded";
  } catch (const max_iter_exceeded& e) {
    EXPECT_EQ(e.last_iterate().size(), 10);
    EXPECT_GT(e.grad_norm(), 0.0);
  }
}

TEST(FitRerm, InvalidConfig) {
  const Dataset d = logistic_data(10, 2, 1);
  SolverConfig cfg;
  cfg.max_iter = 0;
  EXPECT_THROW(fit_rerm(make_model(loss_family::logistic, 0.5), d, {}, cfg), std::invalid_argument);
  cfg = {};
  cfg.grad_tol = 0.0;
  EXPECT_THROW(fit_rerm(make_model(loss_family::logistic, 0.5), d, {}, cfg), std::invalid_argument);
}

TEST(Factorize, JitterEscalationThenFailure) {
  SolverConfig cfg;
  Eigen::MatrixXd singular = Eigen::MatrixXd::Zero(3, 3);
  double used = -1.0;
  const auto f = factorize(singular, cfg, &used);
  EXPECT_GT(used, 0.0);
  EXPECT_LE(used, cfg.max_jitter);
  EXPECT_EQ(f.info(), Eigen::Success);
  Eigen::MatrixXd neg = -Eigen::MatrixXd::Identity(3, 3);
  EXPECT_THROW(factorize(neg, cfg), factorization_failed);
}

TEST(FitRermChord, ReachesRetrain) {
  const Dataset d = logistic_data(150, 60, 17);
  const auto model = make_model(loss_family::logistic, 0.5);
  const auto full = fit_rerm(model, d, {});
  const index_set M{1, 2, 3, 4, 5};
  const spd_factor F(objective_hessian(model, d, M, full.beta));
  const auto chord = fit_rerm_chord(model, d, M, full.beta, F);
  const auto exact = fit_rerm(model, d, M);
  EXPECT_LE((chord.beta - exact.beta).norm(), 1e-9);
}
