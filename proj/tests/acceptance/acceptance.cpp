// End-to-end acceptance checks A1..A9. Prints one PASS/FAIL line per check
// and exits non-zero if any check fails.
//
//   acceptance [--only A1,A4] [--configs DIR] [--work DIR] [--threads N]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "../unit/oracles.hpp"
#include "unlearn.hpp"

namespace fs = std::filesystem;
using namespace unlearn;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Context {
  fs::path configs;
  fs::path work;
  unsigned threads = 1;
  // result file of the A4 run, reused by A9
  std::optional<fs::path> a4_results;
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

ExperimentConfig load_experiment(const Context& ctx, const std::string& file, const std::string& out_name) {
  ExperimentConfig cfg = experiment_from_json(load_config(ctx.configs / file));
  cfg.output_path = (ctx.work / out_name).string();
  cfg.threads = ctx.threads;
  return cfg;
}

std::vector<ResultRow> run_fresh(const ExperimentConfig& cfg) {
  fs::remove(cfg.output_path);
  RunOptions ro;
  ro.threads = cfg.threads;
  return run_experiment(cfg, ro);
}

double cell_mean(const Summary& s, std::size_t n, std::size_t m, double eps, const std::string& mech) {
  CellLabels l;
  l.n = n;
  l.p = n;
  l.m = m;
  l.eps = eps;
  l.mechanism = mech;
  auto v = find_mean(s, l, "ged");
  if (!v) throw std::runtime_error("missing summary cell");
  return *v;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size();
  return k % 2 ? v[k / 2] : 0.5 * (v[k / 2 - 1] + v[k / 2]);
}

// ---------------------------------------------------------------------------

Outcome a1(Context&) {
  const double lambdas[] = {0.1, 0.5, 2.0};
  const std::size_t ms[] = {1, 5, 10};
  SolverConfig tight;
  tight.grad_tol = 1e-12;
  double worst = 0.0;
  int bad = 0;
  for (int inst = 0; inst < 50; ++inst) {
    DataGenSpec spec;
    spec.n = 200;
    spec.p = 50;
    spec.link = link_kind::linear_gaussian;
    spec.seed = derive_seed(1001, {static_cast<std::uint64_t>(inst)});
    const Dataset d = generate_dataset(spec);
    ModelSpec model;
    model.loss.family = loss_family::quadratic;
    model.reg.family = reg_family::ridge;
    model.lambda = lambdas[inst % 3];
    const std::size_t m = ms[(inst / 3) % 3];

    const FittedModel full = fit_rerm(model, d, {}, tight);
    rng_type g = make_rng(derive_seed(2002, {static_cast<std::uint64_t>(inst)}));
    const RemovalRequest removal = uniform_subset(d.n(), m, g);
    const Eigen::VectorXd newton = newton_unlearn_step(full, model, d, removal);
    const Eigen::VectorXd exact = fit_rerm(model, d, removal.indices, tight).beta;
    const double rel = (newton - exact).norm() / (1.0 + exact.norm());
    worst = std::max(worst, rel);
    if (rel > 1e-8) ++bad;
  }
  return {bad == 0, "50 instances, max ||newton - retrain|| / (1 + ||retrain||) = " + fmt(worst) + " (tol 1e-8)"};
}

Outcome a2(Context&) {
  const std::vector<double> alphas = alpha_grid(1000);
  const double eps_list[] = {0.1, 0.5, 1.0, 2.0, 4.0};
  double oracle_err = 0.0, inverse_err = 0.0;
  bool monotone = true, bounded = true, convex = true, ordered = true, endpoints = true;
  std::vector<double> prev;
  for (double eps : eps_list) {
    const TradeoffCurve c = gaussian_curve(eps, alphas);
    for (std::size_t i = 0; i < alphas.size(); ++i) {
      const double a = alphas[i], b = c.betas[i];
      oracle_err = std::max(oracle_err, std::abs(b - oracle::gaussian_tradeoff(eps, a)));
      inverse_err = std::max(inverse_err, std::abs(gaussian_tradeoff(eps, b) - a));
      if (b > 1.0 - a + 1e-15 || b < 0.0) bounded = false;
      if (i > 0 && b > c.betas[i - 1]) monotone = false;
      if (i > 0 && i + 1 < alphas.size() && c.betas[i - 1] + c.betas[i + 1] - 2.0 * b < -1e-12) convex = false;
      if (!prev.empty() && b > prev[i]) ordered = false;
    }
    if (c.betas.front() != 1.0 || c.betas.back() != 0.0) endpoints = false;
    if (!c.is_valid()) bounded = false;
    prev = c.betas;

    // (eps, delta) curves obey the same shape invariants
    const TradeoffCurve ed = eps_delta_curve(eps, 0.01, alphas);
    if (!ed.is_valid()) bounded = false;
    for (std::size_t i = 1; i + 1 < alphas.size(); ++i)
      if (ed.betas[i - 1] + ed.betas[i + 1] - 2.0 * ed.betas[i] < -1e-12) convex = false;
  }
  const bool pass = oracle_err <= 1e-12 && inverse_err <= 1e-9 && monotone && bounded && convex && ordered && endpoints;
  std::string d = "oracle err " + fmt(oracle_err) + " (tol 1e-12), self-inverse err " + fmt(inverse_err) +
                  " (tol 1e-9)";
  if (!monotone) d += ", not monotone";
  if (!bounded) d += ", exceeds 1-alpha";
  if (!convex) d += ", not convex";
  if (!ordered) d += ", not ordered in eps";
  if (!endpoints) d += ", bad endpoints";
  return {pass, d};
}

Outcome a3(Context&) {
  const std::vector<double> alphas = alpha_grid(1001);
  const TradeoffCurve ref = gaussian_curve(1.0, alphas);
  const int samples = 100000;
  double worst = 0.0;
  std::string d;
  for (int p : {1, 8, 64}) {
    rng_type g = make_rng(derive_seed(3003, {static_cast<std::uint64_t>(p)}));
    std::normal_distribution<double> nd(0.0, 1.0);
    const double sigma = 1.7;
    Eigen::VectorXd mu1 = Eigen::VectorXd::Zero(p), mu2(p);
    for (int k = 0; k < p; ++k) mu2[k] = nd(g);
    mu2 *= sigma / mu2.norm();  // ||mu1 - mu2|| / sigma = 1
    Eigen::MatrixXd P(samples, p), Q(samples, p);
    for (int i = 0; i < samples; ++i)
      for (int k = 0; k < p; ++k) P(i, k) = mu1[k] + sigma * nd(g);
    for (int i = 0; i < samples; ++i)
      for (int k = 0; k < p; ++k) Q(i, k) = mu2[k] + sigma * nd(g);
    const Eigen::VectorXd dir = mu2 - mu1;
    const TradeoffCurve emp = empirical_tradeoff_curve(project_rows(P, dir), project_rows(Q, dir), alphas);
    const double dist = emp.sup_distance(ref);
    worst = std::max(worst, dist);
    d += (d.empty() ? "" : ", ") + std::string("p=") + std::to_string(p) + ": " + fmt(dist);
  }
  return {worst <= 0.02, "sup distance to f_G,1 " + d + " (tol 0.02)"};
}

Outcome a4(Context& ctx) {
  const ExperimentConfig cfg = load_experiment(ctx, "ged_vs_p.json", "a4_ged_vs_p.csv");
  const auto rows = run_fresh(cfg);
  ctx.a4_results = cfg.output_path;
  const Summary s = summarize(rows, {"n", "p", "m", "eps", "mechanism"}, {"p"});
  std::map<std::string, double> slope;
  for (const auto& sl : s.slopes)
    if (sl.metric == "ged" && sl.fixed.mechanism) slope[*sl.fixed.mechanism] = sl.fit.slope;
  if (!slope.count("gaussian") || !slope.count("laplace")) return {false, "missing slope fits"};
  const double g = slope["gaussian"], l = slope["laplace"];
  const bool pass = g >= -0.80 && g <= -0.25 && l >= -0.15 && l <= 0.15;
  return {pass, "GED slope vs p: gaussian " + fmt(g) + " (want [-0.80,-0.25]), laplace " + fmt(l) +
                    " (want [-0.15,0.15])"};
}

Outcome a5(Context& ctx) {
  const ExperimentConfig cfg = load_experiment(ctx, "ged_vs_eps.json", "a5_ged_vs_eps.csv");
  const auto rows = run_fresh(cfg);
  const Summary s = summarize(rows);
  const std::size_t n = cfg.n_values.front(), m = cfg.m_values.front();
  bool decreasing = true, below = true;
  std::string d = "gaussian/laplace mean GED:";
  double prev = INFINITY;
  for (double eps : cfg.eps_values) {
    const double g = cell_mean(s, n, m, eps, "gaussian");
    const double l = cell_mean(s, n, m, eps, "laplace");
    if (!(g < prev)) decreasing = false;
    if (!(g < l)) below = false;
    prev = g;
    d += " eps=" + fmt(eps) + " " + fmt(g) + "/" + fmt(l);
  }
  if (!decreasing) d += "; gaussian not strictly decreasing";
  if (!below) d += "; gaussian not below laplace";
  return {decreasing && below, d};
}

Outcome a6(Context& ctx) {
  const ExperimentConfig cfg = load_experiment(ctx, "ged_vs_m.json", "a6_ged_vs_m.csv");
  const auto rows = run_fresh(cfg);
  const Summary s = summarize(rows, {"n", "p", "m", "eps", "mechanism"}, {"m"});
  auto gaussian_slope = [](const Summary& sum) -> std::optional<double> {
    for (const auto& sl : sum.slopes)
      if (sl.metric == "ged" && sl.fixed.mechanism == "gaussian") return sl.fit.slope;
    return std::nullopt;
  };
  const auto v = gaussian_slope(s);
  if (!v) return {false, "missing gaussian slope fit"};

  // same grid with the closed-form radius, reported for reference only
  ExperimentConfig theory = load_experiment(ctx, "ged_vs_m.json", "a6_ged_vs_m_theory.csv");
  theory.calibration = calibration_mode::theory;
  const auto t = gaussian_slope(summarize(run_fresh(theory), {"n", "p", "m", "eps", "mechanism"}, {"m"}));
  std::string d = "gaussian GED slope vs m " + fmt(*v) + " (want [1.0,1.8]), oracle calibration";
  if (t) d += "; theory-radius calibration gives " + fmt(*t);
  return {*v >= 1.0 && *v <= 1.8, d};
}

Outcome a7(Context& ctx) {
  ExperimentConfig cfg = load_experiment(ctx, "gpar_singletons.json", "unused.csv");
  const GparSample s = sample_gpar(cfg, cfg.n_values.front(), 1);
  const GparReport full = check_gpar(s.gaps, std::span<const double>(s.radii), 0.05);
  std::vector<double> half(s.radii);
  for (double& r : half) r *= 0.5;
  const GparReport halved = check_gpar(s.gaps, std::span<const double>(half), 0.05);
  const bool pass = full.pass && full.violations == 0 && halved.violations > 0;
  return {pass, std::to_string(full.trials) + " datasets: violations " + std::to_string(full.violations) +
                    " at r, " + std::to_string(halved.violations) + " at r/2 (budget 0.05)"};
}

Outcome a8(Context& ctx) {
  ExperimentConfig cfg = load_experiment(ctx, "radius_vs_n.json", "unused.csv");
  std::vector<double> med;
  for (std::size_t n : cfg.n_values) med.push_back(median(sample_gpar(cfg, n, 1).radii));
  bool pass = med.size() >= 2;
  std::string d = "median r:";
  for (std::size_t i = 0; i < med.size(); ++i) d += " n=" + std::to_string(cfg.n_values[i]) + " " + fmt(med[i]);
  d += "; ratios";
  for (std::size_t i = 1; i < med.size(); ++i) {
    const double ratio = med[i] / med[i - 1];
    d += " " + fmt(ratio);
    if (!(ratio >= 0.5 && ratio <= 0.95)) pass = false;
  }
  return {pass, d + " (want [0.5,0.95])"};
}

Outcome a9(Context& ctx) {
  ExperimentConfig first = load_experiment(ctx, "ged_vs_p.json", "a4_ged_vs_p.csv");
  if (!ctx.a4_results || !fs::exists(*ctx.a4_results)) run_fresh(first);
  ExperimentConfig second = load_experiment(ctx, "ged_vs_p.json", "a9_repeat.csv");
  run_fresh(second);
  const std::string a = strip_column(read_file(first.output_path), "wall_ms");
  const std::string b = strip_column(read_file(second.output_path), "wall_ms");
  const bool identical = a == b;

  // interrupted run: keep the first part of the file, tear the last line, resume
  ExperimentConfig resumed = load_experiment(ctx, "ged_vs_p.json", "a9_resumed.csv");
  const std::string full_text = read_file(first.output_path);
  std::size_t cut = 0;
  for (int lines = 0; lines < 40 && cut != std::string::npos; ++lines) cut = full_text.find('\n', cut + 1);
  if (cut == std::string::npos) return {false, "result file too short to truncate"};
  {
    std::ofstream os(resumed.output_path, std::ios::binary | std::ios::trunc);
    os << full_text.substr(0, cut + 1) << full_text.substr(cut + 1, 25);
  }
  RunOptions ro;
  ro.resume = true;
  ro.threads = ctx.threads;
  run_experiment(resumed, ro);
  const std::string c = strip_column(read_file(resumed.output_path), "wall_ms");
  const bool resumes = a == c;
  std::string d = std::string("repeat run ") + (identical ? "byte-identical" : "differs") + ", resumed run " +
                  (resumes ? "byte-identical" : "differs") + " (wall_ms excluded)";
  return {identical && resumes, d};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string only, configs = UNLEARN_CONFIG_DIR, work;
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--only", only, "comma-separated subset, e.g. A1,A4");
  app.add_option("--configs", configs, "directory with the experiment configs");
  app.add_option("--work", work, "scratch directory for result files");
  app.add_option("--threads", threads, "worker threads");
  CLI11_PARSE(app, argc, argv);

  Context ctx;
  ctx.configs = configs;
  ctx.work = work.empty() ? fs::temp_directory_path() / "unlearn_acceptance" : fs::path(work);
  ctx.threads = resolve_threads(threads);
  fs::create_directories(ctx.work);

  std::set<std::string> wanted;
  std::stringstream ss(only);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) wanted.insert(item);

  const std::vector<std::pair<std::string, std::function<Outcome(Context&)>>> checks{
      {"A1", a1}, {"A2", a2}, {"A3", a3}, {"A4", a4}, {"A5", a5},
      {"A6", a6}, {"A7", a7}, {"A8", a8}, {"A9", a9}};

  int failures = 0;
  for (const auto& [id, fn] : checks) {
    if (!wanted.empty() && !wanted.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failures;
    std::cout << id << ' ' << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << "  [" << fmt(secs) << " s]"
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
