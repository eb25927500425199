#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "unlearn.hpp"

namespace {

using nlohmann::json;
using namespace unlearn;

struct common_flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  unsigned threads = 1;
  bool resume = false;
};

void add_common(CLI::App* app, common_flags& f) {
  app->add_option("--config", f.config, "JSON or key = value config file");
  app->add_option("--seed", f.seed, "master seed");
  app->add_option("--out", f.out, "output path");
  app->add_option("--threads", f.threads, "worker threads (UNLEARN_THREADS overrides)");
}

json load(const common_flags& f) { return f.config.empty() ? json::object() : load_config(f.config); }

void write_json(const json& j, const std::string& path) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  std::ofstream os(path);
  if (!os) throw io_error("cannot open " + path);
  os << j.dump(2) << '\n';
}

ModelSpec model_from_json(const json& j) {
  ModelSpec m;
  if (j.contains("loss")) m.loss.family = parse_loss_family(j.at("loss").get<std::string>());
  if (j.contains("reg")) m.reg.family = parse_reg_family(j.at("reg").get<std::string>());
  m.lambda = j.value("lambda", m.lambda);
  m.reg.l1_weight = j.value("l1_weight", m.reg.l1_weight);
  m.reg.huber_delta = j.value("huber_delta", m.reg.huber_delta);
  m.validate();
  return m;
}

json model_to_json(const ModelSpec& m) {
  return {{"loss", std::string(to_string(m.loss.family))},
          {"reg", std::string(to_string(m.reg.family))},
          {"lambda", m.lambda},
          {"l1_weight", m.reg.l1_weight},
          {"huber_delta", m.reg.huber_delta}};
}

Eigen::VectorXd vector_from_json(const json& j) {
  auto v = j.get<std::vector<double>>();
  return Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> read_numbers(const std::string& path, const std::string& column) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot open " + path);
  std::string line;
  std::vector<double> out;
  std::optional<std::size_t> col;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto cells = io::split(line);
    if (!col) {
      for (std::size_t i = 0; i < cells.size(); ++i)
        if (cells[i] == column) col = i;
      if (col) continue;  // header line
      col = 0;
    }
    if (*col >= cells.size()) throw schema_error(path + ": short line");
    out.push_back(io::parse_double(cells[*col]));
  }
  return out;
}

// ---------------------------------------------------------------------------

int cmd_gen(const common_flags& f) {
  json j = load(f);
  if (f.seed) j["seed"] = *f.seed;
  const DataGenSpec spec = datagen_from_json(j);
  GenerationStats stats;
  const Dataset d = generate_dataset(spec, &stats);
  const std::string out = f.out.empty() ? "data.bin" : f.out;
  io::write_dataset(d, out);
  const ModelSpec model = model_from_json(json{{"loss", std::string(to_string(loss_for(spec.link)))}});
  AssumptionReport rep = validate_assumptions(d, model, {}, spec.c_x());
  rep.clamped_rates = stats.clamped_rates;
  std::cerr << "wrote " << d.n() << "x" << d.p() << " dataset to " << out << '\n';
  std::cout << json{{"spec", to_json(spec)}, {"assumptions", to_json(rep)}}.dump(2) << '\n';
  return 0;
}

int cmd_fit(const common_flags& f, const std::string& data_path) {
  const json j = load(f);
  const ModelSpec model = model_from_json(j);
  const Dataset d = io::read_dataset(data_path.empty() ? j.value("data", std::string("data.bin")) : data_path);
  d.validate_for(model.loss);
  SolverConfig cfg;
  cfg.cache_hessian = false;
  if (j.contains("grad_tol")) cfg.grad_tol = j.at("grad_tol").get<double>();
  cfg.max_iter = j.value("max_iter", cfg.max_iter);
  const FittedModel fit = fit_rerm(model, d, {}, cfg);
  json out = model_to_json(model);
  out["beta"] = to_std(fit.beta);
  out["grad_norm"] = fit.grad_norm;
  out["iterations"] = fit.iterations;
  out["objective"] = fit.objective_trace.back();
  write_json(out, f.out.empty() ? "model.json" : f.out);
  return 0;
}

int cmd_unlearn(const common_flags& f, const std::string& data_path, const std::string& model_path,
                const std::vector<std::size_t>& remove) {
  json j = load(f);
  const Dataset d = io::read_dataset(data_path.empty() ? j.value("data", std::string("data.bin")) : data_path);
  json mj;
  {
    std::ifstream is(model_path.empty() ? j.value("model", std::string("model.json")) : model_path);
    if (!is) throw io_error("cannot open model file");
    mj = json::parse(is);
  }
  const ModelSpec model = model_from_json(mj);
  d.validate_for(model.loss);
  FittedModel fitted = fit_rerm(model, d, {}, {}, vector_from_json(mj.at("beta")));

  RemovalRequest removal{remove.empty() ? j.value("remove", std::vector<std::size_t>{}) : remove};
  if (removal.indices.empty()) throw std::invalid_argument("unlearn: no indices to remove (--remove)");
  removal.validate(d.n());

  const double eps = j.value("eps", 0.75);
  const std::size_t m = j.value("m", removal.m());
  CalibrationOptions opt;
  opt.mode = parse_calibration_mode(j.value("calibration", std::string("oracle")));
  opt.c1 = j.value("c1", opt.c1);
  if (j.contains("c2")) opt.c2 = j.at("c2").get<double>();
  opt.subsets = j.value("subsets", opt.subsets);
  opt.solve = newton_solve::downdate;
  opt.threads = resolve_threads(f.threads);
  if (m == removal.m()) opt.forced = {removal};
  const std::uint64_t seed = f.seed.value_or(j.value("seed", std::uint64_t{0}));
  rng_type cal_rng = make_rng(derive_seed(seed, {label_key("calibration")}));
  const CalibrationResult calib = calibrate_noise(model, d, fitted, m, eps, opt, cal_rng);

  const mechanism_kind kind = parse_mechanism(j.value("mechanism", std::string("gaussian")));
  rng_type noise_rng = make_rng(derive_seed(seed, {label_key("noise")}));
  const UnlearnOutput u = unlearn::unlearn(fitted, model, d, removal, calib, kind, noise_rng, newton_solve::downdate);
  json out = to_json(u);
  out["mechanism"] = std::string(to_string(kind));
  out["removed"] = removal.indices;
  write_json(out, f.out.empty() ? "unlearned.json" : f.out);
  return 0;
}

int cmd_experiment_run(const common_flags& f) {
  json j = load(f);
  if (f.seed) j["master_seed"] = *f.seed;
  if (!f.out.empty()) j["output_path"] = f.out;
  ExperimentConfig cfg = experiment_from_json(j);
  RunOptions ro;
  ro.resume = f.resume;
  ro.threads = resolve_threads(f.threads);
  ro.progress = [](std::size_t done, std::size_t total) {
    std::cerr << "unit " << done << "/" << total << " done\n";
  };
  const auto rows = run_experiment(cfg, ro);
  std::cerr << "wrote " << rows.size() << " rows to " << cfg.output_path << '\n';
  return 0;
}

int cmd_experiment_summarize(const common_flags& f, const std::string& in, std::vector<std::string> group_by,
                             std::vector<std::string> axes) {
  const json j = load(f);
  if (group_by.empty() && j.contains("group_by")) group_by = j.at("group_by").get<std::vector<std::string>>();
  if (axes.empty() && j.contains("axes")) axes = j.at("axes").get<std::vector<std::string>>();
  const std::string input = in.empty() ? j.value("input", std::string("results.csv")) : in;
  const std::string out = f.out.empty() ? "summary.csv" : f.out;
  const Summary s = summarize_file(input, out, group_by, axes);
  std::cerr << "wrote " << s.cells.size() << " cells and " << s.slopes.size() << " slope fits\n";
  return 0;
}

int cmd_certify_curve(const common_flags& f, const std::string& kind_flag) {
  const json j = load(f);
  const std::string kind = kind_flag.empty() ? j.value("kind", std::string("gaussian")) : kind_flag;
  const double eps = j.value("eps", 1.0);
  const auto alphas = alpha_grid(j.value("points", std::size_t{101}));
  TradeoffCurve curve;
  if (kind == "gaussian") {
    curve = gaussian_curve(eps, alphas);
  } else if (kind == "eps_delta") {
    curve = eps_delta_curve(eps, j.value("delta", 0.0), alphas);
  } else if (kind == "empirical") {
    // N(0, s^2 I) against N(mu, s^2 I) with ||mu|| / s = eps, projected on mu
    const auto p = j.value("dim", std::size_t{8});
    const auto samples = j.value("samples", std::size_t{100000});
    const double sigma = j.value("sigma", 1.0);
    rng_type rng = make_rng(f.seed.value_or(j.value("seed", std::uint64_t{0})));
    Eigen::VectorXd mu = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(p), eps * sigma / std::sqrt(double(p)));
    const Eigen::VectorXd dir = mu.normalized();
    std::normal_distribution<double> nd(0.0, sigma);
    Eigen::MatrixXd P(static_cast<Eigen::Index>(samples), static_cast<Eigen::Index>(p));
    Eigen::MatrixXd Q(P.rows(), P.cols());
    for (Eigen::Index i = 0; i < P.rows(); ++i)
      for (Eigen::Index k = 0; k < P.cols(); ++k) P(i, k) = nd(rng);
    for (Eigen::Index i = 0; i < Q.rows(); ++i)
      for (Eigen::Index k = 0; k < Q.cols(); ++k) Q(i, k) = mu[k] + nd(rng);
    const auto ps = project_rows(P, dir), qs = project_rows(Q, dir);
    curve = empirical_tradeoff_curve(ps, qs, alphas);
    std::cerr << "sup distance to f_G: " << curve.sup_distance(gaussian_curve(eps, alphas)) << '\n';
  } else {
    throw std::invalid_argument("certify curve: unknown kind " + kind + " (gaussian|eps_delta|empirical)");
  }
  if (f.out.empty() || f.out == "-") {
    write_curve_csv(curve, std::cout);
  } else {
    std::ofstream os(f.out);
    if (!os) throw io_error("cannot open " + f.out);
    write_curve_csv(curve, os);
  }
  return 0;
}

int cmd_certify_gpar(const common_flags& f, const std::string& gaps_path, std::optional<double> r_flag,
                     double r_scale) {
  json j = load(f);
  const double phi = j.value("phi_budget", 0.05);
  std::optional<double> eps;
  if (j.contains("eps")) eps = j.at("eps").is_array() ? j.at("eps").at(0).get<double>() : j.at("eps").get<double>();
  GparReport rep;
  if (!gaps_path.empty()) {
    const auto gaps = read_numbers(gaps_path, "gap");
    std::vector<double> radii;
    if (r_flag) radii = {*r_flag};
    else radii = read_numbers(gaps_path, "r");
    for (auto& r : radii) r *= r_scale;
    rep = check_gpar(gaps, radii, phi, eps);
  } else {
    if (f.seed) j["master_seed"] = *f.seed;
    j["threads"] = f.threads;
    const ExperimentConfig cfg = experiment_from_json(j);
    const std::size_t m = cfg.m_values.front();
    const GparSample s = sample_gpar(cfg, cfg.n_values.front(), m);
    std::vector<double> radii = s.radii;
    if (r_flag) radii = {*r_flag};
    for (auto& r : radii) r *= r_scale;
    rep = check_gpar(s.gaps, radii, phi, eps);
  }
  write_json(to_json(rep), f.out);
  return rep.pass ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Certified unlearning for regularized GLMs"};
  app.require_subcommand(1);

  common_flags gen_f, fit_f, un_f, run_f, sum_f, curve_f, gpar_f;

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  add_common(gen, gen_f);

  auto* fit = app.add_subcommand("fit", "fit the regularized GLM on a dataset");
  add_common(fit, fit_f);
  std::string fit_data;
  fit->add_option("--data", fit_data, "dataset (.csv or binary)");

  auto* un = app.add_subcommand("unlearn", "remove points with one Newton step plus calibrated noise");
  add_common(un, un_f);
  std::string un_data, un_model;
  std::vector<std::size_t> un_remove;
  un->add_option("--data", un_data, "dataset");
  un->add_option("--model", un_model, "model JSON written by fit");
  un->add_option("--remove", un_remove, "row indices to remove")->delimiter(',');

  auto* exp = app.add_subcommand("experiment", "replication grids");
  exp->require_subcommand(1);
  auto* run = exp->add_subcommand("run", "run (or resume) an experiment grid");
  add_common(run, run_f);
  run->add_flag("--resume", run_f.resume, "keep finished units already in the output CSV");
  auto* sum = exp->add_subcommand("summarize", "per-cell summaries and log-log slopes");
  add_common(sum, sum_f);
  std::string sum_in;
  std::vector<std::string> group_by, axes;
  sum->add_option("--in", sum_in, "results CSV");
  sum->add_option("--group-by", group_by, "cell labels (n,p,m,eps,mechanism)")->delimiter(',');
  sum->add_option("--axis", axes, "slope axes (p, n, m, eps)")->delimiter(',');

  auto* cert = app.add_subcommand("certify", "trade-off curves and GPAR checks");
  cert->require_subcommand(1);
  auto* curve = cert->add_subcommand("curve", "write a trade-off curve as CSV");
  add_common(curve, curve_f);
  std::string curve_kind;
  curve->add_option("--kind", curve_kind, "gaussian | eps_delta | empirical");
  auto* gpar = cert->add_subcommand("gpar", "empirical GPAR check");
  add_common(gpar, gpar_f);
  std::string gpar_gaps;
  std::optional<double> gpar_r;
  double gpar_scale = 1.0;
  gpar->add_option("--gaps", gpar_gaps, "CSV with a 'gap' column (and optionally 'r')");
  gpar->add_option("--r", gpar_r, "radius shared by all datasets");
  gpar->add_option("--r-scale", gpar_scale, "multiply radii before checking");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return cmd_gen(gen_f);
    if (fit->parsed()) return cmd_fit(fit_f, fit_data);
    if (un->parsed()) return cmd_unlearn(un_f, un_data, un_model, un_remove);
    if (run->parsed()) return cmd_experiment_run(run_f);
    if (sum->parsed()) return cmd_experiment_summarize(sum_f, sum_in, group_by, axes);
    if (curve->parsed()) return cmd_certify_curve(curve_f, curve_kind);
    if (gpar->parsed()) return cmd_certify_gpar(gpar_f, gpar_gaps, gpar_r, gpar_scale);
  } catch (const infeasible_budget& e) {
    std::cerr << "infeasible budget: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
