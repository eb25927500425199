#pragma once

// Replication grids over (n, p, m, eps, mechanism): data generation, fit,
// calibration, unlearning, GED/UED collection and schema-v1 CSV output.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "unlearn/datagen.hpp"
#include "unlearn/dataset_io.hpp"
#include "unlearn/errors.hpp"
#include "unlearn/glm.hpp"
#include "unlearn/metrics.hpp"
#include "unlearn/random.hpp"
#include "unlearn/solver.hpp"
#include "unlearn/unlearn.hpp"

namespace unlearn {

inline constexpr const char* results_schema_version = "v1";

enum class p_rule { equal, twice_n };  // "n=p" | "2n=p"

inline p_rule parse_p_rule(std::string_view s) {
  if (s == "n=p" || s == "p=n") return p_rule::equal;
  if (s == "2n=p" || s == "p=2n") return p_rule::twice_n;
  throw std::invalid_argument("unknown p rule: " + std::string(s));
}
inline std::string_view to_string(p_rule r) { return r == p_rule::equal ? "n=p" : "2n=p"; }

struct ExperimentConfig {
  std::string experiment_id = "experiment";
  std::vector<std::size_t> n_values{200};
  p_rule rule = p_rule::equal;
  std::vector<std::size_t> m_values{1};
  std::vector<double> eps_values{0.75};
  std::vector<mechanism_kind> mechanisms{mechanism_kind::gaussian, mechanism_kind::laplace_isotropic};
  loss_family loss = loss_family::logistic;
  reg_family reg = reg_family::ridge;
  double lambda = 0.5;
  feature_dist features = feature_dist::gaussian;
  int replications = 1;
  std::size_t subsets_per_removal = 1000;
  std::size_t test_points = 100;
  std::size_t n_noise = 32;
  std::uint64_t master_seed = 0;
  std::string output_path = "results.csv";
  std::optional<double> compute_cap_seconds = 7200.0;
  calibration_mode calibration = calibration_mode::oracle;
  double c1 = 1.0;
  std::optional<double> c2;
  /// Rank-m Cholesky downdates (m <= 32) instead of fresh factorizations in the scan.
  bool downdate_fast_path = true;
  unsigned threads = 1;

  std::size_t p_for(std::size_t n) const { return rule == p_rule::equal ? n : 2 * n; }

  ModelSpec model() const {
    ModelSpec ms;
    ms.loss.family = loss;
    ms.reg.family = reg;
    ms.lambda = lambda;
    return ms;
  }

  link_kind link() const {
    switch (loss) {
      case loss_family::quadratic: return link_kind::linear_gaussian;
      case loss_family::logistic: return link_kind::logistic;
      case loss_family::poisson: return link_kind::poisson;
    }
    return link_kind::logistic;
  }

  void validate() const {
    if (n_values.empty() || m_values.empty() || eps_values.empty() || mechanisms.empty())
      throw std::invalid_argument("ExperimentConfig: grid lists must be non-empty");
    if (replications < 1) throw std::invalid_argument("ExperimentConfig: replications must be >= 1");
    if (experiment_id.find_first_of(",\n\r") != std::string::npos)
      throw std::invalid_argument("ExperimentConfig: experiment_id may not contain commas or newlines");
    for (double e : eps_values)
      if (!(e > 0.0)) throw std::invalid_argument("ExperimentConfig: eps values must be > 0");
    for (auto n : n_values)
      for (auto m : m_values)
        if (m < 1 || m > n) throw std::invalid_argument("ExperimentConfig: need 1 <= m <= n");
    if (test_points < 1 || n_noise < 1) throw std::invalid_argument("ExperimentConfig: test_points and n_noise must be >= 1");
    model().validate();
  }
};

inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  auto as_list = [](const nlohmann::json& v) { return v.is_array() ? v : nlohmann::json::array({v}); };
  c.experiment_id = j.value("experiment_id", c.experiment_id);
  if (j.contains("n")) c.n_values = as_list(j.at("n")).get<std::vector<std::size_t>>();
  if (j.contains("p_rule")) c.rule = parse_p_rule(j.at("p_rule").get<std::string>());
  if (j.contains("m")) c.m_values = as_list(j.at("m")).get<std::vector<std::size_t>>();
  if (j.contains("eps")) c.eps_values = as_list(j.at("eps")).get<std::vector<double>>();
  if (j.contains("mechanisms")) {
    c.mechanisms.clear();
    for (const auto& s : as_list(j.at("mechanisms"))) c.mechanisms.push_back(parse_mechanism(s.get<std::string>()));
  }
  if (j.contains("loss")) c.loss = parse_loss_family(j.at("loss").get<std::string>());
  if (j.contains("reg")) c.reg = parse_reg_family(j.at("reg").get<std::string>());
  c.lambda = j.value("lambda", c.lambda);
  if (j.contains("features")) c.features = parse_feature_dist(j.at("features").get<std::string>());
  c.replications = j.value("replications", c.replications);
  c.subsets_per_removal = j.value("subsets_per_removal", c.subsets_per_removal);
  c.test_points = j.value("test_points", c.test_points);
  c.n_noise = j.value("n_noise", c.n_noise);
  c.master_seed = j.value("master_seed", c.master_seed);
  c.output_path = j.value("output_path", c.output_path);
  if (j.contains("compute_cap_seconds")) {
    if (j.at("compute_cap_seconds").is_null()) c.compute_cap_seconds.reset();
    else c.compute_cap_seconds = j.at("compute_cap_seconds").get<double>();
  }
  if (j.contains("calibration")) c.calibration = parse_calibration_mode(j.at("calibration").get<std::string>());
  c.c1 = j.value("c1", c.c1);
  if (j.contains("c2") && !j.at("c2").is_null()) c.c2 = j.at("c2").get<double>();
  c.downdate_fast_path = j.value("downdate_fast_path", c.downdate_fast_path);
  c.threads = j.value("threads", c.threads);
  c.validate();
  return c;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  std::vector<std::string> mechs;
  for (auto k : c.mechanisms) mechs.emplace_back(to_string(k));
  nlohmann::json j{{"experiment_id", c.experiment_id},
                   {"n", c.n_values},
                   {"p_rule", std::string(to_string(c.rule))},
                   {"m", c.m_values},
                   {"eps", c.eps_values},
                   {"mechanisms", mechs},
                   {"loss", std::string(to_string(c.loss))},
                   {"reg", std::string(to_string(c.reg))},
                   {"lambda", c.lambda},
                   {"features", std::string(to_string(c.features))},
                   {"replications", c.replications},
                   {"subsets_per_removal", c.subsets_per_removal},
                   {"test_points", c.test_points},
                   {"n_noise", c.n_noise},
                   {"master_seed", c.master_seed},
                   {"output_path", c.output_path},
                   {"calibration", std::string(to_string(c.calibration))},
                   {"c1", c.c1},
                   {"downdate_fast_path", c.downdate_fast_path},
                   {"threads", c.threads}};
  j["compute_cap_seconds"] = c.compute_cap_seconds ? nlohmann::json(*c.compute_cap_seconds) : nlohmann::json(nullptr);
  j["c2"] = c.c2 ? nlohmann::json(*c.c2) : nlohmann::json(nullptr);
  return j;
}

// ---------------------------------------------------------------------------
// result rows

struct ResultRow {
  std::string experiment_id;
  std::size_t n = 0, p = 0, m = 0;
  double eps = 0.0;
  std::string mechanism;
  int replication = 0;
  std::uint64_t seed = 0;
  double r = 0.0, sigma = 0.0;
  double ged_value = 0.0, ged_se = 0.0;
  double ued_value = 0.0, ued_se = 0.0;
  double newton_gap = 0.0;
  double wall_ms = 0.0;

  auto key() const { return std::tie(n, p, m, eps, mechanism, replication); }
};

inline const std::vector<std::string>& result_columns() {
  static const std::vector<std::string> cols{"experiment_id", "n",         "p",        "m",
                                             "eps",           "mechanism", "replication", "seed",
                                             "r",             "sigma",     "ged_value", "ged_se",
                                             "ued_value",     "ued_se",    "newton_gap", "wall_ms"};
  return cols;
}

inline std::string results_header() {
  std::string h = std::string("# schema=") + results_schema_version + "\n";
  const auto& cols = result_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) h += (i ? "," : "") + cols[i];
  return h + "\n";
}

inline std::string format_row(const ResultRow& r) {
  using io::format_double;
  std::ostringstream os;
  os << r.experiment_id << ',' << r.n << ',' << r.p << ',' << r.m << ',' << format_double(r.eps) << ','
     << r.mechanism << ',' << r.replication << ',' << r.seed << ',' << format_double(r.r) << ','
     << format_double(r.sigma) << ',' << format_double(r.ged_value) << ',' << format_double(r.ged_se) << ','
     << format_double(r.ued_value) << ',' << format_double(r.ued_se) << ',' << format_double(r.newton_gap)
     << ',' << format_double(r.wall_ms) << '\n';
  return os.str();
}

inline ResultRow parse_row(const std::string& line) {
  const auto cells = io::split(line);
  if (cells.size() != result_columns().size()) throw schema_error("result row has " + std::to_string(cells.size()) + " columns");
  auto to_size = [](std::string_view s) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw schema_error("bad integer '" + std::string(s) + "'");
    return v;
  };
  ResultRow r;
  r.experiment_id = std::string(cells[0]);
  r.n = to_size(cells[1]);
  r.p = to_size(cells[2]);
  r.m = to_size(cells[3]);
  r.eps = io::parse_double(cells[4]);
  r.mechanism = std::string(cells[5]);
  r.replication = static_cast<int>(to_size(cells[6]));
  {
    std::uint64_t s = 0;
    auto [ptr, ec] = std::from_chars(cells[7].data(), cells[7].data() + cells[7].size(), s);
    if (ec != std::errc{} || ptr != cells[7].data() + cells[7].size()) throw schema_error("bad seed");
    r.seed = s;
  }
  r.r = io::parse_double(cells[8]);
  r.sigma = io::parse_double(cells[9]);
  r.ged_value = io::parse_double(cells[10]);
  r.ged_se = io::parse_double(cells[11]);
  r.ued_value = io::parse_double(cells[12]);
  r.ued_se = io::parse_double(cells[13]);
  r.newton_gap = io::parse_double(cells[14]);
  r.wall_ms = io::parse_double(cells[15]);
  return r;
}

/// Reads a schema-v1 results file. With `tolerant`, malformed lines (e.g. a
/// row torn by an interrupted write) are skipped instead of rejected.
inline std::vector<ResultRow> read_results_csv(const std::filesystem::path& path, bool tolerant = false) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != std::string("# schema=") + results_schema_version)
    throw schema_error(path.string() + ": missing '# schema=v1' header");
  if (!std::getline(is, line)) {
    if (tolerant) return {};
    throw schema_error(path.string() + ": missing column header");
  }
  std::string expected = results_header();
  expected = expected.substr(expected.find('\n') + 1);
  expected.pop_back();
  if (line != expected) {
    if (tolerant) return {};
    throw schema_error(path.string() + ": column header mismatch");
  }
  std::vector<ResultRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (is.eof() && tolerant) break;  // last line had no newline: torn write
    try {
      rows.push_back(parse_row(line));
    } catch (const error&) {
      if (!tolerant) throw;
    }
  }
  return rows;
}

inline void write_results_csv(const std::filesystem::path& path, std::vector<ResultRow> rows) {
  std::sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) { return a.key() < b.key(); });
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw io_error("cannot open " + tmp.string());
    os << results_header();
    for (const auto& r : rows) os << format_row(r);
    if (!os) throw io_error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

/// CSV text with one column removed (used to compare runs modulo timings).
inline std::string strip_column(const std::string& csv_text, const std::string& column) {
  std::istringstream is(csv_text);
  std::string line, out;
  std::optional<std::size_t> drop;
  while (std::getline(is, line)) {
    if (!line.empty() && line[0] == '#') {
      out += line + "\n";
      continue;
    }
    auto cells = io::split(line);
    if (!drop) {
      for (std::size_t i = 0; i < cells.size(); ++i)
        if (cells[i] == column) drop = i;
      if (!drop) throw schema_error("strip_column: no column " + column);
    }
    std::string kept;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i == *drop) continue;
      if (!kept.empty()) kept += ',';
      kept += std::string(cells[i]);
    }
    out += kept + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// one (n, replication) unit

struct unit_key {
  std::size_t n;
  int replication;
  auto operator<=>(const unit_key&) const = default;
};

/// Stream seed of one (n, replication) unit. Keys are labels, not grid
/// positions, so adding grid values leaves existing units unchanged.
inline std::uint64_t unit_seed(const ExperimentConfig& cfg, std::string_view tag, std::size_t n, int rep,
                               std::initializer_list<std::uint64_t> more = {}) {
  std::uint64_t h = derive_seed(cfg.master_seed, {label_key(tag), n, cfg.p_for(n), static_cast<std::uint64_t>(rep)});
  for (auto k : more) h = derive_seed(h, {k});
  return h;
}

struct PreparedUnit {
  DataGenSpec spec;
  Dataset data;
  Dataset test;
  FittedModel fitted;
};

inline PreparedUnit prepare_unit(const ExperimentConfig& cfg, std::size_t n, int rep) {
  PreparedUnit u;
  u.spec.n = n;
  u.spec.p = cfg.p_for(n);
  u.spec.features = cfg.features;
  u.spec.link = cfg.link();
  u.spec.seed = unit_seed(cfg, "data", n, rep);
  u.data = generate_dataset(u.spec);
  u.test = generate_companion(u.spec, *u.data.beta_star, cfg.test_points, unit_seed(cfg, "test", n, rep));
  u.fitted = fit_rerm(cfg.model(), u.data, {});
  return u;
}

/// Rows for every (m, eps, mechanism) of one dataset replication. Gaussian
/// and Laplace rows share data, fit, removal set and radius; noise seeds do
/// not depend on eps.
inline std::vector<ResultRow> run_unit(const ExperimentConfig& cfg, std::size_t n, int rep,
                                       std::optional<double> time_cap_seconds = std::nullopt) {
  const std::size_t p = cfg.p_for(n);
  const PreparedUnit unit = prepare_unit(cfg, n, rep);
  const DataGenSpec& spec = unit.spec;
  const Dataset& data = unit.data;
  const Dataset& test = unit.test;
  const FittedModel& fitted = unit.fitted;
  const ModelSpec model = cfg.model();
  const newton_solve solve = cfg.downdate_fast_path ? newton_solve::downdate : newton_solve::fresh;

  std::vector<ResultRow> rows;
  for (const std::size_t m : cfg.m_values) {
    const auto t0 = std::chrono::steady_clock::now();
    rng_type removal_rng = make_rng(unit_seed(cfg, "removal", n, rep, {m}));
    const RemovalRequest removal = uniform_subset(n, m, removal_rng);
    const removal_gap eval = evaluate_removal(fitted, model, data, removal, solve);
    const Dataset removed = data.rows(removal.indices);

    CalibrationOptions opt;
    opt.mode = cfg.calibration;
    opt.c1 = cfg.c1;
    opt.c2 = cfg.c2;
    opt.subsets = cfg.subsets_per_removal;
    opt.forced = {removal};
    opt.solve = solve;
    opt.time_cap_seconds = time_cap_seconds;
    rng_type cal_rng = make_rng(unit_seed(cfg, "calibration", n, rep, {m}));
    const CalibrationResult calib = calibrate_noise(model, data, fitted, m, cfg.eps_values.front(), opt, cal_rng);

    std::vector<ResultRow> block;
    for (const auto mech : cfg.mechanisms) {
      const std::uint64_t noise_seed = unit_seed(cfg, "noise", n, rep, {m, label_key(to_string(mech))});
      for (const double eps : cfg.eps_values) {
        const double sigma = calib.r / eps;
        const NoiseMechanism nm = NoiseMechanism::make(mech, sigma);
        auto sampler = [&](rng_type& g) -> Eigen::VectorXd {
          return eval.beta_newton + draw_noise(nm, p, g);
        };
        rng_type ged_rng = make_rng(noise_seed);
        const MetricEstimate g = ged(model, eval.beta_retrained, sampler, test, cfg.n_noise, ged_rng);
        rng_type ued_rng = make_rng(derive_seed(noise_seed, {label_key("ued")}));
        const MetricEstimate u = ued(model, eval.beta_retrained, sampler, removed, cfg.n_noise, ued_rng);

        ResultRow row;
        row.experiment_id = cfg.experiment_id;
        row.n = n;
        row.p = p;
        row.m = m;
        row.eps = eps;
        row.mechanism = std::string(to_string(mech));
        row.replication = rep;
        row.seed = spec.seed;
        row.r = calib.r;
        row.sigma = sigma;
        row.ged_value = g.value;
        row.ged_se = g.std_error;
        row.ued_value = u.value;
        row.ued_se = u.std_error;
        row.newton_gap = eval.gap;
        block.push_back(std::move(row));
      }
    }
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    for (auto& r : block) {
      r.wall_ms = std::round(ms * 1000.0) / 1000.0;
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

/// `UNLEARN_THREADS` wins over the requested value.
inline unsigned resolve_threads(unsigned requested) {
  if (const char* env = std::getenv("UNLEARN_THREADS")) {
    try {
      const int v = std::stoi(env);
      if (v >= 1) return static_cast<unsigned>(v);
    } catch (const std::exception&) {
    }
  }
  return std::max(1u, requested);
}

/// Per-replication oracle radius and the gap of one fresh removal set, for
/// empirical GPAR checks and sensitivity-decay studies.
struct GparSample {
  std::vector<double> radii;
  std::vector<double> gaps;
};

inline GparSample sample_gpar(const ExperimentConfig& cfg, std::size_t n, std::size_t m) {
  GparSample out;
  const ModelSpec model = cfg.model();
  const newton_solve solve = cfg.downdate_fast_path ? newton_solve::downdate : newton_solve::fresh;
  for (int rep = 0; rep < cfg.replications; ++rep) {
    const PreparedUnit unit = prepare_unit(cfg, n, rep);
    CalibrationOptions opt;
    opt.mode = calibration_mode::oracle;
    opt.subsets = cfg.subsets_per_removal;
    opt.solve = solve;
    opt.threads = resolve_threads(cfg.threads);
    rng_type cal_rng = make_rng(unit_seed(cfg, "calibration", n, rep, {m}));
    const auto calib = calibrate_noise(model, unit.data, unit.fitted, m, 1.0, opt, cal_rng);
    rng_type removal_rng = make_rng(unit_seed(cfg, "gpar_removal", n, rep, {m}));
    const RemovalRequest removal = uniform_subset(n, m, removal_rng);
    out.radii.push_back(calib.r);
    out.gaps.push_back(evaluate_removal(unit.fitted, model, unit.data, removal, solve).gap);
  }
  return out;
}

// ---------------------------------------------------------------------------
// experiment driver

struct RunOptions {
  bool resume = false;
  std::optional<unsigned> threads;  // overrides cfg.threads
  /// Called after each finished unit with (done, total).
  std::function<void(std::size_t, std::size_t)> progress;
};

/// Runs every (n, replication) unit not already present in the output file
/// (with resume), streams rows to it, and finally rewrites it sorted.
/// Throws infeasible_budget when the compute cap is hit; rows finished by
/// then are kept in the file.
inline std::vector<ResultRow> run_experiment(const ExperimentConfig& cfg, const RunOptions& ro = {}) {
  cfg.validate();
  const std::filesystem::path out_path(cfg.output_path);
  const std::size_t rows_per_unit = cfg.m_values.size() * cfg.eps_values.size() * cfg.mechanisms.size();

  std::set<unit_key> grid;
  for (auto n : cfg.n_values)
    for (int rep = 0; rep < cfg.replications; ++rep) grid.insert({n, rep});

  std::vector<ResultRow> kept;
  if (ro.resume && std::filesystem::exists(out_path)) {
    std::map<unit_key, std::vector<ResultRow>> by_unit;
    for (auto& r : read_results_csv(out_path, true)) {
      if (r.experiment_id != cfg.experiment_id || r.p != cfg.p_for(r.n)) continue;
      unit_key k{r.n, r.replication};
      if (grid.count(k)) by_unit[k].push_back(std::move(r));
    }
    for (auto& [k, rs] : by_unit) {
      std::set<std::tuple<std::size_t, double, std::string>> cells;
      for (const auto& r : rs) cells.insert({r.m, r.eps, r.mechanism});
      if (rs.size() == rows_per_unit && cells.size() == rows_per_unit)
        for (auto& r : rs) kept.push_back(std::move(r));
    }
  }
  std::set<unit_key> done;
  for (const auto& r : kept) done.insert({r.n, r.replication});

  // cheap cells first: n ascending
  std::vector<unit_key> todo;
  for (const auto& k : grid)
    if (!done.count(k)) todo.push_back(k);

  if (out_path.has_parent_path()) std::filesystem::create_directories(out_path.parent_path());
  std::ofstream stream(out_path, std::ios::trunc);
  if (!stream) throw io_error("cannot open " + out_path.string() + " for writing");
  stream << results_header();
  for (const auto& r : kept) stream << format_row(r);
  stream.flush();

  std::vector<ResultRow> all = std::move(kept);
  std::mutex mu;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::exception_ptr failure;
  std::size_t finished = 0;
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  bool over_cap = false;

  auto worker = [&] {
    while (!stop) {
      const std::size_t i = next.fetch_add(1);
      if (i >= todo.size()) return;
      std::optional<double> remaining;
      if (cfg.compute_cap_seconds) {
        remaining = *cfg.compute_cap_seconds - elapsed();
        if (*remaining <= 0.0) {
          std::lock_guard lk(mu);
          over_cap = true;
          stop = true;
          return;
        }
      }
      try {
        auto rows = run_unit(cfg, todo[i].n, todo[i].replication, remaining);
        std::lock_guard lk(mu);
        std::string chunk;
        for (const auto& r : rows) chunk += format_row(r);
        stream << chunk;
        stream.flush();
        for (auto& r : rows) all.push_back(std::move(r));
        ++finished;
        if (ro.progress) ro.progress(finished, todo.size());
      } catch (const infeasible_budget&) {
        std::lock_guard lk(mu);
        over_cap = true;
        stop = true;
      } catch (...) {
        std::lock_guard lk(mu);
        if (!failure) failure = std::current_exception();
        stop = true;
      }
    }
  };
  const unsigned nthreads = std::min<unsigned>(resolve_threads(ro.threads.value_or(cfg.threads)),
                                               std::max<std::size_t>(1, todo.size()));
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  stream.close();
  write_results_csv(out_path, all);
  if (failure) std::rethrow_exception(failure);
  if (over_cap)
    throw infeasible_budget("run_experiment: compute cap of " + std::to_string(*cfg.compute_cap_seconds) +
                            " s reached; partial results kept in " + out_path.string());
  std::sort(all.begin(), all.end(), [](const ResultRow& a, const ResultRow& b) { return a.key() < b.key(); });
  return all;
}

// ---------------------------------------------------------------------------
// slope fits and summaries

struct SlopeFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  std::size_t n_points = 0;
};

/// Ordinary least squares of log(ys) on log(xs).
inline SlopeFit loglog_slope(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw std::invalid_argument("loglog_slope: length mismatch");
  if (xs.size() < 2) throw std::invalid_argument("loglog_slope: need at least two points");
  const std::size_t k = xs.size();
  std::vector<double> lx(k), ly(k);
  for (std::size_t i = 0; i < k; ++i) {
    if (!(xs[i] > 0.0) || !(ys[i] > 0.0)) throw domain_error("loglog_slope: inputs must be positive");
    lx[i] = std::log(xs[i]);
    ly[i] = std::log(ys[i]);
  }
  const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / static_cast<double>(k);
  const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / static_cast<double>(k);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  if (!(sxx > 0.0)) throw std::invalid_argument("loglog_slope: all x values equal");
  SlopeFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r_squared = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  f.n_points = k;
  return f;
}

struct moments {
  double mean = 0.0;
  double sd = 0.0;
};

inline moments mean_sd(const std::vector<double>& v) {
  moments out;
  if (v.empty()) return out;
  out.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double s = 0.0;
    for (double x : v) s += (x - out.mean) * (x - out.mean);
    out.sd = std::sqrt(s / static_cast<double>(v.size() - 1));
  }
  return out;
}

/// Cell labels; a label left out of the grouping is empty / zero and printed as "*".
struct CellLabels {
  std::optional<std::size_t> n, p, m;
  std::optional<double> eps;
  std::optional<std::string> mechanism;
  auto operator<=>(const CellLabels&) const = default;
};

struct CellSummary {
  CellLabels labels;
  std::size_t count = 0;
  moments ged, ued, newton_gap, r;
};

struct SlopeSummary {
  std::string axis;
  std::string metric;
  CellLabels fixed;  // labels held constant along the axis
  SlopeFit fit;
};

struct Summary {
  std::vector<CellSummary> cells;
  std::vector<SlopeSummary> slopes;
};

inline const std::vector<std::string>& label_names() {
  static const std::vector<std::string> names{"n", "p", "m", "eps", "mechanism"};
  return names;
}

inline CellLabels labels_of(const ResultRow& r, const std::set<std::string>& keep) {
  CellLabels l;
  if (keep.count("n")) l.n = r.n;
  if (keep.count("p")) l.p = r.p;
  if (keep.count("m")) l.m = r.m;
  if (keep.count("eps")) l.eps = r.eps;
  if (keep.count("mechanism")) l.mechanism = r.mechanism;
  return l;
}

inline std::optional<double> axis_value(const CellLabels& l, const std::string& axis) {
  if (axis == "n" && l.n) return static_cast<double>(*l.n);
  if (axis == "p" && l.p) return static_cast<double>(*l.p);
  if (axis == "m" && l.m) return static_cast<double>(*l.m);
  if (axis == "eps" && l.eps) return *l.eps;
  return std::nullopt;
}

/// Per-cell mean/SD/count, plus log-log slopes of the mean GED and UED along
/// each requested axis. Along n or p both of those labels vary together.
inline Summary summarize(const std::vector<ResultRow>& rows,
                         std::vector<std::string> group_by = {},
                         const std::vector<std::string>& axes = {}) {
  if (group_by.empty()) group_by = label_names();
  std::set<std::string> keep;
  for (const auto& g : group_by) {
    if (std::find(label_names().begin(), label_names().end(), g) == label_names().end())
      throw schema_error("summarize: unknown grouping label " + g);
    keep.insert(g);
  }
  struct acc {
    std::vector<double> ged, ued, gap, r;
  };
  std::map<CellLabels, acc> cells;
  for (const auto& row : rows) {
    auto& a = cells[labels_of(row, keep)];
    a.ged.push_back(row.ged_value);
    a.ued.push_back(row.ued_value);
    a.gap.push_back(row.newton_gap);
    a.r.push_back(row.r);
  }
  Summary s;
  for (const auto& [labels, a] : cells)
    s.cells.push_back({labels, a.ged.size(), mean_sd(a.ged), mean_sd(a.ued), mean_sd(a.gap), mean_sd(a.r)});

  for (const auto& axis : axes) {
    if (!keep.count(axis)) throw schema_error("summarize: slope axis " + axis + " is not a grouping label");
    for (const std::string metric : {"ged", "ued"}) {
      std::map<CellLabels, std::vector<std::pair<double, double>>> lines;
      for (const auto& c : s.cells) {
        CellLabels fixed = c.labels;
        if (axis == "n" || axis == "p") {
          fixed.n.reset();
          fixed.p.reset();
        } else if (axis == "m") {
          fixed.m.reset();
        } else if (axis == "eps") {
          fixed.eps.reset();
        }
        const double y = metric == "ged" ? c.ged.mean : c.ued.mean;
        lines[fixed].emplace_back(*axis_value(c.labels, axis), y);
      }
      for (auto& [fixed, pts] : lines) {
        std::sort(pts.begin(), pts.end());
        if (pts.size() < 2) continue;
        std::vector<double> xs, ys;
        bool positive = true;
        for (auto [x, y] : pts) {
          xs.push_back(x);
          ys.push_back(y);
          positive = positive && x > 0.0 && y > 0.0;
        }
        if (!positive) continue;
        s.slopes.push_back({axis, metric, fixed, loglog_slope(xs, ys)});
      }
    }
  }
  return s;
}

inline std::string label_text(const std::optional<std::size_t>& v) { return v ? std::to_string(*v) : "*"; }
inline std::string label_text(const std::optional<double>& v) { return v ? io::format_double(*v) : "*"; }
inline std::string label_text(const std::optional<std::string>& v) { return v ? *v : "*"; }

inline void write_summary_csv(const Summary& s, std::ostream& os) {
  using io::format_double;
  os << io::csv_schema_line << '\n';
  os << "n,p,m,eps,mechanism,count,ged_mean,ged_sd,ued_mean,ued_sd,newton_gap_mean,newton_gap_sd,r_mean,r_sd\n";
  for (const auto& c : s.cells) {
    const auto& l = c.labels;
    os << label_text(l.n) << ',' << label_text(l.p) << ',' << label_text(l.m) << ',' << label_text(l.eps) << ','
       << label_text(l.mechanism) << ',' << c.count << ',' << format_double(c.ged.mean) << ','
       << format_double(c.ged.sd) << ',' << format_double(c.ued.mean) << ',' << format_double(c.ued.sd) << ','
       << format_double(c.newton_gap.mean) << ',' << format_double(c.newton_gap.sd) << ','
       << format_double(c.r.mean) << ',' << format_double(c.r.sd) << '\n';
  }
}

inline void write_slopes_csv(const Summary& s, std::ostream& os) {
  using io::format_double;
  os << io::csv_schema_line << '\n';
  os << "axis,metric,n,p,m,eps,mechanism,slope,intercept,r_squared,n_points\n";
  for (const auto& sl : s.slopes) {
    const auto& l = sl.fixed;
    os << sl.axis << ',' << sl.metric << ',' << label_text(l.n) << ',' << label_text(l.p) << ','
       << label_text(l.m) << ',' << label_text(l.eps) << ',' << label_text(l.mechanism) << ','
       << format_double(sl.fit.slope) << ',' << format_double(sl.fit.intercept) << ','
       << format_double(sl.fit.r_squared) << ',' << sl.fit.n_points << '\n';
  }
}

/// File-level summarize: writes `out` and `<out stem>_slopes.csv` next to it.
inline Summary summarize_file(const std::filesystem::path& in, const std::filesystem::path& out,
                              const std::vector<std::string>& group_by = {},
                              const std::vector<std::string>& axes = {}) {
  const Summary s = summarize(read_results_csv(in), group_by, axes);
  {
    std::ofstream os(out);
    if (!os) throw io_error("cannot open " + out.string());
    write_summary_csv(s, os);
  }
  auto slopes_path = out;
  slopes_path.replace_filename(out.stem().string() + "_slopes.csv");
  std::ofstream os(slopes_path);
  if (!os) throw io_error("cannot open " + slopes_path.string());
  write_slopes_csv(s, os);
  return s;
}

/// Mean of a metric in the summary cell matching the given labels.
inline std::optional<double> find_mean(const Summary& s, const CellLabels& labels, std::string_view metric) {
  for (const auto& c : s.cells)
    if (c.labels == labels) {
      if (metric == "ged") return c.ged.mean;
      if (metric == "ued") return c.ued.mean;
      if (metric == "newton_gap") return c.newton_gap.mean;
      if (metric == "r") return c.r.mean;
    }
  return std::nullopt;
}

}  // namespace unlearn
