#include "compatkit/cli.hpp"

#include "compatkit/analytic.hpp"
#include "compatkit/compat_bnb.hpp"
#include "compatkit/compat_enum.hpp"
#include "compatkit/io.hpp"
#include "compatkit/lasso.hpp"
#include "compatkit/rng.hpp"
#include "compatkit/sim.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/ostream_sink.h>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

namespace compat::cli {

using nlohmann::json;

namespace {

struct Context {
  std::ostream& out;
  std::ostream& err;
  std::shared_ptr<spdlog::logger> log;
  std::string started_at;
  std::vector<std::string> inputs;
};

std::shared_ptr<spdlog::logger> make_logger(std::ostream& err) {
  auto sink = std::make_shared<spdlog::sinks::ostream_sink_mt>(err);
  auto log = std::make_shared<spdlog::logger>("compatkit", sink);
  log->set_pattern("[%l] %v");
  auto level = spdlog::level::warn;
  if (const char* env = std::getenv("COMPATKIT_LOG")) {
    const std::string v = env;
    if (v == "error") level = spdlog::level::err;
    else if (v == "warn") level = spdlog::level::warn;
    else if (v == "info") level = spdlog::level::info;
    else if (v == "debug") level = spdlog::level::debug;
  }
  log->set_level(level);
  return log;
}

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return ss.str();
}

std::string one_line(std::string text) {
  for (char& c : text)
    if (c == '\n' || c == '\r') c = ' ';
  return text;
}

void put_real(json& j, const std::string& key, double x) {
  if (std::isfinite(x)) {
    j[key] = x;
  } else {
    j[key] = nullptr;
    if (std::isinf(x)) j[key + "_infinite"] = true;
  }
}

json vector_json(const Vector<double>& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

bool is_file(const std::string& path) {
  std::error_code ec;
  return !path.empty() && std::filesystem::is_regular_file(path, ec);
}

// --- config files -----------------------------------------------------------

std::string scalar_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_number_float()) return format_real(v.get<double>());
  throw Error(ErrorKind::Parse, "config values must be scalars or arrays of scalars");
}

/// Fills every option of `sub` that the command line left unset from the JSON
/// object in `path`; keys are long option names (underscores allowed).
void apply_config(CLI::App& sub, const std::string& path, Context& ctx) {
  json cfg;
  try {
    cfg = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, path + ": " + e.what());
  }
  if (!cfg.is_object()) throw Error(ErrorKind::Parse, path + ": config must be a JSON object");
  ctx.inputs.push_back(path);
  for (const auto& [key, val] : cfg.items()) {
    std::string name = key;
    for (char& c : name)
      if (c == '_') c = '-';
    if (name == "config") throw Error(ErrorKind::Usage, "config files cannot nest");
    CLI::Option* opt = sub.get_option_no_throw("--" + name);
    if (opt == nullptr)
      throw Error(ErrorKind::Usage, "unknown key '" + key + "' in " + path + " for " + sub.get_name());
    if (opt->count() > 0) continue;
    if (val.is_array()) {
      if (opt->get_items_expected_max() > 1) {
        for (const auto& e : val) opt->add_result(scalar_text(e));
      } else {
        std::string joined;
        for (const auto& e : val) joined += (joined.empty() ? "" : ",") + scalar_text(e);
        opt->add_result(joined);
      }
    } else {
      opt->add_result(scalar_text(val));
    }
    opt->run_callback();
  }
}

json resolved_options(const CLI::App& sub) {
  json j = json::object();
  for (const CLI::Option* o : sub.get_options()) {
    const std::string name = o->get_single_name();
    if (name.empty() || name == "help") continue;
    if (o->count() > 0) {
      const auto& r = o->results();
      j[name] = r.size() == 1 ? json(r.front()) : json(r);
    } else if (!o->get_default_str().empty()) {
      j[name] = o->get_default_str();
    } else {
      j[name] = nullptr;
    }
  }
  return j;
}

void write_manifest(Context& ctx, const CLI::App& sub, const std::string& out_path,
                    const json& extra) {
  json m;
  m["tool"] = "compatkit";
  m["version"] = kVersion;
  m["subcommand"] = sub.get_name();
  m["config"] = resolved_options(sub);
  if (!extra.is_null()) m["resolved"] = extra;
  m["started_at"] = ctx.started_at;
  m["finished_at"] = utc_now();
  json digests = json::object();
  for (const auto& path : ctx.inputs)
    if (is_file(path)) digests[path] = sha256_file(path);
  m["inputs"] = digests;
  m["output"] = out_path;
  std::ofstream f(out_path + ".manifest.json");
  if (!f) throw Error(ErrorKind::Io, "cannot write manifest for '" + out_path + "'");
  f << m.dump(2) << '\n';
}

void emit_json(Context& ctx, const CLI::App& sub, const std::string& out_path, const json& j) {
  if (out_path.empty() || out_path == "-") {
    ctx.out << j.dump(2) << '\n';
    return;
  }
  {
    std::ofstream f(out_path);
    if (!f) throw Error(ErrorKind::Io, "cannot write '" + out_path + "'");
    f << j.dump(2) << '\n';
  }
  write_manifest(ctx, sub, out_path, nullptr);
  ctx.log->info("wrote {}", out_path);
}

// --- shared inputs ----------------------------------------------------------

GramMatrix<double> load_gram(const std::string& gram_path, const std::string& x_path,
                             Context& ctx) {
  if (gram_path.empty() == x_path.empty())
    throw Error(ErrorKind::Usage, "give exactly one of --gram and --x");
  if (!gram_path.empty()) {
    ctx.inputs.push_back(gram_path);
    return GramMatrix<double>(read_csv_matrix(gram_path));
  }
  ctx.inputs.push_back(x_path);
  return gram(standardize(read_csv_matrix(x_path)));
}

ActiveSet load_active(const std::string& spec, Index p, Context& ctx) {
  if (spec.empty()) throw Error(ErrorKind::Usage, "--active is required");
  if (is_file(spec)) ctx.inputs.push_back(spec);
  return parse_active_set(spec, p);
}

json compat_json(const CompatResult& r, const ActiveSet& a, bool timing) {
  json j;
  j["p"] = a.p();
  j["s"] = a.s();
  j["active"] = a.one_based();
  put_real(j, "phi_sq", r.phi_sq);
  put_real(j, "phi", r.phi);
  j["status"] = to_string(r.status);
  put_real(j, "lower_bound", r.lower_bound);
  j["epsilon_zero"] = kEpsilonZero;
  j["condition_holds"] = r.status != CompatStatus::ZeroDetected;
  j["subproblems_solved"] = r.subproblems_solved;
  j["wall_time"] = timing ? r.wall_time : 0.0;
  j["minimizer"] = vector_json(r.minimizer);
  j["pattern"] = r.pattern ? json(r.pattern->signs()) : json(nullptr);
  return j;
}

void check_zero(const CompatResult& r, bool fail_on_zero) {
  if (fail_on_zero && r.status == CompatStatus::ZeroDetected)
    throw Error(ErrorKind::ConditionFails,
                "compatibility condition fails: phi^2 below " + format_real(kEpsilonZero));
}

qp::ToleranceConfig qp_tolerances(double eps, Context& ctx) {
  qp::ToleranceConfig tol;
  tol.eps_abs = tol.eps_rel = eps;
  if (ctx.log->should_log(spdlog::level::debug)) tol.trace = &ctx.err;
  return tol;
}

void add_input_options(CLI::App* sub, std::string& gram_path, std::string& x_path,
                       std::string& active) {
  sub->add_option("--gram", gram_path, "Gram matrix CSV (p x p), used as given");
  sub->add_option("--x", x_path, "design CSV (n x p), standardized before forming the Gram");
  sub->add_option("--active", active,
                  "1-based active set: 1,4,7 or a JSON array, or a file holding either");
}

// --- selftest -----------------------------------------------------------------

SelftestCheck check(const std::string& name, const std::function<std::string(bool&)>& body) {
  SelftestCheck c{name, false, ""};
  try {
    c.detail = body(c.pass);
  } catch (const std::exception& e) {
    c.pass = false;
    c.detail = std::string("exception: ") + e.what();
  }
  return c;
}

}  // namespace

std::vector<SelftestCheck> run_selftest() {
  std::vector<SelftestCheck> checks;
  checks.push_back(check("identity Gram gives phi^2 = 1", [](bool& ok) {
    const GramMatrix<double> g(Matrix<double>::Identity(10, 10));
    const auto r = phi_enumerate(g, ActiveSet({0, 3, 7}, 10));
    ok = std::abs(r.phi_sq - 1.0) <= 1e-5;
    return "phi^2 = " + format_real(r.phi_sq);
  }));
  checks.push_back(check("compound symmetry, even s", [](bool& ok) {
    const CompoundSymmetry<double> cs(0.4, 20);
    const auto r = phi_enumerate(cs.gram(), ActiveSet::leading(4, 20));
    ok = std::abs(r.phi_sq - 0.6) <= 1e-4;
    return "phi^2 = " + format_real(r.phi_sq) + ", expected 0.6";
  }));
  checks.push_back(check("compound symmetry, odd s bracket", [](bool& ok) {
    const CompoundSymmetry<double> cs(0.4, 20);
    const auto b = population_phi_sq(cs, 3);
    const auto r = phi_enumerate(cs.gram(), ActiveSet::leading(3, 20));
    ok = r.phi_sq >= b.lower - 1e-6 && r.phi_sq <= b.upper() + 1e-6;
    return "phi^2 = " + format_real(r.phi_sq) + " in [" + format_real(b.lower) + ", " +
           format_real(b.upper()) + "]";
  }));
  checks.push_back(check("branch and bound matches enumeration", [](bool& ok) {
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      Rng rng(seed);
      Matrix<double> X(40, 12);
      for (Index i = 0; i < X.rows(); ++i)
        for (Index j = 0; j < X.cols(); ++j) X(i, j) = rng.normal();
      const auto g = gram(standardize(X));
      const ActiveSet a({1, 4, 6, 9, 11}, 12);
      const double ref = phi_enumerate(g, a).phi_sq;
      for (auto f : {Formulation::Sos1, Formulation::BigM}) {
        BnbConfig cfg;
        cfg.formulation = f;
        cfg.time_limit = 0.0;
        cfg.seed = seed;
        worst = std::max(worst, std::abs(phi_bnb(g, a, cfg).result.phi_sq - ref));
      }
    }
    ok = worst <= 1e-5;
    return "max |difference| = " + format_real(worst);
  }));
  checks.push_back(check("penalty formula", [](bool& ok) {
    const double l = lambda_bound(std::sqrt(1.268e-4), 1009, 475, 0.1);
    ok = std::abs(l / 3.085e-3 - 1.0) <= 1e-3;
    return "lambda = " + format_real(l) + ", expected 3.085e-3";
  }));
  checks.push_back(check("error bound identity", [](bool& ok) {
    const double sigma = 1.3, phi = 0.7, delta = 0.1;
    const std::int64_t n = 500, p = 200, s = 5;
    const double lam = lambda_bound(sigma, n, p, delta);
    const double lhs = error_bound(s, lam, phi);
    const double rhs = 72.0 * sigma * sigma * s * (1.0 + std::log(p / delta)) / (n * phi * phi);
    ok = std::abs(lhs / rhs - 1.0) <= 1e-10;
    return format_real(lhs) + " vs " + format_real(rhs);
  }));
  return checks;
}

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Context ctx{out, err, make_logger(err), utc_now(), {}};
  CLI::App app{"Compatibility constant of the lasso: exact and branch-and-bound solvers, "
               "closed-form bounds and simulation.",
               "compatkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  std::map<const CLI::App*, std::function<void()>> runners;

  // phi-qp
  struct {
    std::string gram, x, active, out, config;
    int threads = 1, s_max = 20;
    double eps = 1e-9;
    bool early_stop = false, fail_on_zero = false, deterministic = false;
  } qp_opt;
  auto* qp_cmd = app.add_subcommand("phi-qp", "exact phi by enumerating sign patterns");
  add_input_options(qp_cmd, qp_opt.gram, qp_opt.x, qp_opt.active);
  qp_cmd->add_option("--threads", qp_opt.threads, "worker threads")->capture_default_str();
  qp_cmd->add_option("--s-max", qp_opt.s_max, "largest s accepted")->capture_default_str();
  qp_cmd->add_option("--eps", qp_opt.eps, "QP absolute and relative tolerance")->capture_default_str();
  qp_cmd->add_flag("--early-stop", qp_opt.early_stop, "stop once a pattern reaches phi^2 = 0");
  qp_cmd->add_flag("--fail-on-zero", qp_opt.fail_on_zero, "exit 4 when the condition fails");
  qp_cmd->add_flag("--deterministic", qp_opt.deterministic, "write timings as 0");
  qp_cmd->add_option("--out", qp_opt.out, "result JSON (stdout when omitted)");
  qp_cmd->add_option("--config", qp_opt.config, "JSON file of option values");
  runners[qp_cmd] = [&] {
    if (!qp_opt.config.empty()) apply_config(*qp_cmd, qp_opt.config, ctx);
    const auto g = load_gram(qp_opt.gram, qp_opt.x, ctx);
    const auto a = load_active(qp_opt.active, g.p(), ctx);
    EnumOptions eo;
    eo.threads = qp_opt.threads;
    eo.s_max = qp_opt.s_max;
    eo.early_stop_on_zero = qp_opt.early_stop;
    eo.tol = qp_tolerances(qp_opt.eps, ctx);
    const auto r = phi_enumerate(g, a, eo);
    auto j = compat_json(r, a, !qp_opt.deterministic);
    j["solver"] = "enum";
    emit_json(ctx, *qp_cmd, qp_opt.out, j);
    check_zero(r, qp_opt.fail_on_zero);
  };

  // phi-miqp
  struct {
    std::string gram, x, active, out, config, formulation = "sos1";
    double big_m = 1.0, time_limit = 60.0, gap_tol = 1e-6, eps = 1e-9;
    int k = 20;
    std::int64_t node_limit = 1'000'000;
    std::uint64_t seed = 0;
    bool trace = false, fail_on_zero = false, deterministic = false;
  } mi_opt;
  auto* mi_cmd = app.add_subcommand("phi-miqp", "phi by branch and bound with warm starts");
  add_input_options(mi_cmd, mi_opt.gram, mi_opt.x, mi_opt.active);
  mi_cmd->add_option("--formulation", mi_opt.formulation, "sos1 or bigm")->capture_default_str();
  mi_cmd->add_option("--big-m", mi_opt.big_m, "M for the bigm formulation")->capture_default_str();
  mi_cmd->add_option("--K", mi_opt.k, "random warm-start sign vectors")->capture_default_str();
  mi_cmd->add_option("--time-limit", mi_opt.time_limit, "seconds of tree search, <= 0 for none")
      ->capture_default_str();
  mi_cmd->add_option("--gap-tol", mi_opt.gap_tol, "relative optimality gap")->capture_default_str();
  mi_cmd->add_option("--node-limit", mi_opt.node_limit, "maximum nodes expanded")->capture_default_str();
  mi_cmd->add_option("--eps", mi_opt.eps, "QP absolute and relative tolerance")->capture_default_str();
  auto* mi_seed = mi_cmd->add_option("--seed", mi_opt.seed, "seed for the warm-start signs");
  mi_cmd->add_flag("--trace", mi_opt.trace, "include the incumbent / lower-bound trace");
  mi_cmd->add_flag("--fail-on-zero", mi_opt.fail_on_zero, "exit 4 when the condition fails");
  mi_cmd->add_flag("--deterministic", mi_opt.deterministic, "write timings as 0");
  mi_cmd->add_option("--out", mi_opt.out, "result JSON (stdout when omitted)");
  mi_cmd->add_option("--config", mi_opt.config, "JSON file of option values");
  runners[mi_cmd] = [&] {
    if (!mi_opt.config.empty()) apply_config(*mi_cmd, mi_opt.config, ctx);
    if (mi_opt.k > 0 && mi_seed->count() == 0)
      throw Error(ErrorKind::Usage, "phi-miqp needs an explicit --seed when --K > 0");
    const auto g = load_gram(mi_opt.gram, mi_opt.x, ctx);
    const auto a = load_active(mi_opt.active, g.p(), ctx);
    BnbConfig cfg;
    cfg.formulation = parse_formulation(mi_opt.formulation);
    cfg.big_m = mi_opt.big_m;
    cfg.warm_starts_k = mi_opt.k;
    cfg.time_limit = mi_opt.time_limit;
    cfg.gap_tol = mi_opt.gap_tol;
    cfg.node_limit = mi_opt.node_limit;
    cfg.seed = mi_opt.seed;
    cfg.tol = qp_tolerances(mi_opt.eps, ctx);
    const auto r = phi_bnb(g, a, cfg);
    const bool timing = !mi_opt.deterministic;
    auto j = compat_json(r.result, a, timing);
    j["solver"] = "bnb";
    j["formulation"] = to_string(cfg.formulation);
    put_real(j, "incumbent", r.result.phi_sq);
    put_real(j, "gap", r.gap);
    j["nodes_expanded"] = r.nodes_expanded;
    put_real(j, "warm_start_value", r.warm_start_value);
    j["hit_time_limit"] = r.hit_time_limit;
    j["hit_node_limit"] = r.hit_node_limit;
    if (mi_opt.trace) {
      json t = json::array();
      for (const auto& pt : r.trace) {
        json e;
        e["time"] = timing ? pt.time : 0.0;
        put_real(e, "incumbent", pt.incumbent);
        put_real(e, "lower_bound", pt.lower_bound);
        t.push_back(e);
      }
      j["trace"] = t;
    }
    emit_json(ctx, *mi_cmd, mi_opt.out, j);
    check_zero(r.result, mi_opt.fail_on_zero);
  };

  // analytic-bound
  struct {
    double rho = 0.0;
    std::int64_t s = 0, p = 0;
    std::string out, config;
  } an_opt;
  auto* an_cmd = app.add_subcommand("analytic-bound", "closed-form phi^2 under compound symmetry");
  auto* an_rho = an_cmd->add_option("--rho", an_opt.rho, "correlation in [0, 1)");
  auto* an_s = an_cmd->add_option("--s", an_opt.s, "active set size");
  auto* an_p = an_cmd->add_option("--p", an_opt.p, "dimension");
  an_cmd->add_option("--out", an_opt.out, "result JSON (stdout when omitted)");
  an_cmd->add_option("--config", an_opt.config, "JSON file of option values");
  runners[an_cmd] = [&] {
    if (!an_opt.config.empty()) apply_config(*an_cmd, an_opt.config, ctx);
    if (an_rho->count() == 0 || an_s->count() == 0 || an_p->count() == 0)
      throw Error(ErrorKind::Usage, "analytic-bound needs --rho, --s and --p");
    const CompoundSymmetry<double> cs(an_opt.rho, an_opt.p);
    const auto b = population_phi_sq(cs, an_opt.s);
    const auto v = witness_vector(cs, an_opt.s);
    json j;
    j["rho"] = an_opt.rho;
    j["s"] = an_opt.s;
    j["p"] = an_opt.p;
    j["lower"] = b.lower;
    j["upper"] = b.upper();
    j["exact"] = b.exact() ? json(b.value) : json(nullptr);
    j["kind"] = b.exact() ? "exact" : "upper_bound";
    j["phi_lower"] = std::sqrt(b.lower);
    j["phi_upper"] = std::sqrt(b.upper());
    j["witness_objective"] = double(an_opt.s) * quad_form_decomposition(cs, v).total();
    if (!b.exact()) j["note"] = "odd s: the exact value is not known in closed form";
    emit_json(ctx, *an_cmd, an_opt.out, j);
  };

  // estimate-active-set
  struct {
    std::string x, y, out, config;
    double delta = 0.1;
    int folds = 10;
    std::uint64_t seed = 0;
  } es_opt;
  auto* es_cmd = app.add_subcommand("estimate-active-set",
                                    "CV lasso, noise estimate, theoretical penalty and support");
  es_cmd->add_option("--x", es_opt.x, "training design CSV");
  es_cmd->add_option("--y", es_opt.y, "training response CSV (one column)");
  es_cmd->add_option("--delta", es_opt.delta, "confidence parameter")->capture_default_str();
  es_cmd->add_option("--folds", es_opt.folds, "cross-validation folds")->capture_default_str();
  auto* es_seed = es_cmd->add_option("--seed", es_opt.seed, "fold assignment seed");
  es_cmd->add_option("--out", es_opt.out, "result JSON (stdout when omitted)");
  es_cmd->add_option("--config", es_opt.config, "JSON file of option values");
  runners[es_cmd] = [&] {
    if (!es_opt.config.empty()) apply_config(*es_cmd, es_opt.config, ctx);
    if (es_opt.x.empty() || es_opt.y.empty())
      throw Error(ErrorKind::Usage, "estimate-active-set needs --x and --y");
    if (es_seed->count() == 0) throw Error(ErrorKind::Usage, "estimate-active-set needs --seed");
    ctx.inputs.push_back(es_opt.x);
    ctx.inputs.push_back(es_opt.y);
    const auto X = standardize(read_csv_matrix(es_opt.x));
    const Vector<double> y_raw = read_csv_vector(es_opt.y);
    if (y_raw.size() != X.n())
      throw Error(ErrorKind::DimensionMismatch, "x and y have different row counts");
    const Vector<double> y = y_raw.array() - y_raw.mean();
    const auto est = estimate_active_set(X.values(), y, es_opt.delta, es_opt.folds, es_opt.seed);
    json j;
    j["n"] = X.n();
    j["p"] = X.p();
    j["active"] = est.s_hat.one_based();
    j["s_hat"] = est.s_hat.s();
    j["s_cv"] = est.s_cv;
    j["sigma_sq_hat"] = est.sigma_sq_hat;
    j["lambda_cv"] = est.lambda_cv;
    j["lambda_train"] = est.lambda_train;
    j["delta"] = es_opt.delta;
    j["folds"] = es_opt.folds;
    j["seed"] = es_opt.seed;
    j["beta_train"] = vector_json(est.beta_train);
    emit_json(ctx, *es_cmd, es_opt.out, j);
  };

  // simulate
  struct {
    std::string config, out, preset = "desk", solver = "enum", formulation = "sos1";
    std::vector<std::int64_t> n_grid, p_grid;
    std::vector<double> rho_grid;
    std::int64_t s = 5, bnb_above_p = 0;
    double coef_low = 1.0, coef_high = 2.0, snr = 1.0, delta = 0.1, time_limit = 60.0;
    int replications = 10, threads = 1, k = 20;
    std::uint64_t seed = 0;
    bool deterministic = false;
  } sim_opt;
  auto* sim_cmd = app.add_subcommand("simulate", "Monte Carlo grid under compound symmetry");
  sim_cmd->add_option("--preset", sim_opt.preset, "desk or full grid")->capture_default_str();
  auto* sim_n = sim_cmd->add_option("--n-grid", sim_opt.n_grid, "sample sizes")->delimiter(',');
  auto* sim_p = sim_cmd->add_option("--p-grid", sim_opt.p_grid, "dimensions")->delimiter(',');
  auto* sim_rho = sim_cmd->add_option("--rho-grid", sim_opt.rho_grid, "correlations")->delimiter(',');
  auto* sim_s = sim_cmd->add_option("--s", sim_opt.s, "active set size");
  auto* sim_lo = sim_cmd->add_option("--coef-low", sim_opt.coef_low, "lower end of Unif coefficients");
  auto* sim_hi = sim_cmd->add_option("--coef-high", sim_opt.coef_high, "upper end of Unif coefficients");
  auto* sim_snr = sim_cmd->add_option("--snr", sim_opt.snr, "signal-to-noise ratio");
  auto* sim_delta = sim_cmd->add_option("--delta", sim_opt.delta, "confidence parameter");
  auto* sim_reps = sim_cmd->add_option("--replications", sim_opt.replications, "runs per cell");
  auto* sim_seed = sim_cmd->add_option("--seed", sim_opt.seed, "master seed");
  auto* sim_solver = sim_cmd->add_option("--solver", sim_opt.solver, "enum or bnb");
  auto* sim_form = sim_cmd->add_option("--formulation", sim_opt.formulation, "bnb formulation");
  auto* sim_k = sim_cmd->add_option("--K", sim_opt.k, "bnb warm starts");
  auto* sim_tl = sim_cmd->add_option("--time-limit", sim_opt.time_limit, "bnb time limit (s)");
  auto* sim_above = sim_cmd->add_option("--bnb-above-p", sim_opt.bnb_above_p,
                                        "use bnb for cells with larger p (0 = never)");
  sim_cmd->add_option("--threads", sim_opt.threads, "cells computed concurrently")->capture_default_str();
  sim_cmd->add_flag("--deterministic", sim_opt.deterministic, "write the wall_time column as 0");
  sim_cmd->add_option("--out", sim_opt.out, "record CSV ('-' for stdout)");
  sim_cmd->add_option("--config", sim_opt.config, "JSON file of option values");
  runners[sim_cmd] = [&] {
    if (!sim_opt.config.empty()) apply_config(*sim_cmd, sim_opt.config, ctx);
    if (sim_opt.out.empty()) throw Error(ErrorKind::Usage, "simulate needs --out");
    if (sim_seed->count() == 0) throw Error(ErrorKind::Usage, "simulate needs --seed");
    SimConfig cfg;
    if (sim_opt.preset == "desk") {
      cfg = SimConfig::desk();
    } else if (sim_opt.preset == "full") {
      cfg = SimConfig::full();
    } else {
      throw Error(ErrorKind::InvalidConfig, "unknown preset '" + sim_opt.preset + "'");
    }
    if (sim_n->count()) cfg.n_grid = sim_opt.n_grid;
    if (sim_p->count()) cfg.p_grid = sim_opt.p_grid;
    if (sim_rho->count()) cfg.rho_grid = sim_opt.rho_grid;
    if (sim_s->count()) cfg.s = sim_opt.s;
    if (sim_lo->count()) cfg.coef_low = sim_opt.coef_low;
    if (sim_hi->count()) cfg.coef_high = sim_opt.coef_high;
    if (sim_snr->count()) cfg.snr = sim_opt.snr;
    if (sim_delta->count()) cfg.delta = sim_opt.delta;
    if (sim_reps->count()) cfg.replications = sim_opt.replications;
    if (sim_solver->count()) cfg.solver.kind = parse_solver_kind(sim_opt.solver);
    if (sim_form->count()) cfg.solver.bnb.formulation = parse_formulation(sim_opt.formulation);
    if (sim_k->count()) cfg.solver.bnb.warm_starts_k = sim_opt.k;
    if (sim_tl->count()) cfg.solver.bnb.time_limit = sim_opt.time_limit;
    if (sim_above->count()) cfg.solver.bnb_above_p = sim_opt.bnb_above_p;
    cfg.seed = sim_opt.seed;
    cfg.solver.bnb.seed = sim_opt.seed;
    cfg.threads = sim_opt.threads;
    cfg.validate();
    if (sim_opt.preset == "full")
      ctx.log->warn("full preset: {} cells, expect many hours of compute", grid_size(cfg));

    std::ofstream file;
    const bool to_stdout = sim_opt.out == "-";
    if (!to_stdout) {
      file.open(sim_opt.out);
      if (!file) throw Error(ErrorKind::Io, "cannot write '" + sim_opt.out + "'");
    }
    RecordCsvWriter writer(to_stdout ? ctx.out : file, !sim_opt.deterministic);
    std::size_t done = 0, failed = 0;
    const std::size_t total = grid_size(cfg);
    run_grid(cfg, [&](const ExperimentRecord& r) {
      writer.write(r);
      ++done;
      if (!r.error.empty()) {
        ++failed;
        ctx.log->warn("cell n={} p={} rho={} rep={} failed: {}", r.n, r.p, r.rho, r.replication,
                      r.error);
      }
      ctx.log->info("{}/{} records", done, total);
    });
    if (!to_stdout) {
      file.close();
      json resolved;
      resolved["n_grid"] = cfg.n_grid;
      resolved["p_grid"] = cfg.p_grid;
      resolved["rho_grid"] = cfg.rho_grid;
      resolved["s"] = cfg.s;
      resolved["coef_low"] = cfg.coef_low;
      resolved["coef_high"] = cfg.coef_high;
      resolved["snr"] = cfg.snr;
      resolved["delta"] = cfg.delta;
      resolved["replications"] = cfg.replications;
      resolved["seed"] = cfg.seed;
      resolved["solver"] = to_string(cfg.solver.kind);
      resolved["bnb_above_p"] = cfg.solver.bnb_above_p;
      resolved["formulation"] = to_string(cfg.solver.bnb.formulation);
      resolved["K"] = cfg.solver.bnb.warm_starts_k;
      resolved["time_limit"] = cfg.solver.bnb.time_limit;
      resolved["seed_rule"] = "hash64(master, n, p, bits(rho), replication)";
      write_manifest(ctx, *sim_cmd, sim_opt.out, resolved);
      json summary;
      summary["records"] = done;
      summary["failed"] = failed;
      summary["out"] = sim_opt.out;
      ctx.out << summary.dump() << '\n';
    }
  };

  // phi-curve
  struct {
    std::string x, y, active, beta, out, config, solver = "enum";
    std::vector<std::int64_t> steps;
    double sigma_sq = -1.0, delta = 0.1, time_limit = 60.0;
    int k = 20;
    std::uint64_t seed = 0;
  } cv_opt;
  auto* cv_cmd = app.add_subcommand("phi-curve", "phi_n and the error bound over growing prefixes");
  cv_cmd->add_option("--x", cv_opt.x, "design CSV");
  cv_cmd->add_option("--y", cv_opt.y, "response CSV (one column)");
  cv_cmd->add_option("--active", cv_opt.active,
                     "1-based active set, or the JSON written by estimate-active-set");
  cv_cmd->add_option("--steps", cv_opt.steps, "prefix sizes, e.g. 100,200,300")->delimiter(',');
  auto* cv_sigma = cv_cmd->add_option("--sigma-sq", cv_opt.sigma_sq, "noise variance estimate");
  cv_cmd->add_option("--beta", cv_opt.beta, "reference coefficients CSV (one column)");
  cv_cmd->add_option("--delta", cv_opt.delta, "confidence parameter")->capture_default_str();
  cv_cmd->add_option("--solver", cv_opt.solver, "enum or bnb")->capture_default_str();
  cv_cmd->add_option("--K", cv_opt.k, "bnb warm starts")->capture_default_str();
  cv_cmd->add_option("--time-limit", cv_opt.time_limit, "bnb time limit (s)")->capture_default_str();
  auto* cv_seed = cv_cmd->add_option("--seed", cv_opt.seed, "bnb warm-start seed");
  cv_cmd->add_option("--out", cv_opt.out, "curve CSV (stdout when omitted)");
  cv_cmd->add_option("--config", cv_opt.config, "JSON file of option values");
  runners[cv_cmd] = [&] {
    if (!cv_opt.config.empty()) apply_config(*cv_cmd, cv_opt.config, ctx);
    if (cv_opt.x.empty() || cv_opt.y.empty())
      throw Error(ErrorKind::Usage, "phi-curve needs --x and --y");
    ctx.inputs.push_back(cv_opt.x);
    ctx.inputs.push_back(cv_opt.y);
    const Matrix<double> X = read_csv_matrix(cv_opt.x);
    const Vector<double> y = read_csv_vector(cv_opt.y);
    if (y.size() != X.rows())
      throw Error(ErrorKind::DimensionMismatch, "x and y have different row counts");
    const auto active = load_active(cv_opt.active, X.cols(), ctx);

    json estimate;
    if (is_file(cv_opt.active)) {
      try {
        estimate = json::parse(read_text_file(cv_opt.active));
      } catch (const json::exception&) {
        estimate = nullptr;
      }
    }
    double sigma_sq = cv_opt.sigma_sq;
    if (cv_sigma->count() == 0) {
      if (!estimate.is_object() || !estimate.contains("sigma_sq_hat"))
        throw Error(ErrorKind::Usage, "phi-curve needs --sigma-sq");
      sigma_sq = estimate.at("sigma_sq_hat").get<double>();
    }
    Vector<double> beta_ref;
    if (!cv_opt.beta.empty()) {
      ctx.inputs.push_back(cv_opt.beta);
      beta_ref = read_csv_vector(cv_opt.beta);
    } else if (estimate.is_object() && estimate.contains("beta_train")) {
      const auto b = estimate.at("beta_train").get<std::vector<double>>();
      beta_ref = Eigen::Map<const Vector<double>>(b.data(), Index(b.size()));
    } else {
      throw Error(ErrorKind::Usage, "phi-curve needs --beta");
    }
    std::vector<std::int64_t> steps = cv_opt.steps;
    if (steps.empty())
      for (std::int64_t n = 100; n <= 1000 && n <= X.rows(); n += 100) steps.push_back(n);

    SolverChoice solver;
    solver.kind = parse_solver_kind(cv_opt.solver);
    if (solver.kind == SolverKind::Bnb && cv_opt.k > 0 && cv_seed->count() == 0)
      throw Error(ErrorKind::Usage, "phi-curve with the bnb solver needs --seed");
    solver.bnb.warm_starts_k = cv_opt.k;
    solver.bnb.time_limit = cv_opt.time_limit;
    solver.bnb.seed = cv_opt.seed;
    const auto points = phi_curve(X, y, active, steps, sigma_sq, beta_ref, cv_opt.delta, solver);
    if (cv_opt.out.empty() || cv_opt.out == "-") {
      write_curve_csv(ctx.out, points);
    } else {
      std::ofstream f(cv_opt.out);
      if (!f) throw Error(ErrorKind::Io, "cannot write '" + cv_opt.out + "'");
      write_curve_csv(f, points);
      f.close();
      write_manifest(ctx, *cv_cmd, cv_opt.out, nullptr);
    }
  };

  // selftest
  auto* st_cmd = app.add_subcommand("selftest", "fast correctness checks");
  runners[st_cmd] = [&] {
    const auto checks = run_selftest();
    bool all = true;
    for (const auto& c : checks) {
      ctx.out << (c.pass ? "PASS" : "FAIL") << "  " << std::left << std::setw(40) << c.name
              << c.detail << '\n';
      all = all && c.pass;
    }
    if (!all) throw Error(ErrorKind::SolverFailure, "selftest failed");
  };

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      if (e.get_exit_code() == 0) return app.exit(e, out, err);
      err << "code=" << exit_code(ErrorKind::Usage) << " msg=" << one_line(e.what()) << '\n';
      return exit_code(ErrorKind::Usage);
    }
    for (const CLI::App* sub : app.get_subcommands()) runners.at(sub)();
    return 0;
  } catch (const Error& e) {
    err << "code=" << exit_code(e.kind()) << " msg=" << one_line(e.what()) << '\n';
    return exit_code(e.kind());
  } catch (const CLI::ParseError& e) {
    err << "code=" << exit_code(ErrorKind::Usage) << " msg=" << one_line(e.what()) << '\n';
    return exit_code(ErrorKind::Usage);
  } catch (const nlohmann::json::exception& e) {
    err << "code=" << exit_code(ErrorKind::Parse) << " msg=" << one_line(e.what()) << '\n';
    return exit_code(ErrorKind::Parse);
  } catch (const std::exception& e) {
    err << "code=" << exit_code(ErrorKind::SolverFailure) << " msg=" << one_line(e.what()) << '\n';
    return exit_code(ErrorKind::SolverFailure);
  }
}

}  // namespace compat::cli
