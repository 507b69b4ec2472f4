// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include "compatkit/analytic.hpp"
#include "compatkit/cli.hpp"
#include "compatkit/compat_bnb.hpp"
#include "compatkit/compat_enum.hpp"
#include "compatkit/io.hpp"
#include "compatkit/lasso.hpp"
#include "compatkit/sim.hpp"
#include "helpers.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <unistd.h>

using namespace compat;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() / ("compatkit_accept_" + std::to_string(::getpid()));
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string at(const std::string& name) const { return (dir / name).string(); }
};

// Running tallies for the residual suite, filled by every other criterion.
struct ResidualTally {
  std::size_t minimizers = 0, bad_minimizers = 0;
  std::size_t qp_solves = 0, bad_qp = 0;
  std::size_t lasso_fits = 0, bad_lasso = 0;

  void minimizer(const ActiveSet& a, const Vector<double>& v) {
    ++minimizers;
    if (!testing::feasible(a, v, 1e-6)) ++bad_minimizers;
  }

  void qp(const qp::QpProblem<double>& prob, const qp::QpSolution<double>& sol,
          const qp::ToleranceConfig& tol) {
    ++qp_solves;
    if (sol.status != qp::QpStatus::Solved) {
      ++bad_qp;
      return;
    }
    const Vector<double> Px = prob.P * sol.x;
    const Vector<double> Aty = prob.A.transpose() * sol.y;
    const Vector<double> Ax = prob.A * sol.x;
    const double stat = (Px + prob.q + Aty).lpNorm<Eigen::Infinity>();
    const double dual_scale = std::max({Px.lpNorm<Eigen::Infinity>(),
                                        prob.q.lpNorm<Eigen::Infinity>(),
                                        Aty.lpNorm<Eigen::Infinity>()});
    double prim = 0.0, prim_scale = Ax.lpNorm<Eigen::Infinity>();
    for (Index i = 0; i < Ax.size(); ++i) {
      prim = std::max({prim, prob.l(i) - Ax(i), Ax(i) - prob.u(i)});
      if (std::isfinite(prob.l(i))) prim_scale = std::max(prim_scale, std::abs(prob.l(i)));
      if (std::isfinite(prob.u(i))) prim_scale = std::max(prim_scale, std::abs(prob.u(i)));
    }
    if (stat > tol.eps_abs + tol.eps_rel * dual_scale ||
        prim > tol.eps_abs + tol.eps_rel * prim_scale)
      ++bad_qp;
  }

  void lasso(const Matrix<double>& X, const Vector<double>& y, const LassoFit& fit,
             const LassoOptions& opts) {
    ++lasso_fits;
    const double n = double(X.rows());
    const Vector<double> grad = X.transpose() * (y - X * fit.beta) / n;
    bool ok = fit.converged;
    for (Index j = 0; j < grad.size(); ++j) {
      const double b = fit.beta(j);
      ok = ok && (b != 0.0 ? std::abs(grad(j) - fit.lambda * (b > 0 ? 1.0 : -1.0)) <= 10 * opts.tol
                           : std::abs(grad(j)) <= fit.lambda + 10 * opts.tol);
    }
    if (!ok) ++bad_lasso;
  }
};

ResidualTally tally;

json run_cli(const std::vector<std::string>& args, int& code) {
  std::vector<const char*> argv{"compatkit"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  code = cli::dispatch(int(argv.size()), argv.data(), out, err);
  if (code != 0) return json{{"error", err.str()}};
  return json::parse(out.str());
}

Vector<double> json_vector(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector<double>>(v.data(), Index(v.size()));
}

std::string active_arg(const ActiveSet& a) {
  std::string s;
  for (auto i : a.one_based()) s += (s.empty() ? "" : ",") + std::to_string(i);
  return s;
}

void fail(Outcome& o, const std::string& why) {
  if (o.pass) o.detail = why;
  o.pass = false;
}

// --- 1 -----------------------------------------------------------------------

Outcome identity_exactness(const Workspace& ws) {
  Outcome o;
  int runs = 0;
  double worst = 0.0;
  for (Index p : {5, 20, 100}) {
    const auto path = ws.at("identity_" + std::to_string(p) + ".csv");
    write_csv_matrix(path, Matrix<double>::Identity(p, p));
    for (Index s : {1, 3, 6}) {
      if (s > p) continue;
      const auto a = testing::random_active(s, p, std::uint64_t(1000 * p + s));
      int code = 0;
      const auto j = run_cli({"phi-qp", "--gram", path, "--active", active_arg(a)}, code);
      ++runs;
      if (code != 0) {
        fail(o, "phi-qp exited " + std::to_string(code));
        continue;
      }
      const double err = std::abs(j["phi_sq"].get<double>() - 1.0);
      worst = std::max(worst, err);
      if (err > 1e-5) fail(o, "p=" + std::to_string(p) + " s=" + std::to_string(s));
      tally.minimizer(a, json_vector(j["minimizer"]));
    }
  }
  if (o.pass) o.detail = std::to_string(runs) + " runs, max |phi^2 - 1| = " + format_real(worst);
  return o;
}

// --- 2, 3 --------------------------------------------------------------------

std::string compound_csv(const Workspace& ws, double rho, Index p) {
  const auto path = ws.at("cs_" + format_real(rho) + "_" + std::to_string(p) + ".csv");
  if (!fs::exists(path)) write_csv_matrix(path, compound_symmetry<double>(p, rho));
  return path;
}

Outcome compound_even(const Workspace& ws) {
  Outcome o;
  double worst = 0.0;
  for (double rho : {0.2, 0.4, 0.6, 0.8})
    for (Index s : {2, 4})
      for (Index p : {20, 100}) {
        const CompoundSymmetry<double> cs(rho, p);
        const auto a = ActiveSet::leading(s, p);
        int code = 0;
        const auto j = run_cli({"phi-qp", "--gram", compound_csv(ws, rho, p), "--active",
                                active_arg(a)},
                               code);
        if (code != 0) {
          fail(o, "phi-qp exited " + std::to_string(code));
          continue;
        }
        const double target = compat_objective(cs.gram(), s, witness_vector(cs, s));
        const Vector<double> v = json_vector(j["minimizer"]);
        const double err = std::max(std::abs(j["phi_sq"].get<double>() - (1.0 - rho)),
                                    std::abs(compat_objective(cs.gram(), s, v) - target));
        worst = std::max(worst, err);
        if (err > 1e-4) fail(o, "rho=" + format_real(rho) + " s=" + std::to_string(s));
        tally.minimizer(a, v);
      }
  if (o.pass) o.detail = "16 runs, max error " + format_real(worst);
  return o;
}

Outcome compound_odd(const Workspace& ws) {
  Outcome o;
  double witness_err = 0.0;
  for (double rho : {0.2, 0.4, 0.6, 0.8})
    for (Index s : {1, 3, 5})
      for (Index p : {20, 100}) {
        const CompoundSymmetry<double> cs(rho, p);
        const auto a = ActiveSet::leading(s, p);
        int code = 0;
        const auto j = run_cli({"phi-qp", "--gram", compound_csv(ws, rho, p), "--active",
                                active_arg(a)},
                               code);
        if (code != 0) {
          fail(o, "phi-qp exited " + std::to_string(code));
          continue;
        }
        const double lo = 1.0 - rho;
        const double hi = (1.0 - rho) * (1.0 + 1.0 / (double(s) * double(p - s)));
        const double phi_sq = j["phi_sq"].get<double>();
        if (phi_sq < lo - 1e-6 || phi_sq > hi + 1e-6)
          fail(o, "rho=" + format_real(rho) + " s=" + std::to_string(s) + " p=" +
                      std::to_string(p) + " phi^2=" + format_real(phi_sq));
        const double w = compat_objective(cs.gram(), s, witness_vector(cs, s));
        witness_err = std::max(witness_err, std::abs(w - hi));
        if (std::abs(w - hi) > 1e-12) fail(o, "witness objective off the upper end");
        tally.minimizer(a, json_vector(j["minimizer"]));
      }
  if (o.pass) o.detail = "24 runs bracketed, witness error " + format_real(witness_err);
  return o;
}

// --- 4 -----------------------------------------------------------------------

std::string bnb_equivalence_csv() {
  std::ostringstream csv;
  csv << "instance,n,p,s,enum_phi_sq,bigm_phi_sq,sos1_phi_sq\n";
  for (int k = 0; k < 50; ++k) {
    const Index n = k % 2 ? 100 : 30;
    const Index p = (k / 2) % 2 ? 30 : 10;
    const Index s = 1 + k % 6;
    const auto g = testing::random_gram(n, p, 5000 + std::uint64_t(k));
    const auto a = testing::random_active(s, p, 6000 + std::uint64_t(k));
    const auto en = phi_enumerate(g, a);
    tally.minimizer(a, en.minimizer);
    for (std::uint64_t z = 0; z < (std::uint64_t(1) << (s - 1)); ++z) {
      const auto prob = build_fixed_sign_qp({g, a, SignPattern::canonical(s, z)});
      const qp::ToleranceConfig tol;
      tally.qp(prob, qp::solve_qp(prob, std::nullopt, tol), tol);
    }
    csv << k << ',' << n << ',' << p << ',' << s << ',' << format_real(en.phi_sq);
    for (auto f : {Formulation::BigM, Formulation::Sos1}) {
      BnbConfig cfg;
      cfg.formulation = f;
      cfg.big_m = 1.0;
      cfg.time_limit = 0.0;
      cfg.gap_tol = 1e-6;
      cfg.seed = std::uint64_t(k);
      const auto bb = phi_bnb(g, a, cfg);
      tally.minimizer(a, bb.result.minimizer);
      csv << ',' << format_real(bb.result.phi_sq);
    }
    csv << '\n';
  }
  return csv.str();
}

Outcome bnb_equivalence(const std::string& csv) {
  Outcome o;
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  double worst = 0.0;
  int rows = 0;
  while (std::getline(lines, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    const double en = std::stod(f[4]);
    for (int c : {5, 6}) worst = std::max(worst, std::abs(std::stod(f[std::size_t(c)]) - en));
    ++rows;
  }
  if (rows != 50) fail(o, "expected 50 instances");
  if (worst > 1e-5) fail(o, "max |BnB - enum| = " + format_real(worst));
  if (o.pass) o.detail = "50 instances x 2 formulations, max diff " + format_real(worst);
  return o;
}

// --- 5 -----------------------------------------------------------------------

Outcome anytime_soundness() {
  Outcome o;
  int within_two = 0;
  for (int k = 0; k < 20; ++k) {
    const Index s = k % 2 ? 10 : 8;
    const auto g = testing::random_gram(80, 40, 7000 + std::uint64_t(k));
    const auto a = testing::random_active(s, 40, 8000 + std::uint64_t(k));
    const auto en = phi_enumerate(g, a);
    for (int K : {1, 20}) {
      BnbConfig cfg;
      cfg.time_limit = 1.0;
      cfg.warm_starts_k = K;
      cfg.seed = std::uint64_t(k);
      const auto bb = phi_bnb(g, a, cfg);
      tally.minimizer(a, bb.result.minimizer);
      if (bb.result.phi_sq < en.phi_sq - 1e-6) fail(o, "incumbent below the optimum");
      if (bb.result.lower_bound > en.phi_sq + 1e-6) fail(o, "lower bound above the optimum");
      if (K == 20 && std::sqrt(bb.result.phi_sq) / std::sqrt(en.phi_sq) <= 2.0) ++within_two;
    }
  }
  if (within_two < 18) fail(o, "ratio <= 2 on only " + std::to_string(within_two) + "/20");
  if (o.pass) o.detail = "sound on 40 runs, ratio <= 2 on " + std::to_string(within_two) + "/20";
  return o;
}

// --- 6, 7 --------------------------------------------------------------------

Outcome lambda_reproduction() {
  Outcome o;
  const double l = lambda_bound(std::sqrt(1.268e-4), 1009, 475, 0.1);
  const double rel = std::abs(l - 3.085e-3) / 3.085e-3;
  o.pass = rel <= 1e-3;
  o.detail = "lambda = " + format_real(l) + ", relative error " + format_real(rel);
  return o;
}

Outcome bound_identity() {
  Outcome o;
  Rng rng(77);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const double sigma = rng.uniform(0.01, 10.0);
    const Index s = 1 + Index(rng.below(50));
    const std::int64_t n = 10 + std::int64_t(rng.below(5000));
    const std::int64_t p = 2 + std::int64_t(rng.below(10000));
    const double delta = rng.uniform(1e-3, 1.0);
    const double phi = rng.uniform(1e-3, 2.0);
    const double lambda = lambda_bound(sigma, n, p, delta);
    const double lhs = error_bound(s, lambda, phi);
    const double rhs = 72.0 * sigma * sigma * double(s) * (1.0 + std::log(double(p) / delta)) /
                       (double(n) * phi * phi);
    worst = std::max(worst, std::abs(lhs - rhs) / rhs);
  }
  o.pass = worst <= 1e-10;
  o.detail = "100 tuples, max relative error " + format_real(worst);
  return o;
}

// --- 8, 9 --------------------------------------------------------------------

std::string grid_csv(const SimConfig& cfg, std::vector<ExperimentRecord>* keep = nullptr) {
  std::ostringstream os;
  RecordCsvWriter w(os, false);
  run_grid(cfg, [&](const ExperimentRecord& r) {
    w.write(r);
    if (keep) keep->push_back(r);
  });
  return os.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

Outcome desk_trends(const std::vector<ExperimentRecord>& recs, const SimConfig& cfg) {
  Outcome o;
  std::map<std::tuple<std::int64_t, std::int64_t, double>, std::vector<double>> phis;
  bool near_failure = false;
  for (const auto& r : recs) {
    if (!r.error.empty()) fail(o, "cell failed: " + r.error);
    phis[{r.n, r.p, r.rho}].push_back(r.phi);
    if (r.n == 100 && r.p == 200 && r.phi < 0.05) near_failure = true;
  }
  const auto med = [&](std::int64_t n, std::int64_t p, double rho) {
    return median(phis.at({n, p, rho}));
  };
  std::ostringstream why;
  for (double rho : cfg.rho_grid) {
    for (auto p : cfg.p_grid) {
      int bad = 0;
      for (std::size_t i = 1; i < cfg.n_grid.size(); ++i)
        bad += med(cfg.n_grid[i], p, rho) < med(cfg.n_grid[i - 1], p, rho);
      if (bad > 1) {
        fail(o, "");
        why << " n-trend p=" << p << " rho=" << rho << " violations=" << bad;
      }
    }
    for (auto n : cfg.n_grid) {
      int bad = 0;
      for (std::size_t i = 1; i < cfg.p_grid.size(); ++i)
        bad += med(n, cfg.p_grid[i], rho) > med(n, cfg.p_grid[i - 1], rho);
      if (bad > 1) {
        fail(o, "");
        why << " p-trend n=" << n << " rho=" << rho << " violations=" << bad;
      }
    }
  }
  if (!near_failure) {
    fail(o, "");
    why << " no phi < 0.05 at n=100 p=200";
  }
  o.detail = o.pass ? std::to_string(recs.size()) + " records; trends hold; near-failure seen"
                    : o.detail + why.str();
  return o;
}

SimConfig coverage_config() {
  SimConfig cfg;
  cfg.n_grid = {1000};
  cfg.p_grid = {50};
  cfg.rho_grid = {0.4};
  cfg.s = 5;
  cfg.delta = 0.1;
  cfg.replications = 50;
  cfg.seed = 20250909;
  return cfg;
}

Outcome coverage(const std::vector<ExperimentRecord>& recs, const SimConfig& cfg) {
  Outcome o;
  int covered = 0;
  for (const auto& r : recs) {
    covered += r.mse <= r.bound;
    const auto data = gen_compound_data(r.n, r.p, r.rho, cfg.s, cfg.coef_low, cfg.coef_high,
                                        cfg.snr, r.seed);
    const Vector<double> y = data.y.array() - data.y.mean();
    const LassoOptions opts;
    tally.lasso(data.X.values(), y, fit_lasso(data.X.values(), y, r.lambda, opts), opts);
  }
  const double rate = double(covered) / double(recs.size());
  o.pass = recs.size() == 50 && rate >= 0.85;
  o.detail = std::to_string(covered) + "/" + std::to_string(recs.size()) + " with MSE <= bound";
  return o;
}

// --- 10 ----------------------------------------------------------------------

Outcome residual_suite() {
  Outcome o;
  // A few lasso fits across penalties on top of those already tallied.
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto X = standardize(testing::gaussian(120, 30, seed)).values();
    Vector<double> y = X.col(0) * 2.0 - X.col(5) + testing::gaussian(120, 1, seed + 50).col(0);
    y.array() -= y.mean();
    const LassoOptions opts;
    for (double frac : {0.5, 0.1, 0.01})
      tally.lasso(X, y, fit_lasso(X, y, frac * lambda_max(X, y), opts), opts);
  }
  o.pass = tally.bad_minimizers == 0 && tally.bad_qp == 0 && tally.bad_lasso == 0 &&
           tally.qp_solves > 0 && tally.lasso_fits > 0;
  std::ostringstream d;
  d << tally.minimizers - tally.bad_minimizers << "/" << tally.minimizers << " minimizers feasible, "
    << tally.qp_solves - tally.bad_qp << "/" << tally.qp_solves << " QP solves, "
    << tally.lasso_fits - tally.bad_lasso << "/" << tally.lasso_fits << " lasso fits";
  o.detail = d.str();
  return o;
}

std::vector<std::string> sorted_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  std::sort(lines.begin(), lines.end());
  return lines;
}

}  // namespace

int main() {
  using clock = std::chrono::steady_clock;
  Workspace ws;
  std::vector<std::pair<std::string, Outcome>> results;
  const auto timed = [&](const std::string& name, auto&& f) {
    const auto t0 = clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(clock::now() - t0).count();
    o.detail += " [" + format_real(std::round(secs * 10) / 10) + " s]";
    results.emplace_back(name, o);
    std::cout << "criterion " << results.size() << ": " << (o.pass ? "PASS" : "FAIL") << "  "
              << name << "  " << o.detail << std::endl;
  };

  std::string csv4, csv8, csv9;
  std::vector<ExperimentRecord> rec8, rec9;
  const SimConfig desk = SimConfig::desk();
  SimConfig desk_cfg = desk;
  desk_cfg.seed = 20250101;
  const SimConfig cov_cfg = coverage_config();

  timed("identity Gram gives phi^2 = 1", [&] { return identity_exactness(ws); });
  timed("compound symmetry, even s: phi^2 = 1 - rho", [&] { return compound_even(ws); });
  timed("compound symmetry, odd s: bracket and witness", [&] { return compound_odd(ws); });
  timed("branch and bound equals enumeration", [&] {
    csv4 = bnb_equivalence_csv();
    return bnb_equivalence(csv4);
  });
  timed("anytime soundness under a time limit", [&] { return anytime_soundness(); });
  timed("theoretical penalty reproduction", [&] { return lambda_reproduction(); });
  timed("error bound identity", [&] { return bound_identity(); });
  timed("phi trends over the desk grid", [&] {
    csv8 = grid_csv(desk_cfg, &rec8);
    return desk_trends(rec8, desk_cfg);
  });
  timed("MSE within the bound at rate 1 - delta", [&] {
    csv9 = grid_csv(cov_cfg, &rec9);
    return coverage(rec9, cov_cfg);
  });
  timed("KKT and feasibility residuals", [&] { return residual_suite(); });
  timed("bit-identical reruns", [&] {
    Outcome o;
    if (bnb_equivalence_csv() != csv4) fail(o, "solver comparison CSV differs");
    if (grid_csv(desk_cfg) != csv8) fail(o, "desk grid CSV differs");
    if (grid_csv(cov_cfg) != csv9) fail(o, "coverage CSV differs");
    SimConfig threaded = desk_cfg;
    threaded.threads = 2;
    if (sorted_lines(grid_csv(threaded)) != sorted_lines(csv8))
      fail(o, "desk grid differs at 2 threads");
    if (o.pass) o.detail = "3 reruns identical, 2-thread desk grid identical";
    return o;
  });

  const auto passed = std::count_if(results.begin(), results.end(),
                                    [](const auto& r) { return r.second.pass; });
  std::cout << passed << "/" << results.size() << " criteria passed" << std::endl;
  return passed == std::ptrdiff_t(results.size()) ? 0 : 1;
}
