#include "compatkit/sim.hpp"

#include "compatkit/analytic.hpp"
#include "compatkit/lasso.hpp"
#include "compatkit/rng.hpp"

#include <algorithm>
#include <atomic>
#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <limits>
#include <mutex>
#include <ostream>
#include <thread>

namespace compat {

const char* to_string(SolverKind k) { return k == SolverKind::Bnb ? "bnb" : "enum"; }

SolverKind parse_solver_kind(const std::string& name) {
  if (name == "enum" || name == "qp" || name == "enumqp") return SolverKind::EnumQP;
  if (name == "bnb" || name == "miqp") return SolverKind::Bnb;
  throw Error(ErrorKind::InvalidConfig, "unknown solver '" + name + "' (expected enum or bnb)");
}

CompatResult solve_compat(const GramMatrix<double>& gram, const ActiveSet& active,
                          const SolverChoice& solver) {
  const bool bnb = solver.kind == SolverKind::Bnb ||
                   (solver.bnb_above_p > 0 && active.p() > solver.bnb_above_p);
  if (bnb) return phi_bnb(gram, active, solver.bnb).result;
  EnumOptions opts;
  opts.threads = solver.enum_threads;
  return phi_enumerate(gram, active, opts);
}

void SimConfig::validate() const {
  if (n_grid.empty() || p_grid.empty() || rho_grid.empty())
    throw Error(ErrorKind::InvalidConfig, "n, p and rho grids must be nonempty");
  for (auto n : n_grid)
    if (n < 2) throw Error(ErrorKind::InvalidConfig, "every n must be >= 2");
  for (auto p : p_grid)
    if (p < s) throw Error(ErrorKind::InvalidConfig, "every p must be >= s");
  for (double r : rho_grid)
    if (!(r >= 0.0 && r < 1.0)) throw Error(ErrorKind::InvalidConfig, "rho must lie in [0, 1)");
  if (s < 1) throw Error(ErrorKind::InvalidS, "s must be >= 1");
  if (!(coef_low <= coef_high)) throw Error(ErrorKind::InvalidConfig, "coef_low > coef_high");
  if (!(snr > 0.0)) throw Error(ErrorKind::InvalidConfig, "snr must be positive");
  if (!(delta > 0.0 && delta <= 1.0)) throw Error(ErrorKind::InvalidDelta, "delta must lie in (0, 1]");
  if (replications < 1) throw Error(ErrorKind::InvalidConfig, "replications must be >= 1");
  if (threads < 1) throw Error(ErrorKind::InvalidConfig, "threads must be >= 1");
  solver.bnb.validate();
}

SimConfig SimConfig::desk() {
  SimConfig c;
  c.n_grid = {100, 200, 500, 1000};
  c.p_grid = {20, 50, 200};
  c.rho_grid = {0.0, 0.4, 0.8};
  return c;
}

SimConfig SimConfig::full() {
  SimConfig c;
  c.n_grid = {100, 200, 300, 400, 500, 750, 1000, 1500, 2000};
  c.p_grid = {20, 50, 100, 200, 500, 1000, 2000, 5000};
  c.rho_grid = {0.0, 0.4, 0.8};
  c.solver.bnb_above_p = 500;
  return c;
}

SimData gen_compound_data(Index n, Index p, double rho, Index s, double coef_low,
                          double coef_high, double snr, std::uint64_t seed) {
  if (n < 2 || p < 1 || s < 1 || s > p)
    throw Error(ErrorKind::InvalidConfig, "need n >= 2 and 1 <= s <= p");
  if (!(coef_low <= coef_high) || !(snr > 0.0))
    throw Error(ErrorKind::InvalidConfig, "need coef_low <= coef_high and snr > 0");
  const CompoundSymmetry<double> cs(rho, p);

  Rng rng(seed);
  auto drawn = rng.sample_without_replacement(p, s);
  std::sort(drawn.begin(), drawn.end());
  ActiveSet support(std::vector<Index>(drawn.begin(), drawn.end()), p);
  Vector<double> beta = Vector<double>::Zero(p);
  for (Index j : support.indices()) beta(j) = rng.uniform(coef_low, coef_high);

  const double a = std::sqrt(1.0 - rho);
  const double b = std::sqrt(rho);
  Matrix<double> raw(n, p);
  for (Index i = 0; i < n; ++i) {
    const double shared = rng.normal();
    for (Index j = 0; j < p; ++j) raw(i, j) = a * rng.normal() + b * shared;
  }
  auto X = standardize(raw);
  const double sigma_sq = quad_form_decomposition(cs, beta).total() / snr;
  const double sigma = std::sqrt(sigma_sq);
  Vector<double> y = X.values() * beta;
  for (Index i = 0; i < n; ++i) y(i) += sigma * rng.normal();
  return {std::move(X), std::move(y), std::move(beta), std::move(support), sigma_sq};
}

double error_bound(Index s, double lambda, double phi) {
  if (!(phi > 0.0)) return std::numeric_limits<double>::infinity();
  return 9.0 * double(s) * lambda * lambda / (phi * phi);
}

namespace {

void fill_ratios(double mse, double bound, double& bound_over_mse, double& mse_over_bound) {
  const double inf = std::numeric_limits<double>::infinity();
  bound_over_mse = mse > 0.0 ? bound / mse : inf;
  mse_over_bound = std::isinf(bound) ? 0.0 : mse / bound;
}

}  // namespace

ExperimentRecord evaluate_cell(const SimData& data, double delta, const SolverChoice& solver,
                               const std::optional<Vector<double>>& beta_hat) {
  const auto start = std::chrono::steady_clock::now();
  const auto& X = data.X.values();
  const Index n = X.rows();
  const Index p = X.cols();
  const Index s = data.support.s();
  if (data.y.size() != n || data.beta.size() != p)
    throw Error(ErrorKind::DimensionMismatch, "inconsistent simulation shapes");

  ExperimentRecord rec;
  rec.n = n;
  rec.p = p;
  rec.s = s;
  rec.sigma_sq = data.sigma_sq;
  rec.lambda = lambda_bound(std::sqrt(data.sigma_sq), n, p, delta);

  const Vector<double> y_c = data.y.array() - data.y.mean();
  const Vector<double> b = beta_hat ? *beta_hat : fit_lasso(X, y_c, rec.lambda).beta;
  if (b.size() != p) throw Error(ErrorKind::DimensionMismatch, "beta_hat length differs from p");
  rec.mse = (X * (b - data.beta)).squaredNorm() / double(n);

  const auto res = solve_compat(gram(data.X), data.support, solver);
  rec.phi = res.phi;
  rec.phi_sq = res.phi_sq;
  rec.status = to_string(res.status);
  rec.lower_bound = res.lower_bound;
  rec.condition_fails = res.status == CompatStatus::ZeroDetected;
  rec.bound = error_bound(s, rec.lambda, rec.condition_fails ? 0.0 : res.phi);
  const double scale = double(n) / std::log(double(p));
  rec.mse_scaled = scale * rec.mse;
  rec.bound_scaled = scale * rec.bound;
  fill_ratios(rec.mse, rec.bound, rec.ratio_bound_over_mse, rec.ratio_mse_over_bound);
  rec.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

std::uint64_t cell_seed(std::uint64_t master, std::int64_t n, std::int64_t p, double rho,
                        int replication) {
  return hash64({master, std::uint64_t(n), std::uint64_t(p), std::bit_cast<std::uint64_t>(rho),
                 std::uint64_t(replication)});
}

std::size_t grid_size(const SimConfig& cfg) {
  return cfg.n_grid.size() * cfg.p_grid.size() * cfg.rho_grid.size() *
         std::size_t(std::max(cfg.replications, 0));
}

namespace {

struct Cell {
  std::int64_t n, p;
  double rho;
  int rep;
};

ExperimentRecord run_cell(const SimConfig& cfg, const Cell& c) {
  const auto seed = cell_seed(cfg.seed, c.n, c.p, c.rho, c.rep);
  ExperimentRecord rec;
  try {
    const auto data =
        gen_compound_data(c.n, c.p, c.rho, cfg.s, cfg.coef_low, cfg.coef_high, cfg.snr, seed);
    rec = evaluate_cell(data, cfg.delta, cfg.solver);
  } catch (const std::exception& e) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    rec = ExperimentRecord{};
    rec.n = c.n;
    rec.p = c.p;
    rec.s = cfg.s;
    rec.phi = rec.phi_sq = rec.lower_bound = rec.mse = rec.bound = nan;
    rec.mse_scaled = rec.bound_scaled = rec.ratio_bound_over_mse = rec.ratio_mse_over_bound = nan;
    rec.lambda = rec.sigma_sq = nan;
    rec.status = "Failed";
    rec.error = e.what();
  }
  rec.rho = c.rho;
  rec.seed = seed;
  rec.replication = c.rep;
  return rec;
}

}  // namespace

void run_grid(const SimConfig& cfg, const std::function<void(const ExperimentRecord&)>& sink) {
  cfg.validate();
  std::vector<Cell> cells;
  cells.reserve(grid_size(cfg));
  for (auto n : cfg.n_grid)
    for (auto p : cfg.p_grid)
      for (double rho : cfg.rho_grid)
        for (int rep = 0; rep < cfg.replications; ++rep) cells.push_back({n, p, rho, rep});

  if (cfg.threads == 1) {
    for (const auto& c : cells) sink(run_cell(cfg, c));
    return;
  }

  std::vector<std::optional<ExperimentRecord>> done(cells.size());
  std::mutex mu;
  std::condition_variable ready;
  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::vector<std::jthread> pool;
  const int workers = std::min<int>(cfg.threads, int(cells.size()));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < cells.size() && !abort; i = next++) {
        auto rec = run_cell(cfg, cells[i]);
        {
          std::lock_guard lock(mu);
          done[i] = std::move(rec);
        }
        ready.notify_all();
      }
    });
  }
  // Emit strictly in grid order; later cells wait in `done` until their turn.
  try {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      std::unique_lock lock(mu);
      ready.wait(lock, [&] { return done[i].has_value(); });
      auto rec = std::move(*done[i]);
      done[i].reset();
      lock.unlock();
      sink(rec);
    }
  } catch (...) {
    abort = true;
    throw;
  }
}

std::vector<CurvePoint> phi_curve(const Matrix<double>& X_full, const Vector<double>& y_full,
                                  const ActiveSet& active, const std::vector<std::int64_t>& steps,
                                  double sigma_sq_hat, const Vector<double>& beta_ref,
                                  double delta, const SolverChoice& solver) {
  const Index rows = X_full.rows();
  const Index p = X_full.cols();
  if (y_full.size() != rows || beta_ref.size() != p || active.p() != p)
    throw Error(ErrorKind::DimensionMismatch, "inconsistent shapes for the curve");
  if (!(sigma_sq_hat >= 0.0)) throw Error(ErrorKind::InvalidConfig, "sigma_sq must be >= 0");
  const Index s = active.s();
  for (auto n : steps)
    if (n < 2 || n < s + 1 || n > rows)
      throw Error(ErrorKind::PrefixTooSmall,
                  "prefix size " + std::to_string(n) + " must satisfy max(2, s+1) <= n <= " +
                      std::to_string(rows));

  std::vector<CurvePoint> out;
  out.reserve(steps.size());
  for (auto n : steps) {
    const auto Xn = standardize(Matrix<double>(X_full.topRows(n)));
    const Vector<double> yn = y_full.head(n).array() - y_full.head(n).mean();
    const auto res = solve_compat(gram(Xn), active, solver);
    CurvePoint pt;
    pt.n = n;
    pt.phi = res.phi;
    pt.phi_sq = res.phi_sq;
    pt.status = to_string(res.status);
    pt.lambda = lambda_bound(std::sqrt(sigma_sq_hat), n, p, delta);
    const auto fit = fit_lasso(Xn.values(), yn, pt.lambda);
    pt.mse = (Xn.values() * (fit.beta - beta_ref)).squaredNorm() / double(n);
    pt.bound = error_bound(s, pt.lambda, res.status == CompatStatus::ZeroDetected ? 0.0 : res.phi);
    fill_ratios(pt.mse, pt.bound, pt.ratio_bound_over_mse, pt.ratio_mse_over_bound);
    out.push_back(std::move(pt));
  }
  return out;
}

std::string format_real(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, r.ptr);
}

namespace {

std::string csv_field(const std::string& text) {
  if (text.find_first_of(",\"\n") == std::string::npos) return text;
  std::string q = "\"";
  for (char c : text) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + '"';
}

}  // namespace

RecordCsvWriter::RecordCsvWriter(std::ostream& out, bool timing) : out_(out), timing_(timing) {
  out_ << "n,p,rho,s,seed,replication,phi,phi_sq,status,lower_bound,mse,bound,mse_scaled,"
          "bound_scaled,ratio_bound_over_mse,ratio_mse_over_bound,lambda,sigma_sq,"
          "condition_fails,wall_time,error\n";
}

void RecordCsvWriter::write(const ExperimentRecord& r) {
  const auto f = [](double x) { return format_real(x); };
  out_ << r.n << ',' << r.p << ',' << f(r.rho) << ',' << r.s << ',' << r.seed << ','
       << r.replication << ',' << f(r.phi) << ',' << f(r.phi_sq) << ',' << r.status << ','
       << f(r.lower_bound) << ',' << f(r.mse) << ',' << f(r.bound) << ',' << f(r.mse_scaled)
       << ',' << f(r.bound_scaled) << ',' << f(r.ratio_bound_over_mse) << ','
       << f(r.ratio_mse_over_bound) << ',' << f(r.lambda) << ',' << f(r.sigma_sq) << ','
       << (r.condition_fails ? 1 : 0) << ',' << f(timing_ ? r.wall_time : 0.0) << ','
       << csv_field(r.error) << '\n';
  out_.flush();
}

void write_curve_csv(std::ostream& out, const std::vector<CurvePoint>& points) {
  out << "n,phi,phi_sq,status,lambda,mse,bound,ratio_bound_over_mse,ratio_mse_over_bound\n";
  for (const auto& pt : points)
    out << pt.n << ',' << format_real(pt.phi) << ',' << format_real(pt.phi_sq) << ','
        << pt.status << ',' << format_real(pt.lambda) << ',' << format_real(pt.mse) << ','
        << format_real(pt.bound) << ',' << format_real(pt.ratio_bound_over_mse) << ','
        << format_real(pt.ratio_mse_over_bound) << '\n';
}

}  // namespace compat
