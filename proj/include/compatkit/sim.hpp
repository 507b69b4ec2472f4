#pragma once

#include "compatkit/compat_bnb.hpp"
#include "compatkit/compat_enum.hpp"
#include "compatkit/core.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace compat {

enum class SolverKind { EnumQP, Bnb };
const char* to_string(SolverKind k);
SolverKind parse_solver_kind(const std::string& name);

struct SolverChoice {
  SolverKind kind = SolverKind::EnumQP;
  BnbConfig bnb{};
  /// Cells with p above this use branch and bound regardless of `kind`; 0 disables.
  std::int64_t bnb_above_p = 0;
  int enum_threads = 1;
};

/// φ² on `active` with the configured solver.
CompatResult solve_compat(const GramMatrix<double>& gram, const ActiveSet& active,
                          const SolverChoice& solver);

struct SimConfig {
  std::vector<std::int64_t> n_grid;
  std::vector<std::int64_t> p_grid;
  std::vector<double> rho_grid;
  Index s = 5;
  double coef_low = 1.0;
  double coef_high = 2.0;
  double snr = 1.0;
  double delta = 0.1;
  int replications = 10;
  std::uint64_t seed = 0;
  SolverChoice solver{};
  int threads = 1;

  void validate() const;

  /// n ∈ {100, 200, 500, 1000}, p ∈ {20, 50, 200}, ρ ∈ {0, 0.4, 0.8}, s = 5, R = 10.
  static SimConfig desk();
  /// Full grid with n up to 2000 and p up to 5000; cells above p = 500 use BnB.
  static SimConfig full();
};

struct SimData {
  DesignMatrix<double> X;
  Vector<double> y;
  Vector<double> beta;
  ActiveSet support;
  double sigma_sq;
};

/// Rows of X are i.i.d. N(0, Σ_ρ) then standardized; S is uniform without
/// replacement; β_S ~ Unif(low, high); σ² = βᵀΣ_ρβ / snr; y = Xβ + ε.
SimData gen_compound_data(Index n, Index p, double rho, Index s, double coef_low,
                          double coef_high, double snr, std::uint64_t seed);

struct ExperimentRecord {
  std::int64_t n = 0;
  std::int64_t p = 0;
  double rho = 0.0;
  std::int64_t s = 0;
  std::uint64_t seed = 0;
  int replication = 0;
  double phi = 0.0;
  double phi_sq = 0.0;
  std::string status;
  double lower_bound = 0.0;
  double mse = 0.0;
  double bound = 0.0;
  double mse_scaled = 0.0;
  double bound_scaled = 0.0;
  double ratio_bound_over_mse = 0.0;
  double ratio_mse_over_bound = 0.0;
  double lambda = 0.0;
  double sigma_sq = 0.0;
  bool condition_fails = false;
  double wall_time = 0.0;
  std::string error;  ///< non-empty when the cell failed
};

/// 9 s λ² / φ², or +∞ when φ is zero.
double error_bound(Index s, double lambda, double phi);

/// Fits the lasso at the oracle penalty from the true σ and fills every
/// metric. `beta_hat` replaces the lasso fit when given.
ExperimentRecord evaluate_cell(const SimData& data, double delta, const SolverChoice& solver,
                               const std::optional<Vector<double>>& beta_hat = std::nullopt);

/// Per-cell seed: hash64(master, n, p, bits of ρ, replication).
std::uint64_t cell_seed(std::uint64_t master, std::int64_t n, std::int64_t p, double rho,
                        int replication);

std::size_t grid_size(const SimConfig& cfg);

/// Runs every (n, p, ρ, replication) cell, emitting records to `sink` in grid
/// order (n outermost, replication innermost) whatever the thread count.
/// Failures are reported in the record's error field.
void run_grid(const SimConfig& cfg, const std::function<void(const ExperimentRecord&)>& sink);

struct CurvePoint {
  std::int64_t n = 0;
  double phi = 0.0;
  double phi_sq = 0.0;
  std::string status;
  double lambda = 0.0;
  double mse = 0.0;
  double bound = 0.0;
  double ratio_bound_over_mse = 0.0;
  double ratio_mse_over_bound = 0.0;
};

/// φ_n and the error bound on the first n rows of X_full for each n in
/// `steps`, with λ_n from the supplied noise estimate.
std::vector<CurvePoint> phi_curve(const Matrix<double>& X_full, const Vector<double>& y_full,
                                  const ActiveSet& active, const std::vector<std::int64_t>& steps,
                                  double sigma_sq_hat, const Vector<double>& beta_ref,
                                  double delta, const SolverChoice& solver);

/// Shortest decimal form that round-trips, "inf" for +∞.
std::string format_real(double x);

/// Header row plus one line per record. With `timing` off the wall-time
/// column is written as 0 so repeated runs compare byte for byte.
class RecordCsvWriter {
 public:
  explicit RecordCsvWriter(std::ostream& out, bool timing = true);
  void write(const ExperimentRecord& r);

 private:
  std::ostream& out_;
  bool timing_;
};

void write_curve_csv(std::ostream& out, const std::vector<CurvePoint>& points);

}  // namespace compat
