#pragma once

#include "compatkit/core.hpp"
#include "compatkit/qp.hpp"

#include <cstdint>
#include <limits>
#include <vector>

namespace compat {

enum class Formulation { BigM, Sos1 };
const char* to_string(Formulation f);
Formulation parse_formulation(const std::string& name);

struct BnbConfig {
  Formulation formulation = Formulation::Sos1;
  double big_m = 1.0;
  int warm_starts_k = 20;
  /// Seconds of tree search; non-positive or infinite means no limit.
  double time_limit = 60.0;
  double gap_tol = 1e-6;
  std::int64_t node_limit = 1'000'000;
  std::uint64_t seed = 0;
  qp::ToleranceConfig tol{};

  void validate() const;
};

/// Sign restriction of v_j for j ∈ S at a tree node.
enum class Branch : std::int8_t { Free, PlusOnly, MinusOnly };

struct BnbNode {
  std::vector<Branch> fixed;
  double relax_bound = 0.0;
  int depth = 0;
  std::uint64_t id = 0;
};

struct WarmStart {
  double phi_sq_inc = std::numeric_limits<double>::infinity();
  Vector<double> v_inc;
  std::optional<SignPattern> z_best;
  std::uint64_t solves = 0;
};

/// Best fixed-sign value over the given patterns (ties keep the earliest).
WarmStart warm_start_from(const GramMatrix<double>& gram, const ActiveSet& active,
                          const std::vector<SignPattern>& patterns,
                          const qp::ToleranceConfig& tol = {});

/// Draws `k` Bernoulli(½) sign vectors from `seed` and keeps the best.
WarmStart warm_start(const GramMatrix<double>& gram, const ActiveSet& active, int k,
                     std::uint64_t seed, const qp::ToleranceConfig& tol = {});

struct Relaxation {
  qp::QpSolution<double> qp;
  Vector<double> v;        ///< v_S = v⁺ - v⁻ assembled into ℝ^p
  Vector<double> v_plus;   ///< length s
  Vector<double> v_minus;  ///< length s
};

/// Continuous relaxation of the node: complementarity of (v⁺_j, v⁻_j) is
/// dropped for free j (Sos1), or b_j ∈ [0, 1] replaces b_j ∈ {0, 1} (BigM).
qp::QpProblem<double> build_relaxation(const BnbNode& node, Formulation formulation,
                                       double big_m, const GramMatrix<double>& gram,
                                       const ActiveSet& active);

Relaxation relax_node(const BnbNode& node, Formulation formulation, double big_m,
                      const GramMatrix<double>& gram, const ActiveSet& active,
                      const qp::ToleranceConfig& tol = {});

struct AnytimePoint {
  double time;
  double incumbent;
  double lower_bound;
};

struct BnbResult {
  CompatResult result;
  double warm_start_value = std::numeric_limits<double>::infinity();
  std::uint64_t nodes_expanded = 0;
  double gap = std::numeric_limits<double>::infinity();
  bool hit_time_limit = false;
  bool hit_node_limit = false;
  std::vector<AnytimePoint> trace;
};

/// Branch and bound over the sign of each active coordinate.
BnbResult phi_bnb(const GramMatrix<double>& gram, const ActiveSet& active,
                  const BnbConfig& cfg = {});

}  // namespace compat
