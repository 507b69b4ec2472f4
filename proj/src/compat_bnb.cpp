#include "compatkit/compat_bnb.hpp"

#include "compatkit/compat_enum.hpp"
#include "compatkit/rng.hpp"

#include <chrono>
#include <queue>

namespace compat {

const char* to_string(Formulation f) {
  return f == Formulation::BigM ? "bigm" : "sos1";
}

Formulation parse_formulation(const std::string& name) {
  if (name == "bigm" || name == "BigM" || name == "big-m") return Formulation::BigM;
  if (name == "sos1" || name == "Sos1" || name == "SOS1") return Formulation::Sos1;
  throw Error(ErrorKind::InvalidConfig, "unknown formulation '" + name + "'");
}

void BnbConfig::validate() const {
  if (!(big_m > 0.0)) throw Error(ErrorKind::InvalidConfig, "big_m must be positive");
  if (!(gap_tol >= 0.0)) throw Error(ErrorKind::InvalidConfig, "gap_tol must be >= 0");
  if (warm_starts_k < 0) throw Error(ErrorKind::InvalidConfig, "K must be >= 0");
  if (node_limit < 1) throw Error(ErrorKind::InvalidConfig, "node_limit must be >= 1");
}

WarmStart warm_start_from(const GramMatrix<double>& gram, const ActiveSet& active,
                          const std::vector<SignPattern>& patterns,
                          const qp::ToleranceConfig& tol) {
  WarmStart ws;
  for (const auto& z : patterns) {
    auto pv = phi_for_pattern({gram, active, z}, tol);
    ++ws.solves;
    if (pv.phi_sq < ws.phi_sq_inc) {
      ws.phi_sq_inc = pv.phi_sq;
      ws.v_inc = std::move(pv.v);
      ws.z_best = z;
    }
  }
  return ws;
}

WarmStart warm_start(const GramMatrix<double>& gram, const ActiveSet& active, int k,
                     std::uint64_t seed, const qp::ToleranceConfig& tol) {
  if (k < 0) throw Error(ErrorKind::InvalidConfig, "K must be >= 0");
  Rng rng(seed);
  std::vector<SignPattern> patterns;
  patterns.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i)
    patterns.emplace_back(rng.signs(static_cast<std::size_t>(active.s())));
  return warm_start_from(gram, active, patterns, tol);
}

qp::QpProblem<double> build_relaxation(const BnbNode& node, Formulation formulation,
                                       double big_m, const GramMatrix<double>& gram,
                                       const ActiveSet& active) {
  const Index s = active.s();
  const Index r = active.r();
  if (static_cast<Index>(node.fixed.size()) != s)
    throw Error(ErrorKind::DimensionMismatch, "node assignment length differs from s");
  const bool bigm = formulation == Formulation::BigM;
  const Index nv = 2 * s + r;  // variables that enter v
  const Index m = nv + r + (bigm ? s : 0);
  const double inf = qp::kInfinity;

  // Variable layout: v⁺_S | v⁻_S | v_{S^c} | u | b (BigM only).
  std::vector<Index> source(static_cast<std::size_t>(nv));
  Vector<double> coef(nv);
  for (Index a = 0; a < s; ++a) {
    source[std::size_t(a)] = source[std::size_t(s + a)] = active.indices()[std::size_t(a)];
    coef(a) = 1.0;
    coef(s + a) = -1.0;
  }
  for (Index k = 0; k < r; ++k) {
    source[std::size_t(2 * s + k)] = active.complement()[std::size_t(k)];
    coef(2 * s + k) = 1.0;
  }

  qp::QpProblem<double> prob;
  prob.P = Matrix<double>::Zero(m, m);
  prob.P.topLeftCorner(nv, nv) =
      2.0 * double(s) * coef.asDiagonal() * gram.values()(source, source) * coef.asDiagonal();
  prob.q = Vector<double>::Zero(m);

  const Index rows = 1 + 2 * s + 3 * r + (r > 0 ? 1 : 0) + (bigm ? 3 * s : 0);
  prob.l.resize(rows);
  prob.u.resize(rows);
  std::vector<Eigen::Triplet<double>> trip;
  Index row = 0;
  for (Index a = 0; a < 2 * s; ++a) trip.emplace_back(row, a, 1.0);
  prob.l(row) = prob.u(row) = 1.0;
  ++row;
  for (Index a = 0; a < s; ++a) {
    const Branch b = node.fixed[std::size_t(a)];
    // v⁺_a
    trip.emplace_back(row, a, 1.0);
    prob.l(row) = 0.0;
    prob.u(row) = (!bigm && b == Branch::MinusOnly) ? 0.0 : inf;
    ++row;
    // v⁻_a
    trip.emplace_back(row, s + a, 1.0);
    prob.l(row) = 0.0;
    prob.u(row) = (!bigm && b == Branch::PlusOnly) ? 0.0 : inf;
    ++row;
  }
  const Index u0 = nv;
  for (Index k = 0; k < r; ++k) {
    trip.emplace_back(row, 2 * s + k, 1.0);
    trip.emplace_back(row, u0 + k, -1.0);
    prob.l(row) = -inf;
    prob.u(row) = 0.0;
    ++row;
    trip.emplace_back(row, 2 * s + k, 1.0);
    trip.emplace_back(row, u0 + k, 1.0);
    prob.l(row) = 0.0;
    prob.u(row) = inf;
    ++row;
  }
  for (Index k = 0; k < r; ++k, ++row) {
    trip.emplace_back(row, u0 + k, 1.0);
    prob.l(row) = 0.0;
    prob.u(row) = inf;
  }
  if (r > 0) {
    for (Index k = 0; k < r; ++k) trip.emplace_back(row, u0 + k, 1.0);
    prob.l(row) = -inf;
    prob.u(row) = 3.0;
    ++row;
  }
  if (bigm) {
    const Index b0 = nv + r;
    for (Index a = 0; a < s; ++a) {
      const Branch b = node.fixed[std::size_t(a)];
      trip.emplace_back(row, b0 + a, 1.0);
      prob.l(row) = b == Branch::PlusOnly ? 1.0 : 0.0;
      prob.u(row) = b == Branch::MinusOnly ? 0.0 : 1.0;
      ++row;
      // v⁺_a ≤ M b_a
      trip.emplace_back(row, a, 1.0);
      trip.emplace_back(row, b0 + a, -big_m);
      prob.l(row) = -inf;
      prob.u(row) = 0.0;
      ++row;
      // v⁻_a ≤ M (1 - b_a)
      trip.emplace_back(row, s + a, 1.0);
      trip.emplace_back(row, b0 + a, big_m);
      prob.l(row) = -inf;
      prob.u(row) = big_m;
      ++row;
    }
  }
  prob.A.resize(rows, m);
  prob.A.setFromTriplets(trip.begin(), trip.end());
  return prob;
}

Relaxation relax_node(const BnbNode& node, Formulation formulation, double big_m,
                      const GramMatrix<double>& gram, const ActiveSet& active,
                      const qp::ToleranceConfig& tol) {
  const auto prob = build_relaxation(node, formulation, big_m, gram, active);
  Relaxation rel;
  rel.qp = qp::solve_qp(prob, std::nullopt, tol);
  const Index s = active.s();
  rel.v_plus = rel.qp.x.head(s);
  rel.v_minus = rel.qp.x.segment(s, s);
  rel.v = Vector<double>::Zero(active.p());
  for (Index a = 0; a < s; ++a)
    rel.v(active.indices()[std::size_t(a)]) = rel.v_plus(a) - rel.v_minus(a);
  for (Index k = 0; k < active.r(); ++k)
    rel.v(active.complement()[std::size_t(k)]) = rel.qp.x(2 * s + k);
  return rel;
}

namespace {

struct NodeOrder {
  // Best-first on the bound; ties go to the deeper node, then the older id.
  bool operator()(const BnbNode& a, const BnbNode& b) const {
    if (a.relax_bound != b.relax_bound) return a.relax_bound > b.relax_bound;
    if (a.depth != b.depth) return a.depth < b.depth;
    return a.id > b.id;
  }
};

double relative_gap(double incumbent, double lower) {
  if (!std::isfinite(incumbent)) return std::numeric_limits<double>::infinity();
  return std::max(0.0, incumbent - lower) / std::max(incumbent, 1e-12);
}

SignPattern signs_of(const Vector<double>& v, const ActiveSet& active) {
  std::vector<int> z;
  z.reserve(std::size_t(active.s()));
  for (Index j : active.indices()) z.push_back(v(j) < 0.0 ? -1 : 1);
  return SignPattern(std::move(z));
}

}  // namespace

BnbResult phi_bnb(const GramMatrix<double>& gram, const ActiveSet& active,
                  const BnbConfig& cfg) {
  cfg.validate();
  if (active.p() != gram.p())
    throw Error(ErrorKind::DimensionMismatch, "active set and Gram disagree on p");
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  const auto elapsed = [&] { return std::chrono::duration<double>(clock::now() - start).count(); };

  const Index s = active.s();
  BnbResult out;
  auto ws = warm_start(gram, active, cfg.warm_starts_k, cfg.seed, cfg.tol);
  out.warm_start_value = ws.phi_sq_inc;
  double incumbent = ws.phi_sq_inc;
  Vector<double> inc_v = ws.v_inc;
  std::optional<SignPattern> inc_z = ws.z_best;
  std::uint64_t solves = ws.solves;

  // s·vᵀΣ̂v ≥ λ_min s‖v_S‖₂² ≥ λ_min ‖v_S‖₁² = λ_min on the feasible set.
  const double floor = std::max(0.0, double(gram.min_eigenvalue()));
  double lower = std::min(floor, incumbent);
  out.trace.push_back({elapsed(), incumbent, lower});

  const auto search_start = clock::now();
  const bool limited = cfg.time_limit > 0.0 && std::isfinite(cfg.time_limit);
  const auto out_of_time = [&] {
    return limited &&
           std::chrono::duration<double>(clock::now() - search_start).count() >= cfg.time_limit;
  };
  const auto record = [&](double inc, double lb) {
    if (inc < out.trace.back().incumbent || lb > out.trace.back().lower_bound)
      out.trace.push_back({elapsed(), inc, lb});
  };

  std::priority_queue<BnbNode, std::vector<BnbNode>, NodeOrder> open;
  std::uint64_t next_id = 0;
  {
    // The objective and feasible set are invariant under v ↦ -v, so the
    // first active coordinate may be taken nonnegative.
    BnbNode root;
    root.fixed.assign(std::size_t(s), Branch::Free);
    root.fixed[0] = Branch::PlusOnly;
    root.relax_bound = floor;
    root.id = next_id++;
    open.push(std::move(root));
  }

  bool zero = false;
  while (true) {
    if (incumbent < kEpsilonZero) {
      zero = true;
      break;
    }
    if (open.empty()) {
      lower = std::max(lower, incumbent);
      break;
    }
    const double frontier = std::min(open.top().relax_bound, incumbent);
    if (frontier > lower) {
      lower = frontier;
      record(incumbent, lower);
    }
    if (relative_gap(incumbent, lower) <= cfg.gap_tol) break;
    if (out_of_time()) {
      out.hit_time_limit = true;
      break;
    }
    if (static_cast<std::int64_t>(out.nodes_expanded) >= cfg.node_limit) {
      out.hit_node_limit = true;
      break;
    }

    BnbNode node = open.top();
    open.pop();
    ++out.nodes_expanded;
    auto rel = relax_node(node, cfg.formulation, cfg.big_m, gram, active, cfg.tol);
    ++solves;
    if (rel.qp.status == qp::QpStatus::PrimalInfeasible) continue;
    if (rel.qp.status != qp::QpStatus::Solved)
      throw Error(ErrorKind::SolverFailure,
                  std::string("node relaxation ended with status ") +
                      qp::to_string(rel.qp.status));
    const double bound = std::max(node.relax_bound, rel.qp.objective);
    if (relative_gap(incumbent, bound) <= cfg.gap_tol) continue;

    Index branch_on = -1;
    double worst = 1e-9;
    for (Index a = 0; a < s; ++a) {
      if (node.fixed[std::size_t(a)] != Branch::Free) continue;
      const double overlap = std::min(rel.v_plus(a), rel.v_minus(a));
      if (overlap > worst) {
        worst = overlap;
        branch_on = a;
      }
    }
    if (branch_on < 0) {
      // No cancellation between v⁺ and v⁻: the relaxed point is feasible for
      // the original problem and optimal within this node.
      const double value = std::max(0.0, compat_objective(gram, s, rel.v));
      if (value < incumbent && check_feasible(active, rel.v).feasible) {
        incumbent = value;
        inc_v = rel.v;
        inc_z = signs_of(rel.v, active);
        record(incumbent, std::min(lower, incumbent));
      }
      continue;
    }
    for (Branch side : {Branch::PlusOnly, Branch::MinusOnly}) {
      BnbNode child;
      child.fixed = node.fixed;
      child.fixed[std::size_t(branch_on)] = side;
      child.relax_bound = bound;
      child.depth = node.depth + 1;
      child.id = next_id++;
      open.push(std::move(child));
    }
  }

  if (!std::isfinite(incumbent)) {
    // Only reachable with K = 0 and an exhausted budget before any leaf.
    auto fallback = warm_start_from(gram, active, {SignPattern::canonical(s, 0)}, cfg.tol);
    solves += fallback.solves;
    incumbent = fallback.phi_sq_inc;
    inc_v = fallback.v_inc;
    inc_z = fallback.z_best;
  }
  lower = std::min(lower, incumbent);
  if (inc_z && (*inc_z)[0] < 0) {
    inc_z = inc_z->flipped();
    inc_v = -inc_v;
  }

  auto& res = out.result;
  res.phi_sq = incumbent;
  res.minimizer = inc_v;
  res.pattern = inc_z;
  res.lower_bound = lower;
  res.subproblems_solved = solves;
  out.gap = relative_gap(incumbent, lower);
  if (zero) {
    res.status = CompatStatus::ZeroDetected;
    res.phi = 0.0;
  } else {
    res.status = (out.hit_time_limit || out.hit_node_limit) && out.gap > cfg.gap_tol
                     ? CompatStatus::TimeLimitFeasible
                     : CompatStatus::Optimal;
    res.phi = std::sqrt(std::max(incumbent, 0.0));
  }
  out.trace.push_back({elapsed(), incumbent, lower});
  res.wall_time = elapsed();
  return out;
}

}  // namespace compat
