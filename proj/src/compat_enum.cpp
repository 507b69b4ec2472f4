#include "compatkit/compat_enum.hpp"

#include <atomic>
#include <chrono>
#include <exception>
#include <thread>

namespace compat {

qp::QpProblem<double> build_fixed_sign_qp(const FixedSignSubproblem& sub) {
  const Index p = sub.gram.p();
  const Index s = sub.active.s();
  const Index r = sub.active.r();
  if (sub.active.p() != p)
    throw Error(ErrorKind::DimensionMismatch, "active set and Gram disagree on p");
  if (sub.signs.size() != s)
    throw Error(ErrorKind::InvalidSignPattern, "sign pattern length differs from s");

  const Index m = p + r;
  const Index rows = 1 + s + 3 * r + (r > 0 ? 1 : 0);
  const double inf = qp::kInfinity;

  qp::QpProblem<double> prob;
  prob.P = Matrix<double>::Zero(m, m);
  prob.P.topLeftCorner(p, p) = 2.0 * double(s) * sub.gram.values();
  prob.q = Vector<double>::Zero(m);
  prob.l.resize(rows);
  prob.u.resize(rows);

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(2 * s + 7 * r));
  Index row = 0;
  for (Index k = 0; k < s; ++k)
    trip.emplace_back(row, sub.active.indices()[std::size_t(k)], double(sub.signs[k]));
  prob.l(row) = 1.0;
  prob.u(row) = 1.0;
  ++row;
  for (Index k = 0; k < s; ++k, ++row) {
    trip.emplace_back(row, sub.active.indices()[std::size_t(k)], double(sub.signs[k]));
    prob.l(row) = 0.0;
    prob.u(row) = inf;
  }
  for (Index k = 0; k < r; ++k) {
    const Index j = sub.active.complement()[std::size_t(k)];
    trip.emplace_back(row, j, 1.0);
    trip.emplace_back(row, p + k, -1.0);
    prob.l(row) = -inf;
    prob.u(row) = 0.0;
    ++row;
    trip.emplace_back(row, j, 1.0);
    trip.emplace_back(row, p + k, 1.0);
    prob.l(row) = 0.0;
    prob.u(row) = inf;
    ++row;
  }
  for (Index k = 0; k < r; ++k, ++row) {
    trip.emplace_back(row, p + k, 1.0);
    prob.l(row) = 0.0;
    prob.u(row) = inf;
  }
  if (r > 0) {
    for (Index k = 0; k < r; ++k) trip.emplace_back(row, p + k, 1.0);
    prob.l(row) = -inf;
    prob.u(row) = 3.0;
    ++row;
  }
  prob.A.resize(rows, m);
  prob.A.setFromTriplets(trip.begin(), trip.end());
  return prob;
}

PatternValue phi_for_pattern(const FixedSignSubproblem& sub,
                             const qp::ToleranceConfig& tol) {
  const auto prob = build_fixed_sign_qp(sub);
  const auto sol = qp::solve_qp(prob, std::nullopt, tol);
  if (sol.status != qp::QpStatus::Solved)
    throw Error(ErrorKind::SolverFailure,
                std::string("fixed-sign QP ended with status ") + qp::to_string(sol.status));
  PatternValue out;
  out.v = sol.x.head(sub.gram.p());
  out.phi_sq = std::max(0.0, compat_objective(sub.gram, sub.active.s(), out.v));
  out.status = sol.status;
  if (!check_feasible(sub.active, out.v).feasible)
    throw Error(ErrorKind::SolverFailure, "fixed-sign QP returned an infeasible point");
  return out;
}

CompatResult phi_enumerate(const GramMatrix<double>& gram, const ActiveSet& active,
                           const EnumOptions& opts) {
  const auto start = std::chrono::steady_clock::now();
  const Index s = active.s();
  if (s > opts.s_max)
    throw Error(ErrorKind::ActiveSetTooLarge,
                "s = " + std::to_string(s) + " exceeds the enumeration cap of " +
                    std::to_string(opts.s_max) + "; use the MIQP solver (phi-miqp)");
  if (active.p() != gram.p())
    throw Error(ErrorKind::DimensionMismatch, "active set and Gram disagree on p");

  const std::uint64_t patterns = std::uint64_t{1} << (s - 1);
  std::vector<double> values(patterns, std::numeric_limits<double>::infinity());
  std::vector<Vector<double>> minimizers(patterns);
  std::atomic<bool> stop{false};
  std::atomic<std::uint64_t> solved{0};

  const auto work = [&](std::uint64_t k) {
    const SignPattern z = SignPattern::canonical(s, k);
    auto pv = phi_for_pattern({gram, active, z}, opts.tol);
    values[k] = pv.phi_sq;
    minimizers[k] = std::move(pv.v);
    solved.fetch_add(1, std::memory_order_relaxed);
    if (opts.early_stop_on_zero && pv.phi_sq < kEpsilonZero) stop = true;
  };

  const int threads =
      static_cast<int>(std::clamp<std::uint64_t>(std::uint64_t(std::max(opts.threads, 1)), 1, patterns));
  if (threads == 1) {
    for (std::uint64_t k = 0; k < patterns && !stop; ++k) work(k);
  } else {
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
    {
      std::vector<std::jthread> pool;
      for (int w = 0; w < threads; ++w) {
        pool.emplace_back([&, w] {
          try {
            // Static partition: worker w owns patterns w, w + T, w + 2T, ...
            for (std::uint64_t k = std::uint64_t(w); k < patterns && !stop;
                 k += std::uint64_t(threads))
              work(k);
          } catch (...) {
            errors[std::size_t(w)] = std::current_exception();
            stop = true;
          }
        });
      }
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  // Deterministic reduction: strict < keeps the lowest pattern number on ties.
  std::uint64_t best = 0;
  for (std::uint64_t k = 1; k < patterns; ++k)
    if (values[k] < values[best]) best = k;

  CompatResult res;
  res.phi_sq = values[best];
  res.minimizer = minimizers[best];
  res.pattern = SignPattern::canonical(s, best);
  res.subproblems_solved = solved.load();
  // An early stop leaves patterns unexplored, so only the PSD floor is proven.
  res.lower_bound = res.subproblems_solved == patterns ? res.phi_sq : 0.0;
  if (res.phi_sq < kEpsilonZero) {
    res.status = CompatStatus::ZeroDetected;
    res.phi = 0.0;
  } else {
    res.status = CompatStatus::Optimal;
    res.phi = std::sqrt(res.phi_sq);
  }
  res.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

}  // namespace compat
