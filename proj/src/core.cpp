#include "compatkit/core.hpp"

#include <algorithm>

namespace compat {

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Usage:
    case ErrorKind::InvalidConfig:
      return 1;
    case ErrorKind::NumericalBreakdown:
    case ErrorKind::SolverFailure:
      return 3;
    case ErrorKind::ConditionFails:
      return 4;
    default:
      return 2;
  }
}

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Usage: return "Usage";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::NonFiniteInput: return "NonFiniteInput";
    case ErrorKind::ZeroVarianceColumn: return "ZeroVarianceColumn";
    case ErrorKind::NotStandardized: return "NotStandardized";
    case ErrorKind::NotSymmetric: return "NotSymmetric";
    case ErrorKind::NotPsd: return "NotPsd";
    case ErrorKind::InvalidActiveSet: return "InvalidActiveSet";
    case ErrorKind::InvalidSignPattern: return "InvalidSignPattern";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::InvalidDelta: return "InvalidDelta";
    case ErrorKind::InvalidS: return "InvalidS";
    case ErrorKind::Parse: return "Parse";
    case ErrorKind::Io: return "Io";
    case ErrorKind::DegenerateFold: return "DegenerateFold";
    case ErrorKind::DegreesOfFreedomExhausted: return "DegreesOfFreedomExhausted";
    case ErrorKind::EmptySignal: return "EmptySignal";
    case ErrorKind::PrefixTooSmall: return "PrefixTooSmall";
    case ErrorKind::ActiveSetTooLarge: return "ActiveSetTooLarge";
    case ErrorKind::NumericalBreakdown: return "NumericalBreakdown";
    case ErrorKind::SolverFailure: return "SolverFailure";
    case ErrorKind::ConditionFails: return "ConditionFails";
  }
  return "Unknown";
}

const char* to_string(CompatStatus s) {
  switch (s) {
    case CompatStatus::Optimal: return "Optimal";
    case CompatStatus::TimeLimitFeasible: return "TimeLimitFeasible";
    case CompatStatus::ZeroDetected: return "ZeroDetected";
    case CompatStatus::Infeasible: return "Infeasible";
  }
  return "Unknown";
}

ActiveSet::ActiveSet(std::vector<Index> indices, Index p)
    : indices_(std::move(indices)), p_(p) {
  if (p_ < 1) throw Error(ErrorKind::InvalidActiveSet, "p must be positive");
  if (indices_.empty())
    throw Error(ErrorKind::InvalidActiveSet, "active set must be nonempty");
  if (static_cast<Index>(indices_.size()) > p_)
    throw Error(ErrorKind::InvalidActiveSet, "active set larger than p");
  for (std::size_t k = 0; k < indices_.size(); ++k) {
    if (indices_[k] < 0 || indices_[k] >= p_)
      throw Error(ErrorKind::InvalidActiveSet,
                  "active index " + std::to_string(indices_[k]) +
                      " out of range for p = " + std::to_string(p_));
    if (k > 0 && indices_[k] <= indices_[k - 1])
      throw Error(ErrorKind::InvalidActiveSet,
                  "active indices must be strictly increasing");
  }
  complement_.reserve(static_cast<std::size_t>(p_) - indices_.size());
  std::size_t k = 0;
  for (Index j = 0; j < p_; ++j) {
    if (k < indices_.size() && indices_[k] == j)
      ++k;
    else
      complement_.push_back(j);
  }
}

ActiveSet ActiveSet::from_one_based(std::span<const long long> indices, Index p) {
  std::vector<Index> idx;
  idx.reserve(indices.size());
  for (long long i : indices) {
    if (i < 1)
      throw Error(ErrorKind::InvalidActiveSet,
                  "1-based active index must be >= 1, got " + std::to_string(i));
    idx.push_back(static_cast<Index>(i - 1));
  }
  std::sort(idx.begin(), idx.end());
  if (std::adjacent_find(idx.begin(), idx.end()) != idx.end())
    throw Error(ErrorKind::InvalidActiveSet, "duplicate active index");
  return ActiveSet(std::move(idx), p);
}

ActiveSet ActiveSet::leading(Index s, Index p) {
  std::vector<Index> idx(static_cast<std::size_t>(std::max<Index>(s, 0)));
  for (Index j = 0; j < s; ++j) idx[static_cast<std::size_t>(j)] = j;
  return ActiveSet(std::move(idx), p);
}

bool ActiveSet::contains(Index j) const {
  return std::binary_search(indices_.begin(), indices_.end(), j);
}

std::vector<long long> ActiveSet::one_based() const {
  std::vector<long long> out;
  out.reserve(indices_.size());
  for (Index j : indices_) out.push_back(static_cast<long long>(j) + 1);
  return out;
}

SignPattern::SignPattern(std::vector<int> signs) : signs_(std::move(signs)) {
  for (int z : signs_)
    if (z != 1 && z != -1)
      throw Error(ErrorKind::InvalidSignPattern, "sign entries must be +1 or -1");
}

SignPattern SignPattern::canonical(Index s, std::uint64_t k) {
  if (s < 1 || s > 63)
    throw Error(ErrorKind::InvalidSignPattern, "pattern length out of range");
  std::vector<int> z(static_cast<std::size_t>(s), 1);
  for (Index j = 1; j < s; ++j)
    if ((k >> (s - 1 - j)) & 1u) z[static_cast<std::size_t>(j)] = -1;
  return SignPattern(std::move(z));
}

SignPattern SignPattern::flipped() const {
  std::vector<int> z = signs_;
  for (int& v : z) v = -v;
  return SignPattern(std::move(z));
}

}  // namespace compat
