// Copyright 2026 The ciarsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "ciar/interval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ciar/rng.hpp"

namespace ciar {

void LogitIntervalVec::validate(std::optional<double> radius_max) const {
  if (center.size() != radius.size()) {
    throw std::invalid_argument("LogitIntervalVec: center and radius lengths differ");
  }
  for (Eigen::Index i = 0; i < center.size(); ++i) {
    if (!std::isfinite(center[i]) || !std::isfinite(radius[i])) {
      throw std::invalid_argument("LogitIntervalVec: non-finite entry at " + std::to_string(i));
    }
    if (radius[i] < 0.0) {
      throw std::invalid_argument("LogitIntervalVec: negative radius at " + std::to_string(i));
    }
    if (radius_max && radius[i] > *radius_max) {
      throw std::invalid_argument("LogitIntervalVec: radius above clamp at " + std::to_string(i));
    }
  }
}

std::string ProbIntervalVec::violation(double tol) const {
  std::ostringstream os;
  if (lower.size() != upper.size()) return "lower/upper lengths differ";
  double sum_l = 0.0;
  double sum_u = 0.0;
  for (Eigen::Index i = 0; i < lower.size(); ++i) {
    const double lo = lower[i];
    const double up = upper[i];
    if (!std::isfinite(lo) || !std::isfinite(up)) {
      os << "non-finite bound at " << i;
      return os.str();
    }
    if (lo < 0.0 || lo > up || up > 1.0) {
      os << "bounds out of order at " << i << ": lower=" << lo << " upper=" << up;
      return os.str();
    }
    sum_l += lo;
    sum_u += up;
  }
  if (sum_l > 1.0 + tol) {
    os << "sum(lower)=" << sum_l << " exceeds 1";
    return os.str();
  }
  if (sum_u < 1.0 - tol) {
    os << "sum(upper)=" << sum_u << " below 1";
    return os.str();
  }
  return {};
}

ProbIntervalVec inter_fuse_raw(const LogitIntervalVec& intervals, const FuseConfig& cfg) {
  intervals.validate();
  const Eigen::Index n = intervals.center.size();
  if (n < 2) throw std::invalid_argument("inter_fuse: vocabulary size must be at least 2");

  const Vec radius = intervals.radius.cwiseMin(cfg.radius_clamp_max);
  const Eigen::Index top = static_cast<Eigen::Index>(argmax(intervals.center));
  const double shift = intervals.center[top];
  const Vec e = (intervals.center.array() - shift).exp().matrix();

  // sum over j != top, accumulated without the dominant term so that the
  // "rest" mass of the top token does not suffer cancellation.
  double rest_of_top = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    if (j != top) rest_of_top += e[j];
  }
  const double total = e[top] + rest_of_top;

  ProbIntervalVec out{Vec(n), Vec(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const double rest = (i == top) ? rest_of_top : std::max(total - e[i], 0.0);
    const double lo = e[i] * std::exp(-radius[i]);
    const double up = e[i] * std::exp(radius[i]);
    out.lower[i] = lo / (rest + lo);
    out.upper[i] = up / (rest + up);
  }
  return out;
}

ProbIntervalVec inter_fuse(const LogitIntervalVec& intervals, const FuseConfig& cfg) {
  ProbIntervalVec p = inter_fuse_raw(intervals, cfg);

  const double sum_l = p.lower.sum();
  const double sum_u = p.upper.sum();
  if (sum_l > 0.0) p.lower *= std::min(1.0, cfg.lower_target / sum_l);
  if (sum_u > 0.0) p.upper *= std::max(1.0, cfg.upper_target / sum_u);
  p.upper = p.upper.cwiseMin(1.0);

  if (auto why = p.violation(); !why.empty()) {
    throw InternalError("inter_fuse produced an invalid interval: " + why);
  }
  return p;
}

Vec widths(const ProbIntervalVec& p) { return (p.upper - p.lower).cwiseMax(0.0); }

UncertaintyBreakdown uncertainty_from_widths(const Vec& delta) {
  UncertaintyBreakdown u;
  const auto n = static_cast<double>(delta.size());
  if (delta.size() == 0) return u;
  u.omega = delta.sum();
  u.mean_width = u.omega / n;
  // Constant widths give exactly zero spread; the two-pass formula could
  // leave rounding residue.
  if (delta.maxCoeff() != delta.minCoeff()) {
    u.sigma = std::sqrt((delta.array() - u.mean_width).square().sum() / n);
  }
  u.score = u.omega * u.sigma;
  if (u.mean_width > 0.0) u.cv = u.sigma / u.mean_width;
  return u;
}

UncertaintyBreakdown uncertainty_score(const ProbIntervalVec& p) {
  return uncertainty_from_widths(widths(p));
}

std::vector<Vec> feasible_polytope_sample(const ProbIntervalVec& p, std::size_t count,
                                          std::uint64_t seed) {
  const Eigen::Index n = p.lower.size();
  const Vec cap = (p.upper - p.lower).cwiseMax(0.0);
  const double base = p.lower.sum();
  const double cap_total = cap.sum();
  if (base > 1.0 + 1e-9 || base + cap_total < 1.0 - 1e-9) {
    throw InternalError("feasible_polytope_sample: empty polytope");
  }

  Rng rng = make_rng({seed, 0x706f6c79ULL});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  std::vector<Vec> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    std::shuffle(order.begin(), order.end(), rng);
    Vec q = p.lower;
    double remaining = std::clamp(1.0 - base, 0.0, cap_total);
    double cap_after = cap_total;
    for (Eigen::Index idx : order) {
      cap_after -= cap[idx];
      const double hi = std::min(remaining, cap[idx]);
      const double lo = std::clamp(remaining - std::max(cap_after, 0.0), 0.0, hi);
      const double give = lo + (hi - lo) * unit(rng);
      q[idx] += give;
      remaining -= give;
    }
    out.push_back(std::move(q));
  }
  return out;
}

namespace {

void check_same_length(std::span<const Vec> dists, const char* who) {
  if (dists.empty()) throw std::invalid_argument(std::string(who) + ": no distributions");
  for (const Vec& d : dists) {
    if (d.size() != dists.front().size()) {
      throw std::invalid_argument(std::string(who) + ": mismatched lengths");
    }
  }
}

}  // namespace

Vec ensemble_average(std::span<const Vec> dists) {
  check_same_length(dists, "ensemble_average");
  Vec acc = Vec::Zero(dists.front().size());
  for (const Vec& d : dists) acc += d;
  return acc / static_cast<double>(dists.size());
}

std::size_t majority_vote(std::span<const Vec> dists) {
  check_same_length(dists, "majority_vote");
  std::vector<std::size_t> votes(static_cast<std::size_t>(dists.front().size()), 0);
  for (const Vec& d : dists) ++votes[argmax(d)];
  return static_cast<std::size_t>(std::max_element(votes.begin(), votes.end()) - votes.begin());
}

std::size_t argmax(const Vec& v) {
  if (v.size() == 0) throw std::invalid_argument("argmax of empty vector");
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return static_cast<std::size_t>(best);
}

Vec softmax(const Vec& logits) {
  const double m = logits.maxCoeff();
  Vec e = (logits.array() - m).exp().matrix();
  return e / e.sum();
}

double kl_divergence(const Vec& p, const Vec& q, double eps) {
  if (p.size() != q.size()) throw std::invalid_argument("kl_divergence: mismatched lengths");
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) kl += p[i] * (std::log(p[i] + eps) - std::log(q[i] + eps));
  }
  return kl;
}

}  // namespace ciar
