// Copyright 2026 The ciarsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace ciar {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Raised when an internal postcondition fails. Never a user error.
class InternalError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Logit-space interval [center - radius, center + radius] per vocabulary entry.
struct LogitIntervalVec {
  Vec center;
  Vec radius;

  std::size_t size() const { return static_cast<std::size_t>(center.size()); }

  // Throws std::invalid_argument on non-finite entries, negative radius or
  // shape mismatch. `radius_max` bounds the radius when given.
  void validate(std::optional<double> radius_max = std::nullopt) const;
};

// Per-token probability bounds. Plain value type: construction does not
// validate, so a deliberately broken producer can be caught by the checks.
struct ProbIntervalVec {
  Vec lower;
  Vec upper;

  std::size_t size() const { return static_cast<std::size_t>(lower.size()); }

  // Empty string when valid, otherwise a description of the first violation.
  std::string violation(double tol = 1e-9) const;
  bool is_valid(double tol = 1e-9) const { return violation(tol).empty(); }
};

struct FuseConfig {
  double lower_target = 0.99;
  double upper_target = 1.01;
  double radius_clamp_max = 10.0;
};

struct UncertaintyBreakdown {
  double omega = 0.0;       // L1 norm of the widths
  double sigma = 0.0;       // population std of the widths
  double score = 0.0;       // omega * sigma
  double mean_width = 0.0;
  std::optional<double> cv; // sigma / mean_width, absent when mean_width == 0
};

/// Converts a logit interval into a valid probability interval.
///
/// Raw bounds are the softmax of one coordinate moved to its interval end
/// while every other coordinate stays at its center. The lower bounds are
/// then scaled by min(1, lower_target / S_l), the upper bounds by
/// max(1, upper_target / S_u) and clamped to 1. Radii above
/// `cfg.radius_clamp_max` are clamped before evaluation.
ProbIntervalVec inter_fuse(const LogitIntervalVec& intervals, const FuseConfig& cfg = {});

// Raw bounds before the normalization step. Exposed for the monotonicity
// property; `inter_fuse` is the production entry point.
ProbIntervalVec inter_fuse_raw(const LogitIntervalVec& intervals, const FuseConfig& cfg = {});

Vec widths(const ProbIntervalVec& p);

UncertaintyBreakdown uncertainty_from_widths(const Vec& delta);
UncertaintyBreakdown uncertainty_score(const ProbIntervalVec& p);

// Points of {q : lower <= q <= upper, sum q = 1}. Random sequential
// allocation: coordinates are visited in a random order and each receives a
// uniform share of the remaining mass that keeps the rest feasible. Not
// uniform on the polytope; it reaches vertices, which is what the diameter
// checks need.
std::vector<Vec> feasible_polytope_sample(const ProbIntervalVec& p, std::size_t count,
                                          std::uint64_t seed);

Vec ensemble_average(std::span<const Vec> dists);

// Plurality of per-distribution argmaxes; lowest index wins ties.
std::size_t majority_vote(std::span<const Vec> dists);

// Lowest index among maximal entries.
std::size_t argmax(const Vec& v);

Vec softmax(const Vec& logits);

inline constexpr double kLogEpsilon = 1e-12;

// KL(p || q) = sum p_i ln((p_i + eps) / (q_i + eps)); zero-probability terms of p vanish.
double kl_divergence(const Vec& p, const Vec& q, double eps = kLogEpsilon);

}  // namespace ciar
