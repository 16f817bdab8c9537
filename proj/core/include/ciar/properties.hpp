// Copyright 2026 The ciarsim Authors
// SPDX-License-Identifier: Apache-2.0

// Randomized property checks over the interval, uncertainty and training
// maths. Each check reports the first failing input it finds.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ciar/interval.hpp"

namespace ciar {

struct PropertyResult {
  std::string name;
  bool passed = true;
  std::size_t cases = 0;
  std::string detail;  // reproducing input when failed
};

using FuseFn = std::function<ProbIntervalVec(const LogitIntervalVec&)>;

struct PropertySuiteConfig {
  std::uint64_t seed = 0;
  std::vector<std::size_t> sizes{2, 8, 64, 512, 4096};
  std::size_t fuse_cases = 10000;      // spread over `sizes`
  std::size_t theorem_cases = 1000;    // per width-vector property
  std::size_t polytopes = 10;          // random intervals with n <= 6
  std::size_t pairs_per_polytope = 1000;
  std::size_t gradient_instances = 20; // n = 5, d = 3, N = 4
};

// Random logit interval: centers ~ N(0, 3), radii ~ |N(0, 2)|.
LogitIntervalVec random_logit_interval(std::size_t n, std::uint64_t seed);

// `fuse` defaults to inter_fuse.
PropertyResult check_fuse_validity(const PropertySuiteConfig& cfg, const FuseFn& fuse = {});
PropertyResult check_fuse_monotone(const PropertySuiteConfig& cfg);
PropertyResult check_zeros(const PropertySuiteConfig& cfg);
PropertyResult check_scaling(const PropertySuiteConfig& cfg);
PropertyResult check_sigma_bound(const PropertySuiteConfig& cfg);
PropertyResult check_s2_bound(const PropertySuiteConfig& cfg);
PropertyResult check_cv_identity(const PropertySuiteConfig& cfg);
PropertyResult check_local_certainty(const PropertySuiteConfig& cfg);
PropertyResult check_polytope_diameter(const PropertySuiteConfig& cfg);
PropertyResult check_dro_weights(const PropertySuiteConfig& cfg);
PropertyResult check_loss_nonnegative(const PropertySuiteConfig& cfg);
PropertyResult check_gradient(const PropertySuiteConfig& cfg);

std::vector<PropertyResult> run_property_suite(const PropertySuiteConfig& cfg, const FuseFn& fuse = {});

}  // namespace ciar
