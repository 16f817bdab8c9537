// Copyright 2026 The ciarsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ciar/interval.hpp"
#include "ciar/netsim.hpp"
#include "ciar/toy_models.hpp"

namespace ciar {

enum class FeatureMode { kFull, kSummary };

struct ThresholdPolicy {
  enum class Kind { kStatic, kRollingQuantile };
  Kind kind = Kind::kStatic;
  double quantile = 0.5;
  std::size_t window = 32;
};

struct DecodeConfig {
  std::size_t seq_len = 256;
  std::size_t K = 4;
  double tau = 0.3;  // +inf disables the gate
  double rho = 0.06;
  std::uint64_t seed = 0;
  ThresholdPolicy threshold_policy{};
  FeatureMode feature_mode = FeatureMode::kFull;
  FuseConfig fuse{};
  PayloadModel payload{};  // used to stamp per-record bit counts

  std::size_t prefix_len() const;
  void validate() const;
};

enum class Origin { kPrefix, kDevice, kCloudVerified, kCloudResampled };
std::string_view to_string(Origin o);

enum class GateDecision { kNone, kAccept, kDefer };
std::string_view to_string(GateDecision g);

struct TraceRecord {
  std::size_t pos = 0;
  Token token = 0;
  Origin origin = Origin::kDevice;
  std::optional<double> uncertainty;  // present whenever the device evaluated this position
  bool boundary = false;
  double uplink_bits = 0.0;
  double downlink_bits = 0.0;
  GateDecision gate = GateDecision::kNone;
  double kl_to_cloud = 0.0;  // KL(cloud || emitting model) at this position
};

// One transfer round. Verification episodes have both legs; the prefix or a
// cloud-generated segment is a downlink-only delivery.
struct CommEvent {
  std::size_t start_pos = 0;
  bool has_uplink = false;
  std::size_t uplink_tokens = 0;
  bool with_features = false;
  std::size_t downlink_tokens = 0;
};

struct DecodeTrace {
  std::vector<TraceRecord> records;
  std::vector<CommEvent> events;
  std::size_t device_steps = 0;
  std::size_t cloud_steps = 0;
};

struct EpisodeMetrics {
  std::size_t cloud_calls = 0;  // prefix tokens + verification episodes
  std::size_t episodes = 0;     // verification episodes
  std::size_t device_accepts = 0;
  double cloud_call_rate = 0.0;  // cloud-produced tokens / seq_len
  std::size_t steps = 0;         // sequential model invocations
};

struct DecodeResult {
  TokenSeq tokens;
  DecodeTrace trace;
  EpisodeMetrics metrics;
};

// Device-side state of one buffered token.
struct BufferedToken {
  Token token = 0;
  Vec hidden;
  ProbIntervalVec interval;
  double uncertainty = 0.0;
};

struct VerifyResult {
  std::size_t accepted = 0;
  std::optional<Token> resampled;  // absent when the next position is past seq_len
};

/// Greedy-match verification of a device buffer. Position context.size() + i
/// is scored by the cloud with the interval feature of buffered token i - 1
/// injected; the first buffered token sees no feature. Tokens are accepted
/// while they equal the cloud argmax; the resample is the cloud argmax at the
/// first rejected position, or after the buffer when everything matched.
VerifyResult verify_buffer(const ToyWorld& world, std::span<const Token> context,
                           std::span<const BufferedToken> buffered, FeatureMode mode);

// f^I = phi * concat(hidden, lower, upper) in full mode, or
// phi_summary * concat(hidden, omega, sigma, score, top-8 widths) in summary mode.
Vec interval_feature(const ModelParams& params, const Vec& hidden, const ProbIntervalVec& p, FeatureMode mode);

// Nearest-rank q-quantile of the last `window` scores.
double dynamic_threshold(std::span<const double> history, double q, std::size_t window);

DecodeResult run_ciar(const DecodeConfig& cfg, const ToyWorld& world, const InterHeadParams& ih);
DecodeResult run_uniform_verification(const DecodeConfig& cfg, const ToyWorld& world, const InterHeadParams& ih);
DecodeResult run_baseline_cloud(const DecodeConfig& cfg, const ToyWorld& world);
DecodeResult run_baseline_device(const DecodeConfig& cfg, const ToyWorld& world);
DecodeResult run_fixed_split(const DecodeConfig& cfg, double split, const ToyWorld& world);

EpisodeMetrics compute_metrics(const DecodeTrace& trace);

// Defer counts split by scene region type, over gate-evaluated positions.
struct RoutingStats {
  std::size_t boundary_evaluated = 0;
  std::size_t boundary_deferred = 0;
  std::size_t interior_evaluated = 0;
  std::size_t interior_deferred = 0;

  double boundary_rate() const;
  double interior_rate() const;
};
RoutingStats routing_stats(const DecodeTrace& trace);

double mean_kl_to_cloud(const DecodeTrace& trace);

}  // namespace ciar
