// Copyright 2026 The ciarsim Authors
// SPDX-License-Identifier: Apache-2.0

// Communication cost model: per-transfer latency is RTT plus size over
// bandwidth, and an episode's latency is the sum of both transfer directions
// and both compute sides.

#pragma once

#include <cstddef>
#include <map>
#include <string>

namespace ciar {

struct NetworkProfile {
  double bandwidth_mbps = 1.0;
  double rtt_ms = 0.0;

  void validate() const;
};

struct PayloadModel {
  double bits_per_token_up = 32.0;
  double bits_per_token_down = 32.0;
  double bits_per_feature = 32.0 * 32.0;  // 32 bits per entry of a d = 32 feature
  double bits_fixed_per_call = 512.0;

  void validate() const;
};

struct ComputeCost {
  double device_ms_per_step = 2.0;
  double cloud_ms_per_step = 20.0;

  void validate() const;
};

struct LatencyReport {
  double device_ms = 0.0;
  double cloud_ms = 0.0;
  double comm_up_ms = 0.0;
  double comm_down_ms = 0.0;
  double total_ms = 0.0;
  double comm_ratio = 0.0;

  double comm_ms() const { return comm_up_ms + comm_down_ms; }
};

// Milliseconds to move `data_bits` over `profile`.
double t_comm(const NetworkProfile& profile, double data_bits);

// 5G, 4G and WiFi.
const std::map<std::string, NetworkProfile>& builtin_profiles();

// Throws std::invalid_argument naming the unknown profile.
NetworkProfile profile_by_name(const std::string& name);

struct DecodeTrace;

double uplink_bits(const PayloadModel& payload, std::size_t tokens, bool with_features);
double downlink_bits(const PayloadModel& payload, std::size_t tokens);

LatencyReport episode_latency(const DecodeTrace& trace, const NetworkProfile& profile,
                              const PayloadModel& payload, const ComputeCost& compute);

}  // namespace ciar
