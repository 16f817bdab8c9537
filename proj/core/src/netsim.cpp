// Copyright 2026 The ciarsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "ciar/netsim.hpp"

#include <cmath>
#include <stdexcept>

#include "ciar/decoder.hpp"

namespace ciar {

namespace {

bool finite_nonneg(double x) { return std::isfinite(x) && x >= 0.0; }

}  // namespace

void NetworkProfile::validate() const {
  if (!(bandwidth_mbps > 0.0) || !std::isfinite(bandwidth_mbps)) {
    throw std::invalid_argument("network.bandwidth_mbps must be positive");
  }
  if (!finite_nonneg(rtt_ms)) throw std::invalid_argument("network.rtt_ms must be nonnegative");
}

void PayloadModel::validate() const {
  if (!finite_nonneg(bits_per_token_up) || !finite_nonneg(bits_per_token_down) ||
      !finite_nonneg(bits_per_feature) || !finite_nonneg(bits_fixed_per_call)) {
    throw std::invalid_argument("payload fields must be finite and nonnegative");
  }
}

void ComputeCost::validate() const {
  if (!finite_nonneg(device_ms_per_step) || !finite_nonneg(cloud_ms_per_step)) {
    throw std::invalid_argument("compute costs must be finite and nonnegative");
  }
}

double t_comm(const NetworkProfile& profile, double data_bits) {
  profile.validate();
  if (!(data_bits >= 0.0)) throw std::invalid_argument("t_comm: data size must be nonnegative");
  return profile.rtt_ms + 1000.0 * (data_bits / (profile.bandwidth_mbps * 1e6));
}

const std::map<std::string, NetworkProfile>& builtin_profiles() {
  static const std::map<std::string, NetworkProfile> profiles{
      {"5G", NetworkProfile{300.0, 10.0}},
      {"4G", NetworkProfile{20.0, 50.0}},
      {"WiFi", NetworkProfile{100.0, 20.0}},
  };
  return profiles;
}

NetworkProfile profile_by_name(const std::string& name) {
  const auto& all = builtin_profiles();
  if (auto it = all.find(name); it != all.end()) return it->second;
  throw std::invalid_argument("unknown network profile '" + name + "'");
}

double uplink_bits(const PayloadModel& payload, std::size_t tokens, bool with_features) {
  const double per_token = payload.bits_per_token_up + (with_features ? payload.bits_per_feature : 0.0);
  return payload.bits_fixed_per_call + static_cast<double>(tokens) * per_token;
}

double downlink_bits(const PayloadModel& payload, std::size_t tokens) {
  return payload.bits_fixed_per_call + static_cast<double>(tokens) * payload.bits_per_token_down;
}

LatencyReport episode_latency(const DecodeTrace& trace, const NetworkProfile& profile,
                              const PayloadModel& payload, const ComputeCost& compute) {
  profile.validate();
  payload.validate();
  compute.validate();
  LatencyReport r;
  for (const CommEvent& ev : trace.events) {
    if (ev.has_uplink) r.comm_up_ms += t_comm(profile, uplink_bits(payload, ev.uplink_tokens, ev.with_features));
    r.comm_down_ms += t_comm(profile, downlink_bits(payload, ev.downlink_tokens));
  }
  r.device_ms = static_cast<double>(trace.device_steps) * compute.device_ms_per_step;
  r.cloud_ms = static_cast<double>(trace.cloud_steps) * compute.cloud_ms_per_step;
  r.total_ms = r.device_ms + r.cloud_ms + r.comm_up_ms + r.comm_down_ms;
  r.comm_ratio = r.total_ms > 0.0 ? r.comm_ms() / r.total_ms : 0.0;
  return r;
}

}  // namespace ciar
