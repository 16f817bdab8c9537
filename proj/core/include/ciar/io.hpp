// Copyright 2026 The ciarsim Authors
// SPDX-License-Identifier: Apache-2.0

// File formats: JSON configs and exports, JSONL traces, CSV tables and the
// binary interval-head file.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "ciar/decoder.hpp"
#include "ciar/netsim.hpp"
#include "ciar/toy_models.hpp"
#include "ciar/training.hpp"

namespace ciar {

using Json = nlohmann::ordered_json;

// A config value with the wrong type or an out-of-range value. what() starts
// with the dotted field path, e.g. "decode.K: must be positive".
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(const std::string& field, const std::string& reason);
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

// Malformed JSON text; what() names the byte offset.
class JsonSyntaxError : public std::runtime_error {
 public:
  JsonSyntaxError(std::size_t byte_offset, const std::string& detail);
  std::size_t byte_offset() const { return byte_offset_; }

 private:
  std::size_t byte_offset_;
};

Json parse_json(std::string_view text);
Json read_json_file(const std::filesystem::path& path);

// Missing fields keep their defaults; unknown fields are rejected.
SceneSpec scene_from_json(const Json& j, const std::string& path = "scene");
DecodeConfig decode_from_json(const Json& j, const std::string& path = "decode");
// Either a builtin profile name or {"bandwidth_mbps": .., "rtt_ms": ..}.
NetworkProfile network_from_json(const Json& j, const std::string& path = "network");
PayloadModel payload_from_json(const Json& j, const std::string& path = "payload");
ComputeCost compute_from_json(const Json& j, const std::string& path = "compute");
InterDroConfig training_from_json(const Json& j, const std::string& path = "training");
ProbIntervalVec prob_interval_from_json(const Json& j, const std::string& path = "interval");

Json to_json(const SceneSpec& spec);
Json to_json(const DecodeConfig& cfg);
Json to_json(const NetworkProfile& profile);
Json to_json(const PayloadModel& payload);
Json to_json(const InterDroConfig& cfg);
Json to_json(const ProbIntervalVec& p);
Json to_json(const TokenGrid& grid);
Json to_json(const TraceRecord& record);

// One JSON object per line, one line per emitted position.
void write_trace_jsonl(std::ostream& os, const DecodeTrace& trace);

// Shortest round-trip decimal form; "inf" / "-inf" / "nan" for non-finite values.
std::string format_double(double x);

inline constexpr std::string_view kMetricsCsvHeader =
    "seed,policy,tau,rho,K,cloud_call_rate,episodes,steps,device_accepts";
std::string metrics_csv_row(std::uint64_t seed, std::string_view policy, const DecodeConfig& cfg,
                            const EpisodeMetrics& m);

inline constexpr std::string_view kLatencyCsvHeader =
    "seed,policy,network,device_ms,cloud_ms,comm_ms,total_ms,comm_ratio";
std::string latency_csv_row(std::uint64_t seed, std::string_view policy, std::string_view network,
                            const LatencyReport& r);

inline constexpr std::string_view kLossCsvHeader = "step,total,l_center,l_upper,l_lower,l_dro,l_kl";
std::string loss_csv_row(std::size_t step, const LossBreakdown& l);

// "CIARIH1\0", n and d as little-endian u32, then little-endian f64 arrays
// W_c (row-major), b_c, W_r, b_r.
inline constexpr std::string_view kInterHeadMagic{"CIARIH1\0", 8};
void write_inter_head(std::ostream& os, const InterHeadParams& ih);
InterHeadParams read_inter_head(std::istream& is);
void save_inter_head(const std::filesystem::path& path, const InterHeadParams& ih);
InterHeadParams load_inter_head(const std::filesystem::path& path);

}  // namespace ciar
