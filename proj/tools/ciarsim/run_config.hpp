// Copyright 2026 The ciarsim Authors
// SPDX-License-Identifier: Apache-2.0

// The single JSON run configuration shared by every subcommand.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ciar/decoder.hpp"
#include "ciar/io.hpp"
#include "ciar/netsim.hpp"
#include "ciar/toy_models.hpp"
#include "ciar/training.hpp"

namespace ciar::cli {

enum class Policy { kCiar, kUniform, kBaseCloud, kBaseDevice };
std::string_view policy_name(Policy p);

struct ModelSpec {
  std::size_t d = 32;
  std::uint64_t seed = 0;
  DeviceWeights weights = DeviceWeights::kIndependent;
};

struct HeadSpec {
  enum class Kind { kAnalytic, kRandom, kFile };
  Kind kind = Kind::kAnalytic;
  AnalyticHeadConfig analytic{};
  std::uint64_t random_seed = 0;
  std::filesystem::path path;
};

struct SweepGrid {
  std::vector<double> tau;
  std::vector<double> rho;
  std::vector<std::size_t> K;
  std::vector<std::uint64_t> seeds;
  Policy policy = Policy::kCiar;
};

struct TrainSpec {
  InterDroConfig config{};
  std::size_t pairs = 4096;
  std::optional<std::filesystem::path> init_head;  // random head when absent
};

struct RunConfig {
  SceneSpec scene{};
  ModelSpec models{};
  HeadSpec head{};
  DecodeConfig decode{};
  std::string network_name = "WiFi";
  NetworkProfile network = profile_by_name("WiFi");
  PayloadModel payload{};
  ComputeCost compute{};
  std::vector<Policy> policies{Policy::kCiar, Policy::kUniform, Policy::kBaseCloud, Policy::kBaseDevice};
  std::uint64_t seed = 0;     // episode i decodes the scene seeded seed + i
  std::size_t episodes = 20;
  std::optional<TrainSpec> training;
  std::optional<SweepGrid> sweep;
  std::filesystem::path output_dir = "ciarsim_out";

  std::vector<std::uint64_t> episode_seeds() const;
};

// Command-line overrides of top-level scalars.
struct Overrides {
  std::optional<double> tau;
  std::optional<double> rho;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
};

// Throws ConfigError naming the offending field.
RunConfig parse_run_config(const Json& j, const Overrides& overrides = {});
// Also throws JsonSyntaxError for malformed text and std::runtime_error when
// the file cannot be read.
RunConfig load_run_config(const std::filesystem::path& path, const Overrides& overrides = {});

}  // namespace ciar::cli
