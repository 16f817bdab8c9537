// Copyright 2026 The ciarsim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "run_config.hpp"

namespace ciar::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;        // property failure, divergence, other runtime errors
inline constexpr int kExitMalformedJson = 2;
inline constexpr int kExitInvalidConfig = 3;
inline constexpr int kExitIo = 4;

struct CommandContext {
  std::size_t jobs = 1;
  std::ostream& out;
  std::ostream& err;
};

int cmd_simulate(const RunConfig& cfg, const CommandContext& ctx);
int cmd_sweep(const RunConfig& cfg, const CommandContext& ctx);
int cmd_netsim(const RunConfig& cfg, const CommandContext& ctx);
int cmd_train(const RunConfig& cfg, const CommandContext& ctx);

struct VerifyOptions {
  std::uint64_t seed = 0;
  std::vector<std::size_t> sizes{2, 8, 64, 512, 4096};
};
int cmd_verify(const VerifyOptions& opts, const CommandContext& ctx);

// --jobs wins; otherwise the CIAR_SIM_JOBS value; otherwise hardware concurrency.
std::size_t resolve_jobs(std::optional<std::size_t> flag, const char* env_value);

// Parses the command line, runs the subcommand and maps errors to exit codes.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ciar::cli
