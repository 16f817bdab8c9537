// Copyright 2026 The ciarsim Authors
// SPDX-License-Identifier: Apache-2.0

// Seeded synthetic stand-ins for the cloud model, the device model, the
// codebook and the interval head. Logits are anchored on a ground-truth token
// grid; homogeneous regions are easy to predict and region borders are noisy.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "ciar/interval.hpp"

namespace ciar {

using Token = std::int32_t;
using TokenSeq = std::vector<Token>;

struct SceneSpec {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t n = 64;  // vocabulary size
  std::size_t num_regions = 5;
  double boundary_noise = 2.0;
  double interior_noise = 0.1;
  double temperature = 0.25;
  std::uint64_t seed = 0;

  std::size_t seq_len() const { return height * width; }
  void validate() const;
};

struct TokenGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Token> tokens;          // row-major, raster order
  std::vector<std::int32_t> region;   // region id per cell
  std::vector<bool> boundary_mask;    // adjacent (8-connectivity) to another region

  std::size_t size() const { return tokens.size(); }
  Token at(std::size_t pos) const { return tokens.at(pos); }
  bool boundary(std::size_t pos) const { return boundary_mask.at(pos); }
};

// Linear interval head: center = W_c h + b_c, radius = softplus(W_r h + b_r).
struct InterHeadParams {
  Mat w_center;  // n x d
  Vec b_center;  // n
  Mat w_radius;  // n x d
  Vec b_radius;  // n

  std::size_t n() const { return static_cast<std::size_t>(w_center.rows()); }
  std::size_t d() const { return static_cast<std::size_t>(w_center.cols()); }
  void validate() const;
};

struct ModelParams {
  std::size_t n = 0;
  std::size_t d = 0;
  std::uint64_t seed = 0;
  Mat embed_table;     // n x d codebook
  Mat w_dec_cloud;     // d x d
  Mat w_dec_device;    // d x d
  Mat readout_cloud;   // n x d
  Mat readout_device;  // n x d
  Mat phi;             // d x (d + 2n), full interval-feature projection
  Mat phi_summary;     // d x (d + 11), summary interval-feature projection

  void validate() const;
};

enum class DeviceWeights {
  kIndependent,  // device has its own decoder and readout
  kShared,       // device reuses the cloud decoder and readout
};

// Context-mixing weight applied to the decoder readout inside both models.
inline constexpr double kContextMixWeight = 0.1;
// Number of trailing context tokens averaged into the decoder input.
inline constexpr std::size_t kContextWindow = 4;
// Scale of the seeded per-position offset added to the device hidden state.
inline constexpr double kPositionalOffsetScale = 0.05;

ModelParams make_model_params(std::size_t n, std::size_t d, std::uint64_t seed,
                              DeviceWeights weights = DeviceWeights::kIndependent);

TokenGrid generate_scene(const SceneSpec& spec);

// Everything a decoding episode reads; non-owning.
struct ToyWorld {
  const SceneSpec& spec;
  const TokenGrid& grid;
  const ModelParams& params;

  std::size_t seq_len() const { return grid.size(); }
};

// Seeded Gaussian noise for (scene seed, pos, stream); stream 0 is the cloud
// noise and stream 1 the extra device perturbation.
Vec scene_noise(const SceneSpec& spec, std::size_t pos, std::uint64_t stream, double scale);

// Mean embedding of the last min(kContextWindow, len) tokens; zero when empty.
Vec context_mean(const ModelParams& params, std::span<const Token> context);

Vec cloud_logits(const ToyWorld& world, std::span<const Token> context, std::size_t pos,
                 const std::optional<Vec>& interval_feature = std::nullopt);

Vec device_logits(const ToyWorld& world, std::span<const Token> context, std::size_t pos);

// tanh(W_dec_device * context_mean) plus the seeded positional offset.
Vec device_hidden(const ModelParams& params, std::span<const Token> context, std::size_t pos);

// One device forward pass: its logits and the final hidden state fed to the
// interval head. The final state is device_hidden plus the expected codebook
// embedding under the device's own predictive distribution, so the head sees
// what the device believes about the current token.
struct DeviceStep {
  Vec logits;
  Vec hidden;
};
DeviceStep device_step(const ToyWorld& world, std::span<const Token> context, std::size_t pos);

LogitIntervalVec inter_head_forward(const InterHeadParams& ih, const Vec& hidden,
                                    double radius_clamp_max = FuseConfig{}.radius_clamp_max);

Vec embed(const ModelParams& params, Token token);

struct DecoderOutput {
  Vec hidden;
  Vec logits;
};
// hidden = tanh(W_dec_cloud (embedding + interval_feature)), logits = readout_cloud hidden.
DecoderOutput cloud_decoder_step(const ModelParams& params, const Vec& token_embedding,
                                 const std::optional<Vec>& interval_feature = std::nullopt);

double softplus(double x);
double softplus_inverse(double y);
double sigmoid(double x);

// Fixed, untrained head: center = gain * codebook * hidden, radius from a
// small seeded projection around `base_radius`.
struct AnalyticHeadConfig {
  double gain = 20.0;
  double base_radius = 2.0;
  double radius_spread = 0.5;
  std::uint64_t seed = 0;
};
InterHeadParams analytic_inter_head(const ModelParams& params, const AnalyticHeadConfig& cfg = {});

// Small random head used as a training starting point.
InterHeadParams random_inter_head(std::size_t n, std::size_t d, std::uint64_t seed,
                                  double scale = 0.01, double init_radius = 0.5);

}  // namespace ciar
