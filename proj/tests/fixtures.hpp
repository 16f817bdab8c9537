// Copyright 2026 The ciarsim Authors
// SPDX-License-Identifier: Apache-2.0

// Shared helpers for the unit tests.

#pragma once

#include <cstdint>

#include "ciar/toy_models.hpp"

namespace ciar::testing {

// Owns a scene and a pair of models; view() hands out the non-owning world.
class OwnedWorld {
 public:
  explicit OwnedWorld(const SceneSpec& spec, std::uint64_t model_seed = 0, std::size_t d = 32,
                      DeviceWeights weights = DeviceWeights::kIndependent)
      : spec_(spec), grid_(generate_scene(spec_)), params_(make_model_params(spec_.n, d, model_seed, weights)) {}

  OwnedWorld(const OwnedWorld&) = delete;
  OwnedWorld& operator=(const OwnedWorld&) = delete;

  ToyWorld view() const { return ToyWorld{spec_, grid_, params_}; }
  const SceneSpec& spec() const { return spec_; }
  const TokenGrid& grid() const { return grid_; }
  const ModelParams& params() const { return params_; }

 private:
  SceneSpec spec_;
  TokenGrid grid_;
  ModelParams params_;
};

// Noise-free scene whose device reuses the cloud decoder and readout.
inline SceneSpec quiet_spec(std::size_t height, std::size_t width, std::uint64_t seed = 0) {
  SceneSpec s;
  s.height = height;
  s.width = width;
  s.boundary_noise = 0.0;
  s.interior_noise = 0.0;
  s.seed = seed;
  return s;
}

inline SceneSpec seeded_spec(std::uint64_t seed) {
  SceneSpec s;
  s.seed = seed;
  return s;
}

}  // namespace ciar::testing
