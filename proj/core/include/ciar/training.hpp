// Copyright 2026 The ciarsim Authors
// SPDX-License-Identifier: Apache-2.0

// Interval-aware DRO training of the linear interval head.
//
// Per sample the head yields three softmax distributions from (c - r, c, c + r).
// Each is anchored to the cloud distribution with an L1 and a cross-entropy
// term; the center adds a KL alignment term and the lower bound adds a
// softmax-reweighted (worst-case leaning) cross-entropy over the batch.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "ciar/interval.hpp"
#include "ciar/toy_models.hpp"

namespace ciar {

struct InterDroConfig {
  double lambda_v = 1.0;
  double lambda_p = 1.0;
  double lambda_beta = 0.5;
  double alpha = 1.0;
  double learning_rate = 2.0;
  std::size_t steps = 300;
  std::size_t batch_size = 256;  // DRO group size; also the harvest chunking
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainingBatch {
  Mat hiddens;      // N x d
  Mat cloud_dists;  // N x n, rows sum to 1

  std::size_t size() const { return static_cast<std::size_t>(hiddens.rows()); }
  void validate() const;
};

struct LossBreakdown {
  double l_center = 0.0;  // anchor(mid) + l_kl
  double l_upper = 0.0;   // anchor(up)
  double l_lower = 0.0;   // anchor(lo) + l_dro
  double l_dro = 0.0;
  double l_kl = 0.0;      // lambda_beta * mean KL(cloud || mid)
  double total = 0.0;
};

struct BoundDistributions {
  Vec lower;  // softmax(c - r)
  Vec mid;    // softmax(c)
  Vec upper;  // softmax(c + r)
};

BoundDistributions bound_distributions(const InterHeadParams& ih, const Vec& hidden);

// -sum q_i ln(p_i + eps)
double cross_entropy(const Vec& q, const Vec& p);

double anchor_loss(const Vec& p, const Vec& p_cloud, double lambda_v, double lambda_p);

Vec dro_weights(const Vec& ce_losses, double alpha);
double dro_loss(const Vec& ce_losses, double alpha);

double kl_align(const Vec& p_cloud, const Vec& p_mid);

// `frozen_weights` replaces the DRO weights computed from the batch; the
// finite-difference oracle uses it to hold them at the base point.
LossBreakdown inter_dro_loss(const InterHeadParams& ih, const TrainingBatch& batch, const InterDroConfig& cfg,
                             const std::optional<Vec>& frozen_weights = std::nullopt);

// Gradient of the total loss with the DRO weights treated as constants.
struct InterHeadGradient {
  Mat w_center;
  Vec b_center;
  Mat w_radius;
  Vec b_radius;
};
InterHeadGradient analytic_gradient(const InterHeadParams& ih, const TrainingBatch& batch, const InterDroConfig& cfg);

class TrainingDiverged : public std::runtime_error {
 public:
  explicit TrainingDiverged(std::size_t step);
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

struct TrainResult {
  InterHeadParams head;
  std::vector<LossBreakdown> history;  // one entry per step, evaluated before the update
};

// Plain gradient descent. Each step takes the mean loss and gradient over all
// batches; DRO reweighting stays within a batch.
TrainResult train(const InterHeadParams& init, std::span<const TrainingBatch> dataset, const InterDroConfig& cfg);

// (device hidden state, cloud softmax) pairs collected along device-greedy
// trajectories of freshly seeded scenes that share `scene`'s shape and noise.
std::vector<TrainingBatch> harvest_training_data(const SceneSpec& scene, const ModelParams& params,
                                                 std::size_t num_pairs, std::size_t batch_size, std::uint64_t seed);

// Mean KL(cloud || mid) over every sample of the dataset.
double mean_center_kl(const InterHeadParams& ih, std::span<const TrainingBatch> dataset);

}  // namespace ciar
