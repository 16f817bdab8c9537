// Copyright 2026 The ciarsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "ciar/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ciar/rng.hpp"

namespace ciar {

namespace {

void check_shapes(const InterHeadParams& ih, const TrainingBatch& batch) {
  if (static_cast<std::size_t>(batch.hiddens.cols()) != ih.d() ||
      static_cast<std::size_t>(batch.cloud_dists.cols()) != ih.n()) {
    throw std::invalid_argument("inter_dro_loss: batch shape does not match the head");
  }
}

}  // namespace

void InterDroConfig::validate() const {
  for (double v : {lambda_v, lambda_p, lambda_beta, alpha}) {
    if (!std::isfinite(v) || v < 0.0) throw std::invalid_argument("training: loss weights and alpha must be >= 0");
  }
  if (!std::isfinite(learning_rate) || learning_rate < 0.0) {
    throw std::invalid_argument("training.learning_rate must be finite and nonnegative");
  }
  if (batch_size == 0) throw std::invalid_argument("training.batch_size must be positive");
}

void TrainingBatch::validate() const {
  if (hiddens.rows() != cloud_dists.rows() || hiddens.rows() == 0) {
    throw std::invalid_argument("TrainingBatch: hiddens and cloud_dists must have the same nonzero row count");
  }
  if (!hiddens.allFinite() || !cloud_dists.allFinite()) throw std::invalid_argument("TrainingBatch: non-finite entry");
  for (Eigen::Index r = 0; r < cloud_dists.rows(); ++r) {
    if (cloud_dists.row(r).minCoeff() < 0.0 || std::abs(cloud_dists.row(r).sum() - 1.0) > 1e-9) {
      throw std::invalid_argument("TrainingBatch: row " + std::to_string(r) + " is not a distribution");
    }
  }
}

BoundDistributions bound_distributions(const InterHeadParams& ih, const Vec& hidden) {
  const LogitIntervalVec iv = inter_head_forward(ih, hidden);
  return BoundDistributions{softmax(iv.center - iv.radius), softmax(iv.center), softmax(iv.center + iv.radius)};
}

double cross_entropy(const Vec& q, const Vec& p) {
  if (q.size() != p.size()) throw std::invalid_argument("cross_entropy: mismatched lengths");
  return -(q.array() * (p.array() + kLogEpsilon).log()).sum();
}

double anchor_loss(const Vec& p, const Vec& p_cloud, double lambda_v, double lambda_p) {
  if (p.size() != p_cloud.size()) throw std::invalid_argument("anchor_loss: mismatched lengths");
  double l = 0.0;
  if (lambda_v != 0.0) l += lambda_v * (p - p_cloud).lpNorm<1>();
  if (lambda_p != 0.0) l += lambda_p * cross_entropy(p_cloud, p);
  return l;
}

Vec dro_weights(const Vec& ce_losses, double alpha) {
  if (ce_losses.size() == 0) throw std::invalid_argument("dro_weights: empty loss vector");
  if (!ce_losses.allFinite()) throw std::invalid_argument("dro_weights: non-finite loss");
  const Vec scaled = alpha * ce_losses;
  return softmax(scaled);
}

double dro_loss(const Vec& ce_losses, double alpha) { return dro_weights(ce_losses, alpha).dot(ce_losses); }

double kl_align(const Vec& p_cloud, const Vec& p_mid) { return kl_divergence(p_cloud, p_mid); }

namespace {

Mat row_softmax(const Mat& z) {
  Mat out(z.rows(), z.cols());
  for (Eigen::Index s = 0; s < z.rows(); ++s) {
    const double m = z.row(s).maxCoeff();
    out.row(s) = (z.row(s).array() - m).exp().matrix();
    out.row(s) /= out.row(s).sum();
  }
  return out;
}

// Row-wise softmax backward: dL/dz = p * (g - <p, g>).
Mat row_softmax_backward(const Mat& p, const Mat& g) {
  const Vec inner = p.cwiseProduct(g).rowwise().sum();
  return p.cwiseProduct(g - inner.replicate(1, g.cols()));
}

Vec row_cross_entropy(const Mat& q, const Mat& p) {
  return -(q.array() * (p.array() + kLogEpsilon).log()).rowwise().sum().matrix();
}

// Per-row bound distributions for a whole batch.
struct BatchForward {
  Mat pre_radius;  // W_r h + b_r
  Mat lo;
  Mat mid;
  Mat up;
  Vec ce_lo;
};

BatchForward forward_batch(const InterHeadParams& ih, const TrainingBatch& batch) {
  const double clamp = FuseConfig{}.radius_clamp_max;
  const Mat center = (batch.hiddens * ih.w_center.transpose()).rowwise() + ih.b_center.transpose();
  BatchForward f;
  f.pre_radius = (batch.hiddens * ih.w_radius.transpose()).rowwise() + ih.b_radius.transpose();
  const Mat radius = f.pre_radius.unaryExpr([clamp](double a) { return std::min(softplus(a), clamp); });
  f.lo = row_softmax(center - radius);
  f.mid = row_softmax(center);
  f.up = row_softmax(center + radius);
  f.ce_lo = row_cross_entropy(batch.cloud_dists, f.lo);
  return f;
}

// d CE(q, p) / dp; also the gradient of KL(q || p) in p.
Mat ce_grad(const Mat& p, const Mat& q) { return -q.cwiseQuotient((p.array() + kLogEpsilon).matrix()); }

Mat anchor_grad(const Mat& p, const Mat& q, double lambda_v, double lambda_p) {
  const Mat sign = (p - q).unaryExpr([](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
  return lambda_v * sign + lambda_p * ce_grad(p, q);
}

}  // namespace

namespace {

// Loss with the DRO weights `w`, and optionally its gradient, from one forward pass.
LossBreakdown evaluate(const InterHeadParams& ih, const TrainingBatch& batch, const InterDroConfig& cfg,
                       const std::optional<Vec>& frozen_weights, InterHeadGradient* grad) {
  check_shapes(ih, batch);
  const BatchForward f = forward_batch(ih, batch);
  const Mat& q = batch.cloud_dists;
  if (frozen_weights && frozen_weights->size() != f.ce_lo.size()) {
    throw std::invalid_argument("inter_dro_loss: frozen weight count does not match the batch");
  }
  // An overflowed forward pass yields NaN weights so the caller sees a non-finite loss.
  const Vec w = frozen_weights       ? *frozen_weights
                : f.ce_lo.allFinite() ? dro_weights(f.ce_lo, cfg.alpha)
                                      : Vec::Constant(f.ce_lo.size(), std::numeric_limits<double>::quiet_NaN());
  const double inv_n = 1.0 / static_cast<double>(q.rows());

  const auto anchor = [&](const Mat& p) {
    double l = 0.0;
    if (cfg.lambda_v != 0.0) l += cfg.lambda_v * (p - q).cwiseAbs().sum() * inv_n;
    if (cfg.lambda_p != 0.0) l += cfg.lambda_p * row_cross_entropy(q, p).mean();
    return l;
  };
  // KL(q || mid) = sum over q > 0 of q (ln(q + eps) - ln(mid + eps))
  const double kl = (q.array() > 0.0)
                        .select(q.array() * ((q.array() + kLogEpsilon).log() - (f.mid.array() + kLogEpsilon).log()), 0.0)
                        .sum();

  LossBreakdown out;
  out.l_kl = cfg.lambda_beta * kl * inv_n;
  out.l_dro = w.dot(f.ce_lo);
  out.l_center = anchor(f.mid) + out.l_kl;
  out.l_upper = anchor(f.up);
  out.l_lower = anchor(f.lo) + out.l_dro;
  out.total = out.l_center + out.l_upper + out.l_lower;
  if (grad == nullptr) return out;

  const double clamp = FuseConfig{}.radius_clamp_max;
  const Mat g_mid = inv_n * (anchor_grad(f.mid, q, cfg.lambda_v, cfg.lambda_p) + cfg.lambda_beta * ce_grad(f.mid, q));
  const Mat g_up = inv_n * anchor_grad(f.up, q, cfg.lambda_v, cfg.lambda_p);
  const Mat g_lo = inv_n * anchor_grad(f.lo, q, cfg.lambda_v, cfg.lambda_p) + w.asDiagonal() * ce_grad(f.lo, q);

  const Mat dz_mid = row_softmax_backward(f.mid, g_mid);
  const Mat dz_up = row_softmax_backward(f.up, g_up);
  const Mat dz_lo = row_softmax_backward(f.lo, g_lo);

  const Mat dc = dz_mid + dz_up + dz_lo;
  // The radius gradient passes through softplus except where the clamp holds.
  const Mat gate = f.pre_radius.unaryExpr([clamp](double a) { return softplus(a) < clamp ? sigmoid(a) : 0.0; });
  const Mat da = (dz_up - dz_lo).cwiseProduct(gate);

  grad->w_center = dc.transpose() * batch.hiddens;
  grad->b_center = dc.colwise().sum().transpose();
  grad->w_radius = da.transpose() * batch.hiddens;
  grad->b_radius = da.colwise().sum().transpose();
  return out;
}

}  // namespace

LossBreakdown inter_dro_loss(const InterHeadParams& ih, const TrainingBatch& batch, const InterDroConfig& cfg,
                             const std::optional<Vec>& frozen_weights) {
  ih.validate();
  batch.validate();
  return evaluate(ih, batch, cfg, frozen_weights, nullptr);
}

InterHeadGradient analytic_gradient(const InterHeadParams& ih, const TrainingBatch& batch, const InterDroConfig& cfg) {
  ih.validate();
  batch.validate();
  InterHeadGradient g;
  evaluate(ih, batch, cfg, std::nullopt, &g);
  return g;
}

TrainingDiverged::TrainingDiverged(std::size_t step)
    : std::runtime_error("training diverged: non-finite loss at step " + std::to_string(step)), step_(step) {}

TrainResult train(const InterHeadParams& init, std::span<const TrainingBatch> dataset, const InterDroConfig& cfg) {
  cfg.validate();
  init.validate();
  if (dataset.empty() && cfg.steps > 0) throw std::invalid_argument("train: empty dataset");
  for (const TrainingBatch& batch : dataset) batch.validate();

  TrainResult out{init, {}};
  out.history.reserve(cfg.steps);
  const double inv_batches = dataset.empty() ? 0.0 : 1.0 / static_cast<double>(dataset.size());

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    // Every step averages loss and gradient over all batches, in dataset order.
    LossBreakdown loss;
    InterHeadGradient grad{Mat::Zero(init.w_center.rows(), init.w_center.cols()), Vec::Zero(init.b_center.size()),
                           Mat::Zero(init.w_radius.rows(), init.w_radius.cols()), Vec::Zero(init.b_radius.size())};
    for (const TrainingBatch& batch : dataset) {
      InterHeadGradient g;
      const LossBreakdown l = evaluate(out.head, batch, cfg, std::nullopt, cfg.learning_rate == 0.0 ? nullptr : &g);
      loss.l_center += inv_batches * l.l_center;
      loss.l_upper += inv_batches * l.l_upper;
      loss.l_lower += inv_batches * l.l_lower;
      loss.l_dro += inv_batches * l.l_dro;
      loss.l_kl += inv_batches * l.l_kl;
      loss.total += inv_batches * l.total;
      if (cfg.learning_rate == 0.0) continue;
      grad.w_center += g.w_center;
      grad.b_center += g.b_center;
      grad.w_radius += g.w_radius;
      grad.b_radius += g.b_radius;
    }
    if (!std::isfinite(loss.total)) throw TrainingDiverged(step);
    out.history.push_back(loss);
    if (cfg.learning_rate == 0.0) continue;

    const double scale = cfg.learning_rate * inv_batches;
    out.head.w_center -= scale * grad.w_center;
    out.head.b_center -= scale * grad.b_center;
    out.head.w_radius -= scale * grad.w_radius;
    out.head.b_radius -= scale * grad.b_radius;
    if (!out.head.w_center.allFinite() || !out.head.w_radius.allFinite() || !out.head.b_center.allFinite() ||
        !out.head.b_radius.allFinite()) {
      throw TrainingDiverged(step);
    }
  }
  return out;
}

std::vector<TrainingBatch> harvest_training_data(const SceneSpec& scene, const ModelParams& params,
                                                 std::size_t num_pairs, std::size_t batch_size, std::uint64_t seed) {
  if (batch_size == 0) throw std::invalid_argument("harvest: batch_size must be positive");
  if (scene.n != params.n) throw std::invalid_argument("harvest: scene vocabulary differs from the models");
  const auto d = static_cast<Eigen::Index>(params.d);
  const auto n = static_cast<Eigen::Index>(params.n);
  Mat hiddens(static_cast<Eigen::Index>(num_pairs), d);
  Mat dists(static_cast<Eigen::Index>(num_pairs), n);

  std::size_t filled = 0;
  for (std::uint64_t episode = 0; filled < num_pairs; ++episode) {
    SceneSpec spec = scene;
    spec.seed = mix_seed({seed, 0x68617276ULL, episode});
    const TokenGrid grid = generate_scene(spec);
    const ToyWorld world{spec, grid, params};
    TokenSeq ctx;
    for (std::size_t pos = 0; pos < world.seq_len() && filled < num_pairs; ++pos) {
      const DeviceStep step = device_step(world, ctx, pos);
      hiddens.row(static_cast<Eigen::Index>(filled)) = step.hidden.transpose();
      dists.row(static_cast<Eigen::Index>(filled)) = softmax(cloud_logits(world, ctx, pos)).transpose();
      ++filled;
      ctx.push_back(static_cast<Token>(argmax(step.logits)));
    }
  }

  std::vector<TrainingBatch> batches;
  for (std::size_t start = 0; start < num_pairs; start += batch_size) {
    const auto rows = static_cast<Eigen::Index>(std::min(batch_size, num_pairs - start));
    const auto at = static_cast<Eigen::Index>(start);
    batches.push_back(TrainingBatch{hiddens.middleRows(at, rows), dists.middleRows(at, rows)});
  }
  return batches;
}

double mean_center_kl(const InterHeadParams& ih, std::span<const TrainingBatch> dataset) {
  double acc = 0.0;
  std::size_t count = 0;
  for (const TrainingBatch& b : dataset) {
    for (Eigen::Index s = 0; s < b.hiddens.rows(); ++s) {
      const LogitIntervalVec iv = inter_head_forward(ih, b.hiddens.row(s).transpose());
      acc += kl_align(b.cloud_dists.row(s).transpose(), softmax(iv.center));
      ++count;
    }
  }
  return count == 0 ? 0.0 : acc / static_cast<double>(count);
}

}  // namespace ciar
