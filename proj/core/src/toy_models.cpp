// Copyright 2026 The ciarsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "ciar/toy_models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "ciar/rng.hpp"

namespace ciar {

namespace {

Mat gaussian_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = dist(rng);
  }
  return m;
}

bool all_finite(const Mat& m) { return m.allFinite(); }

void check_pos(const ToyWorld& world, std::span<const Token> context, std::size_t pos) {
  if (pos >= world.seq_len()) {
    throw std::invalid_argument("position " + std::to_string(pos) + " outside sequence of length " +
                                std::to_string(world.seq_len()));
  }
  if (context.size() != pos) {
    throw std::invalid_argument("context length " + std::to_string(context.size()) +
                                " does not match position " + std::to_string(pos));
  }
}

Vec onehot_signal(const ToyWorld& world, std::size_t pos) {
  Vec v = Vec::Zero(static_cast<Eigen::Index>(world.spec.n));
  v[world.grid.at(pos)] = 1.0 / world.spec.temperature;
  return v;
}

double cloud_noise_scale(const ToyWorld& world, std::size_t pos) {
  return world.grid.boundary(pos) ? 0.5 * world.spec.boundary_noise : world.spec.interior_noise;
}

double device_noise_scale(const ToyWorld& world, std::size_t pos) {
  return world.grid.boundary(pos) ? world.spec.boundary_noise : world.spec.interior_noise;
}

}  // namespace

void SceneSpec::validate() const {
  if (height == 0 || width == 0) throw std::invalid_argument("scene: height and width must be positive");
  if (n < 2) throw std::invalid_argument("scene: vocabulary size n must be at least 2");
  if (num_regions == 0) throw std::invalid_argument("scene: num_regions must be positive");
  if (num_regions > height * width) throw std::invalid_argument("scene: num_regions exceeds h*w");
  if (!(boundary_noise >= 0.0) || !(interior_noise >= 0.0) || !std::isfinite(boundary_noise) ||
      !std::isfinite(interior_noise)) {
    throw std::invalid_argument("scene: noise scales must be finite and nonnegative");
  }
  // Equal scales are allowed only in the noiseless case.
  if (interior_noise > boundary_noise || (interior_noise == boundary_noise && boundary_noise > 0.0)) {
    throw std::invalid_argument("scene: interior_noise must be below boundary_noise");
  }
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw std::invalid_argument("scene: temperature must be positive");
  }
}

void InterHeadParams::validate() const {
  const auto rows = w_center.rows();
  if (w_radius.rows() != rows || w_radius.cols() != w_center.cols() || b_center.size() != rows ||
      b_radius.size() != rows) {
    throw std::invalid_argument("InterHeadParams: inconsistent shapes");
  }
  if (!all_finite(w_center) || !all_finite(w_radius) || !b_center.allFinite() || !b_radius.allFinite()) {
    throw std::invalid_argument("InterHeadParams: non-finite entries");
  }
}

void ModelParams::validate() const {
  const auto ni = static_cast<Eigen::Index>(n);
  const auto di = static_cast<Eigen::Index>(d);
  const bool shapes = embed_table.rows() == ni && embed_table.cols() == di && w_dec_cloud.rows() == di &&
                      w_dec_cloud.cols() == di && w_dec_device.rows() == di && w_dec_device.cols() == di &&
                      readout_cloud.rows() == ni && readout_cloud.cols() == di &&
                      readout_device.rows() == ni && readout_device.cols() == di && phi.rows() == di &&
                      phi.cols() == di + 2 * ni && phi_summary.rows() == di && phi_summary.cols() == di + 11;
  if (!shapes) throw std::invalid_argument("ModelParams: inconsistent shapes");
  for (const Mat* m : {&embed_table, &w_dec_cloud, &w_dec_device, &readout_cloud, &readout_device, &phi,
                       &phi_summary}) {
    if (!all_finite(*m)) throw std::invalid_argument("ModelParams: non-finite entries");
  }
}

ModelParams make_model_params(std::size_t n, std::size_t d, std::uint64_t seed, DeviceWeights weights) {
  if (n < 2 || d == 0) throw std::invalid_argument("make_model_params: need n >= 2 and d >= 1");
  const auto ni = static_cast<Eigen::Index>(n);
  const auto di = static_cast<Eigen::Index>(d);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  ModelParams p;
  p.n = n;
  p.d = d;
  p.seed = seed;
  Rng rng = make_rng({seed, 0x6d6f64656cULL});
  p.embed_table = gaussian_matrix(rng, ni, di, inv_sqrt_d);
  p.w_dec_cloud = gaussian_matrix(rng, di, di, inv_sqrt_d);
  p.readout_cloud = gaussian_matrix(rng, ni, di, 1.0);
  p.w_dec_device = gaussian_matrix(rng, di, di, inv_sqrt_d);
  p.readout_device = gaussian_matrix(rng, ni, di, 1.0);
  const double phi_scale = 0.5 / std::sqrt(static_cast<double>(d + 2 * n));
  p.phi = gaussian_matrix(rng, di, di + 2 * ni, phi_scale);
  p.phi_summary = gaussian_matrix(rng, di, di + 11, 0.5 / std::sqrt(static_cast<double>(d + 11)));
  if (weights == DeviceWeights::kShared) {
    p.w_dec_device = p.w_dec_cloud;
    p.readout_device = p.readout_cloud;
  }
  return p;
}

TokenGrid generate_scene(const SceneSpec& spec) {
  spec.validate();
  const std::size_t cells = spec.seq_len();
  Rng rng = make_rng({spec.seed, 0x7363656e65ULL});

  // Distinct site cells so that every region owns at least its site.
  std::vector<std::size_t> all(cells);
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::shuffle(all.begin(), all.end(), rng);
  std::vector<std::size_t> sites(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(spec.num_regions));

  std::vector<Token> region_token(spec.num_regions);
  if (spec.num_regions <= spec.n) {
    std::vector<Token> vocab(spec.n);
    std::iota(vocab.begin(), vocab.end(), Token{0});
    std::shuffle(vocab.begin(), vocab.end(), rng);
    std::copy_n(vocab.begin(), spec.num_regions, region_token.begin());
  } else {
    std::uniform_int_distribution<Token> pick(0, static_cast<Token>(spec.n - 1));
    for (Token& t : region_token) t = pick(rng);
  }

  TokenGrid grid;
  grid.height = spec.height;
  grid.width = spec.width;
  grid.tokens.resize(cells);
  grid.region.resize(cells);
  grid.boundary_mask.assign(cells, false);

  for (std::size_t pos = 0; pos < cells; ++pos) {
    const auto r = static_cast<long>(pos / spec.width);
    const auto c = static_cast<long>(pos % spec.width);
    long best_dist = std::numeric_limits<long>::max();
    std::int32_t best = 0;
    for (std::size_t k = 0; k < sites.size(); ++k) {
      const auto sr = static_cast<long>(sites[k] / spec.width);
      const auto sc = static_cast<long>(sites[k] % spec.width);
      const long dist = (r - sr) * (r - sr) + (c - sc) * (c - sc);
      if (dist < best_dist) {
        best_dist = dist;
        best = static_cast<std::int32_t>(k);
      }
    }
    grid.region[pos] = best;
    grid.tokens[pos] = region_token[static_cast<std::size_t>(best)];
  }

  const auto h = static_cast<long>(spec.height);
  const auto w = static_cast<long>(spec.width);
  for (long r = 0; r < h; ++r) {
    for (long c = 0; c < w; ++c) {
      const auto here = grid.region[static_cast<std::size_t>(r * w + c)];
      bool edge = false;
      for (long dr = -1; dr <= 1 && !edge; ++dr) {
        for (long dc = -1; dc <= 1; ++dc) {
          const long rr = r + dr;
          const long cc = c + dc;
          if (rr < 0 || cc < 0 || rr >= h || cc >= w) continue;
          if (grid.region[static_cast<std::size_t>(rr * w + cc)] != here) {
            edge = true;
            break;
          }
        }
      }
      grid.boundary_mask[static_cast<std::size_t>(r * w + c)] = edge;
    }
  }
  return grid;
}

Vec scene_noise(const SceneSpec& spec, std::size_t pos, std::uint64_t stream, double scale) {
  Vec v = Vec::Zero(static_cast<Eigen::Index>(spec.n));
  if (scale == 0.0) return v;
  Rng rng = make_rng({spec.seed, 0x6e6f697365ULL, pos, stream});
  std::normal_distribution<double> dist(0.0, scale);
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = dist(rng);
  return v;
}

Vec context_mean(const ModelParams& params, std::span<const Token> context) {
  Vec m = Vec::Zero(static_cast<Eigen::Index>(params.d));
  const std::size_t take = std::min(kContextWindow, context.size());
  if (take == 0) return m;
  for (std::size_t i = context.size() - take; i < context.size(); ++i) m += embed(params, context[i]);
  return m / static_cast<double>(take);
}

Vec cloud_logits(const ToyWorld& world, std::span<const Token> context, std::size_t pos,
                 const std::optional<Vec>& interval_feature) {
  check_pos(world, context, pos);
  Vec logits = onehot_signal(world, pos) + scene_noise(world.spec, pos, 0, cloud_noise_scale(world, pos));
  if (!context.empty() || interval_feature) {
    logits += kContextMixWeight * cloud_decoder_step(world.params, context_mean(world.params, context),
                                                     interval_feature)
                                      .logits;
  }
  return logits;
}

Vec device_logits(const ToyWorld& world, std::span<const Token> context, std::size_t pos) {
  check_pos(world, context, pos);
  const ModelParams& p = world.params;
  Vec logits = onehot_signal(world, pos) + scene_noise(world.spec, pos, 0, cloud_noise_scale(world, pos)) +
               scene_noise(world.spec, pos, 1, device_noise_scale(world, pos));
  if (!context.empty()) {
    const Vec hidden = (p.w_dec_device * context_mean(p, context)).array().tanh().matrix();
    logits += kContextMixWeight * (p.readout_device * hidden);
  }
  return logits;
}

Vec device_hidden(const ModelParams& params, std::span<const Token> context, std::size_t pos) {
  Vec h = (params.w_dec_device * context_mean(params, context)).array().tanh().matrix();
  Rng rng = make_rng({params.seed, 0x706f73ULL, pos});
  std::normal_distribution<double> dist(0.0, kPositionalOffsetScale);
  for (Eigen::Index i = 0; i < h.size(); ++i) h[i] += dist(rng);
  return h;
}

DeviceStep device_step(const ToyWorld& world, std::span<const Token> context, std::size_t pos) {
  DeviceStep s;
  s.logits = device_logits(world, context, pos);
  s.hidden = device_hidden(world.params, context, pos) + world.params.embed_table.transpose() * softmax(s.logits);
  return s;
}

LogitIntervalVec inter_head_forward(const InterHeadParams& ih, const Vec& hidden, double radius_clamp_max) {
  if (static_cast<std::size_t>(hidden.size()) != ih.d()) {
    throw std::invalid_argument("inter_head_forward: hidden has length " + std::to_string(hidden.size()) +
                                ", head expects " + std::to_string(ih.d()));
  }
  LogitIntervalVec out;
  out.center = ih.w_center * hidden + ih.b_center;
  const Vec pre = ih.w_radius * hidden + ih.b_radius;
  out.radius = pre.unaryExpr([&](double x) { return std::min(softplus(x), radius_clamp_max); });
  return out;
}

Vec embed(const ModelParams& params, Token token) {
  if (token < 0 || static_cast<std::size_t>(token) >= params.n) {
    throw std::invalid_argument("embed: token " + std::to_string(token) + " out of range");
  }
  return params.embed_table.row(token).transpose();
}

DecoderOutput cloud_decoder_step(const ModelParams& params, const Vec& token_embedding,
                                 const std::optional<Vec>& interval_feature) {
  const auto d = static_cast<Eigen::Index>(params.d);
  if (token_embedding.size() != d || (interval_feature && interval_feature->size() != d)) {
    throw std::invalid_argument("cloud_decoder_step: input dimension mismatch");
  }
  Vec input = token_embedding;
  if (interval_feature) input += *interval_feature;
  DecoderOutput out;
  out.hidden = (params.w_dec_cloud * input).array().tanh().matrix();
  out.logits = params.readout_cloud * out.hidden;
  return out;
}

double softplus(double x) {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double softplus_inverse(double y) {
  if (!(y > 0.0)) throw std::invalid_argument("softplus_inverse: argument must be positive");
  if (y > 30.0) return y + std::log(-std::expm1(-y));
  return std::log(std::expm1(y));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

InterHeadParams analytic_inter_head(const ModelParams& params, const AnalyticHeadConfig& cfg) {
  const auto n = static_cast<Eigen::Index>(params.n);
  const auto d = static_cast<Eigen::Index>(params.d);
  Rng rng = make_rng({params.seed, cfg.seed, 0x616e616cULL});
  InterHeadParams ih;
  ih.w_center = cfg.gain * params.embed_table;
  ih.b_center = Vec::Zero(n);
  ih.w_radius = gaussian_matrix(rng, n, d, cfg.radius_spread / std::sqrt(static_cast<double>(d)));
  ih.b_radius = Vec::Constant(n, softplus_inverse(cfg.base_radius));
  return ih;
}

InterHeadParams random_inter_head(std::size_t n, std::size_t d, std::uint64_t seed, double scale,
                                  double init_radius) {
  const auto ni = static_cast<Eigen::Index>(n);
  const auto di = static_cast<Eigen::Index>(d);
  Rng rng = make_rng({seed, 0x696e6974ULL});
  InterHeadParams ih;
  ih.w_center = gaussian_matrix(rng, ni, di, scale);
  ih.b_center = Vec::Zero(ni);
  ih.w_radius = gaussian_matrix(rng, ni, di, scale);
  ih.b_radius = Vec::Constant(ni, softplus_inverse(init_radius));
  return ih;
}

}  // namespace ciar
