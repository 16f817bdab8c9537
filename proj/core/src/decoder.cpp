// Copyright 2026 The ciarsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "ciar/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

namespace ciar {

namespace {

constexpr std::size_t kSummaryTopWidths = 8;

struct VerifyDetail {
  VerifyResult result;
  std::vector<Vec> logits;  // cloud logits at every position scored, in order
};

VerifyDetail verify_detail(const ToyWorld& world, std::span<const Token> context,
                           std::span<const BufferedToken> buffered, FeatureMode mode) {
  if (buffered.empty()) throw std::invalid_argument("verify_buffer: empty buffer");
  VerifyDetail detail;
  TokenSeq ctx(context.begin(), context.end());
  std::optional<Vec> feature;
  for (const BufferedToken& b : buffered) {
    Vec logits = cloud_logits(world, ctx, ctx.size(), feature);
    const auto best = static_cast<Token>(argmax(logits));
    detail.logits.push_back(std::move(logits));
    if (best != b.token) {
      detail.result.resampled = best;
      return detail;
    }
    ++detail.result.accepted;
    ctx.push_back(b.token);
    feature = interval_feature(world.params, b.hidden, b.interval, mode);
  }
  if (ctx.size() < world.seq_len()) {
    Vec logits = cloud_logits(world, ctx, ctx.size(), feature);
    detail.result.resampled = static_cast<Token>(argmax(logits));
    detail.logits.push_back(std::move(logits));
  }
  return detail;
}

// Accumulates tokens, trace records and transfer events for one episode.
class EpisodeBuilder {
 public:
  EpisodeBuilder(const DecodeConfig& cfg, const ToyWorld& world) : cfg_(cfg), world_(world) {
    tokens_.reserve(cfg.seq_len);
    trace_.records.reserve(cfg.seq_len);
  }

  std::size_t pos() const { return tokens_.size(); }
  bool done() const { return pos() >= cfg_.seq_len; }
  const TokenSeq& tokens() const { return tokens_; }
  DecodeTrace& trace() { return trace_; }

  // Plain cloud distribution at the current position.
  Vec plain_cloud() const { return cloud_logits(world_, tokens_, pos()); }

  void emit(Token token, Origin origin, std::optional<double> uncertainty, GateDecision gate, double kl) {
    TraceRecord r;
    r.pos = pos();
    r.token = token;
    r.origin = origin;
    r.uncertainty = uncertainty;
    r.boundary = world_.grid.boundary(r.pos);
    r.gate = gate;
    r.kl_to_cloud = kl;
    trace_.records.push_back(r);
    tokens_.push_back(token);
  }

  // Cloud-greedy tokens for `count` positions, delivered in one downlink.
  void cloud_segment(std::size_t count, Origin origin) {
    if (count == 0) return;
    const std::size_t start = pos();
    for (std::size_t i = 0; i < count && !done(); ++i) {
      const Vec logits = plain_cloud();
      emit(static_cast<Token>(argmax(logits)), origin, std::nullopt, GateDecision::kNone, 0.0);
      ++trace_.cloud_steps;
    }
    add_event(CommEvent{start, false, 0, false, pos() - start});
  }

  void device_token(const Vec& logits, std::optional<double> uncertainty, GateDecision gate) {
    const double kl = kl_divergence(softmax(plain_cloud()), softmax(logits));
    emit(static_cast<Token>(argmax(logits)), Origin::kDevice, uncertainty, gate, kl);
    ++trace_.device_steps;
  }

  void add_event(const CommEvent& ev) {
    trace_.events.push_back(ev);
    TraceRecord& r = trace_.records.at(ev.start_pos);
    if (ev.has_uplink) r.uplink_bits += uplink_bits(cfg_.payload, ev.uplink_tokens, ev.with_features);
    r.downlink_bits += downlink_bits(cfg_.payload, ev.downlink_tokens);
  }

  DecodeResult finish() {
    DecodeResult out;
    out.metrics = compute_metrics(trace_);
    out.tokens = std::move(tokens_);
    out.trace = std::move(trace_);
    return out;
  }

 private:
  const DecodeConfig& cfg_;
  const ToyWorld& world_;
  TokenSeq tokens_;
  DecodeTrace trace_;
};

void check_world(const DecodeConfig& cfg, const ToyWorld& world) {
  cfg.validate();
  if (cfg.seq_len != world.seq_len()) {
    throw std::invalid_argument("decode: seq_len " + std::to_string(cfg.seq_len) + " differs from scene size " +
                                std::to_string(world.seq_len()));
  }
}

struct GateEval {
  DeviceStep step;
  ProbIntervalVec interval;
  double score = 0.0;
};

GateEval evaluate_device(const ToyWorld& world, const InterHeadParams& ih, const FuseConfig& fuse,
                         std::span<const Token> context, std::size_t pos) {
  GateEval g;
  g.step = device_step(world, context, pos);
  g.interval = inter_fuse(inter_head_forward(ih, g.step.hidden, fuse.radius_clamp_max), fuse);
  g.score = uncertainty_score(g.interval).score;
  return g;
}

DecodeResult run_gated(const DecodeConfig& cfg, const ToyWorld& world, const InterHeadParams& ih, bool gated) {
  check_world(cfg, world);
  if (ih.n() != world.params.n || ih.d() != world.params.d) {
    throw std::invalid_argument("decode: interval head shape does not match the models");
  }
  EpisodeBuilder ep(cfg, world);
  ep.cloud_segment(cfg.prefix_len(), Origin::kPrefix);

  std::vector<double> history;
  while (!ep.done()) {
    const std::size_t t = ep.pos();
    GateEval cur = evaluate_device(world, ih, cfg.fuse, ep.tokens(), t);

    double threshold = cfg.tau;
    if (cfg.threshold_policy.kind == ThresholdPolicy::Kind::kRollingQuantile &&
        history.size() >= cfg.threshold_policy.window) {
      threshold = dynamic_threshold(history, cfg.threshold_policy.quantile, cfg.threshold_policy.window);
    }
    history.push_back(cur.score);

    if (gated && cur.score <= threshold) {
      ep.device_token(cur.step.logits, cur.score, GateDecision::kAccept);
      continue;
    }

    // Defer: draft up to K tokens on the device, then verify them on the cloud.
    std::vector<BufferedToken> buffer;
    TokenSeq scratch = ep.tokens();
    auto push = [&](GateEval&& g) {
      const auto tok = static_cast<Token>(argmax(g.step.logits));
      buffer.push_back(BufferedToken{tok, std::move(g.step.hidden), std::move(g.interval), g.score});
      scratch.push_back(tok);
    };
    push(std::move(cur));
    for (std::size_t k = 1; k < cfg.K && t + k < cfg.seq_len; ++k) {
      push(evaluate_device(world, ih, cfg.fuse, scratch, t + k));
    }
    ep.trace().device_steps += buffer.size();

    const VerifyDetail v = verify_detail(world, ep.tokens(), buffer, cfg.feature_mode);
    ++ep.trace().cloud_steps;

    for (std::size_t i = 0; i < v.result.accepted; ++i) {
      const double kl = kl_divergence(softmax(ep.plain_cloud()), softmax(v.logits[i]));
      ep.emit(buffer[i].token, Origin::kCloudVerified, buffer[i].uncertainty,
              i == 0 ? GateDecision::kDefer : GateDecision::kNone, kl);
    }
    std::size_t emitted = v.result.accepted;
    if (v.result.resampled && !ep.done()) {
      const std::size_t i = v.result.accepted;
      const std::optional<double> u = i < buffer.size() ? std::optional<double>(buffer[i].uncertainty) : std::nullopt;
      const double kl = kl_divergence(softmax(ep.plain_cloud()), softmax(v.logits.at(i)));
      ep.emit(*v.result.resampled, Origin::kCloudResampled, u, i == 0 ? GateDecision::kDefer : GateDecision::kNone,
              kl);
      ++emitted;
    }
    ep.add_event(CommEvent{t, true, buffer.size(), true, emitted});
  }
  return ep.finish();
}

}  // namespace

std::size_t DecodeConfig::prefix_len() const {
  return static_cast<std::size_t>(std::floor(rho * static_cast<double>(seq_len)));
}

void DecodeConfig::validate() const {
  if (seq_len == 0) throw std::invalid_argument("decode.seq_len must be positive");
  if (K == 0) throw std::invalid_argument("decode.K must be at least 1");
  if (std::isnan(tau) || tau < 0.0) throw std::invalid_argument("decode.tau must be >= 0 or +inf");
  if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("decode.rho must lie in [0, 1]");
  if (threshold_policy.kind == ThresholdPolicy::Kind::kRollingQuantile) {
    if (!(threshold_policy.quantile > 0.0 && threshold_policy.quantile <= 1.0)) {
      throw std::invalid_argument("decode.threshold_policy.quantile must lie in (0, 1]");
    }
    if (threshold_policy.window == 0) throw std::invalid_argument("decode.threshold_policy.window must be positive");
  }
  payload.validate();
}

std::string_view to_string(Origin o) {
  switch (o) {
    case Origin::kPrefix: return "prefix";
    case Origin::kDevice: return "device";
    case Origin::kCloudVerified: return "cloud_verified";
    case Origin::kCloudResampled: return "cloud_resampled";
  }
  return "unknown";
}

std::string_view to_string(GateDecision g) {
  switch (g) {
    case GateDecision::kNone: return "none";
    case GateDecision::kAccept: return "accept";
    case GateDecision::kDefer: return "defer";
  }
  return "unknown";
}

VerifyResult verify_buffer(const ToyWorld& world, std::span<const Token> context,
                           std::span<const BufferedToken> buffered, FeatureMode mode) {
  return verify_detail(world, context, buffered, mode).result;
}

Vec interval_feature(const ModelParams& params, const Vec& hidden, const ProbIntervalVec& p, FeatureMode mode) {
  const auto d = static_cast<Eigen::Index>(params.d);
  const auto n = static_cast<Eigen::Index>(params.n);
  if (hidden.size() != d) throw std::invalid_argument("interval_feature: hidden dimension mismatch");
  if (mode == FeatureMode::kFull) {
    if (p.lower.size() != n || p.upper.size() != n) {
      throw std::invalid_argument("interval_feature: interval length mismatch");
    }
    Vec x(d + 2 * n);
    x << hidden, p.lower, p.upper;
    return params.phi * x;
  }
  const Vec delta = widths(p);
  const UncertaintyBreakdown u = uncertainty_from_widths(delta);
  std::vector<double> sorted(delta.data(), delta.data() + delta.size());
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  Vec x = Vec::Zero(d + 3 + static_cast<Eigen::Index>(kSummaryTopWidths));
  x.head(d) = hidden;
  x[d] = u.omega;
  x[d + 1] = u.sigma;
  x[d + 2] = u.score;
  for (std::size_t i = 0; i < std::min(kSummaryTopWidths, sorted.size()); ++i) {
    x[d + 3 + static_cast<Eigen::Index>(i)] = sorted[i];
  }
  return params.phi_summary * x;
}

double dynamic_threshold(std::span<const double> history, double q, std::size_t window) {
  if (history.empty()) throw std::invalid_argument("dynamic_threshold: empty history");
  if (!(q > 0.0 && q <= 1.0) || window == 0) throw std::invalid_argument("dynamic_threshold: bad q or window");
  const std::size_t take = std::min(window, history.size());
  std::vector<double> last(history.end() - static_cast<std::ptrdiff_t>(take), history.end());
  std::sort(last.begin(), last.end());
  // Nearest rank; the small slack keeps q * take from rounding one rank up.
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(take) - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, take);
  return last[rank - 1];
}

DecodeResult run_ciar(const DecodeConfig& cfg, const ToyWorld& world, const InterHeadParams& ih) {
  return run_gated(cfg, world, ih, true);
}

DecodeResult run_uniform_verification(const DecodeConfig& cfg, const ToyWorld& world, const InterHeadParams& ih) {
  return run_gated(cfg, world, ih, false);
}

DecodeResult run_baseline_cloud(const DecodeConfig& cfg, const ToyWorld& world) {
  return run_fixed_split(cfg, 1.0, world);
}

DecodeResult run_baseline_device(const DecodeConfig& cfg, const ToyWorld& world) {
  return run_fixed_split(cfg, 0.0, world);
}

DecodeResult run_fixed_split(const DecodeConfig& cfg, double split, const ToyWorld& world) {
  check_world(cfg, world);
  if (!(split >= 0.0 && split <= 1.0)) throw std::invalid_argument("fixed split must lie in [0, 1]");
  EpisodeBuilder ep(cfg, world);
  ep.cloud_segment(static_cast<std::size_t>(std::floor(split * static_cast<double>(cfg.seq_len))),
                   Origin::kCloudVerified);
  while (!ep.done()) {
    ep.device_token(device_logits(world, ep.tokens(), ep.pos()), std::nullopt, GateDecision::kNone);
  }
  return ep.finish();
}

EpisodeMetrics compute_metrics(const DecodeTrace& trace) {
  EpisodeMetrics m;
  const std::size_t len = trace.records.size();
  for (const TraceRecord& r : trace.records) {
    if (r.origin == Origin::kDevice) ++m.device_accepts;
  }
  for (const CommEvent& e : trace.events) {
    if (e.has_uplink) ++m.episodes;
  }
  m.cloud_calls = trace.cloud_steps;
  m.steps = trace.device_steps + trace.cloud_steps;
  m.cloud_call_rate = len == 0 ? 0.0 : static_cast<double>(len - m.device_accepts) / static_cast<double>(len);
  return m;
}

double RoutingStats::boundary_rate() const {
  return boundary_evaluated == 0 ? 0.0 : static_cast<double>(boundary_deferred) / static_cast<double>(boundary_evaluated);
}

double RoutingStats::interior_rate() const {
  return interior_evaluated == 0 ? 0.0 : static_cast<double>(interior_deferred) / static_cast<double>(interior_evaluated);
}

RoutingStats routing_stats(const DecodeTrace& trace) {
  RoutingStats s;
  for (const TraceRecord& r : trace.records) {
    if (r.gate == GateDecision::kNone) continue;
    const bool deferred = r.gate == GateDecision::kDefer;
    if (r.boundary) {
      ++s.boundary_evaluated;
      s.boundary_deferred += deferred ? 1 : 0;
    } else {
      ++s.interior_evaluated;
      s.interior_deferred += deferred ? 1 : 0;
    }
  }
  return s;
}

double mean_kl_to_cloud(const DecodeTrace& trace) {
  if (trace.records.empty()) return 0.0;
  double acc = 0.0;
  for (const TraceRecord& r : trace.records) acc += r.kl_to_cloud;
  return acc / static_cast<double>(trace.records.size());
}

}  // namespace ciar
