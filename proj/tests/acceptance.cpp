// Copyright 2026 The ciarsim Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <tuple>
#include <vector>

#include "ciar/decoder.hpp"
#include "ciar/interval.hpp"
#include "ciar/netsim.hpp"
#include "ciar/properties.hpp"
#include "ciar/rng.hpp"
#include "ciar/toy_models.hpp"
#include "ciar/training.hpp"
#include "fixtures.hpp"

namespace ciar {
namespace {

using testing::OwnedWorld;

struct Outcome {
  bool passed = true;
  std::string detail;

  void fail(const std::string& why) {
    if (passed) detail = why;
    passed = false;
  }
};

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

// Average ranks, ties share the mean rank.
std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  const std::vector<double> rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return (sxx == 0 || syy == 0) ? 0.0 : sxy / std::sqrt(sxx * syy);
}

Outcome fuse_validity() {
  Outcome o;
  const std::vector<std::size_t> sizes{2, 8, 64, 512, 4096};
  const std::size_t total = 10000;
  for (std::size_t k = 0; k < total; ++k) {
    const std::size_t n = sizes[k % sizes.size()];
    const ProbIntervalVec p = inter_fuse(random_logit_interval(n, mix_seed({0xac1, k})));
    const double sl = p.lower.sum(), su = p.upper.sum();
    const bool ok = p.lower.minCoeff() >= 0.0 && (p.upper - p.lower).minCoeff() >= 0.0 && p.upper.maxCoeff() <= 1.0 &&
                    sl <= 1.0 + 1e-9 && 1.0 + 1e-9 <= su + 2e-9;
    if (!ok) o.fail("case " + std::to_string(k) + " n=" + std::to_string(n) + " sum_l=" + fmt("%.12g", sl) +
                    " sum_u=" + fmt("%.12g", su));
  }
  o.detail = o.passed ? "10000 inputs over n in {2,8,64,512,4096}" : o.detail;
  return o;
}

Outcome theorem_suite() {
  Outcome o;
  const PropertySuiteConfig cfg;
  std::string names;
  for (const auto& check : {check_zeros, check_scaling, check_sigma_bound, check_s2_bound, check_cv_identity,
                            check_local_certainty, check_polytope_diameter}) {
    const PropertyResult r = check(cfg);
    if (!r.passed) o.fail(r.name + ": " + r.detail);
    names += (names.empty() ? "" : ", ") + r.name + " " + std::to_string(r.cases);
  }
  if (o.passed) o.detail = names;
  return o;
}

Outcome trace_arithmetic() {
  Outcome o;
  struct Case {
    std::size_t h, w, K;
    double rho;
  };
  std::string summary;
  for (const Case& c : {Case{16, 16, 4, 0.0}, Case{16, 16, 4, 0.06}, Case{8, 8, 7, 0.1}}) {
    OwnedWorld w(testing::quiet_spec(c.h, c.w, 0), 0, 32, DeviceWeights::kShared);
    DecodeConfig cfg;
    cfg.seq_len = c.h * c.w;
    cfg.K = c.K;
    cfg.rho = c.rho;
    cfg.tau = 0.0;
    const DecodeResult r = run_ciar(cfg, w.view(), analytic_inter_head(w.params()));
    for (const TraceRecord& rec : r.trace.records) {
      if (rec.uncertainty && !(*rec.uncertainty > 0.0)) o.fail("a score is not positive");
    }
    const auto m = static_cast<std::size_t>(std::floor(c.rho * static_cast<double>(cfg.seq_len)));
    const std::size_t want = (cfg.seq_len - m + c.K) / (c.K + 1);
    const std::string tag = "(" + std::to_string(cfg.seq_len) + "," + std::to_string(c.K) + "," + fmt("%g", c.rho) +
                            ")=" + std::to_string(r.metrics.episodes);
    if (r.metrics.episodes != want) o.fail(tag + " expected " + std::to_string(want));
    summary += (summary.empty() ? "" : " ") + tag;
  }
  if (o.passed) o.detail = "episodes " + summary;
  return o;
}

Outcome gate_dominance() {
  Outcome o;
  const std::size_t seeds = 20;
  double boundary = 0.0, interior = 0.0;
  for (std::uint64_t s = 0; s < seeds; ++s) {
    OwnedWorld w(testing::seeded_spec(s));
    const InterHeadParams ih = analytic_inter_head(w.params());
    const DecodeConfig cfg;
    const DecodeResult c = run_ciar(cfg, w.view(), ih);
    const DecodeResult u = run_uniform_verification(cfg, w.view(), ih);
    if (c.metrics.episodes > u.metrics.episodes) {
      o.fail("seed " + std::to_string(s) + ": ciar " + std::to_string(c.metrics.episodes) + " > uniform " +
             std::to_string(u.metrics.episodes));
    }
    const RoutingStats rs = routing_stats(c.trace);
    boundary += rs.boundary_rate() / seeds;
    interior += rs.interior_rate() / seeds;
  }
  if (!(boundary > interior)) o.fail("boundary defer rate " + fmt("%.4f", boundary) + " <= interior " + fmt("%.4f", interior));
  if (o.passed) {
    o.detail = "20 seeds; defer rate boundary " + fmt("%.4f", boundary) + " > interior " + fmt("%.4f", interior);
  }
  return o;
}

Outcome threshold_trend() {
  Outcome o;
  const std::vector<double> taus{0.05, 0.1, 0.2, 0.3, 0.4};
  const std::size_t seeds = 50;
  std::vector<double> means(taus.size(), 0.0);
  for (std::uint64_t s = 0; s < seeds; ++s) {
    OwnedWorld w(testing::seeded_spec(s));
    const InterHeadParams ih = analytic_inter_head(w.params());
    for (std::size_t t = 0; t < taus.size(); ++t) {
      DecodeConfig cfg;
      cfg.tau = taus[t];
      means[t] += run_ciar(cfg, w.view(), ih).metrics.cloud_call_rate / static_cast<double>(seeds);
    }
  }
  const double rho = spearman(taus, means);
  std::string rates;
  for (double m : means) rates += (rates.empty() ? "" : " ") + fmt("%.4f", m);
  if (!(rho <= -0.9)) o.fail("spearman " + fmt("%.3f", rho) + " > -0.9; rates " + rates);
  if (o.passed) o.detail = "50 seeds; mean rates " + rates + "; spearman " + fmt("%.3f", rho);
  return o;
}

Outcome netsim_structure() {
  Outcome o;
  Rng rng = make_rng({0xac6});
  std::uniform_real_distribution<double> bw(0.1, 1000.0), rtt(0.0, 200.0), bits(0.0, 1e9);
  double worst = 0.0;
  for (int k = 0; k < 10000; ++k) {
    const NetworkProfile p{bw(rng), rtt(rng)};
    const double b = bits(rng);
    const double want = p.rtt_ms + b / (p.bandwidth_mbps * 1e3);
    worst = std::max(worst, std::abs(t_comm(p, b) - want) / want);
  }
  if (worst > 1e-9) o.fail("t_comm relative error " + fmt("%.3g", worst));

  const auto& prof = builtin_profiles();
  const bool table = prof.size() == 3 && prof.at("5G").bandwidth_mbps == 300.0 && prof.at("5G").rtt_ms == 10.0 &&
                     prof.at("4G").bandwidth_mbps == 20.0 && prof.at("4G").rtt_ms == 50.0 &&
                     prof.at("WiFi").bandwidth_mbps == 100.0 && prof.at("WiFi").rtt_ms == 20.0;
  if (!table) o.fail("builtin profile table differs");

  std::size_t traces = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    OwnedWorld w(testing::seeded_spec(s));
    const InterHeadParams ih = analytic_inter_head(w.params());
    const DecodeConfig cfg;
    for (const DecodeResult& r : {run_ciar(cfg, w.view(), ih), run_uniform_verification(cfg, w.view(), ih)}) {
      if (r.metrics.episodes == 0) continue;
      ++traces;
      auto ratio = [&](const char* name) {
        return episode_latency(r.trace, profile_by_name(name), cfg.payload, ComputeCost{}).comm_ratio;
      };
      if (!(ratio("4G") > ratio("WiFi") && ratio("WiFi") > ratio("5G"))) {
        o.fail("seed " + std::to_string(s) + ": ordering 4G > WiFi > 5G violated");
      }
    }
  }
  if (o.passed) {
    o.detail = "t_comm max rel err " + fmt("%.2g", worst) + "; profiles exact; ordering holds on " +
               std::to_string(traces) + " traces";
  }
  return o;
}

Outcome dro_correctness() {
  Outcome o;
  Rng rng = make_rng({0xac7});
  std::uniform_real_distribution<double> loss(0.0, 8.0);
  const std::vector<double> alphas{0.0, 0.25, 0.5, 1.0, 2.0, 5.0, 20.0};
  for (int k = 0; k < 1000; ++k) {
    Vec l(2 + k % 30);
    for (double& x : l) x = loss(rng);
    for (double a : alphas) {
      const Vec w = dro_weights(l, a);
      if (std::abs(w.sum() - 1.0) > 1e-12) o.fail("weights sum " + fmt("%.17g", w.sum()));
    }
    const Vec u = dro_weights(l, 0.0);
    if ((u.array() - 1.0 / static_cast<double>(l.size())).abs().maxCoeff() > 1e-15) o.fail("alpha = 0 not uniform");
    double prev = -1.0;
    for (double a : alphas) {
      const double d = dro_loss(l, a);
      if (d < l.mean() - 1e-12 || d > l.maxCoeff() + 1e-12) o.fail("dro loss outside [mean, max]");
      if (d < prev - 1e-12) o.fail("dro loss decreases in alpha");
      prev = d;
    }
  }
  const PropertyResult g = check_gradient(PropertySuiteConfig{});
  if (!g.passed) o.fail(g.detail);
  if (o.passed) o.detail = "1000 loss vectors x 7 alphas; gradient matches central differences on " +
                           std::to_string(g.cases) + " instances";
  return o;
}

struct TrainedHead {
  InterHeadParams head;
  double seconds = 0.0;
};

Outcome training_efficacy(TrainedHead& out) {
  Outcome o;
  const SceneSpec scene;
  const ModelParams params = make_model_params(scene.n, 32, 0);
  const InterDroConfig cfg;
  auto run = [&] {
    const auto data = harvest_training_data(scene, params, 4096, cfg.batch_size, cfg.seed);
    const InterHeadParams init = random_inter_head(scene.n, 32, cfg.seed);
    const double before = mean_center_kl(init, data);
    TrainResult r = train(init, data, cfg);
    return std::tuple{before, mean_center_kl(r.head, data), std::move(r)};
  };
  const auto t0 = std::chrono::steady_clock::now();
  auto [before, after, result] = run();
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.head = result.head;
  auto [before2, after2, result2] = run();
  bool same = before == before2 && after == after2 && result.history.size() == result2.history.size();
  for (std::size_t i = 0; same && i < result.history.size(); ++i) same = result.history[i].total == result2.history[i].total;
  if (!same) o.fail("rerun with the same seed differs");
  if (!(after <= 0.5 * before)) o.fail("KL " + fmt("%.4f", before) + " -> " + fmt("%.4f", after));
  if (o.passed) {
    o.detail = "n=64 d=32 4096 pairs " + std::to_string(cfg.steps) + " steps; KL " + fmt("%.4f", before) + " -> " +
               fmt("%.4f", after) + " (ratio " + fmt("%.3f", after / before) + "); rerun identical";
  }
  return o;
}

Outcome alignment_trend(const TrainedHead& trained) {
  Outcome o;
  const std::size_t seeds = 20;
  double kl_ciar = 0, kl_device = 0, rate_ciar = 0, rate_uniform = 0;
  for (std::uint64_t s = 0; s < seeds; ++s) {
    OwnedWorld w(testing::seeded_spec(s));
    const DecodeConfig cfg;
    const DecodeResult c = run_ciar(cfg, w.view(), trained.head);
    const DecodeResult u = run_uniform_verification(cfg, w.view(), trained.head);
    const DecodeResult d = run_baseline_device(cfg, w.view());
    kl_ciar += mean_kl_to_cloud(c.trace) / seeds;
    kl_device += mean_kl_to_cloud(d.trace) / seeds;
    rate_ciar += c.metrics.cloud_call_rate / seeds;
    rate_uniform += u.metrics.cloud_call_rate / seeds;
  }
  if (!(kl_ciar <= kl_device)) o.fail("KL ciar " + fmt("%.4f", kl_ciar) + " > device " + fmt("%.4f", kl_device));
  if (!(rate_ciar <= 0.5 * rate_uniform)) {
    o.fail("rate ciar " + fmt("%.4f", rate_ciar) + " > 0.5 x uniform " + fmt("%.4f", rate_uniform));
  }
  if (o.passed) {
    o.detail = "20 seeds; KL ciar " + fmt("%.4f", kl_ciar) + " <= device " + fmt("%.4f", kl_device) + "; rate ciar " +
               fmt("%.4f", rate_ciar) + " vs uniform " + fmt("%.4f", rate_uniform);
  }
  return o;
}

struct Criterion {
  const char* id;
  const char* title;
  double limit_s;
  std::function<Outcome()> run;
  double extra_s = 0.0;  // time spent elsewhere on work this criterion depends on
};

}  // namespace
}  // namespace ciar

int main() {
  using namespace ciar;
  TrainedHead trained;
  std::vector<Criterion> criteria{
      {"AC-1", "interval fusion validity", 30, fuse_validity},
      {"AC-2", "uncertainty theorem suite", 60, theorem_suite},
      {"AC-3", "decoding trace arithmetic", 10, trace_arithmetic},
      {"AC-4", "gate dominance and boundary routing", 120, gate_dominance},
      {"AC-5", "threshold trend", 300, threshold_trend},
      {"AC-6", "network cost structure", 10, netsim_structure},
      {"AC-7", "robust loss correctness", 30, dro_correctness},
      {"AC-8", "training efficacy", 180, [&] { return training_efficacy(trained); }},
      {"AC-9", "end-to-end alignment trend", 180, [&] { return alignment_trend(trained); }},
  };
  int failed = 0;
  for (Criterion& c : criteria) {
    if (std::string(c.id) == "AC-9") c.extra_s = trained.seconds;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.fail(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() + c.extra_s;
    if (secs > c.limit_s) o.fail("took " + fmt("%.1f", secs) + " s, limit " + fmt("%.0f", c.limit_s) + " s");
    failed += o.passed ? 0 : 1;
    std::printf("%s %s  %s [%.2f s / %.0f s]: %s\n", c.id, o.passed ? "PASS" : "FAIL", c.title, secs, c.limit_s,
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
