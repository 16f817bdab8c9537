// Copyright 2026 The ciarsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "commands.hpp"

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "ciar/properties.hpp"

namespace ciar::cli {

namespace {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Runs fn(0..count-1) on up to `jobs` threads; results keep index order and
// the lowest-index exception is rethrown.
template <typename T, typename F>
std::vector<T> parallel_map(std::size_t count, std::size_t jobs, F fn) {
  std::vector<T> results(count);
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        results[i] = fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(count, 1));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return results;
}

// Models, head and output location shared by every episode of a run.
struct Session {
  ModelParams params;
  InterHeadParams head;
};

InterHeadParams build_head(const RunConfig& cfg, const ModelParams& params) {
  switch (cfg.head.kind) {
    case HeadSpec::Kind::kAnalytic:
      return analytic_inter_head(params, cfg.head.analytic);
    case HeadSpec::Kind::kRandom:
      return random_inter_head(params.n, params.d, cfg.head.random_seed);
    case HeadSpec::Kind::kFile: {
      InterHeadParams ih;
      try {
        ih = load_inter_head(cfg.head.path);
      } catch (const std::exception& e) {
        throw IoError(e.what());
      }
      if (ih.n() != params.n || ih.d() != params.d) {
        throw ConfigError("head.path", "head shape " + std::to_string(ih.n()) + "x" + std::to_string(ih.d()) +
                                           " does not match scene.n x models.d = " + std::to_string(params.n) +
                                           "x" + std::to_string(params.d));
      }
      return ih;
    }
  }
  throw std::logic_error("unhandled head kind");
}

Session make_session(const RunConfig& cfg) {
  Session s{make_model_params(cfg.scene.n, cfg.models.d, cfg.models.seed, cfg.models.weights), {}};
  s.head = build_head(cfg, s.params);
  return s;
}

DecodeResult run_policy(Policy policy, const DecodeConfig& dc, const ToyWorld& world, const InterHeadParams& ih) {
  switch (policy) {
    case Policy::kCiar:
      return run_ciar(dc, world, ih);
    case Policy::kUniform:
      return run_uniform_verification(dc, world, ih);
    case Policy::kBaseCloud:
      return run_baseline_cloud(dc, world);
    case Policy::kBaseDevice:
      return run_baseline_device(dc, world);
  }
  throw std::logic_error("unhandled policy");
}

// Decodes one episode of `policy` on the scene seeded `seed`.
DecodeResult run_episode(const RunConfig& cfg, const Session& s, DecodeConfig dc, Policy policy, std::uint64_t seed) {
  SceneSpec spec = cfg.scene;
  spec.seed = seed;
  dc.seed = seed;
  const TokenGrid grid = generate_scene(spec);
  const ToyWorld world{spec, grid, s.params};
  return run_policy(policy, dc, world, s.head);
}

std::filesystem::path prepare_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  return f;
}

void close_checked(std::ofstream& f, const std::filesystem::path& path) {
  f.close();
  if (!f) throw IoError("failed writing " + path.string());
}

std::string fmt(const char* pattern, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, x);
  return buf;
}

}  // namespace

int cmd_simulate(const RunConfig& cfg, const CommandContext& ctx) {
  const Session s = make_session(cfg);
  const auto seeds = cfg.episode_seeds();
  const std::size_t per_seed = cfg.policies.size();

  struct Cell {
    std::string metrics_row;
    std::string latency_row;
    std::string trace_jsonl;
    EpisodeMetrics metrics;
    LatencyReport latency;
  };
  const auto cells = parallel_map<Cell>(seeds.size() * per_seed, ctx.jobs, [&](std::size_t i) {
    const std::uint64_t seed = seeds[i / per_seed];
    const Policy policy = cfg.policies[i % per_seed];
    const DecodeResult r = run_episode(cfg, s, cfg.decode, policy, seed);
    Cell c;
    c.metrics = r.metrics;
    c.latency = episode_latency(r.trace, cfg.network, cfg.payload, cfg.compute);
    c.metrics_row = metrics_csv_row(seed, policy_name(policy), cfg.decode, r.metrics);
    c.latency_row = latency_csv_row(seed, policy_name(policy), cfg.network_name, c.latency);
    std::ostringstream os;
    write_trace_jsonl(os, r.trace);
    c.trace_jsonl = os.str();
    return c;
  });

  const auto dir = prepare_dir(cfg.output_dir);
  prepare_dir(dir / "traces");
  auto metrics_path = dir / "metrics.csv";
  auto latency_path = dir / "latency.csv";
  std::ofstream metrics = open_out(metrics_path);
  std::ofstream latency = open_out(latency_path);
  metrics << kMetricsCsvHeader << '\n';
  latency << kLatencyCsvHeader << '\n';
  for (std::size_t i = 0; i < cells.size(); ++i) {
    metrics << cells[i].metrics_row << '\n';
    latency << cells[i].latency_row << '\n';
    const auto trace_path = dir / "traces" /
                            (std::string(policy_name(cfg.policies[i % per_seed])) + "_seed" +
                             std::to_string(seeds[i / per_seed]) + ".jsonl");
    std::ofstream trace = open_out(trace_path);
    trace << cells[i].trace_jsonl;
    close_checked(trace, trace_path);
  }
  close_checked(metrics, metrics_path);
  close_checked(latency, latency_path);

  char line[160];
  std::snprintf(line, sizeof line, "%-12s %15s %10s %10s %12s\n", "policy", "cloud_call_rate", "episodes", "steps",
                "total_ms");
  ctx.out << line;
  for (std::size_t p = 0; p < per_seed; ++p) {
    double rate = 0.0, episodes = 0.0, steps = 0.0, total = 0.0;
    for (std::size_t k = 0; k < seeds.size(); ++k) {
      const Cell& c = cells[k * per_seed + p];
      rate += c.metrics.cloud_call_rate;
      episodes += static_cast<double>(c.metrics.episodes);
      steps += static_cast<double>(c.metrics.steps);
      total += c.latency.total_ms;
    }
    const double n = static_cast<double>(seeds.size());
    std::snprintf(line, sizeof line, "%-12s %15.4f %10.2f %10.2f %12.2f\n",
                  std::string(policy_name(cfg.policies[p])).c_str(), rate / n, episodes / n, steps / n, total / n);
    ctx.out << line;
  }
  ctx.out << "network " << cfg.network_name << ", " << seeds.size() << " seeds; wrote " << metrics_path.string()
          << ", " << latency_path.string() << " and " << cells.size() << " traces\n";
  return kExitOk;
}

int cmd_sweep(const RunConfig& cfg, const CommandContext& ctx) {
  if (!cfg.sweep) throw ConfigError("sweep", "missing; the sweep subcommand needs a sweep block");
  const SweepGrid& g = *cfg.sweep;
  const Session s = make_session(cfg);

  struct Key {
    double tau;
    double rho;
    std::size_t K;
    std::uint64_t seed;
  };
  std::vector<Key> keys;
  for (double tau : g.tau)
    for (double rho : g.rho)
      for (std::size_t K : g.K)
        for (std::uint64_t seed : g.seeds) keys.push_back({tau, rho, K, seed});

  struct Row {
    std::string text;
    double rate = 0.0;
  };
  const auto rows = parallel_map<Row>(keys.size(), ctx.jobs, [&](std::size_t i) {
    DecodeConfig dc = cfg.decode;
    dc.tau = keys[i].tau;
    dc.rho = keys[i].rho;
    dc.K = keys[i].K;
    const DecodeResult r = run_episode(cfg, s, dc, g.policy, keys[i].seed);
    return Row{metrics_csv_row(keys[i].seed, policy_name(g.policy), dc, r.metrics), r.metrics.cloud_call_rate};
  });

  const auto dir = prepare_dir(cfg.output_dir);
  const auto path = dir / "sweep.csv";
  std::ofstream out = open_out(path);
  out << kMetricsCsvHeader << '\n';
  for (const Row& r : rows) out << r.text << '\n';
  close_checked(out, path);

  // Mean cloud call rate per (tau, rho, K) cell.
  ctx.out << "tau,rho,K,mean_cloud_call_rate\n";
  const std::size_t per_cell = g.seeds.size();
  for (std::size_t c = 0; c * per_cell < rows.size(); ++c) {
    double sum = 0.0;
    for (std::size_t k = 0; k < per_cell; ++k) sum += rows[c * per_cell + k].rate;
    const Key& key = keys[c * per_cell];
    ctx.out << format_double(key.tau) << ',' << format_double(key.rho) << ',' << key.K << ','
            << fmt("%.4f", sum / static_cast<double>(per_cell)) << '\n';
  }
  ctx.out << "wrote " << rows.size() << " rows to " << path.string() << '\n';
  return kExitOk;
}

int cmd_netsim(const RunConfig& cfg, const CommandContext& ctx) {
  const Session s = make_session(cfg);
  const auto seeds = cfg.episode_seeds();
  const std::vector<Policy> policies{Policy::kCiar, Policy::kUniform};
  const auto& profiles = builtin_profiles();

  const auto traces = parallel_map<DecodeTrace>(seeds.size() * policies.size(), ctx.jobs, [&](std::size_t i) {
    return run_episode(cfg, s, cfg.decode, policies[i % policies.size()], seeds[i / policies.size()]).trace;
  });

  const auto dir = prepare_dir(cfg.output_dir);
  const auto path = dir / "netsim.csv";
  std::ofstream out = open_out(path);
  out << kLatencyCsvHeader << '\n';
  std::map<std::pair<std::string, std::string>, double> ratio_sum;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const std::string policy(policy_name(policies[i % policies.size()]));
    for (const auto& [name, profile] : profiles) {
      const LatencyReport r = episode_latency(traces[i], profile, cfg.payload, cfg.compute);
      out << latency_csv_row(seeds[i / policies.size()], policy, name, r) << '\n';
      ratio_sum[{policy, name}] += r.comm_ratio;
    }
  }
  close_checked(out, path);

  ctx.out << "mean comm_ratio over " << seeds.size() << " seeds\n";
  for (Policy p : policies) {
    ctx.out << policy_name(p);
    for (const auto& [name, profile] : profiles) {
      ctx.out << "  " << name << '=' << fmt("%.4f", ratio_sum[{std::string(policy_name(p)), name}] /
                                                        static_cast<double>(seeds.size()));
    }
    ctx.out << '\n';
  }
  ctx.out << "wrote " << path.string() << '\n';
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, const CommandContext& ctx) {
  if (!cfg.training) throw ConfigError("training", "missing; the train subcommand needs a training block");
  const TrainSpec& t = *cfg.training;
  const ModelParams params = make_model_params(cfg.scene.n, cfg.models.d, cfg.models.seed, cfg.models.weights);

  InterHeadParams init;
  if (t.init_head) {
    try {
      init = load_inter_head(*t.init_head);
    } catch (const std::exception& e) {
      throw IoError(e.what());
    }
    if (init.n() != params.n || init.d() != params.d) {
      throw ConfigError("training.init_head", "head shape does not match scene.n x models.d");
    }
  } else {
    init = random_inter_head(params.n, params.d, t.config.seed);
  }

  const auto data = harvest_training_data(cfg.scene, params, t.pairs, t.config.batch_size, t.config.seed);
  const double kl_before = mean_center_kl(init, data);
  const TrainResult result = train(init, data, t.config);
  const double kl_after = mean_center_kl(result.head, data);

  const auto dir = prepare_dir(cfg.output_dir);
  const auto head_path = dir / "inter_head.bin";
  const auto loss_path = dir / "loss.csv";
  try {
    save_inter_head(head_path, result.head);
  } catch (const std::exception& e) {
    throw IoError(e.what());
  }
  std::ofstream loss = open_out(loss_path);
  loss << kLossCsvHeader << '\n';
  for (std::size_t i = 0; i < result.history.size(); ++i) loss << loss_csv_row(i, result.history[i]) << '\n';
  close_checked(loss, loss_path);

  ctx.out << "initial KL " << fmt("%.6f", kl_before) << '\n';
  ctx.out << "final KL " << fmt("%.6f", kl_after) << '\n';
  ctx.out << "wrote " << head_path.string() << " and " << loss_path.string() << '\n';
  return kExitOk;
}

int cmd_verify(const VerifyOptions& opts, const CommandContext& ctx) {
  PropertySuiteConfig pc;
  pc.seed = opts.seed;
  pc.sizes = opts.sizes;
  bool ok = true;
  for (const PropertyResult& r : run_property_suite(pc)) {
    if (r.passed) {
      ctx.out << "PASS " << r.name << " (" << r.cases << " cases)\n";
    } else {
      ok = false;
      ctx.out << "FAIL " << r.name << ": " << r.detail << '\n';
    }
  }
  return ok ? kExitOk : kExitFailure;
}

std::size_t resolve_jobs(std::optional<std::size_t> flag, const char* env_value) {
  if (flag) return std::max<std::size_t>(*flag, 1);
  if (env_value != nullptr && *env_value != '\0') {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env_value, &end, 10);
    if (end != nullptr && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
  }
  return std::max<std::size_t>(std::thread::hardware_concurrency(), 1);
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Uncertainty-gated cloud/device decoding simulator", "ciarsim"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::size_t> jobs;
  std::optional<double> tau;
  std::optional<double> rho;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--seed", seed, "base seed (overrides the config's seed)");
  app.add_option("--out", out_dir, "output directory (overrides output_dir)");
  app.add_option("--jobs", jobs, "worker threads; defaults to $CIAR_SIM_JOBS")->check(CLI::PositiveNumber);
  app.add_option("--tau", tau, "gate threshold override");
  app.add_option("--rho", rho, "prefix rate override");

  auto* simulate = app.add_subcommand("simulate", "run every policy on each seed and summarize");
  auto* sweep = app.add_subcommand("sweep", "cross-product of tau/rho/K/seed grids");
  auto* netsim = app.add_subcommand("netsim", "latency report over the builtin network profiles");
  auto* train_cmd = app.add_subcommand("train", "train the interval head against the cloud model");
  auto* verify = app.add_subcommand("verify", "run the property checks");
  std::vector<std::size_t> sizes;
  verify->add_option("--sizes", sizes, "vocabulary sizes to exercise")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  const CommandContext ctx{resolve_jobs(jobs, std::getenv("CIAR_SIM_JOBS")), out, err};
  try {
    if (verify->parsed()) {
      VerifyOptions opts;
      if (seed) opts.seed = *seed;
      if (!sizes.empty()) opts.sizes = sizes;
      return cmd_verify(opts, ctx);
    }
    if (config_path.empty()) {
      err << "error: --config is required for this subcommand\n";
      return kExitInvalidConfig;
    }
    Overrides ov{tau, rho, seed, out_dir ? std::optional<std::filesystem::path>(*out_dir) : std::nullopt};
    RunConfig cfg;
    try {
      cfg = load_run_config(config_path, ov);
    } catch (const JsonSyntaxError& e) {
      err << "error: " << config_path << ": " << e.what() << '\n';
      return kExitMalformedJson;
    } catch (const ConfigError&) {
      throw;
    } catch (const std::runtime_error& e) {
      throw IoError(e.what());
    }
    if (simulate->parsed()) return cmd_simulate(cfg, ctx);
    if (sweep->parsed()) return cmd_sweep(cfg, ctx);
    if (netsim->parsed()) return cmd_netsim(cfg, ctx);
    if (train_cmd->parsed()) return cmd_train(cfg, ctx);
  } catch (const ConfigError& e) {
    err << "error: invalid config: " << e.what() << '\n';
    return kExitInvalidConfig;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const TrainingDiverged& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace ciar::cli
