// Copyright 2026 The ciarsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "run_config.hpp"

#include <algorithm>
#include <set>

namespace ciar::cli {

std::string_view policy_name(Policy p) {
  switch (p) {
    case Policy::kCiar:
      return "ciar";
    case Policy::kUniform:
      return "uniform";
    case Policy::kBaseCloud:
      return "base_cloud";
    case Policy::kBaseDevice:
      return "base_device";
  }
  return "?";
}

std::vector<std::uint64_t> RunConfig::episode_seeds() const {
  std::vector<std::uint64_t> out(episodes);
  for (std::size_t i = 0; i < episodes; ++i) out[i] = seed + i;
  return out;
}

namespace {

Policy parse_policy(const Json& j, const std::string& where) {
  const std::string name = j.is_string() ? j.get<std::string>() : "";
  for (Policy p : {Policy::kCiar, Policy::kUniform, Policy::kBaseCloud, Policy::kBaseDevice}) {
    if (name == policy_name(p)) return p;
  }
  throw ConfigError(where, "expected one of ciar, uniform, base_cloud, base_device");
}

std::uint64_t get_u64(const Json& j, const std::string& where) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  throw ConfigError(where, "expected a nonnegative integer");
}

double get_double(const Json& j, const std::string& where) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string() && (j.get<std::string>() == "inf" || j.get<std::string>() == "+inf")) {
    return std::numeric_limits<double>::infinity();
  }
  throw ConfigError(where, "expected a number");
}

const Json& require_object(const Json& j, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where, "expected an object");
  return j;
}

// Copy of `j` without `keys`, which the caller handles itself.
Json without(const Json& j, std::initializer_list<const char*> keys) {
  Json copy = j;
  for (const char* k : keys) copy.erase(k);
  return copy;
}

template <typename T, typename F>
std::vector<T> parse_grid(const Json& j, const std::string& where, F element) {
  if (!j.is_array()) throw ConfigError(where, "expected an array");
  if (j.empty()) throw ConfigError(where, "grid must not be empty");
  std::vector<T> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(element(j[i], where + "[" + std::to_string(i) + "]"));
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

ModelSpec parse_models(const Json& j) {
  require_object(j, "models");
  ModelSpec m;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string where = "models." + it.key();
    if (it.key() == "d") {
      m.d = static_cast<std::size_t>(get_u64(*it, where));
      if (m.d == 0) throw ConfigError(where, "must be positive");
    } else if (it.key() == "seed") {
      m.seed = get_u64(*it, where);
    } else if (it.key() == "device_weights") {
      const std::string w = it->is_string() ? it->get<std::string>() : "";
      if (w == "independent") {
        m.weights = DeviceWeights::kIndependent;
      } else if (w == "shared") {
        m.weights = DeviceWeights::kShared;
      } else {
        throw ConfigError(where, "expected \"independent\" or \"shared\"");
      }
    } else {
      throw ConfigError(where, "unknown field");
    }
  }
  return m;
}

HeadSpec parse_head(const Json& j) {
  require_object(j, "head");
  HeadSpec h;
  std::string kind = "analytic";
  if (auto it = j.find("kind"); it != j.end()) {
    if (!it->is_string()) throw ConfigError("head.kind", "expected a string");
    kind = it->get<std::string>();
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string where = "head." + it.key();
    const std::string& key = it.key();
    if (key == "kind") continue;
    if (kind == "analytic" && key == "gain") {
      h.analytic.gain = get_double(*it, where);
    } else if (kind == "analytic" && key == "base_radius") {
      h.analytic.base_radius = get_double(*it, where);
    } else if (kind == "analytic" && key == "radius_spread") {
      h.analytic.radius_spread = get_double(*it, where);
    } else if ((kind == "analytic" || kind == "random") && key == "seed") {
      h.analytic.seed = get_u64(*it, where);
      h.random_seed = h.analytic.seed;
    } else if (kind == "file" && key == "path") {
      if (!it->is_string()) throw ConfigError(where, "expected a path string");
      h.path = it->get<std::string>();
    } else {
      throw ConfigError(where, "unknown field for head kind \"" + kind + "\"");
    }
  }
  if (kind == "analytic") {
    h.kind = HeadSpec::Kind::kAnalytic;
    if (!(h.analytic.base_radius > 0.0)) throw ConfigError("head.base_radius", "must be positive");
  } else if (kind == "random") {
    h.kind = HeadSpec::Kind::kRandom;
  } else if (kind == "file") {
    h.kind = HeadSpec::Kind::kFile;
    if (h.path.empty()) throw ConfigError("head.path", "missing");
  } else {
    throw ConfigError("head.kind", "expected \"analytic\", \"random\" or \"file\"");
  }
  return h;
}

SweepGrid parse_sweep(const Json& j, const RunConfig& base) {
  require_object(j, "sweep");
  SweepGrid g;
  g.tau = {base.decode.tau};
  g.rho = {base.decode.rho};
  g.K = {base.decode.K};
  g.seeds = base.episode_seeds();
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string where = "sweep." + it.key();
    if (it.key() == "tau") {
      g.tau = parse_grid<double>(*it, where, get_double);
    } else if (it.key() == "rho") {
      g.rho = parse_grid<double>(*it, where, get_double);
    } else if (it.key() == "K") {
      g.K = parse_grid<std::size_t>(*it, where, [](const Json& v, const std::string& w) {
        return static_cast<std::size_t>(get_u64(v, w));
      });
    } else if (it.key() == "seeds") {
      g.seeds = parse_grid<std::uint64_t>(*it, where, get_u64);
    } else if (it.key() == "policy") {
      g.policy = parse_policy(*it, where);
    } else {
      throw ConfigError(where, "unknown field");
    }
  }
  if (g.seeds.empty()) throw ConfigError("sweep.seeds", "grid must not be empty");
  // Every cell must be a valid decode configuration.
  for (double tau : g.tau) {
    for (double rho : g.rho) {
      for (std::size_t K : g.K) {
        DecodeConfig c = base.decode;
        c.tau = tau;
        c.rho = rho;
        c.K = K;
        try {
          c.validate();
        } catch (const std::invalid_argument& e) {
          throw ConfigError("sweep", std::string("grid cell is invalid: ") + e.what());
        }
      }
    }
  }
  return g;
}

TrainSpec parse_training(const Json& j) {
  require_object(j, "training");
  TrainSpec t;
  t.config = training_from_json(without(j, {"pairs", "init_head"}), "training");
  if (auto it = j.find("pairs"); it != j.end()) {
    t.pairs = static_cast<std::size_t>(get_u64(*it, "training.pairs"));
    if (t.pairs == 0) throw ConfigError("training.pairs", "must be positive");
  }
  if (auto it = j.find("init_head"); it != j.end()) {
    if (!it->is_string()) throw ConfigError("training.init_head", "expected a path string");
    t.init_head = it->get<std::string>();
  }
  return t;
}

}  // namespace

RunConfig parse_run_config(const Json& j, const Overrides& overrides) {
  require_object(j, "config");
  static const std::set<std::string> known{"scene",   "models",   "head",     "decode",   "network",
                                           "payload", "compute",  "policies", "seed",     "episodes",
                                           "training", "sweep",   "output_dir"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) throw ConfigError(it.key(), "unknown field");
  }

  RunConfig c;
  if (auto it = j.find("seed"); it != j.end()) c.seed = get_u64(*it, "seed");
  if (overrides.seed) c.seed = *overrides.seed;
  if (auto it = j.find("episodes"); it != j.end()) {
    c.episodes = static_cast<std::size_t>(get_u64(*it, "episodes"));
    if (c.episodes == 0) throw ConfigError("episodes", "must be positive");
  }
  if (auto it = j.find("scene"); it != j.end()) {
    if (it->is_object() && it->contains("seed")) {
      throw ConfigError("scene.seed", "scene seeds come from the top-level seed; set that instead");
    }
    c.scene = scene_from_json(*it, "scene");
  }
  if (auto it = j.find("models"); it != j.end()) c.models = parse_models(*it);
  if (auto it = j.find("head"); it != j.end()) c.head = parse_head(*it);

  Json decode = Json::object();
  if (auto it = j.find("decode"); it != j.end()) decode = require_object(*it, "decode");
  if (!decode.contains("seq_len")) decode["seq_len"] = c.scene.seq_len();
  if (overrides.tau) decode["tau"] = std::isinf(*overrides.tau) ? Json("inf") : Json(*overrides.tau);
  if (overrides.rho) decode["rho"] = *overrides.rho;
  c.decode = decode_from_json(decode, "decode");
  if (c.decode.seq_len != c.scene.seq_len()) {
    throw ConfigError("decode.seq_len", "must equal scene.height * scene.width = " + std::to_string(c.scene.seq_len()));
  }

  if (auto it = j.find("network"); it != j.end()) {
    c.network = network_from_json(*it, "network");
    c.network_name = it->is_string() ? it->get<std::string>() : "custom";
  }
  if (auto it = j.find("payload"); it != j.end()) c.payload = payload_from_json(*it, "payload");
  c.decode.payload = c.payload;
  if (auto it = j.find("compute"); it != j.end()) c.compute = compute_from_json(*it, "compute");
  if (auto it = j.find("policies"); it != j.end()) {
    if (!it->is_array() || it->empty()) throw ConfigError("policies", "expected a nonempty array");
    c.policies.clear();
    for (std::size_t i = 0; i < it->size(); ++i) {
      const Policy p = parse_policy((*it)[i], "policies[" + std::to_string(i) + "]");
      if (std::find(c.policies.begin(), c.policies.end(), p) == c.policies.end()) c.policies.push_back(p);
    }
  }
  if (auto it = j.find("training"); it != j.end()) c.training = parse_training(*it);
  if (auto it = j.find("sweep"); it != j.end()) c.sweep = parse_sweep(*it, c);
  if (auto it = j.find("output_dir"); it != j.end()) {
    if (!it->is_string()) throw ConfigError("output_dir", "expected a path string");
    c.output_dir = it->get<std::string>();
  }
  if (overrides.out) c.output_dir = *overrides.out;
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, const Overrides& overrides) {
  RunConfig c = parse_run_config(read_json_file(path), overrides);
  // Relative head paths are resolved against the config file's directory.
  const auto base = path.parent_path();
  if (c.head.kind == HeadSpec::Kind::kFile && c.head.path.is_relative()) c.head.path = base / c.head.path;
  if (c.training && c.training->init_head && c.training->init_head->is_relative()) {
    c.training->init_head = base / *c.training->init_head;
  }
  return c;
}

}  // namespace ciar::cli
