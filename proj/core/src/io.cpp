// Copyright 2026 The ciarsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "ciar/io.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <type_traits>
#include <sstream>

namespace ciar {

ConfigError::ConfigError(const std::string& field, const std::string& reason)
    : std::invalid_argument(field + ": " + reason), field_(field) {}

JsonSyntaxError::JsonSyntaxError(std::size_t byte_offset, const std::string& detail)
    : std::runtime_error("malformed JSON at byte " + std::to_string(byte_offset) + ": " + detail),
      byte_offset_(byte_offset) {}

Json parse_json(std::string_view text) {
  try {
    return Json::parse(text.begin(), text.end());
  } catch (const Json::parse_error& e) {
    // nlohmann reports the 1-based position of the offending character.
    throw JsonSyntaxError(e.byte == 0 ? 0 : e.byte - 1, e.what());
  }
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_json(buf.str());
}

namespace {

// Reads the fields of one JSON object, tracking which keys were consumed.
class FieldReader {
 public:
  FieldReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  std::string field(std::string_view key) const { return path_ + "." + std::string(key); }

  const Json* find(std::string_view key) {
    used_.emplace(key);
    auto it = j_.find(std::string(key));
    return it == j_.end() ? nullptr : &*it;
  }

  void read(std::string_view key, double& out) {
    if (const Json* v = find(key)) out = as_double(*v, field(key));
  }

  template <typename U>
    requires std::is_unsigned_v<U>
  void read(std::string_view key, U& out) {
    if (const Json* v = find(key)) {
      const std::uint64_t x = as_u64(*v, field(key));
      if (x > std::numeric_limits<U>::max()) throw ConfigError(field(key), "out of range");
      out = static_cast<U>(x);
    }
  }

  // Call after all reads; rejects keys nobody asked for.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.contains(it.key())) throw ConfigError(field(it.key()), "unknown field");
    }
  }

  static double as_double(const Json& v, const std::string& where) {
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
      const std::string s = v.get<std::string>();
      if (s == "inf" || s == "+inf" || s == "infinity") return std::numeric_limits<double>::infinity();
    }
    throw ConfigError(where, "expected a number");
  }

  static std::uint64_t as_u64(const Json& v, const std::string& where) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer()) throw ConfigError(where, "must be nonnegative");
    throw ConfigError(where, "expected a nonnegative integer");
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string, std::less<>> used_;
};

// Runs a type's own validate() and reports failures against `path`. Messages
// that open with a dotted name such as "decode.rho must ..." are attributed
// to that field, re-rooted under `path`.
template <typename T>
void validate_at(const T& value, const std::string& path) {
  try {
    value.validate();
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    const std::string head = msg.substr(0, msg.find(' '));
    const auto dot = head.find('.');
    const std::string root = path.substr(path.rfind('.') == std::string::npos ? 0 : path.rfind('.') + 1);
    if (dot != std::string::npos && head.compare(0, dot, root) == 0 && head.back() != ':') {
      throw ConfigError(path + head.substr(dot), msg.substr(head.size() + 1));
    }
    throw ConfigError(path, msg);
  }
}

}  // namespace

SceneSpec scene_from_json(const Json& j, const std::string& path) {
  FieldReader r(j, path);
  SceneSpec s;
  r.read("height", s.height);
  r.read("width", s.width);
  r.read("n", s.n);
  r.read("num_regions", s.num_regions);
  r.read("boundary_noise", s.boundary_noise);
  r.read("interior_noise", s.interior_noise);
  r.read("temperature", s.temperature);
  r.read("seed", s.seed);
  r.finish();
  validate_at(s, path);
  return s;
}

DecodeConfig decode_from_json(const Json& j, const std::string& path) {
  FieldReader r(j, path);
  DecodeConfig c;
  r.read("seq_len", c.seq_len);
  r.read("K", c.K);
  r.read("tau", c.tau);
  r.read("rho", c.rho);
  r.read("seed", c.seed);
  if (const Json* v = r.find("feature_mode")) {
    const std::string where = r.field("feature_mode");
    if (!v->is_string()) throw ConfigError(where, "expected \"full\" or \"summary\"");
    const auto mode = v->get<std::string>();
    if (mode == "full") {
      c.feature_mode = FeatureMode::kFull;
    } else if (mode == "summary") {
      c.feature_mode = FeatureMode::kSummary;
    } else {
      throw ConfigError(where, "expected \"full\" or \"summary\", got \"" + mode + "\"");
    }
  }
  if (const Json* v = r.find("threshold_policy")) {
    FieldReader t(*v, r.field("threshold_policy"));
    if (const Json* kind = t.find("kind")) {
      const std::string where = t.field("kind");
      const std::string k = kind->is_string() ? kind->get<std::string>() : "";
      if (k == "static") {
        c.threshold_policy.kind = ThresholdPolicy::Kind::kStatic;
      } else if (k == "rolling_quantile") {
        c.threshold_policy.kind = ThresholdPolicy::Kind::kRollingQuantile;
      } else {
        throw ConfigError(where, "expected \"static\" or \"rolling_quantile\"");
      }
    }
    t.read("quantile", c.threshold_policy.quantile);
    t.read("window", c.threshold_policy.window);
    t.finish();
  }
  if (const Json* v = r.find("fuse")) {
    FieldReader f(*v, r.field("fuse"));
    f.read("lower_target", c.fuse.lower_target);
    f.read("upper_target", c.fuse.upper_target);
    f.read("radius_clamp_max", c.fuse.radius_clamp_max);
    f.finish();
  }
  r.finish();
  validate_at(c, path);
  return c;
}

NetworkProfile network_from_json(const Json& j, const std::string& path) {
  if (j.is_string()) {
    try {
      return profile_by_name(j.get<std::string>());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(path, e.what());
    }
  }
  FieldReader r(j, path);
  NetworkProfile p;
  r.read("bandwidth_mbps", p.bandwidth_mbps);
  r.read("rtt_ms", p.rtt_ms);
  r.finish();
  validate_at(p, path);
  return p;
}

PayloadModel payload_from_json(const Json& j, const std::string& path) {
  FieldReader r(j, path);
  PayloadModel p;
  r.read("bits_per_token_up", p.bits_per_token_up);
  r.read("bits_per_token_down", p.bits_per_token_down);
  r.read("bits_per_feature", p.bits_per_feature);
  r.read("bits_fixed_per_call", p.bits_fixed_per_call);
  r.finish();
  validate_at(p, path);
  return p;
}

ComputeCost compute_from_json(const Json& j, const std::string& path) {
  FieldReader r(j, path);
  ComputeCost c;
  r.read("device_ms_per_step", c.device_ms_per_step);
  r.read("cloud_ms_per_step", c.cloud_ms_per_step);
  r.finish();
  validate_at(c, path);
  return c;
}

InterDroConfig training_from_json(const Json& j, const std::string& path) {
  FieldReader r(j, path);
  InterDroConfig c;
  r.read("lambda_v", c.lambda_v);
  r.read("lambda_p", c.lambda_p);
  r.read("lambda_beta", c.lambda_beta);
  r.read("alpha", c.alpha);
  r.read("learning_rate", c.learning_rate);
  r.read("steps", c.steps);
  r.read("batch_size", c.batch_size);
  r.read("seed", c.seed);
  r.finish();
  validate_at(c, path);
  return c;
}

namespace {

Vec vec_from_json(const Json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where, "expected an array of numbers");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    v[static_cast<Eigen::Index>(i)] = FieldReader::as_double(j[i], where + "[" + std::to_string(i) + "]");
  }
  return v;
}

Json vec_to_json(const Vec& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

// JSON has no infinity; unbounded thresholds are written as the string "inf".
Json number_or_inf(double x) { return std::isinf(x) && x > 0 ? Json("inf") : Json(x); }

}  // namespace

ProbIntervalVec prob_interval_from_json(const Json& j, const std::string& path) {
  FieldReader r(j, path);
  const Json* lo = r.find("lower");
  const Json* up = r.find("upper");
  if (lo == nullptr) throw ConfigError(r.field("lower"), "missing");
  if (up == nullptr) throw ConfigError(r.field("upper"), "missing");
  r.finish();
  ProbIntervalVec p{vec_from_json(*lo, r.field("lower")), vec_from_json(*up, r.field("upper"))};
  if (p.lower.size() != p.upper.size()) throw ConfigError(path, "lower and upper lengths differ");
  return p;
}

Json to_json(const SceneSpec& s) {
  return Json{{"height", s.height},
              {"width", s.width},
              {"n", s.n},
              {"num_regions", s.num_regions},
              {"boundary_noise", s.boundary_noise},
              {"interior_noise", s.interior_noise},
              {"temperature", s.temperature},
              {"seed", s.seed}};
}

Json to_json(const DecodeConfig& c) {
  const bool rolling = c.threshold_policy.kind == ThresholdPolicy::Kind::kRollingQuantile;
  return Json{{"seq_len", c.seq_len},
              {"K", c.K},
              {"tau", number_or_inf(c.tau)},
              {"rho", c.rho},
              {"seed", c.seed},
              {"feature_mode", c.feature_mode == FeatureMode::kFull ? "full" : "summary"},
              {"threshold_policy",
               {{"kind", rolling ? "rolling_quantile" : "static"},
                {"quantile", c.threshold_policy.quantile},
                {"window", c.threshold_policy.window}}},
              {"fuse",
               {{"lower_target", c.fuse.lower_target},
                {"upper_target", c.fuse.upper_target},
                {"radius_clamp_max", c.fuse.radius_clamp_max}}}};
}

Json to_json(const NetworkProfile& p) { return Json{{"bandwidth_mbps", p.bandwidth_mbps}, {"rtt_ms", p.rtt_ms}}; }

Json to_json(const PayloadModel& p) {
  return Json{{"bits_per_token_up", p.bits_per_token_up},
              {"bits_per_token_down", p.bits_per_token_down},
              {"bits_per_feature", p.bits_per_feature},
              {"bits_fixed_per_call", p.bits_fixed_per_call}};
}

Json to_json(const InterDroConfig& c) {
  return Json{{"lambda_v", c.lambda_v},         {"lambda_p", c.lambda_p}, {"lambda_beta", c.lambda_beta},
              {"alpha", c.alpha},               {"learning_rate", c.learning_rate}, {"steps", c.steps},
              {"batch_size", c.batch_size},     {"seed", c.seed}};
}

Json to_json(const ProbIntervalVec& p) { return Json{{"lower", vec_to_json(p.lower)}, {"upper", vec_to_json(p.upper)}}; }

Json to_json(const TokenGrid& g) {
  Json mask = Json::array();
  for (bool b : g.boundary_mask) mask.push_back(b ? 1 : 0);
  return Json{{"height", g.height}, {"width", g.width}, {"tokens", g.tokens}, {"region", g.region},
              {"boundary_mask", mask}};
}

Json to_json(const TraceRecord& r) {
  return Json{{"pos", r.pos},
              {"token", r.token},
              {"origin", to_string(r.origin)},
              {"uncertainty", r.uncertainty ? Json(*r.uncertainty) : Json(nullptr)},
              {"boundary", r.boundary},
              {"uplink_bits", r.uplink_bits},
              {"downlink_bits", r.downlink_bits},
              {"gate", to_string(r.gate)},
              {"kl_to_cloud", r.kl_to_cloud}};
}

void write_trace_jsonl(std::ostream& os, const DecodeTrace& trace) {
  for (const TraceRecord& r : trace.records) os << to_json(r).dump() << '\n';
}

std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), x);
  return std::string(buf.data(), res.ptr);
}

std::string metrics_csv_row(std::uint64_t seed, std::string_view policy, const DecodeConfig& cfg,
                            const EpisodeMetrics& m) {
  std::ostringstream os;
  os << seed << ',' << policy << ',' << format_double(cfg.tau) << ',' << format_double(cfg.rho) << ',' << cfg.K
     << ',' << format_double(m.cloud_call_rate) << ',' << m.episodes << ',' << m.steps << ',' << m.device_accepts;
  return os.str();
}

std::string latency_csv_row(std::uint64_t seed, std::string_view policy, std::string_view network,
                            const LatencyReport& r) {
  std::ostringstream os;
  os << seed << ',' << policy << ',' << network << ',' << format_double(r.device_ms) << ','
     << format_double(r.cloud_ms) << ',' << format_double(r.comm_ms()) << ',' << format_double(r.total_ms) << ','
     << format_double(r.comm_ratio);
  return os.str();
}

std::string loss_csv_row(std::size_t step, const LossBreakdown& l) {
  std::ostringstream os;
  os << step << ',' << format_double(l.total) << ',' << format_double(l.l_center) << ','
     << format_double(l.l_upper) << ',' << format_double(l.l_lower) << ',' << format_double(l.l_dro) << ','
     << format_double(l.l_kl);
  return os.str();
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>((v >> (8 * i)) & 0xffU);
  os.write(b.data(), b.size());
}

void put_f64(std::ostream& os, double x) {
  const auto bits = std::bit_cast<std::uint64_t>(x);
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>((bits >> (8 * i)) & 0xffU);
  os.write(b.data(), b.size());
}

void get_bytes(std::istream& is, char* dst, std::size_t count, const char* what) {
  is.read(dst, static_cast<std::streamsize>(count));
  if (static_cast<std::size_t>(is.gcount()) != count) {
    throw std::runtime_error(std::string("inter-head file truncated while reading ") + what);
  }
}

std::uint32_t get_u32(std::istream& is, const char* what) {
  std::array<unsigned char, 4> b{};
  get_bytes(is, reinterpret_cast<char*>(b.data()), b.size(), what);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
  return v;
}

double get_f64(std::istream& is, const char* what) {
  std::array<unsigned char, 8> b{};
  get_bytes(is, reinterpret_cast<char*>(b.data()), b.size(), what);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
  return std::bit_cast<double>(v);
}

}  // namespace

void write_inter_head(std::ostream& os, const InterHeadParams& ih) {
  ih.validate();
  os.write(kInterHeadMagic.data(), static_cast<std::streamsize>(kInterHeadMagic.size()));
  put_u32(os, static_cast<std::uint32_t>(ih.n()));
  put_u32(os, static_cast<std::uint32_t>(ih.d()));
  for (Eigen::Index r = 0; r < ih.w_center.rows(); ++r)
    for (Eigen::Index c = 0; c < ih.w_center.cols(); ++c) put_f64(os, ih.w_center(r, c));
  for (Eigen::Index i = 0; i < ih.b_center.size(); ++i) put_f64(os, ih.b_center[i]);
  for (Eigen::Index r = 0; r < ih.w_radius.rows(); ++r)
    for (Eigen::Index c = 0; c < ih.w_radius.cols(); ++c) put_f64(os, ih.w_radius(r, c));
  for (Eigen::Index i = 0; i < ih.b_radius.size(); ++i) put_f64(os, ih.b_radius[i]);
  if (!os) throw std::runtime_error("failed writing inter-head file");
}

InterHeadParams read_inter_head(std::istream& is) {
  std::array<char, 8> magic{};
  get_bytes(is, magic.data(), magic.size(), "magic");
  if (std::string_view(magic.data(), magic.size()) != kInterHeadMagic) {
    throw std::runtime_error("not an inter-head file: bad magic");
  }
  const std::uint32_t n = get_u32(is, "n");
  const std::uint32_t d = get_u32(is, "d");
  if (n == 0 || d == 0) throw std::runtime_error("inter-head file has zero n or d");
  const auto rows = static_cast<Eigen::Index>(n);
  const auto cols = static_cast<Eigen::Index>(d);
  InterHeadParams ih{Mat(rows, cols), Vec(rows), Mat(rows, cols), Vec(rows)};
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) ih.w_center(r, c) = get_f64(is, "W_c");
  for (Eigen::Index i = 0; i < rows; ++i) ih.b_center[i] = get_f64(is, "b_c");
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) ih.w_radius(r, c) = get_f64(is, "W_r");
  for (Eigen::Index i = 0; i < rows; ++i) ih.b_radius[i] = get_f64(is, "b_r");
  if (is.peek() != std::char_traits<char>::eof()) throw std::runtime_error("inter-head file has trailing bytes");
  try {
    ih.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("inter-head file: ") + e.what());
  }
  return ih;
}

void save_inter_head(const std::filesystem::path& path, const InterHeadParams& ih) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_inter_head(out, ih);
}

InterHeadParams load_inter_head(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_inter_head(in);
}

}  // namespace ciar
