// Copyright 2026 The ciarsim Authors
// SPDX-License-Identifier: Apache-2.0

#include "ciar/properties.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>

#include "ciar/rng.hpp"
#include "ciar/toy_models.hpp"
#include "ciar/training.hpp"

namespace ciar {

namespace {

std::string describe(const Vec& v) {
  std::ostringstream os;
  os.precision(17);
  os << '(';
  const Eigen::Index shown = std::min<Eigen::Index>(v.size(), 8);
  for (Eigen::Index i = 0; i < shown; ++i) os << (i ? ", " : "") << v[i];
  if (shown < v.size()) os << ", ... [" << v.size() << " entries]";
  os << ')';
  return os.str();
}

PropertyResult named(std::string name) {
  PropertyResult r;
  r.name = std::move(name);
  return r;
}

PropertyResult fail(PropertyResult r, const std::string& detail) {
  r.passed = false;
  r.detail = detail;
  return r;
}

bool rel_close(double a, double b, double rel, double abs_floor = 1e-300) {
  return std::abs(a - b) <= rel * std::max({std::abs(a), std::abs(b), abs_floor});
}

std::size_t size_for_case(const PropertySuiteConfig& cfg, std::size_t k) {
  return cfg.sizes.empty() ? 8 : std::max<std::size_t>(cfg.sizes[k % cfg.sizes.size()], 1);
}

// Width vectors of mixed character: dense, sparse, constant and wide-range.
Vec random_widths(std::size_t n, Rng& rng, std::size_t kind) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vec d(static_cast<Eigen::Index>(n));
  switch (kind % 4) {
    case 0:
      for (Eigen::Index i = 0; i < d.size(); ++i) d[i] = unit(rng);
      break;
    case 1:
      for (Eigen::Index i = 0; i < d.size(); ++i) d[i] = unit(rng) < 0.7 ? 0.0 : unit(rng);
      break;
    case 2:
      d.setConstant(unit(rng));
      break;
    default:
      for (Eigen::Index i = 0; i < d.size(); ++i) d[i] = std::exp(-20.0 * unit(rng));
      break;
  }
  return d;
}

}  // namespace

LogitIntervalVec random_logit_interval(std::size_t n, std::uint64_t seed) {
  Rng rng = make_rng({seed, 0x6c6f676974ULL, n});
  std::normal_distribution<double> center(0.0, 3.0);
  std::normal_distribution<double> radius(0.0, 2.0);
  LogitIntervalVec iv{Vec(static_cast<Eigen::Index>(n)), Vec(static_cast<Eigen::Index>(n))};
  for (Eigen::Index i = 0; i < iv.center.size(); ++i) {
    iv.center[i] = center(rng);
    iv.radius[i] = std::abs(radius(rng));
  }
  return iv;
}

PropertyResult check_fuse_validity(const PropertySuiteConfig& cfg, const FuseFn& fuse) {
  PropertyResult r = named("fuse_validity");
  const FuseFn f = fuse ? fuse : [](const LogitIntervalVec& iv) { return inter_fuse(iv); };
  for (std::size_t k = 0; k < cfg.fuse_cases; ++k) {
    const std::size_t n = size_for_case(cfg, k);
    const std::uint64_t case_seed = mix_seed({cfg.seed, k});
    const LogitIntervalVec iv = random_logit_interval(n, case_seed);
    std::string why;
    try {
      why = f(iv).violation(1e-9);
    } catch (const std::exception& e) {
      why = std::string("fuse threw: ") + e.what();
    }
    ++r.cases;
    if (!why.empty()) {
      return fail(r, why + "; input: random_logit_interval(n=" + std::to_string(n) + ", seed=" +
                         std::to_string(case_seed) + "), center=" + describe(iv.center) +
                         " radius=" + describe(iv.radius));
    }
  }
  return r;
}

PropertyResult check_fuse_monotone(const PropertySuiteConfig& cfg) {
  PropertyResult r = named("fuse_monotone_in_radius");
  Rng rng = make_rng({cfg.seed, 0x6d6f6e6fULL});
  std::uniform_real_distribution<double> bump(0.0, 3.0);
  for (std::size_t k = 0; k < cfg.theorem_cases; ++k) {
    const std::size_t n = std::max<std::size_t>(size_for_case(cfg, k), 2);
    const LogitIntervalVec iv = random_logit_interval(n, mix_seed({cfg.seed, 0x6d6fULL, k}));
    const auto i = static_cast<Eigen::Index>(rng() % n);
    LogitIntervalVec wider = iv;
    wider.radius[i] += bump(rng);
    const ProbIntervalVec a = inter_fuse_raw(iv);
    const ProbIntervalVec b = inter_fuse_raw(wider);
    ++r.cases;
    if (b.upper[i] < a.upper[i] - 1e-15 || b.lower[i] > a.lower[i] + 1e-15) {
      return fail(r, "n=" + std::to_string(n) + " index " + std::to_string(i) + ": radius " +
                         std::to_string(iv.radius[i]) + " -> " + std::to_string(wider.radius[i]) +
                         " moved raw bounds inward");
    }
  }
  return r;
}

PropertyResult check_zeros(const PropertySuiteConfig& cfg) {
  PropertyResult r = named("score_zero_iff_omega_or_sigma_zero");
  Rng rng = make_rng({cfg.seed, 0x7a65726fULL});
  for (std::size_t k = 0; k < cfg.theorem_cases; ++k) {
    const std::size_t n = size_for_case(cfg, k);
    Vec d = random_widths(n, rng, k);
    if (k % 5 == 4) d.setZero();
    const UncertaintyBreakdown u = uncertainty_from_widths(d);
    ++r.cases;
    if ((u.score == 0.0) != (u.omega == 0.0 || u.sigma == 0.0)) {
      return fail(r, "widths " + describe(d));
    }
  }
  return r;
}

PropertyResult check_scaling(const PropertySuiteConfig& cfg) {
  PropertyResult r = named("score_scaling");
  Rng rng = make_rng({cfg.seed, 0x7363616cULL});
  std::uniform_real_distribution<double> log_alpha(-3.0, 3.0);
  for (std::size_t k = 0; k < cfg.theorem_cases; ++k) {
    const std::size_t n = size_for_case(cfg, k);
    const Vec d = random_widths(n, rng, k);
    const double alpha = k % 10 == 0 ? 0.0 : std::pow(10.0, log_alpha(rng));
    const double lhs = uncertainty_from_widths(alpha * d).score;
    const double rhs = alpha * alpha * uncertainty_from_widths(d).score;
    ++r.cases;
    if (!rel_close(lhs, rhs, 1e-9)) {
      std::ostringstream os;
      os.precision(17);
      os << "alpha=" << alpha << " widths " << describe(d) << ": U(alpha d)=" << lhs << " alpha^2 U(d)=" << rhs;
      return fail(r, os.str());
    }
  }
  return r;
}

PropertyResult check_sigma_bound(const PropertySuiteConfig& cfg) {
  PropertyResult r = named("sigma_bound");
  Rng rng = make_rng({cfg.seed, 0x7369676dULL});
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t k = 0; k < cfg.theorem_cases; ++k) {
    const std::size_t n = size_for_case(cfg, k);
    const double factor = std::sqrt(static_cast<double>(n) - 1.0) / static_cast<double>(n);
    const Vec d = random_widths(n, rng, k);
    const UncertaintyBreakdown u = uncertainty_from_widths(d);
    ++r.cases;
    if (u.sigma > factor * u.omega + 1e-12) {
      return fail(r, "widths " + describe(d) + " exceed the bound");
    }
    // One-hot widths attain it.
    Vec hot = Vec::Zero(static_cast<Eigen::Index>(n));
    hot[static_cast<Eigen::Index>(rng() % n)] = unit(rng) + 1e-3;
    const UncertaintyBreakdown h = uncertainty_from_widths(hot);
    ++r.cases;
    if (std::abs(h.sigma - factor * h.omega) > 1e-12) {
      return fail(r, "one-hot widths " + describe(hot) + " do not attain the bound");
    }
  }
  return r;
}

PropertyResult check_s2_bound(const PropertySuiteConfig& cfg) {
  PropertyResult r = named("s2_bound");
  Rng rng = make_rng({cfg.seed, 0x73327362ULL});
  for (std::size_t k = 0; k < cfg.theorem_cases; ++k) {
    const std::size_t n = size_for_case(cfg, k);
    const Vec d = random_widths(n, rng, k);
    const double bound = d.squaredNorm() / 2.0;
    const double score = uncertainty_from_widths(d).score;
    ++r.cases;
    if (score > bound * (1.0 + 1e-12) + 1e-300) {
      return fail(r, "widths " + describe(d));
    }
  }
  return r;
}

PropertyResult check_cv_identity(const PropertySuiteConfig& cfg) {
  PropertyResult r = named("cv_identity");
  Rng rng = make_rng({cfg.seed, 0x6376ULL});
  for (std::size_t k = 0; k < cfg.theorem_cases; ++k) {
    const std::size_t n = size_for_case(cfg, k);
    const Vec d = random_widths(n, rng, k);
    const UncertaintyBreakdown u = uncertainty_from_widths(d);
    if (!u.cv) continue;
    ++r.cases;
    const double via_cv = static_cast<double>(n) * u.mean_width * u.mean_width * *u.cv;
    if (!rel_close(u.score, via_cv, 1e-9)) {
      return fail(r, "widths " + describe(d));
    }
  }
  return r;
}

PropertyResult check_local_certainty(const PropertySuiteConfig& cfg) {
  PropertyResult r = named("local_certainty");
  for (std::size_t n : cfg.sizes) {
    if (n < 2) continue;
    double previous = std::numeric_limits<double>::infinity();
    for (double t : {1e-1, 1e-2, 1e-3, 1e-4}) {
      // Token 0 pinned at 1 - t; the rest may share the remaining mass evenly.
      ProbIntervalVec p{Vec::Zero(static_cast<Eigen::Index>(n)),
                        Vec::Constant(static_cast<Eigen::Index>(n), t / static_cast<double>(n - 1))};
      p.lower[0] = 1.0 - t;
      p.upper[0] = 1.0 - t;
      const double score = uncertainty_score(p).score;
      ++r.cases;
      if (score > previous) {
        return fail(r, "n=" + std::to_string(n) + ": score grew as t shrank to " + std::to_string(t));
      }
      previous = score;
      if (t == 1e-4 && !(score < 1e-6)) {
        return fail(r, "n=" + std::to_string(n) + ": score " + std::to_string(score) + " at t=1e-4");
      }
    }
  }
  return r;
}

PropertyResult check_polytope_diameter(const PropertySuiteConfig& cfg) {
  PropertyResult r = named("polytope_diameter");
  for (std::size_t k = 0; k < cfg.polytopes; ++k) {
    const std::size_t n = 2 + k % 5;
    const std::uint64_t case_seed = mix_seed({cfg.seed, 0x706f6c79ULL, k});
    const ProbIntervalVec p = inter_fuse(random_logit_interval(n, case_seed));
    const double omega = widths(p).sum();
    const std::vector<Vec> qs = feasible_polytope_sample(p, 2 * cfg.pairs_per_polytope, case_seed);
    for (std::size_t s = 0; s + 1 < qs.size(); s += 2) {
      ++r.cases;
      const double dist = (qs[s] - qs[s + 1]).lpNorm<1>();
      if (dist > omega + 1e-9) {
        return fail(r, "interval seed " + std::to_string(case_seed) + " n=" + std::to_string(n) + ": |q - q'|_1=" +
                           std::to_string(dist) + " > omega=" + std::to_string(omega));
      }
    }
  }
  return r;
}

PropertyResult check_dro_weights(const PropertySuiteConfig& cfg) {
  PropertyResult r = named("dro_weights");
  Rng rng = make_rng({cfg.seed, 0x64726fULL});
  std::uniform_real_distribution<double> loss(0.0, 5.0);
  std::uniform_real_distribution<double> alpha_dist(0.0, 5.0);
  for (std::size_t k = 0; k < cfg.theorem_cases; ++k) {
    const auto count = static_cast<Eigen::Index>(1 + rng() % 16);
    Vec ce(count);
    for (Eigen::Index i = 0; i < count; ++i) ce[i] = loss(rng);
    const double alpha = alpha_dist(rng);
    const Vec w = dro_weights(ce, alpha);
    const double l = dro_loss(ce, alpha);
    ++r.cases;
    const std::string input = "losses " + describe(ce) + " alpha=" + std::to_string(alpha);
    if (std::abs(w.sum() - 1.0) > 1e-12) return fail(r, input + ": weights do not sum to 1");
    if ((dro_weights(ce, 0.0).array() - 1.0 / static_cast<double>(count)).abs().maxCoeff() > 1e-15) {
      return fail(r, input + ": alpha=0 is not uniform");
    }
    if (l < ce.mean() - 1e-12 || l > ce.maxCoeff() + 1e-12) return fail(r, input + ": outside [mean, max]");
    if (dro_loss(ce, alpha + 0.5) < l - 1e-12) return fail(r, input + ": decreased with alpha");
    const auto i = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(count));
    Vec bumped = ce;
    bumped[i] += 0.5;
    if (dro_weights(bumped, alpha)[i] < w[i] - 1e-15) return fail(r, input + ": own weight fell as its loss rose");
  }
  return r;
}

namespace {

struct SmallInstance {
  InterHeadParams head;
  TrainingBatch batch;
};

SmallInstance random_small_instance(std::uint64_t seed, std::size_t n, std::size_t d, std::size_t count) {
  Rng rng = make_rng({seed, 0x736d616c6cULL});
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto draw = [&](Eigen::Index rows, Eigen::Index cols) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
    return m;
  };
  const auto ni = static_cast<Eigen::Index>(n);
  const auto di = static_cast<Eigen::Index>(d);
  const auto ci = static_cast<Eigen::Index>(count);
  SmallInstance s{InterHeadParams{draw(ni, di), draw(ni, 1), 0.5 * draw(ni, di), draw(ni, 1)},
                  TrainingBatch{draw(ci, di), Mat(ci, ni)}};
  const Mat logits = 2.0 * draw(ci, ni);
  for (Eigen::Index row = 0; row < ci; ++row) s.batch.cloud_dists.row(row) = softmax(logits.row(row).transpose());
  return s;
}

}  // namespace

PropertyResult check_loss_nonnegative(const PropertySuiteConfig& cfg) {
  PropertyResult r = named("losses_nonnegative");
  InterDroConfig tc;
  for (std::size_t k = 0; k < cfg.theorem_cases / 10 + 1; ++k) {
    const SmallInstance s = random_small_instance(mix_seed({cfg.seed, 0x6e6e6567ULL, k}), 6, 4, 5);
    const LossBreakdown l = inter_dro_loss(s.head, s.batch, tc);
    ++r.cases;
    if (l.total < 0.0 || l.l_kl < -1e-12 || l.l_center < 0.0 || l.l_upper < 0.0 || l.l_lower < 0.0) {
      return fail(r, "instance " + std::to_string(k) + " gave a negative loss term");
    }
  }
  return r;
}

PropertyResult check_gradient(const PropertySuiteConfig& cfg) {
  PropertyResult r = named("gradient_matches_finite_differences");
  constexpr double kStep = 1e-5;
  constexpr double kTol = 1e-5;
  InterDroConfig tc;
  for (std::size_t k = 0; k < cfg.gradient_instances; ++k) {
    const std::uint64_t case_seed = mix_seed({cfg.seed, 0x67726164ULL, k});
    SmallInstance s = random_small_instance(case_seed, 5, 3, 4);
    const InterHeadGradient g = analytic_gradient(s.head, s.batch, tc);

    // DRO weights held at the base point, matching the analytic treatment.
    Vec ce(static_cast<Eigen::Index>(s.batch.size()));
    for (Eigen::Index row = 0; row < ce.size(); ++row) {
      ce[row] = cross_entropy(s.batch.cloud_dists.row(row).transpose(),
                              bound_distributions(s.head, s.batch.hiddens.row(row).transpose()).lower);
    }
    const Vec frozen = dro_weights(ce, tc.alpha);

    const auto probe = [&](double& entry, double analytic, const char* array) -> std::optional<std::string> {
      const double saved = entry;
      entry = saved + kStep;
      const double up = inter_dro_loss(s.head, s.batch, tc, frozen).total;
      entry = saved - kStep;
      const double down = inter_dro_loss(s.head, s.batch, tc, frozen).total;
      entry = saved;
      const double numeric = (up - down) / (2.0 * kStep);
      ++r.cases;
      if (std::abs(numeric - analytic) > kTol) {
        std::ostringstream os;
        os.precision(10);
        os << "instance seed " << case_seed << ", " << array << ": analytic " << analytic << " vs numeric " << numeric;
        return os.str();
      }
      return std::nullopt;
    };
    for (Eigen::Index i = 0; i < s.head.w_center.rows(); ++i) {
      for (Eigen::Index j = 0; j < s.head.w_center.cols(); ++j) {
        if (auto e = probe(s.head.w_center(i, j), g.w_center(i, j), "W_c")) return fail(r, *e);
        if (auto e = probe(s.head.w_radius(i, j), g.w_radius(i, j), "W_r")) return fail(r, *e);
      }
      if (auto e = probe(s.head.b_center[i], g.b_center[i], "b_c")) return fail(r, *e);
      if (auto e = probe(s.head.b_radius[i], g.b_radius[i], "b_r")) return fail(r, *e);
    }
  }
  return r;
}

std::vector<PropertyResult> run_property_suite(const PropertySuiteConfig& cfg, const FuseFn& fuse) {
  return {check_fuse_validity(cfg, fuse), check_fuse_monotone(cfg),  check_zeros(cfg),
          check_scaling(cfg),             check_sigma_bound(cfg),    check_s2_bound(cfg),
          check_cv_identity(cfg),         check_local_certainty(cfg), check_polytope_diameter(cfg),
          check_dro_weights(cfg),         check_loss_nonnegative(cfg), check_gradient(cfg)};
}

}  // namespace ciar
