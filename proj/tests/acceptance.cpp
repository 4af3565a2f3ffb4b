// One line per acceptance criterion. Exit status is nonzero if any line fails.
#include <malloc.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "featlab/config.hpp"
#include "featlab/data.hpp"
#include "featlab/dynamics.hpp"
#include "featlab/feat.hpp"
#include "featlab/gradcheck.hpp"
#include "featlab/io.hpp"

using namespace featlab;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void criterion(int id, const std::string& title, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::printf("criterion %d %s %s: %s [%.1fs]\n", id, o.pass ? "PASS" : "FAIL", title.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string first_failure(const Report& r) {
  for (const auto& c : r.checks)
    if (!c.passed) return c.name + " (" + c.detail + ")";
  return "";
}

TrainConfig large_population() {
  TrainConfig c;
  c.envs = {{0.25, 0.1, 100000}, {0.25, 0.2, 100000}};
  c.sigma_p = 1e-4;
  return c;
}

// ---- 1 ----
Outcome erm_fixed_point() {
  auto cfg = large_population();
  cfg.steps = 20000;
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = verify_fixed_point_simulation(cfg, 0.02);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto& d = r.data;
  return {r.passed() && secs < 60.0,
          fmt::format("agg_inv {:.4f} (log 3 = 1.0986), agg_spu {:.4f} (log 17/3 = 1.7346), {:.1f}s{}",
                      d.value("agg_inv", NAN), d.value("agg_spu", NAN), secs,
                      r.passed() ? "" : "; " + first_failure(r))};
}

// ---- 2 ----
Outcome feature_race() {
  int ok = 0;
  std::string bad;
  for (std::uint64_t s = 0; s < 10; ++s) {
    TrainConfig cfg;
    cfg.steps = 1000;
    cfg.seed = s;
    const auto r = verify_erm_race(cfg);
    if (r.passed())
      ++ok;
    else if (bad.empty())
      bad = fmt::format("; seed {}: {}", s, first_failure(r));
  }
  return {ok == 10, fmt::format("{}/10 seeds with D_Gamma > D_Lambda > 0 and non-increasing composites{}", ok, bad)};
}

// ---- 3 ----
Outcome oracle() {
  const auto r = verify_oracle(large_population(), 200, 0.01);
  return {r.passed(), fmt::format("worst relative error {:.3g} over 200 steps{}", r.data.value("max_rel_err", NAN),
                                  r.passed() ? "" : "; " + first_failure(r))};
}

// ---- 4 ----
Outcome suppression() {
  TrainConfig cfg;
  cfg.record_every = 1;
  const auto r = verify_suppression(cfg);
  // the criterion covers the 0.05 bound and the 10x penalty decay; the other checks are reported
  bool pass = true;
  std::string det;
  for (const auto& c : r.checks) {
    if (c.name == "aggregates_below_0.05" || c.name == "penalty_decay") pass = pass && c.passed;
    det += (det.empty() ? "" : "; ") + c.name + (c.passed ? " ok " : " FAILED ") + c.detail;
  }
  return {pass, det};
}

// ---- 5 ----
Outcome pretrain_switch() {
  int ok = 0;
  double worst_c = 0;
  std::string bad;
  const auto base = train_config_from_json(read_json(std::string(FEATLAB_CONFIG_DIR) + "/pretrain-switch.json"));
  for (std::uint64_t s = 0; s < 10; ++s) {
    auto cfg = base;
    cfg.seed = s;
    const auto r = verify_pretrain_switch(cfg, 500, 0.05);
    worst_c = std::max(worst_c, std::abs(r.data.value("sum_c", 0.0)));
    if (r.passed())
      ++ok;
    else if (bad.empty())
      bad = fmt::format("; seed {}: {}", s, first_failure(r));
  }
  return {ok == 10, fmt::format("{}/10 seeds monotone for 500 IRMv1 steps, max |sum C| at switch {:.2g}{}", ok,
                                worst_c, bad)};
}

// ---- 6 ----
Outcome degradation() {
  int ok = 0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    TrainConfig cfg;
    cfg.seed = s;
    ok += verify_corollary(cfg).passed();
  }
  return {ok == 10, fmt::format("{}/10 seeds where one IRMv1 step lowers agg_inv from 0.01", ok)};
}

// ---- 7 and 8 share the FeAT runs ----
struct FeatSweep {
  int gain_ok = 0, seeds = 0;
  double min_gain = 1e9;
  std::size_t accepted_below_half = 0, rejected_below_half = 0;
  double min_accepted_retention = 1.0;
  std::size_t partition_violations = 0, runs = 0;
  double worst_avg_err = 0.0;
  double align_feat = 0, align_erm = 0;
  int align_wins = 0;
  // capacity-limited stress run
  std::size_t stress_fired = 0, stress_seeds = 0, stress_accepted_below_half = 0;
  double stress_min_accepted_retention = 1.0;
};

void check_invariants(const FeatResult& r, std::size_t n, FeatSweep& s) {
  ++s.runs;
  for (const auto& m : r.rounds)
    if (m.accepted && m.aug_size + m.ret_size != n) ++s.partition_violations;
  if (r.round_classifiers.empty()) return;
  Vec w = Vec::Zero(r.averaged.w.size());
  double b = 0;
  const std::size_t K = r.rounds_completed ? r.rounds_completed : 1;
  for (std::size_t k = 0; k < K; ++k) {
    w += r.round_classifiers[k].w;
    b += r.round_classifiers[k].b;
  }
  s.worst_avg_err = std::max({s.worst_avg_err, (w / double(K) - r.averaged.w).cwiseAbs().maxCoeff(),
                              std::abs(b / double(K) - r.averaged.b)});
}

const FeatSweep& feat_sweep() {
  static FeatSweep s = [] {
    FeatSweep s;
    const auto cfg_json = read_json(std::string(FEATLAB_CONFIG_DIR) + "/cmnist025-analog.json");
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      auto j = cfg_json;
      j["seed"] = seed;
      const auto st = feat_setup_from_json(j);
      const auto train = sample_dataset(st.envs, st.d, st.sigma_p, st.data_seed);
      const auto ood = sample_test_set(st.ood_n, st.ood_betas, st.d, st.sigma_p, st.data_seed + 1);
      const auto res = run_feat(st.feat, train, &ood);
      // matched to the two rounds being compared
      const auto erm = run_erm_baseline(st.feat, train, &ood, 2 * st.feat.inner_epochs);
      ++s.seeds;
      check_invariants(res, train.size(), s);
      check_invariants(erm, train.size(), s);
      if (res.rounds.size() >= 2 && res.rounds[1].accepted) {
        const double g = res.rounds[1].ood_acc - res.rounds[0].ood_acc;
        s.min_gain = std::min(s.min_gain, g);
        if (g >= 0.20 && res.rounds[1].ood_acc > erm.final_ood_acc) ++s.gain_ok;
      }
      for (const auto& m : res.rounds) {
        if (!std::isfinite(m.retention_acc)) continue;
        if (m.accepted) {
          s.min_accepted_retention = std::min(s.min_accepted_retention, m.retention_acc);
          s.accepted_below_half += m.retention_acc < 0.5;
        } else {
          s.rejected_below_half += m.retention_acc < 0.5;
        }
      }
      const double af = v1_alignment(res.featurizer), ae = v1_alignment(erm.featurizer);
      s.align_feat += af / 10;
      s.align_erm += ae / 10;
      s.align_wins += af > ae;

      // two hidden units and no retention term: later rounds overwrite earlier features
      auto stress = st.feat;
      stress.hidden = {2};
      stress.lambda_retain = 0.0;
      stress.max_rounds = 5;
      const auto sr = run_ifeat(stress, train, &ood);
      check_invariants(sr, train.size(), s);
      ++s.stress_seeds;
      s.stress_fired += sr.termination_reason == "retention_check";
      for (const auto& m : sr.rounds)
        if (m.accepted && std::isfinite(m.retention_acc)) {
          s.stress_min_accepted_retention = std::min(s.stress_min_accepted_retention, m.retention_acc);
          s.stress_accepted_below_half += m.retention_acc < 0.5;
        }
    }
    return s;
  }();
  return s;
}

Outcome feat_efficacy() {
  const auto& s = feat_sweep();
  const bool gain = s.gain_ok >= 8;
  const bool retention = s.accepted_below_half == 0;
  return {gain && retention,
          fmt::format("{}/10 seeds with round-2 OOD >= round-1 + 0.20 and > matched ERM (min gain {:.3f}); "
                      "accepted rounds below 50% retention: {} (min {:.3f}); "
                      "v1 alignment FeAT {:.3f} vs ERM {:.3f} ({}/10); "
                      "low-capacity iFeAT: check fired on {}/{} seeds, accepted rounds below 50%: {} (min {:.3f})",
                      s.gain_ok, s.min_gain, s.accepted_below_half, s.min_accepted_retention, s.align_feat,
                      s.align_erm, s.align_wins, s.stress_fired, s.stress_seeds, s.stress_accepted_below_half,
                      s.stress_min_accepted_retention)};
}

Outcome gradients_and_invariants() {
  double worst = 0;
  std::string worst_name;
  for (std::uint64_t seed = 0; seed < 5; ++seed)
    for (const auto& g : gradcheck_suite(seed))
      if (g.max_rel_err > worst) {
        worst = g.max_rel_err;
        worst_name = g.name;
      }
  const auto& s = feat_sweep();
  return {worst < 1e-5 && s.partition_violations == 0 && s.worst_avg_err < 1e-12,
          fmt::format("max relative error {:.2g} ({}); partition violations {} over {} runs; "
                      "averaging error {:.2g}",
                      worst, worst_name, s.partition_violations, s.runs, s.worst_avg_err)};
}

// ---- 9 ----
Outcome concentration() {
  const std::vector<EnvironmentSpec> envs = {{0.25, 0.1, 2500}, {0.25, 0.2, 2500}};
  const double tol = group_count_tolerance(0.05, 2500);
  const auto ex = expected_group_counts(0.25, {0.1, 0.2});
  int count_ok = 0;
  double worst_dev = 0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto g = group_counts(sample_dataset(envs, 3, 0.0, s));
    const double dev = std::max({std::abs(g.c_pp - ex.c_pp), std::abs(g.c_pm - ex.c_pm),
                                 std::abs(g.c_mp - ex.c_mp), std::abs(g.c_mm - ex.c_mm)});
    worst_dev = std::max(worst_dev, dev);
    count_ok += dev <= tol;
  }
  auto outside = [](const TwoBitDataset& ds) {
    const double sp2 = ds.sigma_p * ds.sigma_p, d = double(ds.d);
    std::size_t bad = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      double n2 = 0;
      for (std::size_t k = 0; k < ds.d; ++k) n2 += ds.x2(i)[k] * ds.x2(i)[k];
      bad += n2 < sp2 * d / 2 || n2 > 3 * sp2 * d / 2;
    }
    return bad;
  };
  std::size_t bad_large = 0, n_large = 0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto ds = sample_dataset(envs, 1000, 0.01, s);
    bad_large += outside(ds);
    n_large += ds.size();
  }
  // reported only: at d = 50 the chi-square tail puts ~0.85% of samples above 3/2
  std::size_t bad_small = 0, n_small = 0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto ds = sample_dataset(envs, 50, 0.01, s);
    bad_small += outside(ds);
    n_small += ds.size();
  }
  return {count_ok == 100 && bad_large == 0,
          fmt::format("{}/100 datasets within {:.4f} (worst {:.4f}); noise norms outside the interval at d=1000: "
                      "{}/{}; at d=50: {}/{}",
                      count_ok, tol, worst_dev, bad_large, n_large, bad_small, n_small)};
}

}  // namespace

int main() {
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  criterion(1, "ERM fixed point", erm_fixed_point);
  criterion(2, "feature race", feature_race);
  criterion(3, "recursion oracle", oracle);
  criterion(4, "IRMv1 suppression", suppression);
  criterion(5, "pretrain then IRMv1", pretrain_switch);
  criterion(6, "IRMv1 degradation", degradation);
  criterion(7, "FeAT efficacy", feat_efficacy);
  criterion(8, "gradient suite", gradients_and_invariants);
  criterion(9, "concentration", concentration);
  std::printf("%d/9 criteria passed\n", 9 - failures);
  return failures == 0 ? 0 : 1;
}
