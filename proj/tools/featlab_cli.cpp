#include <malloc.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <cstdio>
#include <future>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "featlab/config.hpp"
#include "featlab/data.hpp"
#include "featlab/dynamics.hpp"
#include "featlab/errors.hpp"
#include "featlab/feat.hpp"
#include "featlab/gradcheck.hpp"
#include "featlab/io.hpp"
#include "featlab/objectives.hpp"

using namespace featlab;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kConfig = 2, kNumeric = 3, kVerify = 4 };

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::string sweep;
};

json load_config(const Common& c, json base) {
  if (!c.config_path.empty()) {
    const json file = read_json(c.config_path);
    require(file.is_object(), c.config_path + ": top level must be an object");
    base.merge_patch(file);
  }
  for (const auto& o : c.overrides) apply_override(base, o);
  return base;
}

// "seeds=a..b" -> [a, b]
std::vector<std::uint64_t> parse_sweep(const std::string& s) {
  if (s.empty()) return {};
  const auto eq = s.find('='), dots = s.find("..");
  require(eq != std::string::npos && s.substr(0, eq) == "seeds" && dots != std::string::npos,
          "--sweep expects seeds=a..b");
  std::uint64_t a = 0, b = 0;
  try {
    a = std::stoull(s.substr(eq + 1, dots - eq - 1));
    b = std::stoull(s.substr(dots + 2));
  } catch (const std::exception&) {
    throw InvalidArgument("--sweep expects seeds=a..b with integer bounds");
  }
  require(a <= b, "--sweep range must be nondecreasing");
  std::vector<std::uint64_t> out;
  for (auto k = a; k <= b; ++k) out.push_back(k);
  return out;
}

template <class F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const NumericAbort& e) {
    std::cerr << "numeric abort: " << e.what() << '\n';
    return kNumeric;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  }
}

// Runs body once, or once per seed into seed_<k> subdirectories, in parallel.
int fan_out(const Common& c, const std::string& name,
            const std::function<int(const json& cfg, const fs::path& dir)>& body, json cfg) {
  const auto seeds = parse_sweep(c.sweep);
  const fs::path root = resolve_output_dir(c.out_dir, name);
  if (seeds.empty()) return body(cfg, root);
  std::vector<std::future<int>> jobs;
  for (auto s : seeds) {
    json cs = cfg;
    cs["seed"] = s;
    const fs::path dir = root / fmt::format("seed_{}", s);
    fs::create_directories(dir);
    jobs.push_back(std::async(std::launch::async, [&body, cs, dir] { return guarded([&] { return body(cs, dir); }); }));
  }
  int rc = kOk;
  for (auto& j : jobs) rc = std::max(rc, j.get());
  return rc;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- simulate ----

int cmd_simulate(const std::string& sub, const Common& c) {
  const Schedule schedule = parse_schedule(sub);
  const json cfg_json = load_config(c, train_config_from_json(json::object()).to_json());
  train_config_from_json(cfg_json);  // validate before any output is created
  return fan_out(c, "simulate-" + sub, [&](const json& cj, const fs::path& dir) {
    const auto t0 = std::chrono::steady_clock::now();
    const TrainConfig cfg = train_config_from_json(cj);
    RunManifest man{"simulate " + sub, cfg.to_json(), c.config_path, dir.string(), cfg.seed};
    const auto ds = training_set(cfg);
    const auto tr = run_gd(cfg, schedule, ds, initial_params(cfg));
    write_trajectory_csv(tr, ds.num_envs(), (dir / "trajectory.csv").string(), man.header());
    json summary = run_summary(cfg, schedule, tr);
    if (schedule == Schedule::pretrain_irmv1) {
      // the no-pretraining counterpart for the side-by-side panels
      TrainConfig scratch = cfg;
      scratch.pretrain_steps = 0;
      const auto tr2 = run_gd(scratch, Schedule::pretrain_irmv1, ds, initial_params(cfg));
      write_trajectory_csv(tr2, ds.num_envs(), (dir / "trajectory_scratch.csv").string(), man.header());
      summary["scratch"] = run_summary(scratch, Schedule::pretrain_irmv1, tr2);
    }
    write_json(summary, dir / "summary.json", man.header());
    man.wall_seconds = seconds_since(t0);
    write_json(man.to_json(), dir / "manifest.json", man.header());
    std::cout << fmt::format("simulate {}: {} rows -> {}\n", sub, tr.rows.size(), dir.string());
    return int(kOk);
  }, cfg_json);
}

// ---- verify ----

json verify_defaults(const std::string& sub) {
  json base = train_config_from_json(json::object()).to_json();
  if (sub == "race") base["steps"] = 1000;
  if (sub == "suppression") base["record_every"] = 1;
  if (sub == "switch") {
    base["eta"] = 5.0;
    base["pretrain_steps"] = 2000;
    base["steps"] = 2700;
    base["irm_step_fraction"] = 0.005;
  }
  if (sub == "transfer") {
    base["eta"] = 5.0;
    base["pretrain_steps"] = 20000;
    base["steps"] = 20000;
  }
  if (sub == "oracle" || sub == "fixed-point") {
    base["envs"] = json::array({{{"alpha", 0.25}, {"beta", 0.1}, {"n", 100000}},
                                {{"alpha", 0.25}, {"beta", 0.2}, {"n", 100000}}});
    base["sigma_p"] = 1e-4;
    base["steps"] = sub == "oracle" ? 200 : 20000;
  }
  return base;
}

int finish_report(const json& report, bool passed, const fs::path& dir, const std::string& header) {
  write_json(report, dir / "report.json", header);
  std::cout << report.dump(2) << '\n';
  return passed ? kOk : kVerify;
}

int cmd_verify(const std::string& sub, const Common& c, double alpha, const std::vector<double>& betas,
               bool simulate_fp) {
  json cfg_json = load_config(c, verify_defaults(sub));
  if (sub == "fixed-point") {
    require(betas.size() == 2, "--beta expects two values");
    cfg_json["envs"][0]["alpha"] = cfg_json["envs"][1]["alpha"] = alpha;
    cfg_json["envs"][0]["beta"] = betas[0];
    cfg_json["envs"][1]["beta"] = betas[1];
  }
  const TrainConfig cfg = train_config_from_json(cfg_json);
  if (sub == "race") check_race_preconditions(cfg);
  return fan_out(c, "verify-" + sub, [&](const json& cj, const fs::path& dir) {
    const TrainConfig cfg = train_config_from_json(cj);
    RunManifest man{"verify " + sub, cfg.to_json(), c.config_path, dir.string(), cfg.seed};
    const auto hdr = man.header();
    if (sub == "race") {
      const auto r = verify_erm_race(cfg);
      return finish_report(r.to_json(), r.passed(), dir, hdr);
    }
    if (sub == "suppression") {
      const auto r = verify_suppression(cfg);
      return finish_report(r.to_json(), r.passed(), dir, hdr);
    }
    if (sub == "switch") {
      const auto r = verify_pretrain_switch(cfg);
      return finish_report(r.to_json(), r.passed(), dir, hdr);
    }
    if (sub == "transfer") {
      const auto r = verify_irmv1_transfer(cfg);
      return finish_report(r.to_json(), r.passed(), dir, hdr);
    }
    if (sub == "corollary") {
      const auto r = verify_corollary(cfg);
      return finish_report(r.to_json(), r.passed(), dir, hdr);
    }
    if (sub == "oracle") {
      const auto r = verify_oracle(cfg, cfg.steps);
      return finish_report(r.to_json(), r.passed(), dir, hdr);
    }
    if (sub == "fixed-point") {
      const auto fp = closed_form_fixed_point(alpha, betas[0], betas[1]);
      json rep = {{"name", "fixed-point"}, {"alpha", alpha}, {"beta", betas}, {"fixed_point", fp.to_json()}};
      bool ok = std::isfinite(fp.gamma1_inf) && std::isfinite(fp.gamma2_inf);
      if (simulate_fp) {
        const auto r = verify_fixed_point_simulation(cfg);
        rep["simulation"] = r.to_json();
        ok = ok && r.passed();
      }
      rep["passed"] = ok;
      std::cout << fmt::format("gamma1_inf = {:.6f}\ngamma2_inf = {:.6f}\n", fp.gamma1_inf, fp.gamma2_inf);
      return finish_report(rep, ok, dir, hdr);
    }
    if (sub == "kernel") {
      const auto ds = training_set(cfg);
      const auto p = initial_params(cfg);
      const auto kd = irm_kernel(p, ds);
      const auto H = penalty_gram(p, ds);
      json rep = {{"name", "kernel"}, {"h_inf", kd.h_matrix}, {"lambda0", kd.lambda0},
                  {"penalty_gram", H}, {"num_envs", kd.num_envs}};
      bool sym = true;
      for (std::size_t a = 0; a < kd.num_envs; ++a)
        for (std::size_t b = 0; b < kd.num_envs; ++b)
          sym = sym && std::abs(kd.h_matrix[a * kd.num_envs + b] - kd.h_matrix[b * kd.num_envs + a]) < 1e-10;
      rep["passed"] = sym;
      return finish_report(rep, sym, dir, hdr);
    }
    if (sub == "gradcheck") {
      const auto res = gradcheck_suite(cfg.seed);
      json items = json::array();
      double worst = 0.0;
      for (const auto& g : res) {
        items.push_back({{"name", g.name}, {"max_rel_err", g.max_rel_err}, {"n_params", g.n_params}});
        worst = std::max(worst, g.max_rel_err);
      }
      json rep = {{"name", "gradcheck"}, {"checks", items}, {"max_rel_err", worst}, {"tolerance", 1e-5},
                  {"passed", worst < 1e-5}};
      return finish_report(rep, worst < 1e-5, dir, hdr);
    }
    throw InvalidArgument("unknown verify subcommand '" + sub + "'");
  }, cfg_json);
}

// ---- feat / ifeat ----

// Materialized defaults minus data.seed, which tracks seed unless set explicitly.
json feat_base() {
  json b = feat_setup_from_json(json::object()).to_json();
  b["data"].erase("seed");
  return b;
}

int cmd_feat(const std::string& algo, const Common& c) {
  const json cfg_json = load_config(c, feat_base());
  feat_setup_from_json(cfg_json);
  return fan_out(c, algo, [&](const json& cj, const fs::path& dir) {
    const auto t0 = std::chrono::steady_clock::now();
    const FeatSetup s = feat_setup_from_json(cj);
    RunManifest man{algo, s.to_json(), c.config_path, dir.string(), s.feat.seed};
    const auto hdr = man.header();
    const auto train = sample_dataset(s.envs, s.d, s.sigma_p, s.data_seed);
    const auto ood = sample_test_set(s.ood_n, s.ood_betas, s.d, s.sigma_p, s.data_seed + 1);
    const auto res = algo == "ifeat" ? run_ifeat(s.feat, train, &ood) : run_feat(s.feat, train, &ood);
    write_round_log_csv(res, (dir / "round_log.csv").string(), hdr);
    write_json(res.to_json(), dir / "result.json", hdr);
    if (s.baseline) {
      const std::size_t epochs = s.baseline_epochs ? s.baseline_epochs : s.feat.max_rounds * s.feat.inner_epochs;
      const auto base = run_erm_baseline(s.feat, train, &ood, epochs);
      const double base_ood = base.rounds.front().ood_acc;
      json cmp = {{"baseline_epochs", epochs}, {"baseline_ood_acc", base_ood},
                  {"baseline_train_acc", base.rounds.front().train_acc}};
      if (res.rounds.size() >= 2) {
        cmp["round2_ood_acc"] = res.rounds[1].ood_acc;
        cmp["ood_gain"] = res.rounds[1].ood_acc - base_ood;
      } else {
        cmp["round2_ood_acc"] = nullptr;
        cmp["ood_gain"] = nullptr;
      }
      cmp["final_ood_acc"] = std::isfinite(res.final_ood_acc) ? json(res.final_ood_acc) : json(nullptr);
      cmp["final_ood_gain"] = std::isfinite(res.final_ood_acc) ? json(res.final_ood_acc - base_ood) : json(nullptr);
      write_json(cmp, dir / "comparison.json", hdr);
    }
    man.wall_seconds = seconds_since(t0);
    write_json(man.to_json(), dir / "manifest.json", hdr);
    std::cout << fmt::format("{}: {} rounds, termination {} -> {}\n", algo, res.rounds_completed,
                             res.termination_reason, dir.string());
    return int(kOk);
  }, cfg_json);
}

// ---- dataset export ----

int cmd_dataset(const Common& c, bool ood) {
  const json cfg_json = load_config(c, feat_base());
  const FeatSetup s = feat_setup_from_json(cfg_json);
  const fs::path dir = resolve_output_dir(c.out_dir, ood ? "dataset-ood" : "dataset");
  RunManifest man{ood ? "dataset --ood" : "dataset", s.to_json(), c.config_path, dir.string(), s.data_seed};
  const auto ds = ood ? sample_test_set(s.ood_n, s.ood_betas, s.d, s.sigma_p, s.data_seed + 1)
                      : sample_dataset(s.envs, s.d, s.sigma_p, s.data_seed);
  write_dataset_csv(ds, (dir / "data.csv").string(), man.header());
  write_dataset_sidecar(ds, (dir / "data.json").string(), man.header());
  std::cout << fmt::format("dataset: {} samples -> {}\n", ds.size(), dir.string());
  return kOk;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "JSON config file");
  app->add_option("--set", c.overrides, "dotted-path override key=value (repeatable)");
  app->add_option("--out", c.out_dir, "output directory (default: $FEATLAB_OUTPUT_ROOT/<command>)");
  app->add_option("--sweep", c.sweep, "run seeds=a..b in parallel, one subdirectory per seed");
}

}  // namespace

int main(int argc, char** argv) {
  // per-epoch Eigen temporaries exceed the default mmap threshold; keep them on the heap
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  CLI::App app{"featlab: two-bit feature learning lab"};
  app.require_subcommand(1);
  Common common;
  std::string sub;

  auto* sim = app.add_subcommand("simulate", "GD trajectories under ERM / IRMv1 schedules");
  sim->add_option("schedule", sub, "erm | irmv1 | pretrain-irmv1")
      ->required()
      ->check(CLI::IsMember({"erm", "irmv1", "pretrain-irmv1"}));
  add_common(sim, common);

  double alpha = 0.25;
  std::vector<double> betas = {0.1, 0.2};
  bool simulate_fp = false;
  auto* ver = app.add_subcommand("verify", "numerical checks of the theory");
  ver->add_option("check", sub, "race | suppression | switch | transfer | corollary | oracle | fixed-point | kernel | gradcheck")
      ->required()
      ->check(CLI::IsMember({"race", "suppression", "switch", "transfer", "corollary", "oracle", "fixed-point", "kernel", "gradcheck"}));
  ver->add_option("--alpha", alpha, "invariant flip rate (fixed-point)");
  ver->add_option("--beta", betas, "two spurious flip rates (fixed-point)")->expected(2);
  ver->add_flag("--simulate", simulate_fp, "fixed-point: also run the long ERM simulation");
  add_common(ver, common);

  auto* ft = app.add_subcommand("feat", "feature augmented training, all rounds kept");
  add_common(ft, common);
  auto* ift = app.add_subcommand("ifeat", "feature augmented training, latest round only");
  add_common(ift, common);

  bool ood = false;
  auto* dsc = app.add_subcommand("dataset", "export a generated dataset as CSV + JSON sidecar");
  dsc->add_flag("--ood", ood, "export the reversed-correlation test set instead");
  add_common(dsc, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  return guarded([&] {
    if (*sim) return cmd_simulate(sub, common);
    if (*ver) return cmd_verify(sub, common, alpha, betas, simulate_fp);
    if (*ft) return cmd_feat("feat", common);
    if (*ift) return cmd_feat("ifeat", common);
    if (*dsc) return cmd_dataset(common, ood);
    return int(kConfig);
  });
}
