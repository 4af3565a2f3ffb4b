#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "featlab/cnn.hpp"
#include "featlab/data.hpp"

namespace featlab {

enum class Schedule { erm, irmv1, pretrain_irmv1 };
std::string to_string(Schedule s);
Schedule parse_schedule(const std::string& s);

struct TrainConfig {
  std::optional<double> eta;      // ERM step; unset -> 0.05 x window upper bound (0.01 if empty)
  std::optional<double> eta_irm;  // IRMv1 step; unset -> fraction / (lambda * lambda_max(H(t)))
  std::optional<double> irm_step_fraction;  // unset -> 0.5 from scratch, 0.005 after pretraining
  std::size_t steps = 2000;
  double lambda = 1e8;
  // pretrain-irmv1: ERM for at most pretrain_steps (earlier if stationary), then
  // steps - pretrain_steps IRMv1 steps after the switch.
  std::size_t pretrain_steps = 0;
  bool pretrain_until_stationary = true;
  bool stop_when_stationary = false;  // erm schedule only
  double stationarity_tol = 1e-6;
  std::size_t stationarity_window = 50;
  std::size_t record_every = 10;
  Activation activation;
  double sigma_0 = 0.01, sigma_p = 0.01;
  std::size_t m = 10, d = 50;
  std::vector<EnvironmentSpec> envs = {{0.25, 0.1, 2500}, {0.25, 0.2, 2500}};
  std::uint64_t seed = 0;
  std::size_t xi_per_env = 64;
  double window_delta = 0.0;

  void validate() const;
  nlohmann::json to_json() const;
};

// Admissible ERM step sizes over a horizon of T steps.
struct EtaWindow {
  double lower = 0.0, upper = 0.0;
  double bound_plus = 0.0, bound_minus = 0.0;  // the two terms of the min
  bool nonempty = false;
  std::size_t horizon = 0;
  double delta = 0.0;
  nlohmann::json to_json() const;
};

EtaWindow eta_window(const GroupCounts& c, std::size_t m, std::size_t T, double delta = 0.0);
double default_eta(const EtaWindow& w);

struct TrajectoryRow {
  std::size_t step = 0;
  int phase = 0;  // 0 ERM, 1 IRMv1
  double agg_inv = 0, agg_spu = 0, c_norm = 0;
  std::vector<double> c;
  double erm_loss = 0, irm_loss = 0, train_acc = 0, max_xi = 0;
};

struct Trajectory {
  std::vector<TrajectoryRow> rows;
  CnnParams initial_params, final_params;
  double eta_erm = 0.0, eta_irm = 0.0;
  EtaWindow window;
  std::optional<std::size_t> switch_step;
  std::optional<std::size_t> stationary_step;
  std::vector<double> gram_eigs;  // H(t) spectrum where eta_irm was resolved
};

Trajectory run_gd(const TrainConfig& cfg, Schedule schedule, const TwoBitDataset& ds,
                  const CnnParams& init);
// Samples the training set and initialization from cfg.
Trajectory run_gd(const TrainConfig& cfg, Schedule schedule);

TwoBitDataset training_set(const TrainConfig& cfg);
CnnParams initial_params(const TrainConfig& cfg);

void write_trajectory_csv(const Trajectory& tr, std::size_t num_envs, const std::string& path,
                          const std::string& header_comment = "");

// ---- population recursion ----

struct RecursionState {
  double sum_plus = 0.0, sum_minus = 0.0;
  double last_delta_plus = 0.0, last_delta_minus = 0.0;
  GroupCounts counts;
  double eta = 0.0;
  std::size_t m = 1;
};

RecursionState step_recursion(const RecursionState& st);

struct FixedPoint {
  double a_const = 0, b_const = 0, g_m = 0, g_b = 0, gamma1_inf = 0, gamma2_inf = 0;
  nlohmann::json to_json() const;
};

FixedPoint closed_form_fixed_point(double alpha, double beta1, double beta2);
// Same limit for given group counts: gamma1 + gamma2 = log(c_pp/c_mm), gamma2 - gamma1 = log(c_mp/c_pm).
FixedPoint fixed_point_from_counts(const GroupCounts& c);

struct IrmKernelDiag {
  std::vector<double> h_matrix;  // row-major E x E
  std::size_t num_envs = 0;
  double lambda0 = 0.0;
};

IrmKernelDiag irm_kernel(const CnnParams& p, const TwoBitDataset& ds);

// ---- verification pipelines ----

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct Report {
  std::string name;
  std::vector<Check> checks;
  nlohmann::json data;
  bool passed() const;
  nlohmann::json to_json() const;
};

// Gate for the feature race (linear, shared alpha > mean beta); throws InvalidArgument when violated.
void check_race_preconditions(const TrainConfig& cfg);

// Measured per-filter increments (Delta_Lambda, Delta_Gamma) between consecutive stride-1 rows.
struct Increments {
  std::vector<double> d_inv, d_spu;
};
Increments measured_increments(const Trajectory& tr, double eta);

Report verify_erm_race(const TrainConfig& cfg);
Report verify_irmv1_transfer(const TrainConfig& cfg, double sum_c_tol = 0.02);
Report verify_suppression(const TrainConfig& cfg);
// ERM pretraining then IRMv1: |sum_e C^e| < sum_c_tol at the switch, then agg_inv strictly
// up and agg_spu strictly down for the next `window` steps.
Report verify_pretrain_switch(const TrainConfig& cfg, std::size_t window = 500, double sum_c_tol = 0.05);
Report verify_oracle(const TrainConfig& cfg, std::size_t steps = 200, double rel_tol = 0.01);
Report verify_fixed_point_simulation(const TrainConfig& cfg, double rel_tol = 0.02);
Report verify_corollary(const TrainConfig& cfg);

nlohmann::json run_summary(const TrainConfig& cfg, Schedule schedule, const Trajectory& tr,
                           const std::vector<Report>& reports = {});

}  // namespace featlab
