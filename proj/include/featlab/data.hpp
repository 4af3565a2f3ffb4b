#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace featlab {

struct EnvironmentSpec {
  double alpha = 0.0;  // invariant flip rate
  double beta = 0.0;   // spurious flip rate
  std::size_t n = 1;
};

void validate(const EnvironmentSpec& s);

// Samples are stored column-wise. x1 is not materialized: it is exactly
// y*rad_alpha*e1 + y*rad_beta*e2, so only the signs are kept. The noise patch
// x2 lives in an n-by-d row-major block whose first two columns are zero.
// Samples of environment e occupy [offsets[e], offsets[e+1]).
struct TwoBitDataset {
  std::vector<EnvironmentSpec> envs;
  std::size_t d = 0;
  double sigma_p = 0.0;
  std::uint64_t seed = 0;
  std::string kind = "train";        // "train" or "ood_test"
  std::vector<double> test_betas;    // only for ood_test

  std::vector<std::int8_t> y, rad_alpha, rad_beta;
  std::vector<int> env;
  std::vector<double> noise;
  std::vector<std::size_t> offsets;

  std::size_t size() const { return y.size(); }
  std::size_t num_envs() const { return envs.size(); }
  std::size_t env_size(std::size_t e) const { return offsets[e + 1] - offsets[e]; }

  double x1(std::size_t i, std::size_t k) const {
    if (k == 0) return double(y[i]) * rad_alpha[i];
    if (k == 1) return double(y[i]) * rad_beta[i];
    return 0.0;
  }
  const double* x2(std::size_t i) const { return noise.data() + i * d; }
  void x1_into(std::size_t i, double* out) const;

  // Consistency of sizes, offsets, signs and the zeroed noise coordinates.
  void check() const;
};

TwoBitDataset sample_dataset(const std::vector<EnvironmentSpec>& specs, std::size_t d,
                             double sigma_p, std::uint64_t seed);

// Reversed-correlation OOD set: rad_alpha = +1 and rad_beta ~ Rad(1 - beta_e),
// split evenly over beta_list.
TwoBitDataset sample_test_set(std::size_t n, const std::vector<double>& beta_list, std::size_t d,
                              double sigma_p, std::uint64_t seed);

// Copy of the selected samples, regrouped by environment; env specs get the new counts.
TwoBitDataset subset(const TwoBitDataset& ds, const std::vector<std::size_t>& idx);

struct GroupCounts {
  double c_pp = 0, c_pm = 0, c_mp = 0, c_mm = 0;  // indexed by (rad_alpha, rad_beta)
  std::size_t n_min = 0;
  double total() const { return c_pp + c_pm + c_mp + c_mm; }
};

GroupCounts group_counts(const TwoBitDataset& ds);
GroupCounts expected_group_counts(double alpha, const std::vector<double>& betas);
double group_count_tolerance(double rho, std::size_t n_min);

nlohmann::json dataset_metadata(const TwoBitDataset& ds);
void write_dataset_csv(const TwoBitDataset& ds, const std::string& path,
                       const std::string& header_comment = "");
void write_dataset_sidecar(const TwoBitDataset& ds, const std::string& path,
                           const std::string& header_comment = "");
TwoBitDataset read_dataset(const std::string& csv_path, const std::string& sidecar_path);

}  // namespace featlab
