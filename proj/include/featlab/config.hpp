#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "featlab/data.hpp"
#include "featlab/dynamics.hpp"
#include "featlab/feat.hpp"

namespace featlab {

// Applies "a.b.0.c=value" to j. The value is parsed as JSON when possible,
// otherwise taken as a string. Errors name the JSON pointer.
void apply_override(nlohmann::json& j, const std::string& assignment);

// Strict readers: unknown keys, wrong types and invalid values raise
// InvalidArgument with a JSON-pointer path.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct FeatSetup {
  FeatConfig feat;
  std::vector<EnvironmentSpec> envs = {{0.25, 0.1, 2500}, {0.25, 0.2, 2500}};
  std::size_t d = 10;
  double sigma_p = 0.01;
  std::uint64_t data_seed = 0;
  std::size_t ood_n = 5000;
  std::vector<double> ood_betas;  // empty: the training betas
  bool baseline = true;
  std::size_t baseline_epochs = 0;  // 0: max_rounds * inner_epochs

  nlohmann::json to_json() const;
};

FeatSetup feat_setup_from_json(const nlohmann::json& j);

}  // namespace featlab
