#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "featlab/data.hpp"
#include "featlab/mlp.hpp"
#include "featlab/objectives.hpp"

namespace featlab {

struct FeatConfig {
  std::size_t max_rounds = 3;
  std::size_t inner_epochs = 300;
  double p = 0.55;                // round-k training accuracy floor
  double termination_sum = 1.30;  // train + retention accuracy floor
  double lambda_retain = 0.01;
  double lr = 0.5;
  std::vector<std::size_t> hidden = {32};
  HiddenAct act = HiddenAct::relu;
  std::size_t batch_size = 0;  // 0: full batch; else per-group batches of this size
  std::uint64_t seed = 0;
  bool retention_check = false;  // FeAT only; iFeAT always applies it from round 2
  bool ifeat_keep_full_set = true;  // iFeAT keeps D_tr next to the latest augmentation set
  std::size_t log_every = 10;

  void validate() const;
  nlohmann::json to_json() const;
};

struct Accuracy {
  double overall = 0.0;
  std::vector<double> per_env;
};

struct RoundMetrics {
  std::size_t round = 0;
  bool accepted = false;
  double train_acc = 0.0;
  double retention_acc = std::numeric_limits<double>::quiet_NaN();
  double ood_acc = std::numeric_limits<double>::quiet_NaN();
  std::size_t n_aug_groups = 0, n_ret_groups = 0;
  std::vector<std::size_t> argmax_counts;  // epochs each augmentation group was the DRO argmax
  std::size_t aug_size = 0, ret_size = 0;  // partition produced by this round (if accepted)
};

struct EpochLog {
  std::size_t round = 0, epoch = 0;
  double dro_loss = 0, retain_loss = 0, train_acc = 0;
  double retention_acc = std::numeric_limits<double>::quiet_NaN();
  double ood_acc = std::numeric_limits<double>::quiet_NaN();
};

struct FeatResult {
  Mlp featurizer;
  Classifier averaged;
  std::vector<Classifier> round_classifiers;  // accepted rounds
  std::vector<RoundMetrics> rounds;           // includes a rejected final round if any
  std::vector<EpochLog> log;
  std::size_t rounds_completed = 0;
  std::string termination_reason;
  double final_train_acc = 0.0;
  double final_ood_acc = std::numeric_limits<double>::quiet_NaN();
  std::string algorithm;

  nlohmann::json to_json() const;
};

double predict_logit(const Mat& Z, std::size_t i, const Classifier& c);
Accuracy evaluate(const Mlp& phi, const Classifier& c, const TwoBitDataset& ds);
Accuracy evaluate_features(const Mat& Z, const Vec& y, const Classifier& c,
                           const std::vector<std::size_t>& env_offsets = {});

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> partition_by_correctness(
    const Mat& Z, const Vec& y, const Classifier& c);
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> partition_by_correctness(
    const Mlp& phi, const Classifier& c, const TwoBitDataset& ds);

// Mean over nonempty retention sets of the paired classifier's accuracy; NaN if none.
double retention_accuracy(const Mat& Z, const Vec& y, const std::vector<Classifier>& historical,
                          const std::vector<std::vector<std::size_t>>& ret_sets);
double retention_accuracy(const Mlp& phi, const std::vector<Classifier>& historical,
                          const std::vector<std::vector<std::size_t>>& ret_sets,
                          const TwoBitDataset& ds);

FeatResult run_feat(const FeatConfig& cfg, const TwoBitDataset& train, const TwoBitDataset* ood);
FeatResult run_ifeat(const FeatConfig& cfg, const TwoBitDataset& train, const TwoBitDataset* ood);
// Plain ERM of w o phi on D_tr for the given number of epochs.
FeatResult run_erm_baseline(const FeatConfig& cfg, const TwoBitDataset& train,
                            const TwoBitDataset* ood, std::size_t epochs);

// Largest |<row, v1>| / ||row|| over first-layer rows.
double v1_alignment(const Mlp& phi);

void write_round_log_csv(const FeatResult& r, const std::string& path,
                         const std::string& header_comment = "");

}  // namespace featlab
