#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include <json.hpp>

#include "featlab/cnn.hpp"
#include "featlab/data.hpp"
#include "featlab/mlp.hpp"

namespace featlab {

// l(z) = log(1 + exp(-z)) and its derivatives, all overflow-safe.
double logistic_loss(double z);
double logistic_d1(double z);  // in [-1, 0]
double logistic_d2(double z);  // sigma(z) sigma(-z)

struct PenaltyVector {
  std::vector<double> c;
  double norm2 = 0.0;
};

struct LossReport {
  std::vector<double> erm_per_env;
  double erm_total = 0.0;
  std::vector<double> c;
  std::vector<double> irm_penalty_per_env;  // (C^e)^2
  double irm_total = 0.0;
  double lambda = 0.0;

  nlohmann::json to_json() const;
};

// Everything computed from one forward pass.
struct Evaluation {
  std::vector<double> yhat;
  LossReport report;
  double train_acc = 0.0;
};

Evaluation evaluate_cnn(const CnnParams& p, const TwoBitDataset& ds, double lambda = 0.0);

std::pair<LossReport, CnnGrad> erm_loss_grad(const CnnParams& p, const TwoBitDataset& ds);
PenaltyVector irmv1_penalty(const CnnParams& p, const TwoBitDataset& ds);
std::pair<LossReport, CnnGrad> irmv1_loss_grad(const CnnParams& p, const TwoBitDataset& ds,
                                               double lambda);

// sum_i coef_i * d yhat_i / dW
CnnGrad backprop_logit_coeffs(const CnnParams& p, const TwoBitDataset& ds,
                              const std::vector<double>& coef);

// Rows dC^e/dW (CnnParams layout, w_pos then w_neg), one per environment.
std::vector<std::vector<double>> penalty_jacobian(const CnnParams& p, const TwoBitDataset& ds);
// H(t) = J J^T, row-major |E| x |E|.
std::vector<double> penalty_gram(const CnnParams& p, const TwoBitDataset& ds);

// ---- FeAT composite objective ----

struct FeatGroups {
  std::vector<std::vector<std::size_t>> aug_sets;
  std::vector<std::vector<std::size_t>> ret_sets;
  std::vector<Classifier> historical;
};

struct FeatObjective {
  double loss = 0.0;
  double dro_loss = 0.0;
  double retain_loss = 0.0;  // plain sum over retention sets, before lambda
  std::vector<double> aug_losses, ret_losses;
  std::size_t argmax = 0;
  MlpGrad grad_phi;
  Classifier grad_active;
  std::vector<Classifier> grad_historical;  // identically zero
};

double set_loss(const Mat& Z, const Vec& y, const Classifier& c, const std::vector<std::size_t>& S);

FeatObjective feat_objective(const Mlp& phi, const Classifier& active, const FeatGroups& groups,
                             const Mat& X, const Vec& y, double lambda_retain);

}  // namespace featlab
