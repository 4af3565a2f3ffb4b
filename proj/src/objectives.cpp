#include "featlab/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "featlab/errors.hpp"

namespace featlab {

double logistic_loss(double z) {
  return z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
}

double logistic_d1(double z) {
  double v;
  if (z >= 0) {
    const double e = std::exp(-z);
    v = -e / (1.0 + e);
  } else {
    v = -1.0 / (1.0 + std::exp(z));
  }
  return std::clamp(v, -1.0, 0.0);
}

double logistic_d2(double z) {
  const double e = std::exp(-std::abs(z));
  return e / ((1.0 + e) * (1.0 + e));
}

nlohmann::json LossReport::to_json() const {
  return {{"erm_total", erm_total},     {"irm_total", irm_total},
          {"c", c},                     {"lambda", lambda},
          {"erm_per_env", erm_per_env}, {"irm_penalty_per_env", irm_penalty_per_env}};
}

Evaluation evaluate_cnn(const CnnParams& p, const TwoBitDataset& ds, double lambda) {
  Evaluation ev;
  ev.yhat = logits(p, ds);
  auto& rep = ev.report;
  const std::size_t E = ds.num_envs();
  rep.lambda = lambda;
  rep.erm_per_env.assign(E, 0.0);
  rep.c.assign(E, 0.0);
  rep.irm_penalty_per_env.assign(E, 0.0);
  std::size_t correct = 0;
  for (std::size_t e = 0; e < E; ++e) {
    const std::size_t ne = ds.env_size(e);
    if (ne == 0) continue;
    double L = 0.0, C = 0.0;
    for (std::size_t i = ds.offsets[e]; i < ds.offsets[e + 1]; ++i) {
      const double z = ds.y[i] * ev.yhat[i];
      L += logistic_loss(z);
      C += logistic_d1(z) * z;
      if (z > 0) ++correct;
    }
    rep.erm_per_env[e] = L / double(ne);
    rep.c[e] = C / double(ne);
    rep.irm_penalty_per_env[e] = rep.c[e] * rep.c[e];
  }
  double pen = 0.0;
  for (std::size_t e = 0; e < E; ++e) {
    rep.erm_total += rep.erm_per_env[e];
    pen += rep.irm_penalty_per_env[e];
  }
  rep.irm_total = rep.erm_total + lambda * pen;
  ev.train_acc = ds.size() ? double(correct) / double(ds.size()) : 0.0;
  for (double v : ev.yhat)
    if (!std::isfinite(v)) throw NumericAbort("non-finite logit");
  if (!std::isfinite(rep.irm_total)) throw NumericAbort("non-finite loss");
  return ev;
}

CnnGrad backprop_logit_coeffs(const CnnParams& p, const TwoBitDataset& ds,
                              const std::vector<double>& coef) {
  const std::size_t m = p.m, d = p.d, n = ds.size();
  CnnGrad g;
  g.g_pos.assign(m * d, 0.0);
  g.g_neg.assign(m * d, 0.0);
  if (p.act.kind == ActivationKind::linear) {
    // every filter sees the same direction sum_i coef_i (x1_i + x2_i), scaled by j/m
    std::vector<double> G(d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double c = coef[i];
      G[0] += c * ds.x1(i, 0);
      G[1] += c * ds.x1(i, 1);
      const double* x2 = ds.x2(i);
      for (std::size_t k = 2; k < d; ++k) G[k] += c * x2[k];
    }
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t k = 0; k < d; ++k) {
        g.g_pos[r * d + k] = G[k] / double(m);
        g.g_neg[r * d + k] = -G[k] / double(m);
      }
    return g;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double c = coef[i];
    if (c == 0.0) continue;
    const double a = ds.x1(i, 0), b = ds.x1(i, 1);
    const double* x2 = ds.x2(i);
    for (int j : {1, -1})
      for (std::size_t r = 0; r < m; ++r) {
        const double* w = p.row(j, r);
        double s2 = 0.0;
        for (std::size_t k = 0; k < d; ++k) s2 += w[k] * x2[k];
        const double f1 = c * j * p.act.dpsi(a * w[0] + b * w[1]) / double(m);
        const double f2 = c * j * p.act.dpsi(s2) / double(m);
        double* out = g.row(j, r, d);
        out[0] += f1 * a;
        out[1] += f1 * b;
        for (std::size_t k = 2; k < d; ++k) out[k] += f2 * x2[k];
      }
  }
  return g;
}

std::pair<LossReport, CnnGrad> erm_loss_grad(const CnnParams& p, const TwoBitDataset& ds) {
  auto ev = evaluate_cnn(p, ds, 0.0);
  std::vector<double> coef(ds.size(), 0.0);
  for (std::size_t e = 0; e < ds.num_envs(); ++e) {
    const double inv = 1.0 / double(ds.env_size(e));
    for (std::size_t i = ds.offsets[e]; i < ds.offsets[e + 1]; ++i)
      coef[i] = inv * logistic_d1(ds.y[i] * ev.yhat[i]) * ds.y[i];
  }
  return {ev.report, backprop_logit_coeffs(p, ds, coef)};
}

PenaltyVector irmv1_penalty(const CnnParams& p, const TwoBitDataset& ds) {
  auto ev = evaluate_cnn(p, ds, 0.0);
  PenaltyVector pv;
  pv.c = ev.report.c;
  double s = 0.0;
  for (double c : pv.c) s += c * c;
  pv.norm2 = std::sqrt(s);
  return pv;
}

std::pair<LossReport, CnnGrad> irmv1_loss_grad(const CnnParams& p, const TwoBitDataset& ds,
                                               double lambda) {
  require(lambda >= 0.0, "lambda must be >= 0");
  if (lambda == 0.0) return erm_loss_grad(p, ds);
  auto ev = evaluate_cnn(p, ds, lambda);
  std::vector<double> coef(ds.size(), 0.0);
  for (std::size_t e = 0; e < ds.num_envs(); ++e) {
    const double inv = 1.0 / double(ds.env_size(e));
    const double C = ev.report.c[e];
    for (std::size_t i = ds.offsets[e]; i < ds.offsets[e + 1]; ++i) {
      const double yh = ev.yhat[i], z = ds.y[i] * yh;
      coef[i] = inv * (logistic_d1(z) * ds.y[i] * (1.0 + 2.0 * lambda * C) +
                       2.0 * lambda * C * logistic_d2(z) * yh);
    }
  }
  return {ev.report, backprop_logit_coeffs(p, ds, coef)};
}

std::vector<std::vector<double>> penalty_jacobian(const CnnParams& p, const TwoBitDataset& ds) {
  const auto yhat = logits(p, ds);
  std::vector<std::vector<double>> J;
  for (std::size_t e = 0; e < ds.num_envs(); ++e) {
    std::vector<double> coef(ds.size(), 0.0);
    const double inv = 1.0 / double(ds.env_size(e));
    for (std::size_t i = ds.offsets[e]; i < ds.offsets[e + 1]; ++i) {
      const double z = ds.y[i] * yhat[i];
      coef[i] = inv * (logistic_d2(z) * z + logistic_d1(z)) * ds.y[i];
    }
    auto g = backprop_logit_coeffs(p, ds, coef);
    std::vector<double> row = std::move(g.g_pos);
    row.insert(row.end(), g.g_neg.begin(), g.g_neg.end());
    J.push_back(std::move(row));
  }
  return J;
}

std::vector<double> penalty_gram(const CnnParams& p, const TwoBitDataset& ds) {
  const auto J = penalty_jacobian(p, ds);
  const std::size_t E = J.size();
  std::vector<double> H(E * E, 0.0);
  for (std::size_t a = 0; a < E; ++a)
    for (std::size_t b = 0; b < E; ++b) {
      double s = 0.0;
      for (std::size_t k = 0; k < J[a].size(); ++k) s += J[a][k] * J[b][k];
      H[a * E + b] = s;
    }
  return H;
}

double set_loss(const Mat& Z, const Vec& y, const Classifier& c, const std::vector<std::size_t>& S) {
  if (S.empty()) return 0.0;
  double L = 0.0;
  for (auto i : S) L += logistic_loss(y[i] * (Z.row(i).dot(c.w) + c.b));
  return L / double(S.size());
}

FeatObjective feat_objective(const Mlp& phi, const Classifier& active, const FeatGroups& groups,
                             const Mat& X, const Vec& y, double lambda_retain) {
  require(!groups.aug_sets.empty(), "at least one augmentation set is required");
  require(groups.ret_sets.size() == groups.historical.size(),
          "every retention set needs its paired historical classifier");
  require(lambda_retain >= 0.0, "lambda_retain must be >= 0");

  MlpCache cache;
  const Mat Z = mlp_forward(phi, X, &cache);
  FeatObjective out;

  bool any = false;
  for (std::size_t a = 0; a < groups.aug_sets.size(); ++a) {
    const double L = set_loss(Z, y, active, groups.aug_sets[a]);
    out.aug_losses.push_back(L);
    if (groups.aug_sets[a].empty()) continue;
    if (!any || L > out.aug_losses[out.argmax]) out.argmax = a;  // strict: lowest index wins ties
    any = true;
  }
  require(any, "all augmentation sets are empty");
  out.dro_loss = out.aug_losses[out.argmax];
  for (std::size_t r = 0; r < groups.ret_sets.size(); ++r) {
    out.ret_losses.push_back(set_loss(Z, y, groups.historical[r], groups.ret_sets[r]));
    out.retain_loss += out.ret_losses.back();
  }
  out.loss = out.dro_loss + lambda_retain * out.retain_loss;
  if (!std::isfinite(out.loss)) throw NumericAbort("non-finite FeAT objective");

  Mat dZ = Mat::Zero(Z.rows(), Z.cols());
  out.grad_active.w = Vec::Zero(active.w.size());
  out.grad_active.b = 0.0;
  {
    const auto& S = groups.aug_sets[out.argmax];
    const double inv = 1.0 / double(S.size());
    for (auto i : S) {
      const double c = inv * logistic_d1(y[i] * (Z.row(i).dot(active.w) + active.b)) * y[i];
      out.grad_active.w += c * Z.row(i).transpose();
      out.grad_active.b += c;
      dZ.row(i) += c * active.w.transpose();
    }
  }
  if (lambda_retain > 0.0)
    for (std::size_t r = 0; r < groups.ret_sets.size(); ++r) {
      const auto& S = groups.ret_sets[r];
      if (S.empty()) continue;
      const auto& h = groups.historical[r];
      const double inv = lambda_retain / double(S.size());
      for (auto i : S) {
        const double c = inv * logistic_d1(y[i] * (Z.row(i).dot(h.w) + h.b)) * y[i];
        dZ.row(i) += c * h.w.transpose();
      }
    }
  out.grad_phi = mlp_backward(phi, cache, X, dZ);
  for (const auto& h : groups.historical) out.grad_historical.push_back({Vec::Zero(h.w.size()), 0.0});
  return out;
}

}  // namespace featlab
