#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "featlab/data.hpp"

namespace featlab {

enum class ActivationKind { linear, smoothed_relu, tanh };

struct Activation {
  ActivationKind kind = ActivationKind::linear;
  double beta_smooth = 1.0;  // sharpness of the softplus unit

  double psi(double x) const;
  double dpsi(double x) const;
  std::string name() const;
  static Activation parse(const std::string& s, double beta_smooth = 1.0);
};

// Filters w_{+1,r} and w_{-1,r}, each m-by-d row-major. The second layer is
// the fixed +-1/m average and is never stored.
struct CnnParams {
  std::size_t m = 0, d = 0;
  Activation act;
  std::uint64_t seed = 0;
  std::vector<double> w_pos, w_neg;

  double* row(int j, std::size_t r) { return (j > 0 ? w_pos.data() : w_neg.data()) + r * d; }
  const double* row(int j, std::size_t r) const {
    return (j > 0 ? w_pos.data() : w_neg.data()) + r * d;
  }
  // u = (1/m)(sum_r w_{+1,r} - sum_r w_{-1,r}); the linear-activation logit is <u, x1 + x2>.
  std::vector<double> effective_direction() const;
};

// Same layout as CnnParams; used for gradients.
struct CnnGrad {
  std::vector<double> g_pos, g_neg;
  double* row(int j, std::size_t r, std::size_t d) {
    return (j > 0 ? g_pos.data() : g_neg.data()) + r * d;
  }
};

CnnParams init_cnn(std::size_t m, std::size_t d, double sigma_0, Activation act,
                   std::uint64_t seed);

double logit(const CnnParams& p, const double* x1, const double* x2);
double logit(const CnnParams& p, const TwoBitDataset& ds, std::size_t i);
std::vector<double> logits(const CnnParams& p, const TwoBitDataset& ds);

// d logit / d w_{j,r} for one input; result has CnnParams layout.
CnnGrad logit_grad(const CnnParams& p, const double* x1, const double* x2);

struct FeatureProbe {
  // m-by-2 row-major, column 0 for j = +1 and column 1 for j = -1
  std::vector<double> lambda, gamma;
  // xi[(c*m + r)*S + s] for filter class c (0: j=+1, 1: j=-1), sample xi_index[s]
  std::vector<double> xi;
  std::vector<std::size_t> xi_index;
  double agg_inv = 0.0, agg_spu = 0.0, max_xi = 0.0;
};

FeatureProbe probe_features(const CnnParams& p, const TwoBitDataset& ds,
                            std::size_t xi_per_env = 64);

// Filters laid out so the aggregates hit (agg_inv, agg_spu), plus N(0, sigma^2) jitter.
CnnParams cnn_with_aggregates(std::size_t m, std::size_t d, double agg_inv, double agg_spu,
                              double sigma, Activation act, std::uint64_t seed);

void save_checkpoint(const CnnParams& p, const std::string& path);
CnnParams load_checkpoint(const std::string& path);

}  // namespace featlab
