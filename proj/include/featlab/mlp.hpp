#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "featlab/data.hpp"
#include "featlab/rng.hpp"

namespace featlab {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

enum class HiddenAct { identity, relu };

struct DenseLayer {
  Mat W;  // out x in
  Vec b;
};

// Featurizer phi: every layer is followed by the hidden activation.
struct Mlp {
  std::vector<DenseLayer> layers;
  HiddenAct act = HiddenAct::relu;

  std::size_t input_dim() const { return layers.front().W.cols(); }
  std::size_t feature_dim() const { return layers.back().W.rows(); }
};

struct Classifier {
  Vec w;
  double b = 0.0;
};

struct MlpCache {
  std::vector<Mat> pre;   // pre-activations per layer
  std::vector<Mat> post;  // activations per layer
};

struct MlpGrad {
  std::vector<Mat> dW;
  std::vector<Vec> db;
};

// He-style N(0, 2/fan_in) weights, zero biases.
Mlp init_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden, HiddenAct act,
             Rng& rng);
Classifier init_classifier(std::size_t h, Rng& rng);  // N(0, (0.1/sqrt(h))^2), zero bias

Mat mlp_forward(const Mlp& phi, const Mat& X, MlpCache* cache = nullptr);
MlpGrad mlp_backward(const Mlp& phi, const MlpCache& cache, const Mat& X, const Mat& dZ);
MlpGrad zero_grad(const Mlp& phi);

// N x 2d matrix with rows [x1, x2].
Mat design_matrix(const TwoBitDataset& ds);
Vec labels(const TwoBitDataset& ds);

}  // namespace featlab
