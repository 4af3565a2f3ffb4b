#include "featlab/mlp.hpp"

#include <cmath>

#include "featlab/errors.hpp"

namespace featlab {

Mlp init_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden, HiddenAct act,
             Rng& rng) {
  require(input_dim >= 1 && !hidden.empty(), "featurizer needs an input and at least one layer");
  Mlp phi;
  phi.act = act;
  std::size_t in = input_dim;
  for (std::size_t out : hidden) {
    require(out >= 1, "layer width must be >= 1");
    DenseLayer L;
    L.W.resize(out, in);
    const double sd = std::sqrt(2.0 / double(in));
    for (Eigen::Index i = 0; i < L.W.size(); ++i) L.W.data()[i] = sd * rng.normal();
    L.b = Vec::Zero(out);
    phi.layers.push_back(std::move(L));
    in = out;
  }
  return phi;
}

Classifier init_classifier(std::size_t h, Rng& rng) {
  Classifier c;
  c.w.resize(h);
  const double sd = 0.1 / std::sqrt(double(h));
  for (std::size_t k = 0; k < h; ++k) c.w[k] = sd * rng.normal();
  c.b = 0.0;
  return c;
}

Mat mlp_forward(const Mlp& phi, const Mat& X, MlpCache* cache) {
  require(std::size_t(X.cols()) == phi.input_dim(), "input width does not match featurizer");
  if (cache) {
    cache->pre.clear();
    cache->post.clear();
  }
  Mat H = X;
  for (const auto& L : phi.layers) {
    Mat P = H * L.W.transpose();
    P.rowwise() += L.b.transpose();
    Mat A = phi.act == HiddenAct::relu ? Mat(P.cwiseMax(0.0)) : P;
    if (cache) {
      cache->pre.push_back(std::move(P));
      cache->post.push_back(A);
    }
    H = std::move(A);
  }
  return H;
}

MlpGrad mlp_backward(const Mlp& phi, const MlpCache& cache, const Mat& X, const Mat& dZ) {
  const std::size_t L = phi.layers.size();
  MlpGrad g;
  g.dW.resize(L);
  g.db.resize(L);
  Mat delta = dZ;
  for (std::size_t l = L; l-- > 0;) {
    if (phi.act == HiddenAct::relu)
      delta = delta.cwiseProduct((cache.pre[l].array() > 0.0).cast<double>().matrix());
    const Mat& input = l == 0 ? X : cache.post[l - 1];
    g.dW[l] = delta.transpose() * input;
    g.db[l] = delta.colwise().sum().transpose();
    if (l > 0) delta = delta * phi.layers[l].W;
  }
  return g;
}

MlpGrad zero_grad(const Mlp& phi) {
  MlpGrad g;
  for (const auto& L : phi.layers) {
    g.dW.push_back(Mat::Zero(L.W.rows(), L.W.cols()));
    g.db.push_back(Vec::Zero(L.b.size()));
  }
  return g;
}

Mat design_matrix(const TwoBitDataset& ds) {
  const std::size_t d = ds.d;
  Mat X = Mat::Zero(ds.size(), 2 * d);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    X(i, 0) = ds.x1(i, 0);
    X(i, 1) = ds.x1(i, 1);
    const double* x2 = ds.x2(i);
    for (std::size_t k = 0; k < d; ++k) X(i, d + k) = x2[k];
  }
  return X;
}

Vec labels(const TwoBitDataset& ds) {
  Vec y(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) y[i] = ds.y[i];
  return y;
}

}  // namespace featlab
