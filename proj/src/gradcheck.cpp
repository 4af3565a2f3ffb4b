#include "featlab/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "featlab/cnn.hpp"
#include "featlab/data.hpp"
#include "featlab/mlp.hpp"
#include "featlab/objectives.hpp"
#include "featlab/rng.hpp"

namespace featlab {

double max_relative_error(const std::vector<double>& a, const std::vector<double>& n) {
  double scale = 0.0;
  for (double v : n) scale = std::max(scale, std::abs(v));
  const double tau = std::max(1e-3 * scale, 1e-300);
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k)
    worst = std::max(worst, std::abs(a[k] - n[k]) / std::max({std::abs(a[k]), std::abs(n[k]), tau}));
  return worst;
}

std::vector<double> central_difference(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x, double h) {
  std::vector<double> g(x.size());
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double x0 = x[k];
    x[k] = x0 + h;
    const double fp = f(x);
    x[k] = x0 - h;
    const double fm = f(x);
    x[k] = x0;
    g[k] = (fp - fm) / (2.0 * h);
  }
  return g;
}

namespace {

std::vector<double> flatten(const CnnParams& p) {
  std::vector<double> v = p.w_pos;
  v.insert(v.end(), p.w_neg.begin(), p.w_neg.end());
  return v;
}

CnnParams unflatten(const CnnParams& like, const std::vector<double>& v) {
  CnnParams p = like;
  std::copy(v.begin(), v.begin() + p.w_pos.size(), p.w_pos.begin());
  std::copy(v.begin() + p.w_pos.size(), v.end(), p.w_neg.begin());
  return p;
}

std::vector<double> flatten(const CnnGrad& g) {
  std::vector<double> v = g.g_pos;
  v.insert(v.end(), g.g_neg.begin(), g.g_neg.end());
  return v;
}

}  // namespace

std::vector<GradcheckResult> gradcheck_suite(std::uint64_t seed) {
  std::vector<GradcheckResult> out;
  const auto ds = sample_dataset({{0.25, 0.1, 16}, {0.25, 0.2, 16}}, 8, 0.3, seed);
  for (auto act : {Activation{ActivationKind::linear}, Activation{ActivationKind::smoothed_relu, 2.0},
                   Activation{ActivationKind::tanh}}) {
    const auto p = init_cnn(4, 8, 0.5, act, seed + 1);
    const auto x = flatten(p);
    for (double lambda : {0.0, 10.0, 1e8}) {
      auto f = [&](const std::vector<double>& v) {
        return evaluate_cnn(unflatten(p, v), ds, lambda).report.irm_total;
      };
      const auto g = lambda == 0.0 ? erm_loss_grad(p, ds).second : irmv1_loss_grad(p, ds, lambda).second;
      out.push_back({fmt::format("{}/{}", lambda == 0.0 ? "erm" : fmt::format("irmv1(lambda={:g})", lambda), act.name()),
                     max_relative_error(flatten(g), central_difference(f, x)), x.size()});
    }
  }

  // FeAT objective: two augmentation sets, one retention set with a frozen classifier
  Rng rng(seed, "gradcheck/feat");
  const Mat X = design_matrix(ds);
  const Vec y = labels(ds);
  const Mlp phi = init_mlp(X.cols(), {8}, HiddenAct::relu, rng);
  Classifier w{Vec(8), 0.1};
  Classifier hist{Vec(8), -0.2};
  for (int k = 0; k < 8; ++k) {
    w.w[k] = rng.normal();
    hist.w[k] = rng.normal();
  }
  FeatGroups G;
  std::vector<std::size_t> all(ds.size()), half;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    all[i] = i;
    if (i % 2) half.push_back(i);
  }
  G.aug_sets = {all, half};
  G.ret_sets = {all};
  G.historical = {hist};
  const double lam = 0.5;

  auto pack = [](const Mlp& m, const Classifier& c) {
    std::vector<double> v;
    for (const auto& L : m.layers) {
      v.insert(v.end(), L.W.data(), L.W.data() + L.W.size());
      v.insert(v.end(), L.b.data(), L.b.data() + L.b.size());
    }
    v.insert(v.end(), c.w.data(), c.w.data() + c.w.size());
    v.push_back(c.b);
    return v;
  };
  auto unpack = [&](const std::vector<double>& v) {
    Mlp m = phi;
    Classifier c = w;
    std::size_t k = 0;
    for (auto& L : m.layers) {
      for (Eigen::Index i = 0; i < L.W.size(); ++i) L.W.data()[i] = v[k++];
      for (Eigen::Index i = 0; i < L.b.size(); ++i) L.b[i] = v[k++];
    }
    for (Eigen::Index i = 0; i < c.w.size(); ++i) c.w[i] = v[k++];
    c.b = v[k];
    return std::make_pair(m, c);
  };
  const auto obj = feat_objective(phi, w, G, X, y, lam);
  Mlp gm = phi;
  for (std::size_t l = 0; l < gm.layers.size(); ++l) {
    gm.layers[l].W = obj.grad_phi.dW[l];
    gm.layers[l].b = obj.grad_phi.db[l];
  }
  auto f = [&](const std::vector<double>& v) {
    auto [m, c] = unpack(v);
    return feat_objective(m, c, G, X, y, lam).loss;
  };
  const auto x = pack(phi, w);
  out.push_back({"feat_objective", max_relative_error(pack(gm, obj.grad_active), central_difference(f, x)), x.size()});
  return out;
}

}  // namespace featlab
