#include "featlab/cnn.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "featlab/errors.hpp"
#include "featlab/rng.hpp"

namespace featlab {

double Activation::psi(double x) const {
  switch (kind) {
    case ActivationKind::linear:
      return x;
    case ActivationKind::smoothed_relu: {
      const double z = beta_smooth * x;
      return (std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)))) / beta_smooth;
    }
    case ActivationKind::tanh:
      return std::tanh(x);
  }
  return x;
}

double Activation::dpsi(double x) const {
  switch (kind) {
    case ActivationKind::linear:
      return 1.0;
    case ActivationKind::smoothed_relu: {
      const double z = beta_smooth * x;
      if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
      const double e = std::exp(z);
      return e / (1.0 + e);
    }
    case ActivationKind::tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
  }
  return 1.0;
}

std::string Activation::name() const {
  switch (kind) {
    case ActivationKind::linear:
      return "linear";
    case ActivationKind::smoothed_relu:
      return "smoothed_relu";
    case ActivationKind::tanh:
      return "tanh";
  }
  return "linear";
}

Activation Activation::parse(const std::string& s, double beta_smooth) {
  require(beta_smooth > 0.0, "beta_smooth must be > 0");
  if (s == "linear") return {ActivationKind::linear, beta_smooth};
  if (s == "smoothed_relu") return {ActivationKind::smoothed_relu, beta_smooth};
  if (s == "tanh" || s == "tanh_like") return {ActivationKind::tanh, beta_smooth};
  throw InvalidArgument("unknown activation '" + s + "'");
}

std::vector<double> CnnParams::effective_direction() const {
  std::vector<double> u(d, 0.0);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t k = 0; k < d; ++k) u[k] += w_pos[r * d + k] - w_neg[r * d + k];
  for (auto& v : u) v /= double(m);
  return u;
}

CnnParams init_cnn(std::size_t m, std::size_t d, double sigma_0, Activation act,
                   std::uint64_t seed) {
  require(m >= 1, "m must be >= 1");
  require(d >= 3, "d must be >= 3");
  require(sigma_0 >= 0.0, "sigma_0 must be >= 0");
  CnnParams p;
  p.m = m;
  p.d = d;
  p.act = act;
  p.seed = seed;
  p.w_pos.resize(m * d);
  p.w_neg.resize(m * d);
  Rng rng(seed, "cnn/init");
  for (auto& w : p.w_pos) w = sigma_0 * rng.normal();
  for (auto& w : p.w_neg) w = sigma_0 * rng.normal();
  return p;
}

namespace {
inline double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) s += a[k] * b[k];
  return s;
}
}  // namespace

double logit(const CnnParams& p, const double* x1, const double* x2) {
  double pos = 0.0, neg = 0.0;
  for (std::size_t r = 0; r < p.m; ++r) {
    pos += p.act.psi(dot(p.row(1, r), x1, p.d)) + p.act.psi(dot(p.row(1, r), x2, p.d));
    neg += p.act.psi(dot(p.row(-1, r), x1, p.d)) + p.act.psi(dot(p.row(-1, r), x2, p.d));
  }
  return pos / double(p.m) - neg / double(p.m);
}

double logit(const CnnParams& p, const TwoBitDataset& ds, std::size_t i) {
  require(p.d == ds.d, "parameter and data dimensions differ");
  std::vector<double> x1(ds.d);
  ds.x1_into(i, x1.data());
  return logit(p, x1.data(), ds.x2(i));
}

std::vector<double> logits(const CnnParams& p, const TwoBitDataset& ds) {
  require(p.d == ds.d, "parameter and data dimensions differ");
  const std::size_t n = ds.size(), d = p.d;
  std::vector<double> out(n);
  if (p.act.kind == ActivationKind::linear) {
    const auto u = p.effective_direction();
    for (std::size_t i = 0; i < n; ++i)
      out[i] = ds.x1(i, 0) * u[0] + ds.x1(i, 1) * u[1] + dot(u.data(), ds.x2(i), d);
    return out;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double a = ds.x1(i, 0), b = ds.x1(i, 1);
    const double* x2 = ds.x2(i);
    double pos = 0.0, neg = 0.0;
    for (std::size_t r = 0; r < p.m; ++r) {
      const double* wp = p.row(1, r);
      const double* wn = p.row(-1, r);
      pos += p.act.psi(a * wp[0] + b * wp[1]) + p.act.psi(dot(wp, x2, d));
      neg += p.act.psi(a * wn[0] + b * wn[1]) + p.act.psi(dot(wn, x2, d));
    }
    out[i] = pos / double(p.m) - neg / double(p.m);
  }
  return out;
}

CnnGrad logit_grad(const CnnParams& p, const double* x1, const double* x2) {
  CnnGrad g;
  g.g_pos.assign(p.m * p.d, 0.0);
  g.g_neg.assign(p.m * p.d, 0.0);
  for (int j : {1, -1})
    for (std::size_t r = 0; r < p.m; ++r) {
      const double* w = p.row(j, r);
      const double s1 = p.act.dpsi(dot(w, x1, p.d)) * j / double(p.m);
      const double s2 = p.act.dpsi(dot(w, x2, p.d)) * j / double(p.m);
      double* out = g.row(j, r, p.d);
      for (std::size_t k = 0; k < p.d; ++k) out[k] = s1 * x1[k] + s2 * x2[k];
    }
  return g;
}

FeatureProbe probe_features(const CnnParams& p, const TwoBitDataset& ds, std::size_t xi_per_env) {
  require(p.d == ds.d, "parameter and data dimensions differ");
  FeatureProbe fp;
  fp.lambda.resize(2 * p.m);
  fp.gamma.resize(2 * p.m);
  for (std::size_t r = 0; r < p.m; ++r) {
    fp.lambda[2 * r] = p.row(1, r)[0];
    fp.lambda[2 * r + 1] = -p.row(-1, r)[0];
    fp.gamma[2 * r] = p.row(1, r)[1];
    fp.gamma[2 * r + 1] = -p.row(-1, r)[1];
  }
  for (std::size_t q = 0; q < 2 * p.m; ++q) {
    fp.agg_inv += fp.lambda[q];
    fp.agg_spu += fp.gamma[q];
  }
  fp.agg_inv /= double(p.m);
  fp.agg_spu /= double(p.m);

  for (std::size_t e = 0; e < ds.num_envs(); ++e)
    for (std::size_t i = ds.offsets[e]; i < std::min(ds.offsets[e + 1], ds.offsets[e] + xi_per_env);
         ++i)
      fp.xi_index.push_back(i);
  const std::size_t S = fp.xi_index.size();
  fp.xi.resize(2 * p.m * S);
  for (int c = 0; c < 2; ++c) {
    const int j = c == 0 ? 1 : -1;
    for (std::size_t r = 0; r < p.m; ++r)
      for (std::size_t s = 0; s < S; ++s) {
        const double v = j * dot(p.row(j, r), ds.x2(fp.xi_index[s]), p.d);
        fp.xi[(c * p.m + r) * S + s] = v;
        fp.max_xi = std::max(fp.max_xi, std::abs(v));
      }
  }
  return fp;
}

CnnParams cnn_with_aggregates(std::size_t m, std::size_t d, double agg_inv, double agg_spu,
                              double sigma, Activation act, std::uint64_t seed) {
  CnnParams p = init_cnn(m, d, sigma, act, seed);
  for (int j : {1, -1})
    for (std::size_t r = 0; r < m; ++r) {
      p.row(j, r)[0] += j * agg_inv / 2.0;
      p.row(j, r)[1] += j * agg_spu / 2.0;
    }
  return p;
}

void save_checkpoint(const CnnParams& p, const std::string& path) {
  std::ofstream f(path);
  require(bool(f), "cannot open " + path);
  nlohmann::json h = {{"m", p.m},
                      {"d", p.d},
                      {"activation", p.act.name()},
                      {"beta_smooth", p.act.beta_smooth},
                      {"seed", p.seed}};
  f << h.dump() << '\n';
  for (const auto* w : {&p.w_pos, &p.w_neg})
    for (std::size_t r = 0; r < p.m; ++r) {
      for (std::size_t k = 0; k < p.d; ++k) f << (k ? "," : "") << fmt::format("{}", (*w)[r * p.d + k]);
      f << '\n';
    }
}

CnnParams load_checkpoint(const std::string& path) {
  std::ifstream f(path);
  require(bool(f), "cannot open " + path);
  std::string line;
  std::getline(f, line);
  auto h = nlohmann::json::parse(line);
  CnnParams p;
  p.m = h.at("m").get<std::size_t>();
  p.d = h.at("d").get<std::size_t>();
  p.act = Activation::parse(h.at("activation").get<std::string>(), h.value("beta_smooth", 1.0));
  p.seed = h.value("seed", std::uint64_t{0});
  std::vector<double> vals;
  while (std::getline(f, line)) {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
  }
  require(vals.size() == 2 * p.m * p.d, "checkpoint has the wrong number of entries");
  p.w_pos.assign(vals.begin(), vals.begin() + p.m * p.d);
  p.w_neg.assign(vals.begin() + p.m * p.d, vals.end());
  return p;
}

}  // namespace featlab
