#include "featlab/data.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "featlab/errors.hpp"
#include "featlab/rng.hpp"

namespace featlab {

void validate(const EnvironmentSpec& s) {
  require(s.alpha >= 0.0 && s.alpha <= 1.0, "alpha must lie in [0,1]");
  require(s.beta >= 0.0 && s.beta <= 1.0, "beta must lie in [0,1]");
  require(s.n >= 1, "environment sample count must be >= 1");
}

void TwoBitDataset::x1_into(std::size_t i, double* out) const {
  out[0] = x1(i, 0);
  out[1] = x1(i, 1);
  for (std::size_t k = 2; k < d; ++k) out[k] = 0.0;
}

void TwoBitDataset::check() const {
  const std::size_t n = y.size();
  require(rad_alpha.size() == n && rad_beta.size() == n && env.size() == n, "column size mismatch");
  require(noise.size() == n * d, "noise block size mismatch");
  require(offsets.size() == envs.size() + 1 && offsets.front() == 0 && offsets.back() == n,
          "bad environment offsets");
  for (std::size_t e = 0; e < envs.size(); ++e)
    for (std::size_t i = offsets[e]; i < offsets[e + 1]; ++i) {
      require(env[i] == int(e), "samples must be grouped by environment");
      require((y[i] == 1 || y[i] == -1) && (rad_alpha[i] == 1 || rad_alpha[i] == -1) &&
                  (rad_beta[i] == 1 || rad_beta[i] == -1),
              "signs must be +-1");
      require(noise[i * d] == 0.0 && noise[i * d + 1] == 0.0, "noise must vanish on v1, v2");
    }
}

namespace {

TwoBitDataset generate(const std::vector<EnvironmentSpec>& specs, std::size_t d, double sigma_p,
                       std::uint64_t seed, std::string_view stream) {
  require(!specs.empty(), "at least one environment is required");
  require(d >= 3, "d must be >= 3 so the noise patch has a free coordinate");
  require(sigma_p >= 0.0 && std::isfinite(sigma_p), "sigma_p must be >= 0");
  for (const auto& s : specs) validate(s);

  TwoBitDataset ds;
  ds.envs = specs;
  ds.d = d;
  ds.sigma_p = sigma_p;
  ds.seed = seed;
  std::size_t n = 0;
  ds.offsets.push_back(0);
  for (const auto& s : specs) ds.offsets.push_back(n += s.n);
  ds.y.resize(n);
  ds.rad_alpha.resize(n);
  ds.rad_beta.resize(n);
  ds.env.resize(n);
  ds.noise.assign(n * d, 0.0);

  for (std::size_t e = 0; e < specs.size(); ++e) {
    Rng rng(seed, fmt::format("{}/env/{}", stream, e));
    for (std::size_t i = ds.offsets[e]; i < ds.offsets[e + 1]; ++i) {
      ds.env[i] = int(e);
      ds.y[i] = std::int8_t(rng.sign_half());
      ds.rad_alpha[i] = std::int8_t(rng.rademacher(specs[e].alpha));
      ds.rad_beta[i] = std::int8_t(rng.rademacher(specs[e].beta));
      double* xi = ds.noise.data() + i * d;
      for (std::size_t k = 2; k < d; ++k) xi[k] = sigma_p * rng.normal();
    }
  }
  return ds;
}

}  // namespace

TwoBitDataset sample_dataset(const std::vector<EnvironmentSpec>& specs, std::size_t d,
                             double sigma_p, std::uint64_t seed) {
  return generate(specs, d, sigma_p, seed, "train");
}

TwoBitDataset sample_test_set(std::size_t n, const std::vector<double>& beta_list, std::size_t d,
                              double sigma_p, std::uint64_t seed) {
  require(!beta_list.empty(), "beta_list must not be empty");
  require(n % beta_list.size() == 0, "n must split evenly across beta_list");
  std::vector<EnvironmentSpec> specs;
  for (double b : beta_list) {
    require(b >= 0.0 && b <= 1.0, "test beta must lie in [0,1]");
    specs.push_back({0.0, 1.0 - b, n / beta_list.size()});
  }
  auto ds = generate(specs, d, sigma_p, seed, "ood_test");
  ds.kind = "ood_test";
  ds.test_betas = beta_list;
  return ds;
}

TwoBitDataset subset(const TwoBitDataset& ds, const std::vector<std::size_t>& idx) {
  TwoBitDataset out;
  out.envs = ds.envs;
  out.d = ds.d;
  out.sigma_p = ds.sigma_p;
  out.seed = ds.seed;
  out.kind = ds.kind;
  out.test_betas = ds.test_betas;
  std::vector<std::vector<std::size_t>> per_env(ds.num_envs());
  for (auto i : idx) per_env.at(ds.env.at(i)).push_back(i);
  out.offsets.push_back(0);
  for (std::size_t e = 0; e < per_env.size(); ++e) {
    out.envs[e].n = per_env[e].size();
    for (auto i : per_env[e]) {
      out.y.push_back(ds.y[i]);
      out.rad_alpha.push_back(ds.rad_alpha[i]);
      out.rad_beta.push_back(ds.rad_beta[i]);
      out.env.push_back(int(e));
      out.noise.insert(out.noise.end(), ds.x2(i), ds.x2(i) + ds.d);
    }
    out.offsets.push_back(out.y.size());
  }
  return out;
}

GroupCounts group_counts(const TwoBitDataset& ds) {
  GroupCounts g;
  g.n_min = ds.size();
  for (std::size_t e = 0; e < ds.num_envs(); ++e) {
    const std::size_t ne = ds.env_size(e);
    if (ne == 0) continue;
    g.n_min = std::min(g.n_min, ne);
    std::size_t pp = 0, pm = 0, mp = 0, mm = 0;
    for (std::size_t i = ds.offsets[e]; i < ds.offsets[e + 1]; ++i) {
      const bool a = ds.rad_alpha[i] > 0, b = ds.rad_beta[i] > 0;
      (a ? (b ? pp : pm) : (b ? mp : mm))++;
    }
    g.c_pp += double(pp) / ne;
    g.c_pm += double(pm) / ne;
    g.c_mp += double(mp) / ne;
    g.c_mm += double(mm) / ne;
  }
  return g;
}

GroupCounts expected_group_counts(double alpha, const std::vector<double>& betas) {
  GroupCounts g;
  for (double b : betas) {
    g.c_pp += (1 - alpha) * (1 - b);
    g.c_pm += (1 - alpha) * b;
    g.c_mp += alpha * (1 - b);
    g.c_mm += alpha * b;
  }
  return g;
}

double group_count_tolerance(double rho, std::size_t n_min) {
  return std::sqrt(2.0 * std::log(16.0 / rho) / double(n_min));
}

nlohmann::json dataset_metadata(const TwoBitDataset& ds) {
  nlohmann::json specs = nlohmann::json::array();
  for (const auto& s : ds.envs) specs.push_back({{"alpha", s.alpha}, {"beta", s.beta}, {"n", s.n}});
  nlohmann::json j = {{"kind", ds.kind}, {"envs", specs},       {"d", ds.d},
                      {"sigma_p", ds.sigma_p}, {"seed", ds.seed}, {"prng", std::string(kPrngId)},
                      {"n", ds.size()}};
  if (!ds.test_betas.empty()) j["test_betas"] = ds.test_betas;
  return j;
}

void write_dataset_csv(const TwoBitDataset& ds, const std::string& path,
                       const std::string& header_comment) {
  std::ofstream f(path);
  require(bool(f), "cannot open " + path);
  if (!header_comment.empty()) f << "# " << header_comment << '\n';
  f << "env,y,rad_alpha,rad_beta";
  for (std::size_t k = 0; k < ds.d; ++k) f << ",x1_" << k;
  for (std::size_t k = 0; k < ds.d; ++k) f << ",x2_" << k;
  f << '\n';
  std::string line;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    line = fmt::format("{},{},{},{}", ds.env[i], int(ds.y[i]), int(ds.rad_alpha[i]),
                       int(ds.rad_beta[i]));
    for (std::size_t k = 0; k < ds.d; ++k) line += fmt::format(",{}", ds.x1(i, k));
    const double* x2 = ds.x2(i);
    for (std::size_t k = 0; k < ds.d; ++k) line += fmt::format(",{}", x2[k]);
    f << line << '\n';
  }
}

void write_dataset_sidecar(const TwoBitDataset& ds, const std::string& path,
                           const std::string& header_comment) {
  std::ofstream f(path);
  require(bool(f), "cannot open " + path);
  if (!header_comment.empty()) f << "# " << header_comment << '\n';
  f << dataset_metadata(ds).dump(2) << '\n';
}

TwoBitDataset read_dataset(const std::string& csv_path, const std::string& sidecar_path) {
  std::ifstream js(sidecar_path);
  require(bool(js), "cannot open " + sidecar_path);
  std::string body, line;
  while (std::getline(js, line))
    if (line.empty() || line[0] != '#') body += line + '\n';
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidArgument(sidecar_path + ": " + e.what());
  }
  TwoBitDataset ds;
  for (const auto& s : meta.at("envs"))
    ds.envs.push_back({s.at("alpha").get<double>(), s.at("beta").get<double>(),
                       s.at("n").get<std::size_t>()});
  ds.d = meta.at("d").get<std::size_t>();
  ds.sigma_p = meta.at("sigma_p").get<double>();
  ds.seed = meta.at("seed").get<std::uint64_t>();
  ds.kind = meta.value("kind", std::string("train"));
  if (meta.contains("test_betas")) ds.test_betas = meta["test_betas"].get<std::vector<double>>();

  std::ifstream f(csv_path);
  require(bool(f), "cannot open " + csv_path);
  bool header_seen = false;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(ss, cell, ',')) v.push_back(std::stod(cell));
    require(v.size() == 4 + 2 * ds.d, "row width does not match d");
    ds.env.push_back(int(v[0]));
    ds.y.push_back(std::int8_t(v[1]));
    ds.rad_alpha.push_back(std::int8_t(v[2]));
    ds.rad_beta.push_back(std::int8_t(v[3]));
    ds.noise.insert(ds.noise.end(), v.begin() + 4 + ds.d, v.end());
  }
  ds.offsets.push_back(0);
  for (const auto& s : ds.envs) ds.offsets.push_back(ds.offsets.back() + s.n);
  ds.check();
  return ds;
}

}  // namespace featlab
