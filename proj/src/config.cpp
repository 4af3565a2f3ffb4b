#include "featlab/config.hpp"

#include <set>

#include <fmt/format.h>

#include "featlab/errors.hpp"

namespace featlab {

using nlohmann::json;

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, "override '" + assignment + "' must look like key=value");
  const std::string path = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  std::string ptr;
  std::size_t start = 0;
  while (start <= path.size()) {
    const auto dot = path.find('.', start);
    const std::string part = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    require(!part.empty(), "override '" + assignment + "' has an empty path segment");
    ptr += "/" + part;
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  try {
    j[json::json_pointer(ptr)] = value;
  } catch (const json::exception& e) {
    throw InvalidArgument(ptr + ": cannot apply override (" + e.what() + ")");
  }
}

namespace {

// Key-checked view of one JSON object.
class Reader {
 public:
  Reader(const json& j, std::string base) : j_(j), base_(std::move(base)) {
    require(j_.is_object(), (base_.empty() ? "/" : base_) + ": expected an object");
  }

  std::string ptr(const std::string& key) const { return base_ + "/" + key; }
  bool has(const std::string& key) {
    used_.insert(key);
    return j_.contains(key);
  }
  const json& at(const std::string& key) {
    used_.insert(key);
    if (!j_.contains(key)) throw InvalidArgument(ptr(key) + ": missing required key");
    return j_.at(key);
  }

  double number(const std::string& key, double def) {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    require(v.is_number(), ptr(key) + ": expected a number");
    return v.get<double>();
  }
  std::size_t count(const std::string& key, std::size_t def) {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    require(v.is_number_integer() && v.get<long long>() >= 0, ptr(key) + ": expected a nonnegative integer");
    return v.get<std::size_t>();
  }
  bool boolean(const std::string& key, bool def) {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    require(v.is_boolean(), ptr(key) + ": expected true or false");
    return v.get<bool>();
  }
  std::string string(const std::string& key, const std::string& def) {
    if (!has(key)) return def;
    const auto& v = j_.at(key);
    require(v.is_string(), ptr(key) + ": expected a string");
    return v.get<std::string>();
  }
  std::optional<double> number_or_auto(const std::string& key) {
    if (!has(key)) return std::nullopt;
    const auto& v = j_.at(key);
    if (v.is_string() && v.get<std::string>() == "auto") return std::nullopt;
    require(v.is_number(), ptr(key) + ": expected a number or \"auto\"");
    return v.get<double>();
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      require(used_.count(it.key()) != 0, ptr(it.key()) + ": unknown key");
  }

 private:
  const json& j_;
  std::string base_;
  std::set<std::string> used_;
};

std::vector<EnvironmentSpec> read_envs(const json& arr, const std::string& base) {
  require(arr.is_array() && !arr.empty(), base + ": expected a nonempty array");
  std::vector<EnvironmentSpec> envs;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    Reader r(arr[i], fmt::format("{}/{}", base, i));
    EnvironmentSpec s;
    r.at("alpha");
    r.at("beta");
    r.at("n");
    s.alpha = r.number("alpha", 0.0);
    s.beta = r.number("beta", 0.0);
    s.n = r.count("n", 0);
    require(s.alpha >= 0 && s.alpha <= 1, r.ptr("alpha") + ": must lie in [0,1]");
    require(s.beta >= 0 && s.beta <= 1, r.ptr("beta") + ": must lie in [0,1]");
    require(s.n >= 1, r.ptr("n") + ": must be >= 1");
    r.finish();
    envs.push_back(s);
  }
  return envs;
}

// Re-throw validation messages with the offending key as a pointer.
template <class F>
void validated(F&& f) {
  try {
    f();
  } catch (const InvalidArgument& e) {
    std::string msg = e.what();
    const auto sp = msg.find(' ');
    throw InvalidArgument("/" + msg.substr(0, sp) + ": " + msg);
  }
}

}  // namespace

TrainConfig train_config_from_json(const json& j) {
  Reader r(j, "");
  TrainConfig c;
  c.eta = r.number_or_auto("eta");
  c.eta_irm = r.number_or_auto("eta_irm");
  c.irm_step_fraction = r.number_or_auto("irm_step_fraction");
  c.steps = r.count("steps", c.steps);
  c.lambda = r.number("lambda", c.lambda);
  c.pretrain_steps = r.count("pretrain_steps", c.pretrain_steps);
  c.pretrain_until_stationary = r.boolean("pretrain_until_stationary", c.pretrain_until_stationary);
  c.stop_when_stationary = r.boolean("stop_when_stationary", c.stop_when_stationary);
  c.stationarity_tol = r.number("stationarity_tol", c.stationarity_tol);
  c.stationarity_window = r.count("stationarity_window", c.stationarity_window);
  c.record_every = r.count("record_every", c.record_every);
  const double bs = r.number("beta_smooth", 1.0);
  const std::string act = r.string("activation", "linear");
  try {
    c.activation = Activation::parse(act, bs);
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(r.ptr("activation") + ": " + e.what());
  }
  c.sigma_0 = r.number("sigma_0", c.sigma_0);
  c.sigma_p = r.number("sigma_p", c.sigma_p);
  c.m = r.count("m", c.m);
  c.d = r.count("d", c.d);
  if (r.has("envs")) c.envs = read_envs(j.at("envs"), "/envs");
  c.seed = r.count("seed", c.seed);
  c.xi_per_env = r.count("xi_per_env", c.xi_per_env);
  c.window_delta = r.number("window_delta", c.window_delta);
  r.finish();
  validated([&] { c.validate(); });
  return c;
}

nlohmann::json FeatSetup::to_json() const {
  json e = json::array();
  for (const auto& s : envs) e.push_back({{"alpha", s.alpha}, {"beta", s.beta}, {"n", s.n}});
  json j = feat.to_json();
  j["data"] = {{"envs", e}, {"d", d}, {"sigma_p", sigma_p}, {"seed", data_seed}};
  j["ood"] = {{"n", ood_n}, {"betas", ood_betas}};
  j["baseline"] = baseline;
  j["baseline_epochs"] = baseline_epochs;
  return j;
}

FeatSetup feat_setup_from_json(const json& j) {
  Reader r(j, "");
  FeatSetup s;
  auto& f = s.feat;
  f.max_rounds = r.count("max_rounds", f.max_rounds);
  f.inner_epochs = r.count("inner_epochs", f.inner_epochs);
  f.p = r.number("p", f.p);
  f.termination_sum = r.number("termination_sum", f.termination_sum);
  f.lambda_retain = r.number("lambda_retain", f.lambda_retain);
  f.lr = r.number("lr", f.lr);
  if (r.has("hidden")) {
    const auto& h = j.at("hidden");
    require(h.is_array(), "/hidden: expected an array of widths");
    f.hidden.clear();
    for (std::size_t i = 0; i < h.size(); ++i) {
      require(h[i].is_number_integer() && h[i].get<long long>() >= 1, fmt::format("/hidden/{}: expected a positive integer", i));
      f.hidden.push_back(h[i].get<std::size_t>());
    }
  }
  const std::string act = r.string("hidden_act", "relu");
  require(act == "relu" || act == "identity", "/hidden_act: expected \"relu\" or \"identity\"");
  f.act = act == "relu" ? HiddenAct::relu : HiddenAct::identity;
  f.batch_size = r.count("batch_size", f.batch_size);
  f.seed = r.count("seed", f.seed);
  f.retention_check = r.boolean("retention_check", f.retention_check);
  f.ifeat_keep_full_set = r.boolean("ifeat_keep_full_set", f.ifeat_keep_full_set);
  f.log_every = r.count("log_every", f.log_every);
  s.data_seed = f.seed;
  if (r.has("data")) {
    Reader d(j.at("data"), "/data");
    if (d.has("envs")) s.envs = read_envs(j.at("data").at("envs"), "/data/envs");
    s.d = d.count("d", s.d);
    s.sigma_p = d.number("sigma_p", s.sigma_p);
    s.data_seed = d.count("seed", s.data_seed);
    d.finish();
  }
  if (r.has("ood")) {
    Reader o(j.at("ood"), "/ood");
    s.ood_n = o.count("n", s.ood_n);
    if (o.has("betas")) {
      const auto& b = j.at("ood").at("betas");
      require(b.is_array(), "/ood/betas: expected an array");
      s.ood_betas = b.get<std::vector<double>>();
    }
    o.finish();
  }
  s.baseline = r.boolean("baseline", s.baseline);
  s.baseline_epochs = r.count("baseline_epochs", s.baseline_epochs);
  r.finish();
  require(s.d >= 3, "/data/d: must be >= 3");
  require(s.sigma_p >= 0, "/data/sigma_p: must be >= 0");
  if (s.ood_betas.empty())
    for (const auto& e : s.envs) s.ood_betas.push_back(e.beta);
  require(s.ood_n % s.ood_betas.size() == 0, "/ood/n: must split evenly across the betas");
  validated([&] { f.validate(); });
  return s;
}

}  // namespace featlab
