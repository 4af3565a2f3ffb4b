#include "featlab/feat.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include <fmt/format.h>

#include "featlab/errors.hpp"
#include "featlab/rng.hpp"

namespace featlab {

void FeatConfig::validate() const {
  require(max_rounds >= 1, "max_rounds must be >= 1");
  require(inner_epochs >= 1, "inner_epochs must be >= 1");
  require(p > 0.0 && p <= 1.0, "p must lie in (0,1]");
  require(termination_sum >= 0.0 && termination_sum <= 2.0, "termination_sum must lie in [0,2]");
  require(lambda_retain >= 0.0, "lambda_retain must be >= 0");
  require(lr > 0.0 && std::isfinite(lr), "lr must be > 0");
  require(!hidden.empty(), "hidden must list at least one layer width");
  for (auto h : hidden) require(h >= 1, "hidden widths must be >= 1");
  require(log_every >= 1, "log_every must be >= 1");
}

nlohmann::json FeatConfig::to_json() const {
  return {{"max_rounds", max_rounds},
          {"inner_epochs", inner_epochs},
          {"p", p},
          {"termination_sum", termination_sum},
          {"lambda_retain", lambda_retain},
          {"lr", lr},
          {"hidden", hidden},
          {"hidden_act", act == HiddenAct::relu ? "relu" : "identity"},
          {"batch_size", batch_size},
          {"seed", seed},
          {"retention_check", retention_check},
          {"ifeat_keep_full_set", ifeat_keep_full_set},
          {"log_every", log_every}};
}

namespace {
nlohmann::json num_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
}  // namespace

nlohmann::json FeatResult::to_json() const {
  nlohmann::json rs = nlohmann::json::array();
  for (const auto& r : rounds)
    rs.push_back({{"round", r.round},
                  {"accepted", r.accepted},
                  {"train_acc", r.train_acc},
                  {"retention_acc", num_or_null(r.retention_acc)},
                  {"ood_acc", num_or_null(r.ood_acc)},
                  {"n_aug_groups", r.n_aug_groups},
                  {"n_ret_groups", r.n_ret_groups},
                  {"argmax_counts", r.argmax_counts},
                  {"aug_size", r.aug_size},
                  {"ret_size", r.ret_size}});
  nlohmann::json cls = nlohmann::json::array();
  for (const auto& c : round_classifiers)
    cls.push_back({{"w", std::vector<double>(c.w.data(), c.w.data() + c.w.size())}, {"b", c.b}});
  return {{"algorithm", algorithm},
          {"rounds_completed", rounds_completed},
          {"termination_reason", termination_reason},
          {"final_train_acc", final_train_acc},
          {"final_ood_acc", num_or_null(final_ood_acc)},
          {"rounds", rs},
          {"round_classifiers", cls},
          {"averaged_classifier",
           {{"w", std::vector<double>(averaged.w.data(), averaged.w.data() + averaged.w.size())},
            {"b", averaged.b}}}};
}

double predict_logit(const Mat& Z, std::size_t i, const Classifier& c) {
  return Z.row(i).dot(c.w) + c.b;
}

Accuracy evaluate_features(const Mat& Z, const Vec& y, const Classifier& c,
                           const std::vector<std::size_t>& env_offsets) {
  Accuracy a;
  const std::size_t n = Z.rows();
  std::vector<char> ok(n);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ok[i] = y[i] * predict_logit(Z, i, c) > 0.0;  // zero logit counts as wrong
    hits += ok[i];
  }
  a.overall = n ? double(hits) / double(n) : 0.0;
  for (std::size_t e = 0; e + 1 < env_offsets.size(); ++e) {
    const auto lo = env_offsets[e], hi = env_offsets[e + 1];
    const auto h = std::count(ok.begin() + lo, ok.begin() + hi, char(1));
    a.per_env.push_back(hi > lo ? double(h) / double(hi - lo) : 0.0);
  }
  return a;
}

Accuracy evaluate(const Mlp& phi, const Classifier& c, const TwoBitDataset& ds) {
  return evaluate_features(mlp_forward(phi, design_matrix(ds)), labels(ds), c, ds.offsets);
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> partition_by_correctness(
    const Mat& Z, const Vec& y, const Classifier& c) {
  std::vector<std::size_t> aug, ret;
  for (std::size_t i = 0; i < std::size_t(Z.rows()); ++i)
    (y[i] * predict_logit(Z, i, c) > 0.0 ? ret : aug).push_back(i);
  return {aug, ret};
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> partition_by_correctness(
    const Mlp& phi, const Classifier& c, const TwoBitDataset& ds) {
  return partition_by_correctness(mlp_forward(phi, design_matrix(ds)), labels(ds), c);
}

double retention_accuracy(const Mat& Z, const Vec& y, const std::vector<Classifier>& historical,
                          const std::vector<std::vector<std::size_t>>& ret_sets) {
  require(historical.size() == ret_sets.size(), "every retention set needs its paired classifier");
  double s = 0.0;
  std::size_t k = 0;
  for (std::size_t r = 0; r < ret_sets.size(); ++r) {
    if (ret_sets[r].empty()) continue;
    std::size_t hits = 0;
    for (auto i : ret_sets[r]) hits += y[i] * predict_logit(Z, i, historical[r]) > 0.0;
    s += double(hits) / double(ret_sets[r].size());
    ++k;
  }
  return k ? s / double(k) : std::numeric_limits<double>::quiet_NaN();
}

double retention_accuracy(const Mlp& phi, const std::vector<Classifier>& historical,
                          const std::vector<std::vector<std::size_t>>& ret_sets,
                          const TwoBitDataset& ds) {
  return retention_accuracy(mlp_forward(phi, design_matrix(ds)), labels(ds), historical, ret_sets);
}

namespace {

void sgd_update(Mlp& phi, Classifier& w, const FeatObjective& obj, double lr) {
  for (std::size_t l = 0; l < phi.layers.size(); ++l) {
    phi.layers[l].W -= lr * obj.grad_phi.dW[l];
    phi.layers[l].b -= lr * obj.grad_phi.db[l];
  }
  w.w -= lr * obj.grad_active.w;
  w.b -= lr * obj.grad_active.b;
}

// Round-robin equal-size batches per group.
class GroupBatcher {
 public:
  GroupBatcher(std::size_t batch, Rng& rng) : batch_(batch), rng_(rng) {}
  std::vector<std::size_t> next(std::size_t key, const std::vector<std::size_t>& set) {
    auto& st = state_[key];
    if (st.order.size() != set.size()) {
      st.order = set;
      st.pos = set.size();
    }
    std::vector<std::size_t> out;
    while (out.size() < std::min(batch_, set.size())) {
      if (st.pos >= st.order.size()) {
        for (std::size_t i = st.order.size(); i > 1; --i)
          std::swap(st.order[i - 1], st.order[rng_.next_u64() % i]);
        st.pos = 0;
      }
      out.push_back(st.order[st.pos++]);
    }
    return out;
  }
  void reset() { state_.clear(); }

 private:
  struct State {
    std::vector<std::size_t> order;
    std::size_t pos = 0;
  };
  std::size_t batch_;
  Rng& rng_;
  std::map<std::size_t, State> state_;
};

FeatResult run_rounds(const FeatConfig& cfg, const TwoBitDataset& train, const TwoBitDataset* ood,
                      bool incremental, std::size_t rounds, std::size_t epochs, std::string name) {
  cfg.validate();
  const Mat X = design_matrix(train);
  const Vec y = labels(train);
  Mat Xo;
  Vec yo;
  if (ood) {
    require(ood->d == train.d, "OOD set dimension differs from training set");
    Xo = design_matrix(*ood);
    yo = labels(*ood);
  }
  const std::size_t N = X.rows();

  Rng init_rng(cfg.seed, "feat/featurizer");
  Rng cls_rng(cfg.seed, "feat/classifier");
  Rng batch_rng(cfg.seed, "feat/batches");
  GroupBatcher batcher(cfg.batch_size, batch_rng);

  FeatResult res;
  res.algorithm = std::move(name);
  Mlp phi = init_mlp(X.cols(), cfg.hidden, cfg.act, init_rng);
  Mlp snapshot = phi;
  const std::size_t h = phi.feature_dim();

  std::vector<std::size_t> all(N);
  std::iota(all.begin(), all.end(), 0);
  FeatGroups G;
  G.aug_sets = {all};
  Vec wsum = Vec::Zero(h);
  double bsum = 0.0;
  Classifier running{Vec::Zero(h), 0.0};
  const bool check_retention = incremental || cfg.retention_check;

  for (std::size_t k = 1; k <= rounds; ++k) {
    if (k > 1 && G.aug_sets.back().empty()) {
      res.termination_reason = "empty_augmentation";
      break;
    }
    Classifier w = init_classifier(h, cls_rng);
    RoundMetrics rm;
    rm.round = k;
    rm.n_aug_groups = G.aug_sets.size();
    rm.n_ret_groups = G.ret_sets.size();
    rm.argmax_counts.assign(G.aug_sets.size(), 0);
    batcher.reset();

    for (std::size_t ep = 1; ep <= epochs; ++ep) {
      FeatObjective last;
      if (cfg.batch_size == 0) {
        last = feat_objective(phi, w, G, X, y, cfg.lambda_retain);
        rm.argmax_counts[last.argmax]++;
        sgd_update(phi, w, last, cfg.lr);
      } else {
        std::size_t biggest = 0;
        for (const auto& s : G.aug_sets) biggest = std::max(biggest, s.size());
        for (const auto& s : G.ret_sets) biggest = std::max(biggest, s.size());
        const std::size_t steps = std::max<std::size_t>(1, (biggest + cfg.batch_size - 1) / cfg.batch_size);
        for (std::size_t s = 0; s < steps; ++s) {
          FeatGroups B;
          for (std::size_t a = 0; a < G.aug_sets.size(); ++a) B.aug_sets.push_back(batcher.next(a, G.aug_sets[a]));
          for (std::size_t r = 0; r < G.ret_sets.size(); ++r)
            B.ret_sets.push_back(batcher.next(1000000 + r, G.ret_sets[r]));
          B.historical = G.historical;
          last = feat_objective(phi, w, B, X, y, cfg.lambda_retain);
          rm.argmax_counts[last.argmax]++;
          sgd_update(phi, w, last, cfg.lr);
        }
      }
      if (ep % cfg.log_every == 0 || ep == epochs) {
        const Mat Z = mlp_forward(phi, X);
        EpochLog lg;
        lg.round = k;
        lg.epoch = ep;
        lg.dro_loss = last.dro_loss;
        lg.retain_loss = last.retain_loss;
        lg.train_acc = evaluate_features(Z, y, w).overall;
        lg.retention_acc = retention_accuracy(Z, y, G.historical, G.ret_sets);
        if (ood) lg.ood_acc = evaluate_features(mlp_forward(phi, Xo), yo, w).overall;
        res.log.push_back(lg);
      }
    }

    const Mat Z = mlp_forward(phi, X);
    rm.train_acc = evaluate_features(Z, y, w).overall;
    rm.retention_acc = retention_accuracy(Z, y, G.historical, G.ret_sets);
    if (ood) rm.ood_acc = evaluate_features(mlp_forward(phi, Xo), yo, w).overall;

    std::string reject;
    if (rm.train_acc < cfg.p)
      reject = "train_acc_below_p";
    else if (check_retention && k >= 2 && rm.train_acc + rm.retention_acc < cfg.termination_sum)
      reject = "retention_check";

    if (!reject.empty()) {
      res.rounds.push_back(rm);
      res.termination_reason = reject;
      if (k == 1) {
        // nothing accepted: keep the round-1 model as the predictor
        res.round_classifiers.push_back(w);
        running = w;
        snapshot = phi;
      } else {
        phi = snapshot;
      }
      break;
    }

    rm.accepted = true;
    res.round_classifiers.push_back(w);
    res.rounds_completed = k;
    wsum += w.w;
    bsum += w.b;
    running.w = wsum / double(k);
    running.b = bsum / double(k);
    snapshot = phi;

    auto [A, R] = partition_by_correctness(Z, y, w);
    rm.aug_size = A.size();
    rm.ret_size = R.size();
    res.rounds.push_back(rm);
    if (incremental) {
      G.aug_sets.clear();
      if (cfg.ifeat_keep_full_set) G.aug_sets.push_back(all);
      G.aug_sets.push_back(std::move(A));
      G.ret_sets = {std::move(R)};
      G.historical = {w};
    } else {
      G.aug_sets.push_back(std::move(A));
      G.ret_sets.push_back(std::move(R));
      G.historical.push_back(w);
    }
    if (k == rounds) res.termination_reason = "max_rounds";
  }

  res.featurizer = phi;
  res.averaged = running;
  const Mat Z = mlp_forward(phi, X);
  res.final_train_acc = evaluate_features(Z, y, res.averaged).overall;
  if (ood) res.final_ood_acc = evaluate_features(mlp_forward(phi, Xo), yo, res.averaged).overall;
  return res;
}

}  // namespace

FeatResult run_feat(const FeatConfig& cfg, const TwoBitDataset& train, const TwoBitDataset* ood) {
  return run_rounds(cfg, train, ood, false, cfg.max_rounds, cfg.inner_epochs, "feat");
}

FeatResult run_ifeat(const FeatConfig& cfg, const TwoBitDataset& train, const TwoBitDataset* ood) {
  return run_rounds(cfg, train, ood, true, cfg.max_rounds, cfg.inner_epochs, "ifeat");
}

FeatResult run_erm_baseline(const FeatConfig& cfg, const TwoBitDataset& train,
                            const TwoBitDataset* ood, std::size_t epochs) {
  FeatConfig c = cfg;
  c.p = std::numeric_limits<double>::min();
  return run_rounds(c, train, ood, false, 1, epochs, "erm");
}

double v1_alignment(const Mlp& phi) {
  const auto& W = phi.layers.front().W;
  double best = 0.0;
  for (Eigen::Index r = 0; r < W.rows(); ++r) {
    const double nrm = W.row(r).norm();
    if (nrm > 0) best = std::max(best, std::abs(W(r, 0)) / nrm);
  }
  return best;
}

void write_round_log_csv(const FeatResult& r, const std::string& path,
                         const std::string& header_comment) {
  std::ofstream f(path);
  require(bool(f), "cannot open " + path);
  if (!header_comment.empty()) f << "# " << header_comment << '\n';
  f << "round,epoch,dro_loss,retain_loss,train_acc,retention_acc,ood_acc\n";
  auto num = [](double v) { return std::isfinite(v) ? fmt::format("{}", v) : std::string(); };
  for (const auto& l : r.log)
    f << fmt::format("{},{},{},{},{},{},{}\n", l.round, l.epoch, l.dro_loss, l.retain_loss,
                     l.train_acc, num(l.retention_acc), num(l.ood_acc));
}

}  // namespace featlab
