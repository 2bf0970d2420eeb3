#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "seqrec/common.hpp"
#include "seqrec/data.hpp"
#include "seqrec/eval.hpp"
#include "seqrec/models.hpp"
#include "seqrec/tensor.hpp"

namespace seqrec {

enum class LossKind { full_softmax, sampled_binary };

inline const char* to_string(LossKind k) {
  return k == LossKind::full_softmax ? "full_softmax" : "sampled_binary";
}
inline LossKind loss_kind_from_string(const std::string& s) {
  if (s == "full_softmax") return LossKind::full_softmax;
  if (s == "sampled_binary") return LossKind::sampled_binary;
  throw config_error("train.loss: expected full_softmax or sampled_binary, got '" +
                     s + "'");
}

struct TrainConfig {
  real lr = real(1e-3);
  real beta1 = real(0.9);
  real beta2 = real(0.999);
  real adam_eps = real(1e-8);
  real weight_decay = real(0);
  int batch = 128;
  int epochs = 200;
  int patience = 20;
  std::uint64_t seed = 1;
  LossKind loss = LossKind::full_softmax;
  int negatives = 1;

  void validate() const {
    if (!(lr > real(0))) throw config_error("train.lr: must be > 0");
    if (epochs < 1) throw config_error("train.epochs: must be >= 1");
    if (patience < 0 || patience > epochs)
      throw config_error("train.patience: must lie in [0, epochs]");
    if (batch < 1) throw config_error("train.batch: must be >= 1");
    if (negatives < 1) throw config_error("train.negatives: must be >= 1");
    if (!(beta1 >= real(0) && beta1 < real(1)) ||
        !(beta2 >= real(0) && beta2 < real(1)))
      throw config_error("train.beta1/beta2: must lie in [0, 1)");
  }
};

namespace traindetail {
constexpr std::uint64_t kShuffleSalt = 0x53485546;
constexpr std::uint64_t kDropoutSalt = 0x44524f50;
constexpr std::uint64_t kNegSalt = 0x4e454753;
}  // namespace traindetail

// Mean next-item loss over non-padding positions. targets[t] is the item
// expected after position t, 0 where padding. Full-softmax mode scores the
// whole catalog (padding id excluded); sampled mode scores the positive
// against `negatives` uniform draws from the catalog minus the positive.
inline Tensor next_item_loss(const Tensor& hidden,
                             const std::vector<int>& targets,
                             const EncoderState& state, const TrainConfig& cfg,
                             Rng& neg_rng) {
  const std::size_t L = hidden.rows();
  if (targets.size() != L)
    throw shape_error("next_item_loss: " + std::to_string(targets.size()) +
                      " targets for " + std::to_string(L) + " positions");
  const int num_items = static_cast<int>(state.item_emb.rows()) - 1;
  bool any_active = false;
  for (int t : targets) any_active = any_active || t != 0;
  if (!any_active)
    throw data_error("next_item_loss: all positions are padding");

  if (cfg.loss == LossKind::full_softmax) {
    Tensor logits_all = matmul(hidden, transpose(state.item_emb));
    Tensor logits =
        col_slice(logits_all, 1, static_cast<std::size_t>(num_items));
    std::vector<long> tgt(L);
    for (std::size_t t = 0; t < L; ++t)
      tgt[t] = targets[t] == 0 ? -1 : targets[t] - 1;
    return cross_entropy_rows(logits, tgt);
  }

  std::vector<std::uint8_t> active(L);
  for (std::size_t t = 0; t < L; ++t) active[t] = targets[t] != 0;
  Tensor pos_emb = embedding_gather(state.item_emb, targets);
  Tensor term = log_sigmoid(row_sum(mul(hidden, pos_emb)));
  for (int j = 0; j < cfg.negatives; ++j) {
    std::vector<int> negs(L, 0);
    for (std::size_t t = 0; t < L; ++t) {
      if (targets[t] == 0) continue;
      int id = targets[t];
      while (id == targets[t])
        id = static_cast<int>(neg_rng.below(
                 static_cast<std::size_t>(num_items))) + 1;
      negs[t] = id;
    }
    Tensor neg_emb = embedding_gather(state.item_emb, negs);
    Tensor neg_scores = row_sum(mul(hidden, neg_emb));
    term = add(term, log_sigmoid(scale(neg_scores, real(-1))));
  }
  return scale(masked_mean(term, active), real(-1));
}

// Per-parameter first/second moment buffers, laid out in parameter order.
struct OptimizerState {
  std::vector<std::vector<real>> m, v;
  long step = 0;

  void init(EncoderState& state) {
    m.clear();
    v.clear();
    for (Tensor* p : state.parameters()) {
      m.emplace_back(p->numel(), real(0));
      v.emplace_back(p->numel(), real(0));
    }
    step = 0;
  }
};

// Bias-corrected Adam update over all parameters. The padding row of the
// item table (parameter 0, first d entries) is never updated.
inline void adam_step(EncoderState& state, OptimizerState& opt,
                      const TrainConfig& cfg) {
  auto params = state.parameters();
  if (opt.m.size() != params.size())
    throw config_error("adam_step: optimizer state does not match model");
  ++opt.step;
  const real c1 =
      real(1) - static_cast<real>(std::pow(static_cast<double>(cfg.beta1),
                                           static_cast<double>(opt.step)));
  const real c2 =
      real(1) - static_cast<real>(std::pow(static_cast<double>(cfg.beta2),
                                           static_cast<double>(opt.step)));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = *params[pi];
    if (!p.has_grad()) continue;
    auto& theta = p.values();
    auto& g = p.grad();
    auto& m = opt.m[pi];
    auto& v = opt.v[pi];
    const std::size_t start = pi == 0 ? p.cols() : 0;  // frozen padding row
    for (std::size_t i = start; i < theta.size(); ++i) {
      real gi = g[i];
      if (cfg.weight_decay != real(0)) gi += cfg.weight_decay * theta[i];
      m[i] = cfg.beta1 * m[i] + (real(1) - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (real(1) - cfg.beta2) * gi * gi;
      const real mhat = m[i] / c1;
      const real vhat = v[i] / c2;
      theta[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
}

namespace traindetail {

struct TrainSample {
  std::vector<int> input;    // window of train[:-1]
  std::vector<int> targets;  // window of train[1:], aligned
};

// A user contributes one (input, shifted-target) window per epoch, built
// from the training prefix only. Users whose prefix is shorter than two
// items have nothing to predict and are skipped.
inline bool make_sample(const std::vector<int>& items, int max_len,
                        TrainSample& out) {
  const Split split = leave_one_out(items);
  if (split.train.size() < 2) return false;
  std::vector<int> in(split.train.begin(), split.train.end() - 1);
  std::vector<int> tg(split.train.begin() + 1, split.train.end());
  out.input = window(in, max_len);
  out.targets = window(tg, max_len);
  return true;
}

}  // namespace traindetail

// One shuffled pass over the users in batches; gradients accumulate per
// user (scaled by the batch share) and one Adam step runs per batch.
// Returns the mean per-user loss.
inline real train_epoch(EncoderState& state, const ModelConfig& mcfg,
                        const SequenceDataset& data, const TrainConfig& tcfg,
                        OptimizerState& opt, int epoch) {
  std::vector<std::size_t> order(data.users.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(mix_seed(tcfg.seed, {traindetail::kShuffleSalt,
                                       static_cast<std::uint64_t>(epoch)}));
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[shuffle_rng.below(i)]);

  real total_loss = 0;
  std::size_t total_users = 0;
  Tape& tape = Tape::active();
  for (std::size_t base = 0; base < order.size();
       base += static_cast<std::size_t>(tcfg.batch)) {
    const std::size_t end =
        std::min(order.size(), base + static_cast<std::size_t>(tcfg.batch));
    std::vector<std::pair<std::size_t, traindetail::TrainSample>> batch;
    for (std::size_t i = base; i < end; ++i) {
      traindetail::TrainSample s;
      if (traindetail::make_sample(data.users[order[i]], mcfg.max_len, s))
        batch.emplace_back(order[i], std::move(s));
    }
    if (batch.empty()) continue;
    state.zero_grad();
    const real share = real(1) / static_cast<real>(batch.size());
    for (auto& [user, sample] : batch) {
      DropoutPlan plan;
      plan.training = true;
      plan.stream = mix_seed(tcfg.seed, {traindetail::kDropoutSalt,
                                         static_cast<std::uint64_t>(epoch),
                                         static_cast<std::uint64_t>(user)});
      Rng neg_rng(mix_seed(tcfg.seed, {traindetail::kNegSalt,
                                       static_cast<std::uint64_t>(epoch),
                                       static_cast<std::uint64_t>(user)}));
      Tensor hidden = encode(sample.input, state, mcfg, state.kind, plan);
      Tensor loss = next_item_loss(hidden, sample.targets, state, tcfg,
                                   neg_rng);
      total_loss += loss.item();
      ++total_users;
      backward(scale(loss, share));
      tape.clear();
    }
    adam_step(state, opt, tcfg);
  }
  if (total_users == 0)
    throw data_error("train_epoch: no user produced a training sample");
  return total_loss / static_cast<real>(total_users);
}

struct CurvePoint {
  int epoch = 0;
  real ndcg10 = 0;
  real loss = 0;
};

struct FitResult {
  EncoderState best_state;
  int best_epoch = 0;
  real best_ndcg10 = 0;
  std::vector<CurvePoint> curve;
};

// Full training loop: per-epoch validation NDCG@10 with early stopping,
// best checkpoint retained. Divergence (non-finite loss) aborts.
inline FitResult fit(ModelKind kind, const SequenceDataset& data,
                     const ModelConfig& mcfg, const TrainConfig& tcfg,
                     const EvalOptions& eval_opts = {}) {
  mcfg.validate(kind);
  tcfg.validate();
  EncoderState state = init_state(kind, mcfg, tcfg.seed);
  OptimizerState opt;
  opt.init(state);

  FitResult result;
  result.best_ndcg10 = real(-1);
  int since_best = 0;
  for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    const real loss = train_epoch(state, mcfg, data, tcfg, opt, epoch);
    if (!std::isfinite(loss))
      throw numeric_error("fit: training diverged at epoch " +
                          std::to_string(epoch) + " (loss = " +
                          std::to_string(loss) + ")");
    const EvalReport rep = evaluate(state, mcfg, data, EvalPhase::valid,
                                    eval_opts);
    result.curve.push_back({epoch, rep.ndcg10, loss});
    if (rep.ndcg10 > result.best_ndcg10) {
      result.best_ndcg10 = rep.ndcg10;
      result.best_epoch = epoch;
      result.best_state = state.deep_copy();
      since_best = 0;
    } else {
      ++since_best;
      if (since_best > tcfg.patience) break;
    }
  }
  return result;
}

}  // namespace seqrec
