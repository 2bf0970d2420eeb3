#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include "seqrec/common.hpp"
#include "seqrec/data.hpp"
#include "seqrec/models.hpp"

namespace seqrec {

enum class EvalPhase { valid, test };

inline const char* to_string(EvalPhase p) {
  return p == EvalPhase::valid ? "valid" : "test";
}

struct EvalOptions {
  bool exclude_seen = true;
  int workers = 1;
};

struct EvalReport {
  std::string model;
  std::string dataset;
  std::string phase;
  std::size_t users = 0;
  real ndcg5 = 0, ndcg10 = 0, ndcg20 = 0;
  real precision10 = 0, recall10 = 0;
  std::string fingerprint;
};

// 1 + number of non-excluded candidates ranked strictly above the target;
// ties go to the smaller item index. scores is indexed by item id with
// slot 0 unused. excluded may be empty (nothing excluded).
inline int rank_of_target(const std::vector<real>& scores, int target,
                          const std::vector<std::uint8_t>& excluded) {
  const int num_items = static_cast<int>(scores.size()) - 1;
  if (target < 1 || target > num_items)
    throw protocol_error("rank_of_target: target " + std::to_string(target) +
                         " outside catalog");
  if (!excluded.empty() && excluded[static_cast<std::size_t>(target)])
    throw protocol_error("rank_of_target: target " + std::to_string(target) +
                         " is excluded from ranking");
  const real st = scores[static_cast<std::size_t>(target)];
  int ahead = 0;
  for (int i = 1; i <= num_items; ++i) {
    if (i == target) continue;
    if (!excluded.empty() && excluded[static_cast<std::size_t>(i)]) continue;
    const real si = scores[static_cast<std::size_t>(i)];
    if (si > st || (si == st && i < target)) ++ahead;
  }
  return 1 + ahead;
}

// Single-target NDCG: the ideal DCG is 1, so the value is the discount of
// the hit rank or zero outside the cutoff.
inline real ndcg_at_k(int rank, int k) {
  if (rank < 1) throw protocol_error("ndcg_at_k: rank must be >= 1");
  if (rank > k) return real(0);
  return real(1) / static_cast<real>(std::log2(static_cast<double>(rank) + 1.0));
}

inline std::pair<real, real> precision_recall_at_k(int rank, int k) {
  const bool hit = rank >= 1 && rank <= k;
  const real recall = hit ? real(1) : real(0);
  return {recall / static_cast<real>(k), recall};
}

namespace evaldetail {

inline std::vector<int> eval_context(const Split& split, EvalPhase phase) {
  std::vector<int> ctx = split.train;
  if (phase == EvalPhase::test) ctx.push_back(split.valid);
  return ctx;
}

inline int eval_target(const Split& split, EvalPhase phase) {
  return phase == EvalPhase::valid ? split.valid : split.test;
}

// Rank the held-out target for one user: encode the context window at
// inference, score the catalog, optionally exclude already-seen items
// (never the target itself).
inline int rank_user(const std::vector<int>& items, const EncoderState& state,
                     const ModelConfig& cfg, EvalPhase phase,
                     bool exclude_seen) {
  const Split split = leave_one_out(items);
  const std::vector<int> ctx = eval_context(split, phase);
  const int target = eval_target(split, phase);
  const Tensor encoded =
      encode(window(ctx, cfg.max_len), state, cfg, state.kind);
  const std::vector<real> scores = score_items(last_hidden(encoded), state);
  std::vector<std::uint8_t> excluded;
  if (exclude_seen) {
    excluded.assign(scores.size(), 0);
    for (int it : ctx) excluded[static_cast<std::size_t>(it)] = 1;
    excluded[static_cast<std::size_t>(target)] = 0;
  }
  return rank_of_target(scores, target, excluded);
}

}  // namespace evaldetail

// Full-catalog leave-one-out evaluation. Users may be ranked by several
// worker threads; per-user ranks land in fixed slots and the metric means
// are reduced in user order, so the report does not depend on the degree
// of parallelism.
inline EvalReport evaluate(const EncoderState& state, const ModelConfig& cfg,
                           const SequenceDataset& data, EvalPhase phase,
                           const EvalOptions& opts = {}) {
  const std::size_t n = data.users.size();
  std::vector<int> ranks(n, 0);
  const int workers =
      std::max(1, std::min<int>(opts.workers, static_cast<int>(n)));
  auto run_range = [&](std::size_t lo, std::size_t hi) {
    NoGradGuard ng;
    for (std::size_t u = lo; u < hi; ++u)
      ranks[u] = evaldetail::rank_user(data.users[u], state, cfg, phase,
                                       opts.exclude_seen);
  };
  if (workers == 1) {
    run_range(0, n);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (n + static_cast<std::size_t>(workers) - 1) /
                              static_cast<std::size_t>(workers);
    for (int w = 0; w < workers; ++w) {
      const std::size_t lo = static_cast<std::size_t>(w) * chunk;
      const std::size_t hi = std::min(n, lo + chunk);
      if (lo >= hi) break;
      pool.emplace_back(run_range, lo, hi);
    }
    for (auto& t : pool) t.join();
  }

  EvalReport rep;
  rep.model = to_string(state.kind);
  rep.dataset = data.tag;
  rep.phase = to_string(phase);
  rep.users = n;
  for (std::size_t u = 0; u < n; ++u) {
    const int r = ranks[u];
    rep.ndcg5 += ndcg_at_k(r, 5);
    rep.ndcg10 += ndcg_at_k(r, 10);
    rep.ndcg20 += ndcg_at_k(r, 20);
    rep.recall10 += precision_recall_at_k(r, 10).second;
  }
  if (n > 0) {
    rep.ndcg5 /= static_cast<real>(n);
    rep.ndcg10 /= static_cast<real>(n);
    rep.ndcg20 /= static_cast<real>(n);
    rep.recall10 /= static_cast<real>(n);
  }
  // derived, not separately averaged, so the single-target identity
  // precision@10 == recall@10 / 10 holds exactly in every report
  rep.precision10 = rep.recall10 / real(10);
  return rep;
}

// Fraction of users whose last training item ranks in the top k given the
// preceding training items. Overfit diagnostic; not part of the held-out
// protocol.
inline real training_hit_rate_at_k(const EncoderState& state,
                                   const ModelConfig& cfg,
                                   const SequenceDataset& data, int k) {
  NoGradGuard ng;
  std::size_t eligible = 0, hits = 0;
  for (const auto& items : data.users) {
    const Split split = leave_one_out(items);
    if (split.train.size() < 2) continue;
    ++eligible;
    std::vector<int> ctx(split.train.begin(), split.train.end() - 1);
    const int target = split.train.back();
    const Tensor encoded =
        encode(window(ctx, cfg.max_len), state, cfg, state.kind);
    const std::vector<real> scores = score_items(last_hidden(encoded), state);
    std::vector<std::uint8_t> excluded(scores.size(), 0);
    for (int it : ctx) excluded[static_cast<std::size_t>(it)] = 1;
    excluded[static_cast<std::size_t>(target)] = 0;
    if (rank_of_target(scores, target, excluded) <= k) ++hits;
  }
  if (eligible == 0)
    throw data_error("training_hit_rate_at_k: no eligible users");
  return static_cast<real>(hits) / static_cast<real>(eligible);
}

}  // namespace seqrec
