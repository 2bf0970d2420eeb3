#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "seqrec/common.hpp"
#include "seqrec/spectral.hpp"
#include "seqrec/tensor.hpp"

namespace seqrec {

enum class ModelKind { sasrec, bsarec };

inline const char* to_string(ModelKind k) {
  return k == ModelKind::sasrec ? "sasrec" : "bsarec";
}
inline ModelKind model_kind_from_string(const std::string& s) {
  if (s == "sasrec") return ModelKind::sasrec;
  if (s == "bsarec") return ModelKind::bsarec;
  throw config_error("model.kind: expected sasrec or bsarec, got '" + s + "'");
}

struct ModelConfig {
  int num_items = 0;   // catalog size; item id 0 is reserved for padding
  int d = 64;          // embedding dimension
  int max_len = 50;    // input window length L
  int blocks = 2;
  int heads = 2;
  real dropout_p = real(0.2);
  real alpha = real(0.7);  // inductive-bias blend weight, bsarec only
  std::optional<SpectralConfig> spectral;
  bool norm_first = false;
  real eps = real(1e-8);

  int ffn_dim() const { return 4 * d; }

  void validate(ModelKind kind) const {
    if (num_items < 1) throw config_error("model.num_items: must be >= 1");
    if (max_len < 1) throw config_error("model.max_len: must be >= 1");
    if (blocks < 0) throw config_error("model.blocks: must be >= 0");
    if (heads < 1 || d % heads != 0)
      throw config_error("model.heads: d=" + std::to_string(d) +
                         " must be divisible by heads=" +
                         std::to_string(heads));
    if (!(alpha >= real(0) && alpha <= real(1)))
      throw config_error("model.alpha: must lie in [0, 1]");
    if (!(dropout_p >= real(0) && dropout_p < real(1)))
      throw config_error("model.dropout: must lie in [0, 1)");
    if (!(eps > real(0))) throw config_error("model.eps: must be > 0");
    if (kind == ModelKind::bsarec) {
      if (!spectral)
        throw config_error("model.c: bsarec requires a spectral config");
      spectral->validate(static_cast<std::size_t>(max_len));
    }
  }
};

// Learnable parameters of one encoder layer. The bias-branch norm and beta
// exist only on bsarec layers.
struct LayerState {
  Tensor wq, wk, wv, wo;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Tensor attn_norm_g, attn_norm_b;
  Tensor ffn_norm_g, ffn_norm_b;
  Tensor bias_norm_g, bias_norm_b;
  Tensor beta;
};

struct EncoderState {
  ModelKind kind = ModelKind::sasrec;
  Tensor item_emb;  // (num_items + 1) x d, row 0 frozen at zero
  Tensor pos_emb;   // max_len x d
  std::vector<LayerState> layers;
  Tensor final_norm_g, final_norm_b;

  std::vector<std::pair<std::string, Tensor*>> named_parameters() {
    std::vector<std::pair<std::string, Tensor*>> out;
    out.emplace_back("item_emb", &item_emb);
    out.emplace_back("pos_emb", &pos_emb);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      auto& l = layers[i];
      const std::string p = "layer" + std::to_string(i) + ".";
      out.emplace_back(p + "wq", &l.wq);
      out.emplace_back(p + "wk", &l.wk);
      out.emplace_back(p + "wv", &l.wv);
      out.emplace_back(p + "wo", &l.wo);
      out.emplace_back(p + "ffn_w1", &l.ffn_w1);
      out.emplace_back(p + "ffn_b1", &l.ffn_b1);
      out.emplace_back(p + "ffn_w2", &l.ffn_w2);
      out.emplace_back(p + "ffn_b2", &l.ffn_b2);
      out.emplace_back(p + "attn_norm_g", &l.attn_norm_g);
      out.emplace_back(p + "attn_norm_b", &l.attn_norm_b);
      out.emplace_back(p + "ffn_norm_g", &l.ffn_norm_g);
      out.emplace_back(p + "ffn_norm_b", &l.ffn_norm_b);
      if (kind == ModelKind::bsarec) {
        out.emplace_back(p + "bias_norm_g", &l.bias_norm_g);
        out.emplace_back(p + "bias_norm_b", &l.bias_norm_b);
        out.emplace_back(p + "beta", &l.beta);
      }
    }
    out.emplace_back("final_norm_g", &final_norm_g);
    out.emplace_back("final_norm_b", &final_norm_b);
    return out;
  }

  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  void zero_grad() {
    for (Tensor* t : parameters()) t->zero_grad();
  }

  EncoderState deep_copy() const {
    EncoderState c = *this;
    auto names = const_cast<EncoderState*>(this)->named_parameters();
    auto copies = c.named_parameters();
    for (std::size_t i = 0; i < names.size(); ++i) {
      *copies[i].second = names[i].second->clone();
      copies[i].second->set_requires_grad(true);
    }
    return c;
  }
};

namespace modeldetail {

constexpr std::uint64_t kInitSalt = 0x494e4954;

enum ParamTag : std::uint64_t {
  kItemEmb = 1,
  kPosEmb = 2,
  kWq = 10,
  kWk = 11,
  kWv = 12,
  kWo = 13,
  kFfnW1 = 14,
  kFfnW2 = 15,
};

inline Tensor normal_init(std::vector<std::size_t> shape, real sd,
                          std::uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (std::size_t i = 0; i < t.numel(); ++i)
    t.at(i) = static_cast<real>(rng.normal(0.0, static_cast<double>(sd)));
  t.set_requires_grad(true);
  return t;
}

inline Tensor xavier_init(std::size_t fan_in, std::size_t fan_out,
                          std::uint64_t seed) {
  Tensor t({fan_in, fan_out});
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Rng rng(seed);
  for (std::size_t i = 0; i < t.numel(); ++i)
    t.at(i) = static_cast<real>((rng.uniform() * 2.0 - 1.0) * limit);
  t.set_requires_grad(true);
  return t;
}

inline Tensor const_init(std::vector<std::size_t> shape, real v) {
  Tensor t(std::move(shape), v);
  t.set_requires_grad(true);
  return t;
}

}  // namespace modeldetail

// Every parameter draws from its own seed stream keyed by (master seed,
// layer, tag), so shared parameters initialize identically across model
// kinds and the extra bsarec parameters never shift them.
inline EncoderState init_state(ModelKind kind, const ModelConfig& cfg,
                               std::uint64_t seed) {
  cfg.validate(kind);
  using namespace modeldetail;
  EncoderState st;
  st.kind = kind;
  const std::size_t d = static_cast<std::size_t>(cfg.d);
  const std::size_t dff = static_cast<std::size_t>(cfg.ffn_dim());
  st.item_emb = normal_init({std::size_t(cfg.num_items) + 1, d}, real(0.02),
                            mix_seed(seed, {kInitSalt, 0, kItemEmb}));
  for (std::size_t j = 0; j < d; ++j) st.item_emb.at(j) = real(0);
  st.pos_emb = normal_init({std::size_t(cfg.max_len), d}, real(0.02),
                           mix_seed(seed, {kInitSalt, 0, kPosEmb}));
  for (int b = 0; b < cfg.blocks; ++b) {
    LayerState l;
    const std::uint64_t li = static_cast<std::uint64_t>(b) + 1;
    l.wq = xavier_init(d, d, mix_seed(seed, {kInitSalt, li, kWq}));
    l.wk = xavier_init(d, d, mix_seed(seed, {kInitSalt, li, kWk}));
    l.wv = xavier_init(d, d, mix_seed(seed, {kInitSalt, li, kWv}));
    l.wo = xavier_init(d, d, mix_seed(seed, {kInitSalt, li, kWo}));
    l.ffn_w1 = xavier_init(d, dff, mix_seed(seed, {kInitSalt, li, kFfnW1}));
    l.ffn_b1 = const_init({dff}, real(0));
    l.ffn_w2 = xavier_init(dff, d, mix_seed(seed, {kInitSalt, li, kFfnW2}));
    l.ffn_b2 = const_init({d}, real(0));
    l.attn_norm_g = const_init({d}, real(1));
    l.attn_norm_b = const_init({d}, real(0));
    l.ffn_norm_g = const_init({d}, real(1));
    l.ffn_norm_b = const_init({d}, real(0));
    if (kind == ModelKind::bsarec) {
      l.bias_norm_g = const_init({d}, real(1));
      l.bias_norm_b = const_init({d}, real(0));
      l.beta = const_init(
          cfg.spectral->beta_per_dim ? std::vector<std::size_t>{d}
                                     : std::vector<std::size_t>{1},
          cfg.spectral->beta_init);
    }
    st.layers.push_back(std::move(l));
  }
  st.final_norm_g = const_init({d}, real(1));
  st.final_norm_b = const_init({d}, real(0));
  return st;
}

// Deterministic dropout streams for one forward pass: each (layer, site)
// pair derives an independent generator from the pass stream, so adding or
// removing one site never shifts another's draws.
struct DropoutPlan {
  bool training = false;
  std::uint64_t stream = 0;

  Rng site_rng(int layer, int site) const {
    return Rng(mix_seed(stream, {static_cast<std::uint64_t>(layer) + 1,
                                 static_cast<std::uint64_t>(site)}));
  }
};

namespace modeldetail {
enum DropoutSite : int { kEmbedSite = 1, kBiasSite = 2, kFfnSite = 3 };
}

// E[item] + P[position], then dropout. Padding ids contribute the zero
// item row, so those positions carry positional signal only.
inline Tensor embed_sequence(const std::vector<int>& items,
                             const EncoderState& state, const ModelConfig& cfg,
                             const DropoutPlan& plan = {}) {
  if (items.size() != static_cast<std::size_t>(cfg.max_len))
    throw data_error("embed_sequence: window length " +
                     std::to_string(items.size()) + " != max_len " +
                     std::to_string(cfg.max_len));
  for (int id : items)
    if (id < 0 || id > cfg.num_items)
      throw data_error("embed_sequence: item id " + std::to_string(id) +
                       " outside [0, " + std::to_string(cfg.num_items) + "]");
  Tensor e = embedding_gather(state.item_emb, items);
  Tensor h = add(e, state.pos_emb);
  Rng rng = plan.site_rng(0, modeldetail::kEmbedSite);
  return dropout(h, cfg.dropout_p, plan.training, rng);
}

inline Tensor build_attention_mask(const std::vector<int>& items) {
  const std::size_t L = items.size();
  Tensor mask({L, L}, real(0));
  for (std::size_t q = 0; q < L; ++q)
    for (std::size_t k = 0; k <= q; ++k)
      if (items[k] != 0 || k == q) mask(q, k) = real(1);
  return mask;
}

// Multi-head scaled dot-product attention with a strict causal mask;
// padding positions are additionally masked as keys (self stays visible).
// Heads are concatenated and output-projected. No bias terms.
inline Tensor causal_self_attention(const Tensor& H, const LayerState& layer,
                                    const ModelConfig& cfg,
                                    const Tensor& mask) {
  const std::size_t d = H.cols();
  const std::size_t dh = d / static_cast<std::size_t>(cfg.heads);
  Tensor q = matmul(H, layer.wq);
  Tensor k = matmul(H, layer.wk);
  Tensor v = matmul(H, layer.wv);
  const real inv_scale = real(1) / std::sqrt(static_cast<real>(dh));
  std::vector<Tensor> heads;
  heads.reserve(static_cast<std::size_t>(cfg.heads));
  for (int h = 0; h < cfg.heads; ++h) {
    const std::size_t off = static_cast<std::size_t>(h) * dh;
    Tensor qh = col_slice(q, off, dh);
    Tensor kh = col_slice(k, off, dh);
    Tensor vh = col_slice(v, off, dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_scale);
    Tensor weights = softmax_lastdim(scores, &mask);
    heads.push_back(matmul(weights, vh));
  }
  Tensor cat = cfg.heads == 1 ? heads[0] : col_concat(heads);
  return matmul(cat, layer.wo);
}

// Position-wise two-layer network with a smooth activation, dropout on the
// output, residual add, and layer norm placed per cfg.norm_first.
inline Tensor pointwise_ffn(const Tensor& H, const LayerState& layer,
                            const ModelConfig& cfg, const DropoutPlan& plan,
                            int layer_idx) {
  auto net = [&](const Tensor& x) {
    Tensor hidden = gelu(add_rowvec(matmul(x, layer.ffn_w1), layer.ffn_b1));
    Tensor out = add_rowvec(matmul(hidden, layer.ffn_w2), layer.ffn_b2);
    Rng rng = plan.site_rng(layer_idx, modeldetail::kFfnSite);
    return dropout(out, cfg.dropout_p, plan.training, rng);
  };
  if (cfg.norm_first) {
    Tensor normed = layer_norm(H, layer.ffn_norm_g, layer.ffn_norm_b, cfg.eps);
    return add(H, net(normed));
  }
  return layer_norm(add(H, net(H)), layer.ffn_norm_g, layer.ffn_norm_b,
                    cfg.eps);
}

// Attention branch, normalized: the shared trunk of both encoder layers.
inline Tensor attention_branch(const Tensor& H, const LayerState& layer,
                               const ModelConfig& cfg, const Tensor& mask) {
  Tensor a = causal_self_attention(H, layer, cfg, mask);
  return layer_norm(a, layer.attn_norm_g, layer.attn_norm_b, cfg.eps);
}

inline Tensor sasrec_layer(const Tensor& H, const LayerState& layer,
                           const ModelConfig& cfg, const Tensor& mask,
                           const DropoutPlan& plan, int layer_idx) {
  Tensor mixed = attention_branch(H, layer, cfg, mask);
  return pointwise_ffn(add(H, mixed), layer, cfg, plan, layer_idx);
}

// alpha-blend of the normalized frequency-rescale branch and the normalized
// attention branch, then residual and feed-forward. alpha = 0 degenerates
// to sasrec_layer op-for-op, so outputs and gradients match it bit-exactly.
// The rescale runs in its causal form so the encoder keeps the no-peeking
// guarantee at every position, matching the attention branch.
inline Tensor bsarec_layer(const Tensor& H, const LayerState& layer,
                           const ModelConfig& cfg, const Tensor& mask,
                           const DropoutPlan& plan, int layer_idx) {
  if (!cfg.spectral)
    throw config_error("bsarec_layer: spectral config missing");
  auto bias_branch = [&]() {
    Tensor f = causal_frequency_rescale(H, layer.beta, cfg.spectral->cutoff);
    Rng rng = plan.site_rng(layer_idx, modeldetail::kBiasSite);
    Tensor dropped = dropout(f, cfg.dropout_p, plan.training, rng);
    return layer_norm(dropped, layer.bias_norm_g, layer.bias_norm_b, cfg.eps);
  };
  Tensor mixed;
  if (cfg.alpha == real(0)) {
    mixed = attention_branch(H, layer, cfg, mask);
  } else if (cfg.alpha == real(1)) {
    mixed = bias_branch();
  } else {
    Tensor b = bias_branch();
    Tensor a = attention_branch(H, layer, cfg, mask);
    mixed = add(scale(b, cfg.alpha), scale(a, real(1) - cfg.alpha));
  }
  return pointwise_ffn(add(H, mixed), layer, cfg, plan, layer_idx);
}

// Embedding, `blocks` stacked encoder layers of the state's kind, final norm.
inline Tensor encode(const std::vector<int>& items, const EncoderState& state,
                     const ModelConfig& cfg, ModelKind kind,
                     const DropoutPlan& plan = {}) {
  if (kind != state.kind)
    throw config_error("encode: state holds a " +
                       std::string(to_string(state.kind)) +
                       " model, asked to run as " + to_string(kind));
  if (state.layers.size() != static_cast<std::size_t>(cfg.blocks))
    throw config_error("encode: state has " +
                       std::to_string(state.layers.size()) +
                       " layers, config says " + std::to_string(cfg.blocks));
  Tensor h = embed_sequence(items, state, cfg, plan);
  Tensor mask = build_attention_mask(items);
  for (int b = 0; b < cfg.blocks; ++b) {
    const LayerState& l = state.layers[static_cast<std::size_t>(b)];
    h = kind == ModelKind::bsarec
            ? bsarec_layer(h, l, cfg, mask, plan, b + 1)
            : sasrec_layer(h, l, cfg, mask, plan, b + 1);
  }
  return layer_norm(h, state.final_norm_g, state.final_norm_b, cfg.eps);
}

// Dot product of the last hidden state with every candidate item embedding.
// Index 0 (padding) is pinned to -inf so it can never rank.
inline std::vector<real> score_items(const Tensor& h_last,
                                     const EncoderState& state) {
  const std::size_t d = state.item_emb.cols();
  if (h_last.numel() != d)
    throw shape_error("score_items: hidden size " +
                      std::to_string(h_last.numel()) + " != embedding dim " +
                      std::to_string(d));
  const std::size_t rows = state.item_emb.rows();
  std::vector<real> scores(rows);
  scores[0] = -std::numeric_limits<real>::infinity();
  for (std::size_t i = 1; i < rows; ++i) {
    const real* e = state.item_emb.values().data() + i * d;
    real s = 0;
    for (std::size_t j = 0; j < d; ++j) s += h_last.at(j) * e[j];
    scores[i] = s;
  }
  return scores;
}

// Row of the encoder output at the last position (the most recent item;
// windows are left-padded so that is always the final row).
inline Tensor last_hidden(const Tensor& encoded) {
  const std::size_t L = encoded.rows(), d = encoded.cols();
  Tensor h({d});
  for (std::size_t j = 0; j < d; ++j) h.at(j) = encoded(L - 1, j);
  return h;
}

}  // namespace seqrec
