#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmlm/graph.hpp"
#include "cmlm/rng.hpp"
#include "cmlm/textpipe.hpp"

namespace cmlm::encoder {

struct EncoderConfig {
  int layers = 4;
  int dim = 128;
  int heads = 4;
  int ffn = 512;
  int max_len = 128;
  double dropout = 0.1;
  int vocab = 0;
  int n_langs = 2;

  void validate() const {
    if (dim % heads != 0) throw ConfigError("encoder dim must be divisible by heads");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must be in [0,1)");
    if (layers < 1 || dim < 1 || ffn < 1 || max_len < 2 || vocab < 1 || n_langs < 1)
      throw ConfigError("bad encoder config");
  }

  // The full-scale preset mirrors the documented training setup (1024
  // units, 8 heads); desk runs use the defaults above.
  static EncoderConfig full_scale() {
    EncoderConfig c;
    c.layers = 6;
    c.dim = 1024;
    c.heads = 8;
    c.ffn = 4096;
    c.max_len = 256;
    return c;
  }
};

template <typename S>
struct LayerParams {
  Tensor<S> ln1_g, ln1_b;
  Tensor<S> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<S> ln2_g, ln2_b;
  Tensor<S> w1, b1, w2, b2;
};

// All trainable parameters; the output projection is the (tied) transpose
// of the token embedding plus a per-vocab bias.
template <typename S>
struct EncoderState {
  EncoderConfig cfg;
  Tensor<S> tok, pos, lang;
  std::vector<LayerParams<S>> layers;
  Tensor<S> lnf_g, lnf_b;
  Tensor<S> out_b;
  int64_t step = 0;
  uint64_t vocab_hash = 0;

  void init(uint64_t seed);
  std::vector<std::pair<std::string, Tensor<S>*>> named_params();
  std::vector<std::pair<std::string, const Tensor<S>*>> named_params() const;
};

// Gradient buffers matching named_params() order.
template <typename S>
struct ParamGrads {
  std::vector<Tensor<S>> g;

  explicit ParamGrads(EncoderState<S>& st) {
    for (auto& [name, t] : st.named_params()) g.emplace_back(t->shape);
  }
  void zero() {
    for (auto& t : g) t.zero();
  }
  void add(const ParamGrads& other) {
    for (size_t i = 0; i < g.size(); ++i)
      for (int64_t j = 0; j < g[i].size(); ++j) g[i].v[j] += other.g[i].v[j];
  }
  void scale(double s) {
    for (auto& t : g)
      for (auto& x : t.v) x = static_cast<S>(x * s);
  }
};

// Registers every parameter with the graph so gradient accumulation lands
// in the ParamGrads slots; node ids are cached per graph.
template <typename S>
struct BoundParams {
  Graph<S>* graph;
  EncoderState<S>* state;
  ParamGrads<S>* grads;  // may be null for pure inference

  BoundParams(Graph<S>* g, EncoderState<S>* st, ParamGrads<S>* gr)
      : graph(g), state(st), grads(gr) {
    if (grads) {
      auto named = st->named_params();
      for (size_t i = 0; i < named.size(); ++i) slots_[named[i].second] = &grads->g[i];
    }
  }

  int node(Tensor<S>* t) { return graph->param(t, grads ? slots_.at(t) : nullptr); }

 private:
  std::unordered_map<Tensor<S>*, Tensor<S>*> slots_;
};

// BERT-style bidirectional encoding of one stream: token+position+language
// embeddings, pre-norm transformer layers, final layer norm. PAD positions
// are masked out of attention. Returns the node id of the (len x dim) top
// states.
template <typename S>
int encode_into(Graph<S>& g, BoundParams<S>& bp, const std::vector<int>& ids, int lang_id,
                const std::vector<int>& positions, bool train_mode);

// Log-softmax rows of (state . tok_emb^T + out_b) at the given positions.
template <typename S>
int token_logprobs_at(Graph<S>& g, BoundParams<S>& bp, int states_node,
                      const std::vector<int>& positions);

// Inference helper: forward pass only, dropout off.
template <typename S>
Tensor<S> encode_eval(EncoderState<S>& st, const std::vector<int>& ids, int lang_id);

// ---------------------------------------------------------------- inline --

template <typename S>
void EncoderState<S>::init(uint64_t seed) {
  cfg.validate();
  Rng rng(substream(seed, "encoder_init"));
  auto normal_tensor = [&](std::vector<int> shape) {
    Tensor<S> t(std::move(shape));
    for (auto& x : t.v) x = static_cast<S>(rng.normal() * 0.02);
    return t;
  };
  auto ones = [&](int d) {
    Tensor<S> t({d});
    t.fill(S(1));
    return t;
  };
  tok = normal_tensor({cfg.vocab, cfg.dim});
  pos = normal_tensor({cfg.max_len, cfg.dim});
  lang = normal_tensor({cfg.n_langs, cfg.dim});
  layers.clear();
  for (int l = 0; l < cfg.layers; ++l) {
    LayerParams<S> p;
    p.ln1_g = ones(cfg.dim);
    p.ln1_b = Tensor<S>({cfg.dim});
    p.wq = normal_tensor({cfg.dim, cfg.dim});
    p.bq = Tensor<S>({cfg.dim});
    p.wk = normal_tensor({cfg.dim, cfg.dim});
    p.bk = Tensor<S>({cfg.dim});
    p.wv = normal_tensor({cfg.dim, cfg.dim});
    p.bv = Tensor<S>({cfg.dim});
    p.wo = normal_tensor({cfg.dim, cfg.dim});
    p.bo = Tensor<S>({cfg.dim});
    p.ln2_g = ones(cfg.dim);
    p.ln2_b = Tensor<S>({cfg.dim});
    p.w1 = normal_tensor({cfg.dim, cfg.ffn});
    p.b1 = Tensor<S>({cfg.ffn});
    p.w2 = normal_tensor({cfg.ffn, cfg.dim});
    p.b2 = Tensor<S>({cfg.dim});
    layers.push_back(std::move(p));
  }
  lnf_g = ones(cfg.dim);
  lnf_b = Tensor<S>({cfg.dim});
  out_b = Tensor<S>({cfg.vocab});
  step = 0;
}

template <typename S>
std::vector<std::pair<std::string, Tensor<S>*>> EncoderState<S>::named_params() {
  std::vector<std::pair<std::string, Tensor<S>*>> out;
  out.emplace_back("tok", &tok);
  out.emplace_back("pos", &pos);
  out.emplace_back("lang", &lang);
  for (size_t l = 0; l < layers.size(); ++l) {
    auto& p = layers[l];
    const std::string pre = "layer" + std::to_string(l) + ".";
    out.emplace_back(pre + "ln1_g", &p.ln1_g);
    out.emplace_back(pre + "ln1_b", &p.ln1_b);
    out.emplace_back(pre + "wq", &p.wq);
    out.emplace_back(pre + "bq", &p.bq);
    out.emplace_back(pre + "wk", &p.wk);
    out.emplace_back(pre + "bk", &p.bk);
    out.emplace_back(pre + "wv", &p.wv);
    out.emplace_back(pre + "bv", &p.bv);
    out.emplace_back(pre + "wo", &p.wo);
    out.emplace_back(pre + "bo", &p.bo);
    out.emplace_back(pre + "ln2_g", &p.ln2_g);
    out.emplace_back(pre + "ln2_b", &p.ln2_b);
    out.emplace_back(pre + "w1", &p.w1);
    out.emplace_back(pre + "b1", &p.b1);
    out.emplace_back(pre + "w2", &p.w2);
    out.emplace_back(pre + "b2", &p.b2);
  }
  out.emplace_back("lnf_g", &lnf_g);
  out.emplace_back("lnf_b", &lnf_b);
  out.emplace_back("out_b", &out_b);
  return out;
}

template <typename S>
std::vector<std::pair<std::string, const Tensor<S>*>> EncoderState<S>::named_params() const {
  auto mut = const_cast<EncoderState<S>*>(this)->named_params();
  std::vector<std::pair<std::string, const Tensor<S>*>> out;
  out.reserve(mut.size());
  for (auto& [n, t] : mut) out.emplace_back(n, t);
  return out;
}

template <typename S>
int encode_into(Graph<S>& g, BoundParams<S>& bp, const std::vector<int>& ids, int lang_id,
                const std::vector<int>& positions, bool train_mode) {
  const EncoderConfig& cfg = bp.state->cfg;
  const int len = static_cast<int>(ids.size());
  if (len == 0) throw std::invalid_argument("encode: empty stream");
  if (len > cfg.max_len)
    throw std::invalid_argument("encode: stream length " + std::to_string(len) +
                                " exceeds max " + std::to_string(cfg.max_len));
  if (static_cast<int>(positions.size()) != len)
    throw std::invalid_argument("encode: positions size mismatch");
  for (int id : ids)
    if (id < 0 || id >= cfg.vocab)
      throw std::invalid_argument("encode: token id " + std::to_string(id) + " out of vocab " +
                                  std::to_string(cfg.vocab));
  if (lang_id < 0 || lang_id >= cfg.n_langs)
    throw std::invalid_argument("encode: language tag out of range");
  const double p_drop = train_mode ? cfg.dropout : 0.0;

  int x = g.add(g.gather_rows(bp.node(&bp.state->tok), ids),
                g.gather_rows(bp.node(&bp.state->pos), positions));
  x = g.add(x, g.gather_rows(bp.node(&bp.state->lang), std::vector<int>(ids.size(), lang_id)));
  if (p_drop > 0.0) x = g.dropout(x, p_drop);

  // additive attention mask: PAD keys get -1e30 before the softmax
  Tensor<S> mask({len, len});
  for (int j = 0; j < len; ++j)
    if (ids[static_cast<size_t>(j)] == textpipe::Vocabulary::kPad)
      for (int i = 0; i < len; ++i) mask.at(i, j) = static_cast<S>(-1e30);
  const int mask_node = g.constant(std::move(mask));

  const int head_dim = cfg.dim / cfg.heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  for (int l = 0; l < cfg.layers; ++l) {
    auto& p = bp.state->layers[static_cast<size_t>(l)];
    int h = g.layer_norm(x, bp.node(&p.ln1_g), bp.node(&p.ln1_b));
    int q = g.add_bias(g.matmul(h, bp.node(&p.wq)), bp.node(&p.bq));
    int k = g.add_bias(g.matmul(h, bp.node(&p.wk)), bp.node(&p.bk));
    int v = g.add_bias(g.matmul(h, bp.node(&p.wv)), bp.node(&p.bv));
    std::vector<int> ctx_heads;
    for (int hd = 0; hd < cfg.heads; ++hd) {
      const int c0 = hd * head_dim, c1 = (hd + 1) * head_dim;
      int scores = g.scale(g.matmul_nt(g.slice_cols(q, c0, c1), g.slice_cols(k, c0, c1)), scale);
      int probs = g.softmax(g.add(scores, mask_node));
      if (p_drop > 0.0) probs = g.dropout(probs, p_drop);
      ctx_heads.push_back(g.matmul(probs, g.slice_cols(v, c0, c1)));
    }
    int attn = g.add_bias(g.matmul(g.concat_cols(ctx_heads), bp.node(&p.wo)), bp.node(&p.bo));
    if (p_drop > 0.0) attn = g.dropout(attn, p_drop);
    x = g.add(x, attn);

    int h2 = g.layer_norm(x, bp.node(&p.ln2_g), bp.node(&p.ln2_b));
    int ff = g.add_bias(g.matmul(h2, bp.node(&p.w1)), bp.node(&p.b1));
    ff = g.gelu(ff);
    ff = g.add_bias(g.matmul(ff, bp.node(&p.w2)), bp.node(&p.b2));
    if (p_drop > 0.0) ff = g.dropout(ff, p_drop);
    x = g.add(x, ff);
  }
  return g.layer_norm(x, bp.node(&bp.state->lnf_g), bp.node(&bp.state->lnf_b));
}

template <typename S>
int token_logprobs_at(Graph<S>& g, BoundParams<S>& bp, int states_node,
                      const std::vector<int>& positions) {
  int sub = g.gather_rows(states_node, positions);
  int logits = g.add_bias(g.matmul_nt(sub, bp.node(&bp.state->tok)), bp.node(&bp.state->out_b));
  return g.log_softmax(logits);
}

template <typename S>
Tensor<S> encode_eval(EncoderState<S>& st, const std::vector<int>& ids, int lang_id) {
  Graph<S> g;
  BoundParams<S> bp{&g, &st, nullptr};
  std::vector<int> positions(ids.size());
  for (size_t i = 0; i < ids.size(); ++i) positions[i] = static_cast<int>(i);
  const int states = encode_into(g, bp, ids, lang_id, positions, /*train_mode=*/false);
  return g.val(states);
}

// ------------------------------------------------------------ checkpoint --

void save_checkpoint(const std::string& path, const EncoderState<float>& st);
EncoderState<float> load_checkpoint(const std::string& path);

}  // namespace cmlm::encoder
