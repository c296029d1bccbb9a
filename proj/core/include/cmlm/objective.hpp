#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cmlm/encoder.hpp"
#include "cmlm/textpipe.hpp"
#include "cmlm/xmap.hpp"

namespace cmlm::objective {

enum class ObjKind { MLM, CMLM };
enum class Action { Mask, Random, Keep };

struct MaskedSpan {
  int start = 0;
  std::vector<int> tokens;  // pre-mask identities x_1..x_l
  std::string key;          // matched inventory n-gram key, or empty
  bool in_table = false;    // CMLM only: key has table candidates
  std::vector<Action> actions;
  std::vector<int> replacements;  // effective input token per position

  int len() const { return static_cast<int>(tokens.size()); }
};

struct MaskPlan {
  ObjKind kind = ObjKind::MLM;
  bool code_switched = false;
  std::vector<MaskedSpan> spans;  // sorted by start, non-overlapping
  int maskable = 0;               // non-special tokens in the stream

  int covered() const {
    int c = 0;
    for (const auto& s : spans) c += s.len();
    return c;
  }
};

struct CmlmConfig {
  int k = 4;                 // translation candidates per span
  double tau = 1.0;          // prior softmax temperature
  double coverage = 0.15;    // masked-token target fraction
  double mask_rate = 0.70;   // action probabilities over covered tokens
  double random_rate = 0.15;
  double keep_rate = 0.15;
  double cs_prob = 0.5;      // fraction of MLM batches that get code-switched
  double cs_coverage = 0.15; // code-switch span coverage

  void validate() const;
};

// Segments the stream into leftmost-longest inventory spans (singletons
// elsewhere), samples spans without replacement until the covered fraction
// first reaches cfg.coverage, then draws a mask/random/keep action per
// covered token. Positions listed in `excluded` (start, len) never join a
// span.
MaskPlan plan_masks(const std::vector<int>& stream, const textpipe::NGramInventory& inventory,
                    const xmap::TranslationTable* table, ObjKind kind, const CmlmConfig& cfg,
                    const textpipe::Vocabulary& vocab, Rng& rng,
                    const std::vector<std::pair<int, int>>& excluded = {});

// Input stream after applying the plan's replacements.
std::vector<int> masked_stream(const std::vector<int>& stream, const MaskPlan& plan,
                               const textpipe::Vocabulary& vocab);

struct CodeSwitchResult {
  std::vector<int> stream;
  std::vector<std::pair<int, int>> replaced;  // (start, len) in new coordinates
};

// Replaces sampled spans that have table entries with one candidate drawn
// by normalized weight; replaced spans are reported so masking can skip
// them.
CodeSwitchResult code_switch(const std::vector<int>& stream,
                             const textpipe::NGramInventory& inventory,
                             const xmap::TranslationTable& table, const CmlmConfig& cfg,
                             const textpipe::Vocabulary& vocab, Rng& rng);

// Static token embeddings in the common mapped space, indexed by vocab id
// per language; rows of absent tokens are zero.
struct StaticTokenEmbeddings {
  int dim = 0;
  std::vector<float> rows[2];
  std::vector<uint8_t> present[2];

  const float* row(int lang, int id) const {
    return rows[lang].data() + static_cast<size_t>(id) * dim;
  }
  bool has(int lang, int id) const { return present[lang][static_cast<size_t>(id)] != 0; }

  static StaticTokenEmbeddings build(const textpipe::Vocabulary& vocab,
                                     const embed::EmbeddingMatrix& emb_x,
                                     const embed::EmbeddingMatrix& emb_y,
                                     const xmap::MappingMatrix& mapping);
};

// Column-stochastic alignment prior: a(i|j) = softmax_i cos(e_src_i,
// e_tgt_j) / tau, from the pre-mask source identities. Constant w.r.t. the
// encoder (row-major l x m).
std::vector<double> alignment_prior(const std::vector<int>& src_ids,
                                    const std::vector<int>& tgt_ids,
                                    const StaticTokenEmbeddings& emb, int src_lang, int tgt_lang,
                                    double tau);

// Supplies the constant prior for a (span, candidate) pair; the default
// uses alignment_prior over static embeddings, tests may inject others.
using PriorFn =
    std::function<std::vector<double>(const MaskedSpan&, const std::vector<int>& cand_ids)>;

PriorFn make_static_prior(const StaticTokenEmbeddings& emb, int src_lang, int tgt_lang, double tau);
PriorFn make_identity_prior();

struct LossReport {
  double l_cmlm = 0.0;
  double l_mlm = 0.0;
  double l_pre = 0.0;
  int64_t masked_tokens = 0;
  double perplexity = 0.0;
};

inline double combine(double l_cmlm, double l_mlm) { return l_cmlm + l_mlm; }

// Per-stream loss pieces; batch losses divide the summed numerator node by
// the summed token denominator, which keeps CMLM and MLM on the same
// per-token scale.
struct StreamLossBuild {
  int sum_node = -1;
  double denom = 0.0;
  int covered_tokens = 0;
  int spans = 0;
};

// One span/candidate term: -sum_j log sum_i a(i|j) p(y_j | x_i), with p
// taken from the given log-softmax rows (l x V) and `a` constant (row-major
// l x m, columns summing to 1).
template <typename S>
int span_candidate_nll_node(Graph<S>& g, int logp_rows, const std::vector<int>& cand_ids,
                            int prior_node) {
  const int probs = g.exp_(g.gather_cols(logp_rows, cand_ids));
  const int mixed = g.col_sum(g.mul(probs, prior_node));
  return g.scale(g.sum_all(g.log_(mixed)), -1.0);
}

template <typename S>
int span_candidate_nll(Graph<S>& g, int logp_rows, const std::vector<int>& cand_ids,
                       const std::vector<double>& prior) {
  const int l = g.val(logp_rows).rows();
  const int m = static_cast<int>(cand_ids.size());
  if (m == 0) throw std::invalid_argument("span_candidate_nll: empty candidate");
  if (static_cast<int>(prior.size()) != l * m)
    throw std::invalid_argument("span_candidate_nll: prior shape mismatch");
  Tensor<S> a({l, m});
  for (int64_t i = 0; i < a.size(); ++i) a.v[i] = static_cast<S>(prior[static_cast<size_t>(i)]);
  // the prior enters as a constant: gradients flow through log p only
  return span_candidate_nll_node(g, logp_rows, cand_ids, g.constant(std::move(a)));
}

// The translation-prediction loss: for each masked span with candidates
// {(y_c, w_c)}, sum_c w_c * [ -sum_j log sum_i a(i|j) p(y_cj | x_i) ] with
// p read from the log-softmax rows at the span's masked positions. Spans
// without table candidates fall back to predicting their own tokens.
template <typename S>
StreamLossBuild build_cmlm_stream_loss(Graph<S>& g, encoder::BoundParams<S>& bp,
                                       const std::vector<int>& input_ids, const MaskPlan& plan,
                                       const xmap::TranslationTable& table,
                                       const textpipe::Vocabulary& vocab, const PriorFn& prior,
                                       const CmlmConfig& cfg, int lang_id, bool train_mode);

// Plain MLM cross entropy at the covered positions, targets are the
// pre-mask identities.
template <typename S>
StreamLossBuild build_mlm_stream_loss(Graph<S>& g, encoder::BoundParams<S>& bp,
                                      const std::vector<int>& input_ids, const MaskPlan& plan,
                                      int lang_id, bool train_mode);

// ---------------------------------------------------------------- inline --

template <typename S>
StreamLossBuild build_mlm_stream_loss(Graph<S>& g, encoder::BoundParams<S>& bp,
                                      const std::vector<int>& input_ids, const MaskPlan& plan,
                                      int lang_id, bool train_mode) {
  StreamLossBuild out;
  if (plan.spans.empty()) return out;
  std::vector<int> positions(input_ids.size());
  for (size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
  const int states = encoder::encode_into(g, bp, input_ids, lang_id, positions, train_mode);

  std::vector<int> covered_pos;
  std::vector<int> targets;
  for (const auto& span : plan.spans)
    for (int t = 0; t < span.len(); ++t) {
      covered_pos.push_back(span.start + t);
      targets.push_back(span.tokens[static_cast<size_t>(t)]);
    }
  const int logp = encoder::token_logprobs_at(g, bp, states, covered_pos);
  out.sum_node = g.nll_sum(logp, targets);
  out.denom = static_cast<double>(targets.size());
  out.covered_tokens = static_cast<int>(targets.size());
  out.spans = static_cast<int>(plan.spans.size());
  return out;
}

template <typename S>
StreamLossBuild build_cmlm_stream_loss(Graph<S>& g, encoder::BoundParams<S>& bp,
                                       const std::vector<int>& input_ids, const MaskPlan& plan,
                                       const xmap::TranslationTable& table,
                                       const textpipe::Vocabulary& vocab, const PriorFn& prior,
                                       const CmlmConfig& cfg, int lang_id, bool train_mode) {
  StreamLossBuild out;
  if (plan.spans.empty()) return out;
  std::vector<int> positions(input_ids.size());
  for (size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
  const int states = encoder::encode_into(g, bp, input_ids, lang_id, positions, train_mode);

  std::vector<int> covered_pos;
  for (const auto& span : plan.spans)
    for (int t = 0; t < span.len(); ++t) covered_pos.push_back(span.start + t);
  const int logp = encoder::token_logprobs_at(g, bp, states, covered_pos);

  int total = -1;
  int row0 = 0;
  for (const auto& span : plan.spans) {
    const int l = span.len();
    std::vector<int> span_rows(static_cast<size_t>(l));
    for (int t = 0; t < l; ++t) span_rows[static_cast<size_t>(t)] = row0 + t;
    row0 += l;

    int span_node = -1;
    const std::vector<xmap::TableEntry>* cands =
        span.in_table ? table.find(span.key) : nullptr;
    if (cands && !cands->empty()) {
      const int rows = g.gather_rows(logp, span_rows);  // l x V
      const int kk = std::min<int>(cfg.k, static_cast<int>(cands->size()));
      double wsum = 0.0;
      for (int c = 0; c < kk; ++c) wsum += (*cands)[static_cast<size_t>(c)].weight;
      for (int c = 0; c < kk; ++c) {
        const auto& cand = (*cands)[static_cast<size_t>(c)];
        const std::vector<int> cand_ids = textpipe::ngram_ids_from_key(cand.tgt, vocab);
        const int m = static_cast<int>(cand_ids.size());
        const double w_hat = wsum > 0.0 ? cand.weight / wsum : 1.0 / kk;
        const int nll = g.scale(span_candidate_nll(g, rows, cand_ids, prior(span, cand_ids)), w_hat);
        span_node = span_node < 0 ? nll : g.add(span_node, nll);
        out.denom += w_hat * m;
      }
    } else {
      // no translation candidates: predict the span's own tokens
      span_node = g.nll_sum(g.gather_rows(logp, span_rows), span.tokens);
      out.denom += l;
    }
    total = total < 0 ? span_node : g.add(total, span_node);
  }
  out.sum_node = total;
  out.covered_tokens = plan.covered();
  out.spans = static_cast<int>(plan.spans.size());
  return out;
}

}  // namespace cmlm::objective
