#include "cmlm/objective.hpp"

#include <algorithm>
#include <cmath>

namespace cmlm::objective {

void CmlmConfig::validate() const {
  auto rate = [](double r) { return r >= 0.0 && r <= 1.0; };
  if (!rate(coverage) || !rate(mask_rate) || !rate(random_rate) || !rate(keep_rate) ||
      !rate(cs_prob) || !rate(cs_coverage))
    throw ConfigError("objective rates must be in [0,1]");
  if (std::abs(mask_rate + random_rate + keep_rate - 1.0) > 1e-9)
    throw ConfigError("mask/random/keep rates must sum to 1");
  if (k < 1) throw ConfigError("candidate count k must be >= 1");
  if (tau <= 0.0) throw ConfigError("prior temperature must be > 0");
}

namespace {

struct CandidateSpan {
  int start;
  int len;
  std::string key;  // empty when no inventory match
};

// Leftmost-longest segmentation of the eligible positions into inventory
// spans, singletons elsewhere.
std::vector<CandidateSpan> segment_stream(const std::vector<int>& stream,
                                          const textpipe::NGramInventory& inventory,
                                          const textpipe::Vocabulary& vocab,
                                          const std::vector<uint8_t>& eligible) {
  std::vector<CandidateSpan> spans;
  const size_t n = stream.size();
  size_t i = 0;
  while (i < n) {
    if (!eligible[i]) {
      ++i;
      continue;
    }
    size_t run_end = i;
    while (run_end < n && eligible[run_end]) ++run_end;
    const int limit = static_cast<int>(run_end - i);
    const int match = inventory.longest_match(stream, i, limit);
    if (match >= 2) {
      std::vector<int> ids(stream.begin() + static_cast<long>(i),
                           stream.begin() + static_cast<long>(i) + match);
      spans.push_back({static_cast<int>(i), match, textpipe::ngram_key(ids, vocab)});
      i += static_cast<size_t>(match);
    } else {
      std::string key;
      if (inventory.contains_ids(stream, i, 1)) key = vocab.token(stream[i]);
      spans.push_back({static_cast<int>(i), 1, std::move(key)});
      ++i;
    }
  }
  return spans;
}

std::vector<uint8_t> eligibility(const std::vector<int>& stream, const textpipe::Vocabulary& vocab,
                                 const std::vector<std::pair<int, int>>& excluded) {
  std::vector<uint8_t> ok(stream.size(), 1);
  for (size_t i = 0; i < stream.size(); ++i)
    if (vocab.is_special(stream[i])) ok[i] = 0;
  for (const auto& [start, len] : excluded)
    for (int t = 0; t < len; ++t)
      if (start + t >= 0 && static_cast<size_t>(start + t) < ok.size())
        ok[static_cast<size_t>(start + t)] = 0;
  return ok;
}

int count_maskable(const std::vector<int>& stream, const textpipe::Vocabulary& vocab) {
  int n = 0;
  for (int id : stream)
    if (!vocab.is_special(id)) ++n;
  return n;
}

int random_regular_token(const textpipe::Vocabulary& vocab, Rng& rng) {
  const int lo = textpipe::Vocabulary::kNumSpecial;
  return lo + static_cast<int>(rng.next_int(std::max(1, vocab.size() - lo)));
}

}  // namespace

MaskPlan plan_masks(const std::vector<int>& stream, const textpipe::NGramInventory& inventory,
                    const xmap::TranslationTable* table, ObjKind kind, const CmlmConfig& cfg,
                    const textpipe::Vocabulary& vocab, Rng& rng,
                    const std::vector<std::pair<int, int>>& excluded) {
  cfg.validate();
  MaskPlan plan;
  plan.kind = kind;
  plan.maskable = count_maskable(stream, vocab);
  if (stream.empty() || plan.maskable == 0) return plan;

  auto spans = segment_stream(stream, inventory, vocab, eligibility(stream, vocab, excluded));
  std::vector<int> order(spans.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);

  // Spans are sampled without replacement until the covered fraction meets
  // cfg.coverage. The span that would cross the target joins with
  // probability (remaining / len), which keeps the expected coverage at the
  // target for any stream length.
  const double target = cfg.coverage * static_cast<double>(plan.maskable);
  std::vector<int> chosen;
  double covered = 0.0;
  for (int idx : order) {
    if (covered >= target) break;
    const int len = spans[static_cast<size_t>(idx)].len;
    const double remaining = target - covered;
    if (static_cast<double>(len) > remaining && rng.next_double() >= remaining / len) break;
    chosen.push_back(idx);
    covered += len;
  }
  std::sort(chosen.begin(), chosen.end(),
            [&](int a, int b) { return spans[static_cast<size_t>(a)].start < spans[static_cast<size_t>(b)].start; });

  for (int idx : chosen) {
    const auto& c = spans[static_cast<size_t>(idx)];
    MaskedSpan span;
    span.start = c.start;
    span.key = c.key;
    for (int t = 0; t < c.len; ++t) {
      const int tok = stream[static_cast<size_t>(c.start + t)];
      span.tokens.push_back(tok);
      const double u = rng.next_double();
      if (u < cfg.mask_rate) {
        span.actions.push_back(Action::Mask);
        span.replacements.push_back(textpipe::Vocabulary::kMask);
      } else if (u < cfg.mask_rate + cfg.random_rate) {
        span.actions.push_back(Action::Random);
        span.replacements.push_back(random_regular_token(vocab, rng));
      } else {
        span.actions.push_back(Action::Keep);
        span.replacements.push_back(tok);
      }
    }
    span.in_table = kind == ObjKind::CMLM && !span.key.empty() && table && table->has(span.key);
    plan.spans.push_back(std::move(span));
  }
  return plan;
}

std::vector<int> masked_stream(const std::vector<int>& stream, const MaskPlan& plan,
                               const textpipe::Vocabulary& vocab) {
  (void)vocab;
  std::vector<int> out = stream;
  for (const auto& span : plan.spans)
    for (int t = 0; t < span.len(); ++t)
      out[static_cast<size_t>(span.start + t)] = span.replacements[static_cast<size_t>(t)];
  return out;
}

CodeSwitchResult code_switch(const std::vector<int>& stream,
                             const textpipe::NGramInventory& inventory,
                             const xmap::TranslationTable& table, const CmlmConfig& cfg,
                             const textpipe::Vocabulary& vocab, Rng& rng) {
  cfg.validate();
  CodeSwitchResult res;
  const int maskable = count_maskable(stream, vocab);
  if (stream.empty() || maskable == 0) {
    res.stream = stream;
    return res;
  }

  auto spans = segment_stream(stream, inventory, vocab, eligibility(stream, vocab, {}));
  std::vector<int> order(spans.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);

  const double target = cfg.cs_coverage * static_cast<double>(maskable);
  std::vector<uint8_t> selected(spans.size(), 0);
  double covered = 0.0;
  for (int idx : order) {
    if (covered >= target) break;
    const int len = spans[static_cast<size_t>(idx)].len;
    const double remaining = target - covered;
    if (static_cast<double>(len) > remaining && rng.next_double() >= remaining / len) break;
    selected[static_cast<size_t>(idx)] = 1;
    covered += len;
  }

  res.stream.reserve(stream.size());
  size_t pos = 0;
  size_t next_span = 0;
  // spans are in stream order by construction
  while (pos < stream.size()) {
    while (next_span < spans.size() &&
           spans[next_span].start < static_cast<int>(pos))
      ++next_span;
    if (next_span < spans.size() && spans[next_span].start == static_cast<int>(pos) &&
        selected[next_span]) {
      const auto& c = spans[next_span];
      const auto* cands = c.key.empty() ? nullptr : table.find(c.key);
      if (cands && !cands->empty()) {
        // draw one candidate by normalized weight
        double wsum = 0.0;
        for (const auto& e : *cands) wsum += e.weight;
        double u = rng.next_double() * (wsum > 0.0 ? wsum : 1.0);
        size_t pick = 0;
        double acc = 0.0;
        for (size_t ci = 0; ci < cands->size(); ++ci) {
          acc += (*cands)[ci].weight;
          if (u < acc || ci + 1 == cands->size()) {
            pick = ci;
            break;
          }
        }
        const std::vector<int> cand_ids =
            textpipe::ngram_ids_from_key((*cands)[pick].tgt, vocab);
        res.replaced.emplace_back(static_cast<int>(res.stream.size()),
                                  static_cast<int>(cand_ids.size()));
        for (int id : cand_ids) res.stream.push_back(id);
        pos += static_cast<size_t>(c.len);
        ++next_span;
        continue;
      }
    }
    res.stream.push_back(stream[pos]);
    ++pos;
  }
  return res;
}

StaticTokenEmbeddings StaticTokenEmbeddings::build(const textpipe::Vocabulary& vocab,
                                                   const embed::EmbeddingMatrix& emb_x,
                                                   const embed::EmbeddingMatrix& emb_y,
                                                   const xmap::MappingMatrix& mapping) {
  StaticTokenEmbeddings out;
  out.dim = emb_x.dim;
  for (int lang = 0; lang < 2; ++lang) {
    out.rows[lang].assign(static_cast<size_t>(vocab.size()) * out.dim, 0.0f);
    out.present[lang].assign(static_cast<size_t>(vocab.size()), 0);
  }
  std::vector<double> tmp(static_cast<size_t>(out.dim)), mapped(static_cast<size_t>(out.dim));
  for (int id = 0; id < vocab.size(); ++id) {
    const std::string& tok = vocab.token(id);
    int rx = emb_x.find(tok);
    if (rx >= 0) {
      const float* r = emb_x.row(rx);
      double n = 0.0;
      for (int j = 0; j < out.dim; ++j) n += static_cast<double>(r[j]) * r[j];
      n = std::sqrt(n);
      if (n > 0.0) {
        for (int j = 0; j < out.dim; ++j) tmp[static_cast<size_t>(j)] = r[j] / n;
        mapping.apply_row(tmp.data(), mapped.data());
        float* dst = out.rows[0].data() + static_cast<size_t>(id) * out.dim;
        for (int j = 0; j < out.dim; ++j) dst[j] = static_cast<float>(mapped[static_cast<size_t>(j)]);
        out.present[0][static_cast<size_t>(id)] = 1;
      }
    }
    int ry = emb_y.find(tok);
    if (ry >= 0) {
      const float* r = emb_y.row(ry);
      double n = 0.0;
      for (int j = 0; j < out.dim; ++j) n += static_cast<double>(r[j]) * r[j];
      n = std::sqrt(n);
      if (n > 0.0) {
        float* dst = out.rows[1].data() + static_cast<size_t>(id) * out.dim;
        for (int j = 0; j < out.dim; ++j) dst[j] = static_cast<float>(r[j] / n);
        out.present[1][static_cast<size_t>(id)] = 1;
      }
    }
  }
  return out;
}

std::vector<double> alignment_prior(const std::vector<int>& src_ids,
                                    const std::vector<int>& tgt_ids,
                                    const StaticTokenEmbeddings& emb, int src_lang, int tgt_lang,
                                    double tau) {
  const int l = static_cast<int>(src_ids.size());
  const int m = static_cast<int>(tgt_ids.size());
  std::vector<double> a(static_cast<size_t>(l) * m, 0.0);
  for (int j = 0; j < m; ++j) {
    const float* ty = emb.row(tgt_lang, tgt_ids[static_cast<size_t>(j)]);
    std::vector<double> scores(static_cast<size_t>(l));
    for (int i = 0; i < l; ++i) {
      const float* sx = emb.row(src_lang, src_ids[static_cast<size_t>(i)]);
      double c = 0.0;
      for (int d = 0; d < emb.dim; ++d) c += static_cast<double>(sx[d]) * ty[d];
      scores[static_cast<size_t>(i)] = c / tau;
    }
    double mx = scores[0];
    for (double s : scores) mx = std::max(mx, s);
    double z = 0.0;
    for (double s : scores) z += std::exp(s - mx);
    for (int i = 0; i < l; ++i)
      a[static_cast<size_t>(i) * m + j] = std::exp(scores[static_cast<size_t>(i)] - mx) / z;
  }
  return a;
}

PriorFn make_static_prior(const StaticTokenEmbeddings& emb, int src_lang, int tgt_lang,
                          double tau) {
  return [&emb, src_lang, tgt_lang, tau](const MaskedSpan& span, const std::vector<int>& cand_ids) {
    return alignment_prior(span.tokens, cand_ids, emb, src_lang, tgt_lang, tau);
  };
}

PriorFn make_identity_prior() {
  return [](const MaskedSpan& span, const std::vector<int>& cand_ids) {
    const int l = span.len();
    const int m = static_cast<int>(cand_ids.size());
    std::vector<double> a(static_cast<size_t>(l) * m, 0.0);
    for (int j = 0; j < m; ++j) a[static_cast<size_t>(std::min(j, l - 1)) * m + j] = 1.0;
    return a;
  };
}

}  // namespace cmlm::objective
