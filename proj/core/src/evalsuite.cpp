#include "cmlm/evalsuite.hpp"

#include <algorithm>
#include <cmath>

namespace cmlm::evalsuite {

AerReport aer_metrics(const AlignmentSet& pred, const AlignmentSet& gold) {
  AerReport r;
  const auto& a = pred.links;
  const auto& s = gold.links;
  if (a.empty() && s.empty()) {
    r.precision = r.recall = r.f_measure = 1.0;
    r.aer = 0.0;
    return r;
  }
  size_t inter = 0;
  for (const auto& link : a) inter += s.count(link);
  r.precision = a.empty() ? 0.0 : static_cast<double>(inter) / static_cast<double>(a.size());
  r.recall = s.empty() ? 0.0 : static_cast<double>(inter) / static_cast<double>(s.size());
  r.f_measure =
      r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  r.aer = 1.0 - 2.0 * static_cast<double>(inter) / static_cast<double>(a.size() + s.size());
  return r;
}

std::vector<bool> retained_words(const textpipe::Sentence& words,
                                 const textpipe::BpeSegmenter& bpe,
                                 const textpipe::Vocabulary& vocab) {
  std::vector<bool> keep(words.size(), false);
  for (size_t i = 0; i < words.size(); ++i) {
    auto toks = bpe.split_word(words[i]);
    if (toks.size() != 1) continue;  // torn apart by BPE
    keep[i] = vocab.id(toks[0]) != textpipe::Vocabulary::kUnk;
  }
  return keep;
}

namespace {

// Per-word mean of the token states of one encoded sentence.
std::vector<std::vector<double>> word_states(encoder::EncoderState<float>& st,
                                             const textpipe::Sentence& words,
                                             const textpipe::BpeSegmenter& bpe,
                                             const textpipe::Vocabulary& vocab, int lang_id) {
  auto tok = textpipe::apply_bpe(words, bpe, vocab);
  std::vector<int> ids;
  std::vector<int> word_of;
  ids.push_back(textpipe::Vocabulary::kBos);
  word_of.push_back(-1);
  for (size_t t = 0; t < tok.ids.size(); ++t) {
    ids.push_back(tok.ids[t]);
    word_of.push_back(tok.word_index[t]);
  }
  ids.push_back(textpipe::Vocabulary::kEos);
  word_of.push_back(-1);
  if (static_cast<int>(ids.size()) > st.cfg.max_len) {
    ids.resize(static_cast<size_t>(st.cfg.max_len));
    word_of.resize(static_cast<size_t>(st.cfg.max_len));
  }

  const Tensor<float> states = encoder::encode_eval(st, ids, lang_id);
  const int d = st.cfg.dim;
  std::vector<std::vector<double>> pooled(words.size(), std::vector<double>(static_cast<size_t>(d), 0.0));
  std::vector<int> counts(words.size(), 0);
  for (size_t t = 0; t < ids.size(); ++t) {
    const int w = word_of[t];
    if (w < 0) continue;
    for (int j = 0; j < d; ++j)
      pooled[static_cast<size_t>(w)][static_cast<size_t>(j)] += states.at(static_cast<int>(t), j);
    ++counts[static_cast<size_t>(w)];
  }
  for (size_t w = 0; w < pooled.size(); ++w)
    if (counts[w] > 0)
      for (auto& x : pooled[w]) x /= counts[w];
  return pooled;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

AlignmentSet argmax_links(const std::vector<std::vector<double>>& sx,
                          const std::vector<std::vector<double>>& sy,
                          const std::vector<bool>& keep_x, const std::vector<bool>& keep_y) {
  AlignmentSet out;
  for (size_t i = 0; i < sx.size(); ++i) {
    if (!keep_x[i]) continue;
    int best_j = -1;
    double best = -2.0;
    for (size_t j = 0; j < sy.size(); ++j) {
      if (!keep_y[j]) continue;
      const double c = cosine(sx[i], sy[j]);
      if (c > best) {
        best = c;
        best_j = static_cast<int>(j);
      }
    }
    if (best_j >= 0) out.links.emplace(static_cast<int>(i) + 1, best_j + 1);
  }
  return out;
}

}  // namespace

AlignmentSet align_words(encoder::EncoderState<float>& st, const textpipe::Sentence& sent_x,
                         const textpipe::Sentence& sent_y, const textpipe::BpeSegmenter& bpe,
                         const textpipe::Vocabulary& vocab) {
  if (sent_x.empty() || sent_y.empty()) return {};
  const auto keep_x = retained_words(sent_x, bpe, vocab);
  const auto keep_y = retained_words(sent_y, bpe, vocab);
  const auto sx = word_states(st, sent_x, bpe, vocab, 0);
  const auto sy = word_states(st, sent_y, bpe, vocab, 1);
  return argmax_links(sx, sy, keep_x, keep_y);
}

AlignmentSet align_words_static(const objective::StaticTokenEmbeddings& statics,
                                const textpipe::Sentence& sent_x, const textpipe::Sentence& sent_y,
                                const textpipe::BpeSegmenter& bpe,
                                const textpipe::Vocabulary& vocab) {
  if (sent_x.empty() || sent_y.empty()) return {};
  const auto keep_x = retained_words(sent_x, bpe, vocab);
  const auto keep_y = retained_words(sent_y, bpe, vocab);
  auto rows = [&](const textpipe::Sentence& words, int lang) {
    std::vector<std::vector<double>> out(words.size(),
                                         std::vector<double>(static_cast<size_t>(statics.dim), 0.0));
    for (size_t i = 0; i < words.size(); ++i) {
      auto toks = bpe.split_word(words[i]);
      if (toks.size() != 1) continue;
      const int id = vocab.id(toks[0]);
      const float* r = statics.row(lang, id);
      for (int j = 0; j < statics.dim; ++j) out[i][static_cast<size_t>(j)] = r[j];
    }
    return out;
  };
  return argmax_links(rows(sent_x, 0), rows(sent_y, 1), keep_x, keep_y);
}

AlignmentSet filter_gold(const std::vector<std::pair<int, int>>& gold,
                         const std::vector<bool>& retained_x, const std::vector<bool>& retained_y) {
  AlignmentSet out;
  for (const auto& [i, j] : gold) {
    if (i < 1 || j < 1 || static_cast<size_t>(i) > retained_x.size() ||
        static_cast<size_t>(j) > retained_y.size())
      continue;
    if (retained_x[static_cast<size_t>(i - 1)] && retained_y[static_cast<size_t>(j - 1)])
      out.links.emplace(i, j);
  }
  return out;
}

namespace {

// A table source qualifies for gold scoring when every token is a whole
// word with a lexicon image; the expected candidate is the joined image.
bool gold_image_key(const std::string& src_key, const textpipe::GoldLexicon& gold,
                    std::string* out) {
  out->clear();
  size_t start = 0;
  const std::string joiner = textpipe::kJoiner;
  while (true) {
    const size_t p = src_key.find(joiner, start);
    const std::string tok =
        p == std::string::npos ? src_key.substr(start) : src_key.substr(start, p - start);
    if (tok.size() >= 2 && tok.compare(tok.size() - 2, 2, textpipe::kBpeCont) == 0) return false;
    const std::string* img = gold.to_cipher(tok);
    if (!img) return false;
    if (!out->empty()) *out += joiner;
    *out += *img;
    if (p == std::string::npos) break;
    start = p + joiner.size();
  }
  return true;
}

}  // namespace

std::vector<OrderPrecision> table_precision(const xmap::TranslationTable& table,
                                            const textpipe::GoldLexicon& gold, int at_k) {
  std::map<int, OrderPrecision> per_order;
  const std::string joiner = textpipe::kJoiner;
  for (const auto& src : table.sources) {
    int order = 1;
    for (size_t p = src.find(joiner); p != std::string::npos; p = src.find(joiner, p + joiner.size()))
      ++order;
    std::string image;
    if (!gold_image_key(src, gold, &image)) continue;
    auto& op = per_order[order];
    op.order = order;
    ++op.considered;
    const auto* cands = table.find(src);
    if (!cands) continue;
    const int kk = std::min<int>(at_k, static_cast<int>(cands->size()));
    for (int c = 0; c < kk; ++c)
      if ((*cands)[static_cast<size_t>(c)].tgt == image) {
        ++op.hits;
        break;
      }
  }
  std::vector<OrderPrecision> out;
  for (auto& [order, op] : per_order) {
    op.precision = op.considered > 0 ? static_cast<double>(op.hits) / op.considered : 0.0;
    out.push_back(op);
  }
  return out;
}

TopWordsPrecision top_words_precision(const xmap::TranslationTable& table,
                                      const textpipe::GoldLexicon& gold,
                                      const std::vector<std::pair<std::string, int64_t>>& word_freqs,
                                      int top_n, int at_k) {
  std::vector<std::pair<std::string, int64_t>> sorted = word_freqs;
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  TopWordsPrecision res;
  for (const auto& [word, f] : sorted) {
    if (res.considered >= top_n) break;
    const std::string* img = gold.to_cipher(word);
    if (!img) continue;
    ++res.considered;
    const auto* cands = table.find(word);
    if (!cands) continue;
    const int kk = std::min<int>(at_k, static_cast<int>(cands->size()));
    for (int c = 0; c < kk; ++c)
      if ((*cands)[static_cast<size_t>(c)].tgt == *img) {
        ++res.hits;
        break;
      }
  }
  res.precision = res.considered > 0 ? static_cast<double>(res.hits) / res.considered : 0.0;
  return res;
}

}  // namespace cmlm::evalsuite
