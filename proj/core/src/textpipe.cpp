#include "cmlm/textpipe.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "cmlm/io.hpp"

namespace cmlm::textpipe {

namespace {

std::vector<std::string> utf8_chars(const std::string& s) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < s.size()) {
    unsigned char c = static_cast<unsigned char>(s[i]);
    size_t len = 1;
    if ((c & 0x80) == 0)
      len = 1;
    else if ((c & 0xe0) == 0xc0)
      len = 2;
    else if ((c & 0xf0) == 0xe0)
      len = 3;
    else if ((c & 0xf8) == 0xf0)
      len = 4;
    if (i + len > s.size()) len = 1;
    out.push_back(s.substr(i, len));
    i += len;
  }
  return out;
}

// ------------------------------------------------------ corpus generator --

// Zipf-ranked vocabulary driven by a Markov chain whose per-context boost
// sets give every word a distinctive successor signature while keeping the
// unigram marginal close to the pure Zipf law. Boosted successors are drawn
// uniformly outside the very top ranks so the boost mass does not tilt the
// rank-frequency slope.
struct ZipfChain {
  int vocab = 0;
  int order = 1;
  std::vector<double> cdf;        // cumulative Zipf over ranks 0..V-1
  std::vector<double> prob;       // per-rank probability
  uint64_t structure_seed = 0;
  int favored_count = 24;
  double boost = 12.0;
  int favored_min_rank = 0;

  struct Favored {
    std::vector<int> ranks;
    std::vector<double> cumw;
    double total = 0.0;
  };
  mutable std::unordered_map<uint64_t, Favored> cache;

  void init(int v, double exponent, int markov_order, uint64_t seed) {
    vocab = v;
    order = markov_order;
    structure_seed = seed;
    favored_min_rank = std::min(v - 1, v / 20);
    prob.resize(v);
    cdf.resize(v);
    double z = 0.0;
    for (int r = 0; r < v; ++r) z += std::pow(static_cast<double>(r + 1), -exponent);
    double acc = 0.0;
    for (int r = 0; r < v; ++r) {
      prob[r] = std::pow(static_cast<double>(r + 1), -exponent) / z;
      acc += prob[r];
      cdf[r] = acc;
    }
    cdf[v - 1] = 1.0;
  }

  int sample_base(Rng& rng) const {
    double u = rng.next_double();
    return static_cast<int>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
  }

  const Favored& favored_for(uint64_t ctx) const {
    auto it = cache.find(ctx);
    if (it != cache.end()) return it->second;
    Favored f;
    Rng fr(mix64(structure_seed, ctx));
    std::set<int> picked;
    for (int t = 0; t < favored_count; ++t)
      picked.insert(favored_min_rank +
                    static_cast<int>(fr.next_int(vocab - favored_min_rank)));
    double acc = 0.0;
    for (int r : picked) {
      acc += (boost - 1.0) * prob[r];
      f.ranks.push_back(r);
      f.cumw.push_back(acc);
    }
    f.total = acc;
    auto res = cache.emplace(ctx, std::move(f));
    return res.first->second;
  }

  int sample(uint64_t ctx, Rng& rng) const {
    if (order == 0) return sample_base(rng);
    const Favored& f = favored_for(ctx);
    double u = rng.next_double() * (1.0 + f.total);
    if (u < 1.0 || f.ranks.empty())
      return static_cast<int>(std::lower_bound(cdf.begin(), cdf.end(), std::min(u, 1.0 - 1e-16)) -
                              cdf.begin());
    double w = u - 1.0;
    size_t idx = std::lower_bound(f.cumw.begin(), f.cumw.end(), w) - f.cumw.begin();
    if (idx >= f.ranks.size()) idx = f.ranks.size() - 1;
    return f.ranks[idx];
  }
};

uint64_t context_key(const std::vector<int>& ranks, int order) {
  uint64_t k = 0x5bf03635;  // sentence-start context
  const int n = static_cast<int>(ranks.size());
  for (int i = std::max(0, n - order); i < n; ++i)
    k = mix64(k, static_cast<uint64_t>(ranks[i]) + 1);
  return k;
}

std::vector<int> gen_rank_sentence(const ZipfChain& chain, int len, Rng& rng) {
  std::vector<int> out;
  out.reserve(len);
  for (int i = 0; i < len; ++i) out.push_back(chain.sample(context_key(out, chain.order), rng));
  return out;
}

// Pronounceable unique pseudo-words.
std::vector<std::string> gen_surfaces(int count, Rng& rng, std::set<std::string>& taken) {
  static const char* kCons[] = {"b", "d", "f", "g", "k", "l", "m", "n",
                                "p", "r", "s", "t", "v", "z", "ch", "sh"};
  static const char* kVow[] = {"a", "e", "i", "o", "u"};
  std::vector<std::string> out;
  out.reserve(count);
  while (static_cast<int>(out.size()) < count) {
    int syllables = 2 + static_cast<int>(rng.next_int(3));
    std::string w;
    for (int s = 0; s < syllables; ++s) {
      w += kCons[rng.next_int(16)];
      w += kVow[rng.next_int(5)];
    }
    if (taken.insert(w).second) out.push_back(w);
  }
  return out;
}

// In-place adjacent swaps; perm[j] = origin position of the word now at j.
void apply_swaps(Sentence& sent, std::vector<int>& perm, double p, Rng& rng) {
  perm.resize(sent.size());
  for (size_t i = 0; i < sent.size(); ++i) perm[i] = static_cast<int>(i);
  if (p <= 0.0) return;
  for (size_t k = 0; k + 1 < sent.size(); ++k) {
    if (rng.bernoulli(p)) {
      std::swap(sent[k], sent[k + 1]);
      std::swap(perm[k], perm[k + 1]);
      ++k;
    }
  }
}

}  // namespace

void CipherSpec::validate() const {
  if (base_vocab_size < 2) throw ConfigError("base_vocab_size must be >= 2");
  if (swap_prob < 0.0 || swap_prob > 1.0) throw ConfigError("swap_prob must be in [0,1]");
  if (sentence_min > sentence_max) throw ConfigError("sentence_min must be <= sentence_max");
  if (sentence_min < 1) throw ConfigError("sentence_min must be >= 1");
  if (markov_order < 0) throw ConfigError("markov_order must be >= 0");
  if (zipf_exponent <= 0.0) throw ConfigError("zipf_exponent must be > 0");
  if (num_sentences < 0 || num_eval_pairs < 0) throw ConfigError("counts must be >= 0");
  if (static_cast<int>(anchors_or_default().size()) >= base_vocab_size)
    throw ConfigError("base_vocab_size must exceed the anchor count");
}

std::vector<std::string> CipherSpec::anchors_or_default() const {
  if (!shared_anchor_tokens.empty()) return shared_anchor_tokens;
  return {"0", "1", "2", "3", "4", "5", "6", "7", "8", "9", ".", ",", "!", "?"};
}

CipherCorpus gen_cipher_corpus(const CipherSpec& spec) {
  spec.validate();
  const std::vector<std::string> anchors = spec.anchors_or_default();
  const int v = spec.base_vocab_size;
  const int n_words = v - static_cast<int>(anchors.size());

  // Surfaces: unique across both languages so the lexicon is unambiguous.
  std::set<std::string> taken(anchors.begin(), anchors.end());
  Rng surf_rng(substream(spec.seed, "surfaces"));
  std::vector<std::string> base_words = gen_surfaces(n_words, surf_rng, taken);
  std::vector<std::string> cipher_words = gen_surfaces(n_words, surf_rng, taken);

  // Rank table: anchors sit at evenly spaced ranks inside the top 30%
  // (digits and punctuation are frequent in real text, and the mapper
  // needs reliable anchor embeddings); everything else is shuffled.
  std::vector<std::string> base_by_rank(v), cipher_by_rank(v);
  {
    const int a = static_cast<int>(anchors.size());
    std::set<int> anchor_ranks;
    const int top = std::max(a, (3 * v) / 10);
    for (int i = 0; i < a; ++i) {
      int r = static_cast<int>((static_cast<int64_t>(i + 1) * top) / (a + 1));
      while (anchor_ranks.count(r)) ++r;
      anchor_ranks.insert(r % v);
    }
    std::vector<int> word_ranks;
    for (int r = 0; r < v; ++r)
      if (!anchor_ranks.count(r)) word_ranks.push_back(r);
    Rng rank_rng(substream(spec.seed, "ranks"));
    std::vector<int> order(n_words);
    for (int i = 0; i < n_words; ++i) order[i] = i;
    rank_rng.shuffle(order);
    int ai = 0;
    for (int r : anchor_ranks) base_by_rank[r] = cipher_by_rank[r] = anchors[ai++];
    for (int i = 0; i < n_words; ++i) {
      base_by_rank[word_ranks[i]] = base_words[order[i]];
      cipher_by_rank[word_ranks[i]] = cipher_words[order[i]];
    }
  }

  CipherCorpus out;
  for (int r = 0; r < v; ++r) {
    out.gold.base_to_cipher[base_by_rank[r]] = cipher_by_rank[r];
    out.gold.cipher_to_base[cipher_by_rank[r]] = base_by_rank[r];
  }
  out.gold.anchors.insert(anchors.begin(), anchors.end());

  ZipfChain chain;
  chain.init(v, spec.zipf_exponent, spec.markov_order, substream(spec.seed, "structure"));

  auto sentence_len = [&](Rng& rng) {
    return spec.sentence_min + static_cast<int>(rng.next_int(spec.sentence_max - spec.sentence_min + 1));
  };
  auto ranks_to_words = [&](const std::vector<int>& ranks, const std::vector<std::string>& table) {
    Sentence s;
    s.reserve(ranks.size());
    for (int r : ranks) s.push_back(table[r]);
    return s;
  };

  Rng x_rng(substream(spec.seed, "corpus_x"));
  out.corpus_x.reserve(spec.num_sentences);
  for (int i = 0; i < spec.num_sentences; ++i)
    out.corpus_x.push_back(ranks_to_words(gen_rank_sentence(chain, sentence_len(x_rng), x_rng), base_by_rank));

  Rng y_rng(substream(spec.seed, "corpus_y"));
  out.corpus_y.reserve(spec.num_sentences);
  for (int i = 0; i < spec.num_sentences; ++i) {
    Sentence s = ranks_to_words(gen_rank_sentence(chain, sentence_len(y_rng), y_rng), cipher_by_rank);
    std::vector<int> perm;
    apply_swaps(s, perm, spec.swap_prob, y_rng);
    out.corpus_y.push_back(std::move(s));
  }

  Rng e_rng(substream(spec.seed, "parallel_eval"));
  out.parallel_eval.reserve(spec.num_eval_pairs);
  for (int i = 0; i < spec.num_eval_pairs; ++i) {
    ParallelPair p;
    std::vector<int> ranks = gen_rank_sentence(chain, sentence_len(e_rng), e_rng);
    p.x = ranks_to_words(ranks, base_by_rank);
    p.y = ranks_to_words(ranks, cipher_by_rank);
    std::vector<int> perm;
    apply_swaps(p.y, perm, spec.swap_prob, e_rng);
    for (size_t j = 0; j < perm.size(); ++j)
      p.align.emplace_back(perm[j] + 1, static_cast<int>(j) + 1);
    std::sort(p.align.begin(), p.align.end());
    out.parallel_eval.push_back(std::move(p));
  }
  return out;
}

// ------------------------------------------------------------------- bpe --

MergeTable learn_bpe(const std::vector<const std::vector<Sentence>*>& corpora, int num_merges) {
  if (num_merges < 0) throw InputError("num_merges must be >= 0");
  std::unordered_map<std::string, int64_t> wcount;
  for (const auto* corpus : corpora)
    for (const auto& sent : *corpus)
      for (const auto& w : sent)
        if (!w.empty()) ++wcount[w];
  if (wcount.empty()) throw InputError("learn_bpe: empty corpora");

  struct WordSyms {
    std::vector<std::string> syms;
    int64_t count;
  };
  std::vector<WordSyms> words;
  words.reserve(wcount.size());
  for (const auto& [w, c] : wcount) words.push_back({utf8_chars(w), c});

  MergeTable table;
  for (int m = 0; m < num_merges; ++m) {
    std::map<std::pair<std::string, std::string>, int64_t> pairs;
    for (const auto& ws : words)
      for (size_t i = 0; i + 1 < ws.syms.size(); ++i)
        pairs[{ws.syms[i], ws.syms[i + 1]}] += ws.count;
    if (pairs.empty()) break;
    // max count; the std::map order gives the lexicographically smallest
    // pair among ties for free
    auto best = pairs.begin();
    for (auto it = pairs.begin(); it != pairs.end(); ++it)
      if (it->second > best->second) best = it;
    const auto [l, r] = best->first;
    table.rules.emplace_back(l, r);
    const std::string merged = l + r;
    for (auto& ws : words) {
      for (size_t i = 0; i + 1 < ws.syms.size();) {
        if (ws.syms[i] == l && ws.syms[i + 1] == r) {
          ws.syms[i] = merged;
          ws.syms.erase(ws.syms.begin() + static_cast<long>(i) + 1);
        } else {
          ++i;
        }
      }
    }
  }
  return table;
}

BpeSegmenter::BpeSegmenter(const MergeTable& merges) {
  for (size_t i = 0; i < merges.rules.size(); ++i)
    rule_rank_.emplace(merges.rules[i].first + '\x1f' + merges.rules[i].second,
                       static_cast<int>(i));
}

std::vector<std::string> BpeSegmenter::split_word(const std::string& word) const {
  auto it = cache_.find(word);
  if (it != cache_.end()) return it->second;

  std::vector<std::string> syms = utf8_chars(word);
  while (syms.size() > 1) {
    int best_rank = -1;
    for (size_t i = 0; i + 1 < syms.size(); ++i) {
      auto r = rule_rank_.find(syms[i] + '\x1f' + syms[i + 1]);
      if (r != rule_rank_.end() && (best_rank < 0 || r->second < best_rank)) best_rank = r->second;
    }
    if (best_rank < 0) break;
    for (size_t i = 0; i + 1 < syms.size();) {
      auto r = rule_rank_.find(syms[i] + '\x1f' + syms[i + 1]);
      if (r != rule_rank_.end() && r->second == best_rank) {
        syms[i] += syms[i + 1];
        syms.erase(syms.begin() + static_cast<long>(i) + 1);
      } else {
        ++i;
      }
    }
  }
  for (size_t i = 0; i + 1 < syms.size(); ++i) syms[i] += kBpeCont;
  cache_.emplace(word, syms);
  return syms;
}

// ------------------------------------------------------------ vocabulary --

int Vocabulary::lang_id(const std::string& name) const {
  for (size_t i = 0; i < languages.size(); ++i)
    if (languages[i] == name) return static_cast<int>(i);
  throw InputError("unknown language tag: " + name);
}

Vocabulary Vocabulary::build(const std::unordered_map<std::string, int64_t>& counts) {
  Vocabulary v;
  v.id_to_token = {"<pad>", "<unk>", "<mask>", "<bos>", "<eos>"};
  v.freq.assign(kNumSpecial, 0);
  std::vector<std::pair<std::string, int64_t>> items(counts.begin(), counts.end());
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (auto& [tok, c] : items) {
    v.id_to_token.push_back(tok);
    v.freq.push_back(c);
  }
  for (int i = 0; i < v.size(); ++i) v.token_to_id[v.id_to_token[i]] = i;
  return v;
}

uint64_t vocab_hash(const Vocabulary& v) {
  uint64_t h = 1469598103934665603ULL;
  for (int i = 0; i < v.size(); ++i) {
    h = fnv1a64(v.id_to_token[i], h);
    h = fnv1a64("\x1f", h);
    h = fnv1a64(std::to_string(v.freq[i]), h);
    h = fnv1a64("\n", h);
  }
  return h;
}

TokenizedSentence apply_bpe(const Sentence& words, const BpeSegmenter& bpe, const Vocabulary& vocab) {
  TokenizedSentence out;
  for (size_t wi = 0; wi < words.size(); ++wi) {
    if (words[wi].empty()) continue;
    for (const auto& tok : bpe.split_word(words[wi])) {
      out.ids.push_back(vocab.id(tok));
      out.word_index.push_back(static_cast<int>(wi));
    }
  }
  return out;
}

std::unordered_map<std::string, int64_t> count_tokens(
    const std::vector<const std::vector<Sentence>*>& corpora, const BpeSegmenter& bpe) {
  std::unordered_map<std::string, int64_t> counts;
  for (const auto* corpus : corpora)
    for (const auto& sent : *corpus)
      for (const auto& w : sent) {
        if (w.empty()) continue;
        for (const auto& tok : bpe.split_word(w)) ++counts[tok];
      }
  return counts;
}

// ---------------------------------------------------------------- ngrams --

std::string ngram_key(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::string key;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i) key += kJoiner;
    key += vocab.token(ids[i]);
  }
  return key;
}

std::vector<int> ngram_ids_from_key(const std::string& key, const Vocabulary& vocab) {
  std::vector<int> ids;
  size_t start = 0;
  const std::string joiner = kJoiner;
  while (true) {
    size_t p = key.find(joiner, start);
    if (p == std::string::npos) {
      ids.push_back(vocab.id(key.substr(start)));
      break;
    }
    ids.push_back(vocab.id(key.substr(start, p - start)));
    start = p + joiner.size();
  }
  return ids;
}

std::string NGramInventory::pack(const std::vector<int>& ids, size_t pos, int n) {
  std::string s(static_cast<size_t>(n) * sizeof(int), '\0');
  std::memcpy(s.data(), ids.data() + pos, static_cast<size_t>(n) * sizeof(int));
  return s;
}

void NGramInventory::insert(NGram g, const Vocabulary& vocab) {
  packed_.insert(pack(g.ids, 0, static_cast<int>(g.ids.size())));
  by_key_.emplace(ngram_key(g.ids, vocab), std::move(g));
}

bool NGramInventory::contains_ids(const std::vector<int>& ids, size_t pos, int n) const {
  if (pos + static_cast<size_t>(n) > ids.size()) return false;
  return packed_.count(pack(ids, pos, n)) > 0;
}

int NGramInventory::longest_match(const std::vector<int>& ids, size_t pos, int limit) const {
  for (int n = std::min(n_max_, limit); n >= 1; --n)
    if (contains_ids(ids, pos, n)) return n;
  return 0;
}

const NGram* NGramInventory::find_key(const std::string& key) const {
  auto it = by_key_.find(key);
  return it == by_key_.end() ? nullptr : &it->second;
}

std::vector<std::string> NGramInventory::sorted_keys() const {
  std::vector<std::pair<int64_t, std::string>> items;
  items.reserve(by_key_.size());
  for (const auto& [k, g] : by_key_) items.emplace_back(-g.freq, k);
  std::sort(items.begin(), items.end());
  std::vector<std::string> keys;
  keys.reserve(items.size());
  for (auto& [negf, k] : items) keys.push_back(std::move(k));
  return keys;
}

NGramInventory extract_ngrams(const std::vector<TokenizedSentence>& corpus, const Vocabulary& vocab,
                              int n_max, int64_t min_count, int top_m, int lang) {
  NGramInventory inv(n_max, min_count, top_m, lang);
  auto pack = [](const std::vector<int>& ids, size_t pos, int n) {
    std::string s(static_cast<size_t>(n) * sizeof(int), '\0');
    std::memcpy(s.data(), ids.data() + pos, static_cast<size_t>(n) * sizeof(int));
    return s;
  };
  // order -> packed ids -> count
  std::vector<std::unordered_map<std::string, int64_t>> counts(static_cast<size_t>(n_max) + 1);
  for (const auto& sent : corpus) {
    const auto& ids = sent.ids;
    for (size_t i = 0; i < ids.size(); ++i) {
      for (int n = 1; n <= n_max && i + static_cast<size_t>(n) <= ids.size(); ++n) {
        if (vocab.is_special(ids[i + static_cast<size_t>(n) - 1])) break;
        ++counts[static_cast<size_t>(n)][pack(ids, i, n)];
      }
    }
  }
  for (int n = 1; n <= n_max; ++n) {
    struct Cand {
      int64_t freq;
      std::string key;
      std::vector<int> ids;
    };
    std::vector<Cand> cands;
    for (const auto& [packed, c] : counts[static_cast<size_t>(n)]) {
      if (c < min_count) continue;
      std::vector<int> ids(static_cast<size_t>(n));
      std::memcpy(ids.data(), packed.data(), packed.size());
      cands.push_back({c, ngram_key(ids, vocab), std::move(ids)});
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.freq != b.freq) return a.freq > b.freq;
      return a.key < b.key;
    });
    if (static_cast<int>(cands.size()) > top_m) cands.resize(static_cast<size_t>(top_m));
    for (auto& c : cands) inv.insert({std::move(c.ids), lang, c.freq}, vocab);
  }
  return inv;
}

// -------------------------------------------------------------- file I/O --

void write_corpus(const std::string& path, const std::vector<Sentence>& corpus) {
  std::ostringstream os;
  for (const auto& sent : corpus) {
    for (size_t i = 0; i < sent.size(); ++i) {
      if (i) os << ' ';
      os << sent[i];
    }
    os << '\n';
  }
  write_text(path, os.str());
}

std::vector<Sentence> read_corpus(const std::string& path) {
  std::vector<Sentence> out;
  for (const auto& line : read_lines(path)) out.push_back(split_ws(line));
  return out;
}

void write_merges(const std::string& path, const MergeTable& merges) {
  std::ostringstream os;
  for (const auto& [l, r] : merges.rules) os << l << ' ' << r << '\n';
  write_text(path, os.str());
}

MergeTable read_merges(const std::string& path) {
  MergeTable t;
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    auto parts = split_ws(line);
    if (parts.size() != 2) throw InputError("bad merge rule in " + path + ": " + line);
    t.rules.emplace_back(parts[0], parts[1]);
  }
  return t;
}

void write_vocab(const std::string& path, const Vocabulary& vocab) {
  std::ostringstream os;
  for (int i = Vocabulary::kNumSpecial; i < vocab.size(); ++i)
    os << vocab.id_to_token[i] << '\t' << vocab.freq[i] << '\n';
  write_text(path, os.str());
}

Vocabulary read_vocab(const std::string& path) {
  std::unordered_map<std::string, int64_t> counts;
  std::vector<std::pair<std::string, int64_t>> ordered;
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    auto parts = split_char(line, '\t');
    if (parts.size() != 2) throw InputError("bad vocab line in " + path + ": " + line);
    ordered.emplace_back(parts[0], std::stoll(parts[1]));
  }
  Vocabulary v;
  v.id_to_token = {"<pad>", "<unk>", "<mask>", "<bos>", "<eos>"};
  v.freq.assign(Vocabulary::kNumSpecial, 0);
  for (auto& [tok, c] : ordered) {
    v.id_to_token.push_back(tok);
    v.freq.push_back(c);
  }
  for (int i = 0; i < v.size(); ++i) v.token_to_id[v.id_to_token[i]] = i;
  return v;
}

void write_lexicon(const std::string& path, const GoldLexicon& gold) {
  std::ostringstream os;
  for (const auto& [b, c] : gold.base_to_cipher) os << b << '\t' << c << '\n';
  write_text(path, os.str());
}

GoldLexicon read_lexicon(const std::string& path) {
  GoldLexicon g;
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    auto parts = split_char(line, '\t');
    if (parts.size() != 2) throw InputError("bad lexicon line in " + path + ": " + line);
    g.base_to_cipher[parts[0]] = parts[1];
    g.cipher_to_base[parts[1]] = parts[0];
    if (parts[0] == parts[1]) g.anchors.insert(parts[0]);
  }
  return g;
}

void write_alignments(const std::string& path,
                      const std::vector<std::vector<std::pair<int, int>>>& aligns) {
  std::ostringstream os;
  for (const auto& sent : aligns) {
    for (size_t i = 0; i < sent.size(); ++i) {
      if (i) os << ' ';
      os << sent[i].first << '-' << sent[i].second;
    }
    os << '\n';
  }
  write_text(path, os.str());
}

std::vector<std::vector<std::pair<int, int>>> read_alignments(const std::string& path) {
  std::vector<std::vector<std::pair<int, int>>> out;
  for (const auto& line : read_lines(path)) {
    std::vector<std::pair<int, int>> sent;
    for (const auto& tok : split_ws(line)) {
      auto dash = tok.find('-');
      if (dash == std::string::npos) throw InputError("bad alignment token: " + tok);
      sent.emplace_back(std::stoi(tok.substr(0, dash)), std::stoi(tok.substr(dash + 1)));
    }
    out.push_back(std::move(sent));
  }
  return out;
}

void write_inventory(const std::string& path, const NGramInventory& inv) {
  std::ostringstream os;
  os << "#meta\t" << inv.n_max() << '\t' << inv.min_count() << '\t' << inv.top_m() << '\n';
  for (const auto& key : inv.sorted_keys()) os << key << '\t' << inv.find_key(key)->freq << '\n';
  write_text(path, os.str());
}

NGramInventory read_inventory(const std::string& path, const Vocabulary& vocab, int lang) {
  auto lines = read_lines(path);
  if (lines.empty() || lines[0].rfind("#meta\t", 0) != 0)
    throw InputError("bad inventory header in " + path);
  auto meta = split_char(lines[0], '\t');
  if (meta.size() != 4) throw InputError("bad inventory header in " + path);
  NGramInventory inv(std::stoi(meta[1]), std::stoll(meta[2]), std::stoi(meta[3]), lang);
  for (size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto parts = split_char(lines[i], '\t');
    if (parts.size() != 2) throw InputError("bad inventory line: " + lines[i]);
    NGram g;
    g.ids = ngram_ids_from_key(parts[0], vocab);
    g.lang = lang;
    g.freq = std::stoll(parts[1]);
    inv.insert(std::move(g), vocab);
  }
  return inv;
}

}  // namespace cmlm::textpipe
