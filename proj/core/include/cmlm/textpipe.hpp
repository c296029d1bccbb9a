#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "cmlm/errors.hpp"
#include "cmlm/rng.hpp"

namespace cmlm::textpipe {

using Sentence = std::vector<std::string>;

// Joiner between tokens in an n-gram surface key (U+2581).
inline constexpr const char* kJoiner = "\xe2\x96\x81";
// Suffix on non-final BPE sub-tokens.
inline constexpr const char* kBpeCont = "@@";

// ---------------------------------------------------------------- cipher --

struct CipherSpec {
  int base_vocab_size = 1000;
  double zipf_exponent = 1.0;
  int markov_order = 1;
  double swap_prob = 0.1;
  std::vector<std::string> shared_anchor_tokens;  // empty -> default digit/punct set
  uint64_t seed = 42;
  int num_sentences = 20000;
  int sentence_min = 8;
  int sentence_max = 24;
  int num_eval_pairs = 500;

  void validate() const;
  std::vector<std::string> anchors_or_default() const;
};

struct GoldLexicon {
  std::map<std::string, std::string> base_to_cipher;  // bijection
  std::map<std::string, std::string> cipher_to_base;
  std::set<std::string> anchors;  // map to themselves

  const std::string* to_cipher(const std::string& w) const {
    auto it = base_to_cipher.find(w);
    return it == base_to_cipher.end() ? nullptr : &it->second;
  }
  const std::string* to_base(const std::string& w) const {
    auto it = cipher_to_base.find(w);
    return it == cipher_to_base.end() ? nullptr : &it->second;
  }
};

struct ParallelPair {
  Sentence x;
  Sentence y;
  std::vector<std::pair<int, int>> align;  // 1-indexed (i in x, j in y)
};

struct CipherCorpus {
  std::vector<Sentence> corpus_x;
  std::vector<Sentence> corpus_y;
  GoldLexicon gold;
  std::vector<ParallelPair> parallel_eval;
};

CipherCorpus gen_cipher_corpus(const CipherSpec& spec);

// ------------------------------------------------------------------- bpe --

struct MergeTable {
  std::vector<std::pair<std::string, std::string>> rules;  // learning order
};

// Greedy pair-merge learning over word counts of all corpora concatenated;
// ties broken by lexicographic order of the (left, right) pair.
MergeTable learn_bpe(const std::vector<const std::vector<Sentence>*>& corpora, int num_merges);

// Applies a merge table to single words, caching results. Sub-tokens other
// than the word-final one carry the "@@" suffix.
class BpeSegmenter {
 public:
  explicit BpeSegmenter(const MergeTable& merges);
  std::vector<std::string> split_word(const std::string& word) const;

 private:
  std::unordered_map<std::string, int> rule_rank_;  // "l\x1fr" -> rank
  mutable std::unordered_map<std::string, std::vector<std::string>> cache_;
};

// ------------------------------------------------------------ vocabulary --

struct Vocabulary {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kMask = 2;
  static constexpr int kBos = 3;
  static constexpr int kEos = 4;
  static constexpr int kNumSpecial = 5;

  std::vector<std::string> id_to_token;  // includes the specials
  std::unordered_map<std::string, int> token_to_id;
  std::vector<int64_t> freq;
  std::vector<std::string> languages = {"x", "y"};

  int size() const { return static_cast<int>(id_to_token.size()); }
  bool is_special(int id) const { return id < kNumSpecial; }
  int id(const std::string& tok) const {
    auto it = token_to_id.find(tok);
    return it == token_to_id.end() ? kUnk : it->second;
  }
  const std::string& token(int id) const { return id_to_token.at(id); }
  int lang_id(const std::string& name) const;

  // Tokens sorted by (frequency desc, surface asc) after the specials.
  static Vocabulary build(const std::unordered_map<std::string, int64_t>& counts);
};

uint64_t vocab_hash(const Vocabulary& v);

struct TokenizedSentence {
  std::vector<int> ids;
  std::vector<int> word_index;  // source word of each token
};

TokenizedSentence apply_bpe(const Sentence& words, const BpeSegmenter& bpe, const Vocabulary& vocab);

// Counts BPE tokens of already-split corpora; used to build the shared vocab.
std::unordered_map<std::string, int64_t> count_tokens(
    const std::vector<const std::vector<Sentence>*>& corpora, const BpeSegmenter& bpe);

// ---------------------------------------------------------------- ngrams --

struct NGram {
  std::vector<int> ids;
  int lang = 0;
  int64_t freq = 0;
};

std::string ngram_key(const std::vector<int>& ids, const Vocabulary& vocab);
std::vector<int> ngram_ids_from_key(const std::string& key, const Vocabulary& vocab);

class NGramInventory {
 public:
  NGramInventory() = default;
  NGramInventory(int n_max, int64_t min_count, int top_m, int lang)
      : n_max_(n_max), min_count_(min_count), top_m_(top_m), lang_(lang) {}

  void insert(NGram g, const Vocabulary& vocab);
  bool contains_ids(const std::vector<int>& ids, size_t pos, int n) const;
  // Longest inventory match starting at pos (0 if none), capped by limit.
  int longest_match(const std::vector<int>& ids, size_t pos, int limit) const;
  const NGram* find_key(const std::string& key) const;

  int n_max() const { return n_max_; }
  int64_t min_count() const { return min_count_; }
  int top_m() const { return top_m_; }
  int lang() const { return lang_; }
  size_t size() const { return by_key_.size(); }
  // Keys in deterministic order (frequency desc, key asc), all orders mixed.
  std::vector<std::string> sorted_keys() const;

 private:
  static std::string pack(const std::vector<int>& ids, size_t pos, int n);

  int n_max_ = 3;
  int64_t min_count_ = 5;
  int top_m_ = 2000;
  int lang_ = 0;
  std::map<std::string, NGram> by_key_;
  std::unordered_set<std::string> packed_;
};

NGramInventory extract_ngrams(const std::vector<TokenizedSentence>& corpus, const Vocabulary& vocab,
                              int n_max, int64_t min_count, int top_m, int lang);

// ------------------------------------------------------------- file I/O --

void write_corpus(const std::string& path, const std::vector<Sentence>& corpus);
std::vector<Sentence> read_corpus(const std::string& path);

void write_merges(const std::string& path, const MergeTable& merges);
MergeTable read_merges(const std::string& path);

void write_vocab(const std::string& path, const Vocabulary& vocab);
Vocabulary read_vocab(const std::string& path);

void write_lexicon(const std::string& path, const GoldLexicon& gold);
GoldLexicon read_lexicon(const std::string& path);

// One line per pair, space-separated "i-j", 1-indexed.
void write_alignments(const std::string& path, const std::vector<std::vector<std::pair<int, int>>>& aligns);
std::vector<std::vector<std::pair<int, int>>> read_alignments(const std::string& path);

void write_inventory(const std::string& path, const NGramInventory& inv);
NGramInventory read_inventory(const std::string& path, const Vocabulary& vocab, int lang);

}  // namespace cmlm::textpipe
