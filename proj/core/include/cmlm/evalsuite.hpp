#pragma once

#include <set>
#include <string>
#include <vector>

#include "cmlm/encoder.hpp"
#include "cmlm/objective.hpp"
#include "cmlm/textpipe.hpp"

namespace cmlm::evalsuite {

// Word-level links, 1-indexed.
struct AlignmentSet {
  std::set<std::pair<int, int>> links;
};

struct AerReport {
  double precision = 0.0;
  double recall = 0.0;
  double f_measure = 0.0;
  double aer = 0.0;
};

// P, R, harmonic F, and AER = 1 - 2|A∩S| / (|A| + |S|) against sure links.
AerReport aer_metrics(const AlignmentSet& pred, const AlignmentSet& gold);

// Words kept for scoring: in-vocabulary and not torn apart by BPE.
std::vector<bool> retained_words(const textpipe::Sentence& words,
                                 const textpipe::BpeSegmenter& bpe,
                                 const textpipe::Vocabulary& vocab);

// Encode both sentences separately, pool token states to word level by
// averaging, and link every retained source word to its argmax-cosine
// retained target word.
AlignmentSet align_words(encoder::EncoderState<float>& st, const textpipe::Sentence& sent_x,
                         const textpipe::Sentence& sent_y, const textpipe::BpeSegmenter& bpe,
                         const textpipe::Vocabulary& vocab);

// Context-unaware baseline: same protocol but cosine over static mapped
// embeddings instead of encoder states.
AlignmentSet align_words_static(const objective::StaticTokenEmbeddings& statics,
                                const textpipe::Sentence& sent_x, const textpipe::Sentence& sent_y,
                                const textpipe::BpeSegmenter& bpe,
                                const textpipe::Vocabulary& vocab);

// Drops gold links touching words excluded on either side.
AlignmentSet filter_gold(const std::vector<std::pair<int, int>>& gold,
                         const std::vector<bool>& retained_x, const std::vector<bool>& retained_y);

struct OrderPrecision {
  int order = 0;
  int considered = 0;  // sources whose tokens are all whole gold words
  int hits = 0;
  double precision = 0.0;
};

// Fraction of table sources whose top at_k candidates contain the gold
// image (the word-by-word bijection applied to whole-word sources).
std::vector<OrderPrecision> table_precision(const xmap::TranslationTable& table,
                                            const textpipe::GoldLexicon& gold, int at_k);

struct TopWordsPrecision {
  int considered = 0;
  int hits = 0;
  double precision = 0.0;
};

// precision@k restricted to the top_n most frequent base words (by corpus
// word count); words missing from the table count as misses.
TopWordsPrecision top_words_precision(const xmap::TranslationTable& table,
                                      const textpipe::GoldLexicon& gold,
                                      const std::vector<std::pair<std::string, int64_t>>& word_freqs,
                                      int top_n, int at_k);

}  // namespace cmlm::evalsuite
