#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "cmlm/textpipe.hpp"
#include "doctest.h"

using namespace cmlm;
using namespace cmlm::textpipe;

namespace {

CipherSpec small_spec() {
  CipherSpec s;
  s.base_vocab_size = 80;
  s.num_sentences = 400;
  s.sentence_min = 4;
  s.sentence_max = 10;
  s.num_eval_pairs = 40;
  s.seed = 99;
  return s;
}

std::vector<Sentence> sentences_from(const std::vector<std::string>& lines) {
  std::vector<Sentence> out;
  for (const auto& line : lines) out.push_back(split_ws(line));
  return out;
}

// Independent greedy-BPE reference: ordered map counting, explicit scan for
// the best pair.
std::vector<std::pair<std::string, std::string>> reference_bpe(
    const std::map<std::string, int64_t>& word_counts, int num_merges) {
  auto chars = [](const std::string& w) {
    std::vector<std::string> out;
    for (char c : w) out.emplace_back(1, c);
    return out;
  };
  std::map<std::string, std::vector<std::string>> words;
  for (const auto& [w, c] : word_counts) words[w] = chars(w);
  std::vector<std::pair<std::string, std::string>> rules;
  for (int m = 0; m < num_merges; ++m) {
    std::map<std::pair<std::string, std::string>, int64_t> counts;
    for (const auto& [w, syms] : words)
      for (size_t i = 0; i + 1 < syms.size(); ++i)
        counts[{syms[i], syms[i + 1]}] += word_counts.at(w);
    if (counts.empty()) break;
    std::pair<std::string, std::string> best;
    int64_t best_count = -1;
    for (const auto& [pair, c] : counts)
      if (c > best_count) {  // map iterates in lexicographic order
        best = pair;
        best_count = c;
      }
    rules.push_back(best);
    for (auto& [w, syms] : words) {
      std::vector<std::string> merged;
      for (size_t i = 0; i < syms.size(); ++i) {
        if (i + 1 < syms.size() && syms[i] == best.first && syms[i + 1] == best.second) {
          merged.push_back(syms[i] + syms[i + 1]);
          ++i;
        } else {
          merged.push_back(syms[i]);
        }
      }
      syms = merged;
    }
  }
  return rules;
}

}  // namespace

TEST_CASE("cipher corpus is deterministic under a fixed seed") {
  const auto a = gen_cipher_corpus(small_spec());
  const auto b = gen_cipher_corpus(small_spec());
  CHECK(a.corpus_x == b.corpus_x);
  CHECK(a.corpus_y == b.corpus_y);
  CHECK(a.gold.base_to_cipher == b.gold.base_to_cipher);
  REQUIRE(a.parallel_eval.size() == b.parallel_eval.size());
  for (size_t i = 0; i < a.parallel_eval.size(); ++i) {
    CHECK(a.parallel_eval[i].x == b.parallel_eval[i].x);
    CHECK(a.parallel_eval[i].y == b.parallel_eval[i].y);
    CHECK(a.parallel_eval[i].align == b.parallel_eval[i].align);
  }
}

TEST_CASE("swap_prob zero gives identity alignments and exact word images") {
  auto spec = small_spec();
  spec.swap_prob = 0.0;
  const auto c = gen_cipher_corpus(spec);
  for (const auto& p : c.parallel_eval) {
    REQUIRE(p.x.size() == p.y.size());
    for (size_t i = 0; i < p.align.size(); ++i) {
      CHECK(p.align[i].first == static_cast<int>(i) + 1);
      CHECK(p.align[i].second == static_cast<int>(i) + 1);
    }
    // forward through the lexicon and back
    for (size_t i = 0; i < p.x.size(); ++i) {
      REQUIRE(c.gold.to_cipher(p.x[i]) != nullptr);
      CHECK(*c.gold.to_cipher(p.x[i]) == p.y[i]);
      CHECK(*c.gold.to_base(p.y[i]) == p.x[i]);
    }
  }
}

TEST_CASE("lexicon is a bijection and anchors map to themselves") {
  const auto c = gen_cipher_corpus(small_spec());
  std::set<std::string> images;
  for (const auto& [b, y] : c.gold.base_to_cipher) CHECK(images.insert(y).second);
  CHECK(c.gold.base_to_cipher.size() == static_cast<size_t>(small_spec().base_vocab_size));
  for (const auto& a : c.gold.anchors) CHECK(*c.gold.to_cipher(a) == a);
}

TEST_CASE("gold alignments are permutations consistent with the pair") {
  auto spec = small_spec();
  spec.swap_prob = 0.35;
  const auto c = gen_cipher_corpus(spec);
  for (const auto& p : c.parallel_eval) {
    REQUIRE(p.align.size() == p.x.size());
    std::set<int> seen_i, seen_j;
    for (const auto& [i, j] : p.align) {
      CHECK(seen_i.insert(i).second);
      CHECK(seen_j.insert(j).second);
      CHECK(*c.gold.to_cipher(p.x[static_cast<size_t>(i - 1)]) == p.y[static_cast<size_t>(j - 1)]);
    }
  }
}

TEST_CASE("invalid cipher specs are rejected") {
  auto s = small_spec();
  s.swap_prob = 1.5;
  CHECK_THROWS_AS(gen_cipher_corpus(s), ConfigError);
  s = small_spec();
  s.base_vocab_size = 1;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = small_spec();
  s.sentence_min = 9;
  s.sentence_max = 3;
  CHECK_THROWS_AS(s.validate(), ConfigError);
}

TEST_CASE("rank-frequency slope stays near the Zipf exponent") {
  CipherSpec spec;
  spec.base_vocab_size = 1000;
  spec.zipf_exponent = 1.0;
  spec.num_sentences = 50000;
  spec.sentence_min = 8;
  spec.sentence_max = 24;
  spec.num_eval_pairs = 0;
  spec.seed = 4242;
  const auto c = gen_cipher_corpus(spec);

  std::map<std::string, int64_t> counts;
  for (const auto& s : c.corpus_x)
    for (const auto& w : s) ++counts[w];
  std::vector<int64_t> freqs;
  for (const auto& [w, f] : counts) freqs.push_back(f);
  std::sort(freqs.rbegin(), freqs.rend());
  REQUIRE(freqs.size() >= 300);

  // independent least-squares fit of log f against log rank, ranks 10..300
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (int rank = 10; rank <= 300; ++rank) {
    const double x = std::log(static_cast<double>(rank));
    const double y = std::log(static_cast<double>(freqs[static_cast<size_t>(rank - 1)]));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++n;
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  CHECK(slope >= -1.2);
  CHECK(slope <= -0.8);
}

TEST_CASE("learn_bpe merges the most frequent pair first") {
  const auto corpus = sentences_from({"aa aa ab"});
  const auto t = learn_bpe({&corpus}, 1);
  REQUIRE(t.rules.size() == 1);
  CHECK(t.rules[0] == std::pair<std::string, std::string>{"a", "a"});
}

TEST_CASE("zero merges splits words into characters with continuation markers") {
  const auto corpus = sentences_from({"abc de"});
  const auto t = learn_bpe({&corpus}, 0);
  CHECK(t.rules.empty());
  BpeSegmenter seg(t);
  CHECK(seg.split_word("abc") == std::vector<std::string>{"a@@", "b@@", "c"});
  CHECK(seg.split_word("de") == std::vector<std::string>{"d@@", "e"});
}

TEST_CASE("learn_bpe matches an independent greedy reference on a toy corpus") {
  const auto corpus = sentences_from({"banana bandana cabana", "anagram banana panama anna",
                                      "banana cabana bandana anna", "naan naan banana panama",
                                      "grama anagram naan drama", "drama grama anna cabana"});
  std::map<std::string, int64_t> counts;
  for (const auto& s : corpus)
    for (const auto& w : s) ++counts[w];
  const auto expected = reference_bpe(counts, 10);
  const auto got = learn_bpe({&corpus}, 10);
  REQUIRE(got.rules.size() == expected.size());
  for (size_t i = 0; i < expected.size(); ++i) CHECK(got.rules[i] == expected[i]);
}

TEST_CASE("learn_bpe rejects empty corpora") {
  const std::vector<Sentence> empty;
  CHECK_THROWS_AS(learn_bpe({&empty}, 5), InputError);
}

TEST_CASE("apply_bpe follows the merge rules by hand") {
  MergeTable t;
  t.rules = {{"a", "a"}};
  BpeSegmenter seg(t);
  CHECK(seg.split_word("aab") == std::vector<std::string>{"aa@@", "b"});
  CHECK(seg.split_word("aab") == std::vector<std::string>{"aa@@", "b"});  // cached path
  MergeTable t2;
  t2.rules = {{"a", "b"}, {"ab", "c"}};
  BpeSegmenter seg2(t2);
  CHECK(seg2.split_word("abc") == std::vector<std::string>{"abc"});  // fully merged, no marker
}

TEST_CASE("BPE round-trip reproduces every corpus word") {
  const auto c = gen_cipher_corpus(small_spec());
  const auto merges = learn_bpe({&c.corpus_x, &c.corpus_y}, 120);
  BpeSegmenter seg(merges);
  for (const auto& corpus : {c.corpus_x, c.corpus_y})
    for (const auto& sent : corpus)
      for (const auto& word : sent) {
        std::string rebuilt;
        for (auto tok : seg.split_word(word)) {
          if (tok.size() >= 2 && tok.compare(tok.size() - 2, 2, kBpeCont) == 0)
            tok = tok.substr(0, tok.size() - 2);
          rebuilt += tok;
        }
        CHECK(rebuilt == word);
      }
}

TEST_CASE("vocabulary has dense ids, fixed specials and a unique mask id") {
  const auto corpus = sentences_from({"b a a c b b", "c b"});
  BpeSegmenter seg(MergeTable{});
  auto counts = count_tokens({&corpus}, seg);
  const auto v = Vocabulary::build(counts);
  CHECK(v.id("<pad>") == Vocabulary::kPad);
  CHECK(v.id("<unk>") == Vocabulary::kUnk);
  CHECK(v.id("<mask>") == Vocabulary::kMask);
  CHECK(v.id("<bos>") == Vocabulary::kBos);
  CHECK(v.id("<eos>") == Vocabulary::kEos);
  // frequency order after the specials: b(4) > a(2), c(2) tie -> lexicographic
  CHECK(v.token(5) == "b");
  CHECK(v.token(6) == "a");
  CHECK(v.token(7) == "c");
  CHECK(v.id("zzz") == Vocabulary::kUnk);
  std::set<std::string> unique(v.id_to_token.begin(), v.id_to_token.end());
  CHECK(unique.size() == v.id_to_token.size());
}

TEST_CASE("apply_bpe records word indices and falls back to UNK") {
  const auto corpus = sentences_from({"ab ab ba"});
  MergeTable t;
  t.rules = {{"a", "b"}};
  BpeSegmenter seg(t);
  auto vocab = Vocabulary::build(count_tokens({&corpus}, seg));
  const auto ts = apply_bpe({"ab", "ba", "xy"}, seg, vocab);
  REQUIRE(ts.ids.size() == 5);  // ab -> 1 tok, ba -> 2 toks, xy -> 2 UNKs
  CHECK(ts.word_index == std::vector<int>{0, 1, 1, 2, 2});
  CHECK(ts.ids[3] == Vocabulary::kUnk);
  CHECK(ts.ids[4] == Vocabulary::kUnk);
  CHECK(apply_bpe({"ab", "ba", "xy"}, seg, vocab).ids == ts.ids);
}

TEST_CASE("extract_ngrams counts windows within sentences") {
  const auto corpus = sentences_from({"a b a b"});
  BpeSegmenter seg(MergeTable{});
  auto vocab = Vocabulary::build(count_tokens({&corpus}, seg));
  std::vector<TokenizedSentence> tok;
  for (const auto& s : corpus) tok.push_back(apply_bpe(s, seg, vocab));

  const auto inv = extract_ngrams(tok, vocab, 2, 1, 100, 0);
  const std::string ab = std::string("a") + kJoiner + "b";
  const std::string ba = std::string("b") + kJoiner + "a";
  REQUIRE(inv.find_key(ab) != nullptr);
  CHECK(inv.find_key(ab)->freq == 2);
  REQUIRE(inv.find_key(ba) != nullptr);
  CHECK(inv.find_key(ba)->freq == 1);
  CHECK(inv.find_key("a")->freq == 2);

  CHECK(extract_ngrams({}, vocab, 2, 1, 100, 0).size() == 0);
  CHECK(extract_ngrams(tok, vocab, 2, 50, 100, 0).size() == 0);
}

TEST_CASE("inventory frequencies match a brute-force recount") {
  const auto c = gen_cipher_corpus(small_spec());
  const auto merges = learn_bpe({&c.corpus_x, &c.corpus_y}, 80);
  BpeSegmenter seg(merges);
  auto vocab = Vocabulary::build(count_tokens({&c.corpus_x, &c.corpus_y}, seg));
  std::vector<TokenizedSentence> tok;
  for (const auto& s : c.corpus_x) tok.push_back(apply_bpe(s, seg, vocab));
  const auto inv = extract_ngrams(tok, vocab, 3, 2, 200, 0);
  REQUIRE(inv.size() > 0);

  for (const auto& key : inv.sorted_keys()) {
    const auto* g = inv.find_key(key);
    int64_t count = 0;
    for (const auto& s : tok)
      for (size_t i = 0; i + g->ids.size() <= s.ids.size(); ++i) {
        bool match = true;
        for (size_t t = 0; t < g->ids.size(); ++t)
          if (s.ids[i + t] != g->ids[t]) {
            match = false;
            break;
          }
        if (match) ++count;
      }
    CHECK(count == g->freq);
  }
}

TEST_CASE("top_m truncation keeps the most frequent entries per order") {
  const auto c = gen_cipher_corpus(small_spec());
  const auto merges = learn_bpe({&c.corpus_x}, 60);
  BpeSegmenter seg(merges);
  auto vocab = Vocabulary::build(count_tokens({&c.corpus_x}, seg));
  std::vector<TokenizedSentence> tok;
  for (const auto& s : c.corpus_x) tok.push_back(apply_bpe(s, seg, vocab));
  const auto full = extract_ngrams(tok, vocab, 2, 1, 1000000, 0);
  const auto cut = extract_ngrams(tok, vocab, 2, 1, 10, 0);
  // every kept entry's frequency is >= the best dropped frequency per order
  std::map<int, int64_t> min_kept;
  for (const auto& key : cut.sorted_keys()) {
    const auto* g = cut.find_key(key);
    const int order = static_cast<int>(g->ids.size());
    auto it = min_kept.find(order);
    min_kept[order] = it == min_kept.end() ? g->freq : std::min(it->second, g->freq);
  }
  for (const auto& key : full.sorted_keys()) {
    const auto* g = full.find_key(key);
    if (cut.find_key(key)) continue;
    const int order = static_cast<int>(g->ids.size());
    if (min_kept.count(order)) CHECK(g->freq <= min_kept[order]);
  }
}

TEST_CASE("text artifacts round-trip through their file formats") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "cmlm_textpipe_io";
  fs::create_directories(dir);
  const auto c = gen_cipher_corpus(small_spec());

  write_corpus((dir / "c.txt").string(), c.corpus_x);
  CHECK(read_corpus((dir / "c.txt").string()) == c.corpus_x);

  const auto merges = learn_bpe({&c.corpus_x, &c.corpus_y}, 50);
  write_merges((dir / "m.txt").string(), merges);
  CHECK(read_merges((dir / "m.txt").string()).rules == merges.rules);

  BpeSegmenter seg(merges);
  auto vocab = Vocabulary::build(count_tokens({&c.corpus_x, &c.corpus_y}, seg));
  write_vocab((dir / "v.txt").string(), vocab);
  const auto v2 = read_vocab((dir / "v.txt").string());
  CHECK(v2.id_to_token == vocab.id_to_token);
  CHECK(v2.freq == vocab.freq);
  CHECK(vocab_hash(v2) == vocab_hash(vocab));

  write_lexicon((dir / "l.tsv").string(), c.gold);
  const auto g2 = read_lexicon((dir / "l.tsv").string());
  CHECK(g2.base_to_cipher == c.gold.base_to_cipher);
  CHECK(g2.anchors == c.gold.anchors);

  std::vector<std::vector<std::pair<int, int>>> aligns;
  for (const auto& p : c.parallel_eval) aligns.push_back(p.align);
  write_alignments((dir / "a.txt").string(), aligns);
  CHECK(read_alignments((dir / "a.txt").string()) == aligns);

  std::vector<TokenizedSentence> tok;
  for (const auto& s : c.corpus_x) tok.push_back(apply_bpe(s, seg, vocab));
  const auto inv = extract_ngrams(tok, vocab, 3, 2, 50, 0);
  write_inventory((dir / "n.tsv").string(), inv);
  const auto inv2 = read_inventory((dir / "n.tsv").string(), vocab, 0);
  CHECK(inv2.size() == inv.size());
  for (const auto& key : inv.sorted_keys()) {
    REQUIRE(inv2.find_key(key) != nullptr);
    CHECK(inv2.find_key(key)->freq == inv.find_key(key)->freq);
    CHECK(inv2.find_key(key)->ids == inv.find_key(key)->ids);
  }
  fs::remove_all(dir);
}
