#include <cmath>
#include <filesystem>
#include <set>

#include "cmlm/embed.hpp"
#include "doctest.h"

using namespace cmlm;
using namespace cmlm::embed;
using textpipe::BpeSegmenter;
using textpipe::MergeTable;
using textpipe::NGramInventory;
using textpipe::Sentence;
using textpipe::TokenizedSentence;
using textpipe::Vocabulary;

namespace {

struct ToyText {
  Vocabulary vocab;
  std::vector<TokenizedSentence> tok;
};

ToyText tokenize(const std::vector<std::string>& lines) {
  std::vector<Sentence> corpus;
  for (const auto& line : lines) corpus.push_back(split_ws(line));
  BpeSegmenter seg{MergeTable{}};
  // single-character "words" keep tokenization trivial in these fixtures
  ToyText out;
  out.vocab = Vocabulary::build(textpipe::count_tokens({&corpus}, seg));
  for (const auto& s : corpus) out.tok.push_back(textpipe::apply_bpe(s, seg, out.vocab));
  return out;
}

}  // namespace

TEST_CASE("augmentation with an empty inventory leaves the corpus unchanged") {
  auto t = tokenize({"a b c", "c b"});
  NGramInventory empty(3, 1, 10, 0);
  const auto units = augment_corpus_with_ngrams(t.tok, t.vocab, empty);
  REQUIRE(units.size() == 2);
  CHECK(units[0] == std::vector<std::string>{"a", "b", "c"});
  CHECK(units[1] == std::vector<std::string>{"c", "b"});
}

TEST_CASE("augmentation picks the leftmost longest inventory match") {
  auto t = tokenize({"a b c"});
  NGramInventory inv(2, 1, 10, 0);
  inv.insert({{t.vocab.id("a"), t.vocab.id("b")}, 0, 3}, t.vocab);
  inv.insert({{t.vocab.id("b"), t.vocab.id("c")}, 0, 3}, t.vocab);
  const auto units = augment_corpus_with_ngrams(t.tok, t.vocab, inv);
  const std::string ab = std::string("a") + textpipe::kJoiner + "b";
  CHECK(units[0] == std::vector<std::string>{ab, "c"});
}

TEST_CASE("every augmented unit is a single token or an inventory member") {
  // 100-sentence toy corpus, membership checked exhaustively
  std::vector<std::string> lines;
  Rng rng(5);
  const std::vector<std::string> toks = {"a", "b", "c", "d", "e"};
  for (int i = 0; i < 100; ++i) {
    std::string line;
    const int len = 3 + static_cast<int>(rng.next_int(6));
    for (int j = 0; j < len; ++j) {
      if (j) line += ' ';
      line += toks[static_cast<size_t>(rng.next_int(5))];
    }
    lines.push_back(line);
  }
  auto t = tokenize(lines);
  NGramInventory inv(3, 1, 10, 0);
  inv.insert({{t.vocab.id("a"), t.vocab.id("b")}, 0, 3}, t.vocab);
  inv.insert({{t.vocab.id("c"), t.vocab.id("d"), t.vocab.id("e")}, 0, 3}, t.vocab);
  inv.insert({{t.vocab.id("e"), t.vocab.id("a")}, 0, 3}, t.vocab);

  std::set<std::string> singles(toks.begin(), toks.end());
  for (const auto& sent : augment_corpus_with_ngrams(t.tok, t.vocab, inv))
    for (const auto& unit : sent) {
      const bool is_single = singles.count(unit) > 0;
      const bool is_member = inv.find_key(unit) != nullptr;
      CHECK((is_single || is_member));
    }
}

TEST_CASE("per-pair objective gradient matches central differences") {
  // 3-unit toy model at double precision
  Rng rng(31);
  const int dim = 6;
  std::vector<double> u(dim), v(dim), z1(dim), z2(dim);
  for (auto* vec : {&u, &v, &z1, &z2})
    for (auto& x : *vec) x = rng.next_double() * 2.0 - 1.0;

  std::vector<const double*> negs{z1.data(), z2.data()};
  std::vector<double> gu(dim), gv(dim), gz1(dim), gz2(dim);
  std::vector<double*> gnegs{gz1.data(), gz2.data()};
  sgns_pair_grad(u.data(), v.data(), negs, dim, gu.data(), gv.data(), gnegs);

  const double h = 1e-6;
  auto check_vec = [&](std::vector<double>& vec, const std::vector<double>& grad) {
    for (int i = 0; i < dim; ++i) {
      const double keep = vec[static_cast<size_t>(i)];
      vec[static_cast<size_t>(i)] = keep + h;
      const double fp = sgns_pair_loss(u.data(), v.data(), negs, dim);
      vec[static_cast<size_t>(i)] = keep - h;
      const double fm = sgns_pair_loss(u.data(), v.data(), negs, dim);
      vec[static_cast<size_t>(i)] = keep;
      const double num = (fp - fm) / (2 * h);
      const double rel = std::abs(num - grad[static_cast<size_t>(i)]) /
                         std::max({1e-8, std::abs(num), std::abs(grad[static_cast<size_t>(i)])});
      CHECK(rel <= 1e-4);
    }
  };
  check_vec(u, gu);
  check_vec(v, gv);
  check_vec(z1, gz1);
  check_vec(z2, gz2);
}

TEST_CASE("sgns training is deterministic in single-worker mode") {
  std::vector<std::vector<std::string>> corpus;
  Rng rng(77);
  const std::vector<std::string> toks = {"p", "q", "r", "s", "t", "u"};
  for (int i = 0; i < 150; ++i) {
    std::vector<std::string> sent;
    for (int j = 0; j < 8; ++j) sent.push_back(toks[static_cast<size_t>(rng.next_int(6))]);
    corpus.push_back(sent);
  }
  SgnsConfig cfg;
  cfg.dim = 16;
  cfg.epochs = 2;
  cfg.seed = 5;
  cfg.subsample = 0.0;
  const auto a = train_sgns(corpus, cfg, "x");
  const auto b = train_sgns(corpus, cfg, "x");
  CHECK(a.matrix.data == b.matrix.data);
  CHECK(a.epoch_loss == b.epoch_loss);
}

TEST_CASE("co-occurring units end up closer than never co-occurring ones") {
  // p and q always co-occur, r never appears near p
  std::vector<std::vector<std::string>> corpus;
  for (int i = 0; i < 300; ++i) {
    corpus.push_back({"p", "q", "p", "q"});
    corpus.push_back({"r", "s", "r", "s"});
  }
  SgnsConfig cfg;
  cfg.dim = 16;
  cfg.window = 2;
  cfg.epochs = 3;
  cfg.seed = 9;
  cfg.subsample = 0.0;
  const auto res = train_sgns(corpus, cfg, "x");
  const auto& m = res.matrix;
  auto cos = [&](const std::string& a, const std::string& b) {
    const float* ra = m.row(m.find(a));
    const float* rb = m.row(m.find(b));
    double dot = 0, na = 0, nb = 0;
    for (int i = 0; i < m.dim; ++i) {
      dot += static_cast<double>(ra[i]) * rb[i];
      na += static_cast<double>(ra[i]) * ra[i];
      nb += static_cast<double>(rb[i]) * rb[i];
    }
    return dot / std::sqrt(na * nb);
  };
  CHECK(cos("p", "q") > cos("p", "r"));

  for (int i = 0; i < m.size(); ++i) {
    double norm = 0;
    for (int j = 0; j < m.dim; ++j) norm += static_cast<double>(m.row(i)[j]) * m.row(i)[j];
    CHECK(std::isfinite(norm));
    CHECK(norm > 0.0);
  }

  // epoch-mean objective does not increase across the first three epochs
  REQUIRE(res.epoch_loss.size() == 3);
  CHECK(res.epoch_loss[1] <= res.epoch_loss[0]);
  CHECK(res.epoch_loss[2] <= res.epoch_loss[1]);
}

TEST_CASE("sgns config validation") {
  SgnsConfig cfg;
  cfg.dim = 4;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = SgnsConfig{};
  cfg.negatives = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS(train_sgns({}, SgnsConfig{}, "x"), InputError);
}

TEST_CASE("embedding file format round-trips") {
  namespace fs = std::filesystem;
  std::vector<std::vector<std::string>> corpus = {{"a", "b", "a"}, {"b", "c"}};
  SgnsConfig cfg;
  cfg.dim = 8;
  cfg.epochs = 1;
  cfg.subsample = 0.0;
  const auto res = train_sgns(corpus, cfg, "x");
  const auto path = (fs::temp_directory_path() / "cmlm_emb_test.vec").string();
  write_embeddings(path, res.matrix);

  const auto lines = read_lines(path);
  REQUIRE(!lines.empty());
  CHECK(lines[0] == std::to_string(res.matrix.size()) + " 8");

  const auto back = read_embeddings(path, "x");
  CHECK(back.units == res.matrix.units);
  for (int i = 0; i < back.size(); ++i)
    for (int j = 0; j < 8; ++j)
      CHECK(back.row(i)[j] == doctest::Approx(res.matrix.row(i)[j]).epsilon(2e-6));
  fs::remove(path);
}
