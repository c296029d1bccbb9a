#include <cmath>
#include <filesystem>

#include "cmlm/xmap.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace cmlm;
using namespace cmlm::xmap;
using testutil::random_orthogonal;

namespace {

embed::EmbeddingMatrix make_matrix(int n, int dim, Rng& rng, const std::string& prefix) {
  embed::EmbeddingMatrix m;
  m.dim = dim;
  for (int i = 0; i < n; ++i) {
    const int id = m.add_unit(prefix + std::to_string(i), 1000 - i);
    for (int j = 0; j < dim; ++j) m.row(id)[j] = static_cast<float>(rng.next_double() * 2 - 1);
  }
  return m;
}

embed::EmbeddingMatrix rotate(const embed::EmbeddingMatrix& src, const std::vector<double>& r,
                              const std::string& prefix) {
  embed::EmbeddingMatrix out;
  out.dim = src.dim;
  for (int i = 0; i < src.size(); ++i) {
    const int id = out.add_unit(prefix + std::to_string(i), src.freq[static_cast<size_t>(i)]);
    for (int j = 0; j < out.dim; ++j) {
      double acc = 0.0;
      for (int k = 0; k < out.dim; ++k)
        acc += static_cast<double>(src.row(i)[k]) * r[static_cast<size_t>(k) * out.dim + j];
      out.row(id)[j] = static_cast<float>(acc);
    }
  }
  return out;
}

double frob(const embed::EmbeddingMatrix& a, const MappingMatrix& w,
            const embed::EmbeddingMatrix& b) {
  double acc = 0.0;
  std::vector<float> mapped(static_cast<size_t>(a.dim));
  for (int i = 0; i < a.size(); ++i) {
    w.apply_row(a.row(i), mapped.data());
    for (int j = 0; j < a.dim; ++j) {
      const double d = static_cast<double>(mapped[static_cast<size_t>(j)]) - b.row(i)[j];
      acc += d * d;
    }
  }
  return std::sqrt(acc);
}

// Brute-force oracle for Eq-1 style scoring, written against the same
// normalized unit rows but with its own neighborhood selection.
double oracle_margin(const UnitSpace& src, int x, const UnitSpace& tgt, int y, int n) {
  auto dot = [&](const double* a, const double* b) {
    double acc = 0;
    for (int i = 0; i < src.dim; ++i) acc += a[i] * b[i];
    return acc;
  };
  auto topn_sum = [&](const double* row, const UnitSpace& space) {
    std::vector<double> all;
    for (int t = 0; t < space.size(); ++t) all.push_back(dot(row, space.row(t)));
    std::sort(all.rbegin(), all.rend());
    double s = 0;
    for (int i = 0; i < std::min<int>(n, static_cast<int>(all.size())); ++i) s += all[i];
    return s;
  };
  const double denom = (topn_sum(src.row(x), tgt) + topn_sum(tgt.row(y), src)) / (2.0 * n);
  return dot(src.row(x), tgt.row(y)) / denom;
}

}  // namespace

TEST_CASE("procrustes recovers a planted rotation from identity pairs") {
  Rng rng(3);
  const int d = 6;
  auto src = make_matrix(40, d, rng, "s");
  l2_normalize_rows(src);
  const auto r = random_orthogonal(d, rng);
  auto tgt = rotate(src, r, "t");

  std::vector<std::pair<int, int>> dict;
  for (int i = 0; i < src.size(); ++i) dict.emplace_back(i, i);
  const auto w = procrustes(src, tgt, dict);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      CHECK(std::abs(w.at(i, j) - r[static_cast<size_t>(i) * d + j]) <= 1e-6);
  CHECK(w.max_orthogonality_error() <= 1e-6);
}

TEST_CASE("procrustes from anchors alone stays orthogonal") {
  Rng rng(5);
  auto src = make_matrix(30, 5, rng, "s");
  auto tgt = make_matrix(30, 5, rng, "t");
  // a handful of shared anchor units
  for (int a = 0; a < 6; ++a) {
    const std::string name = "anchor" + std::to_string(a);
    src.add_unit(name, 10);
    tgt.add_unit(name, 10);
    for (int j = 0; j < 5; ++j) {
      src.row(src.find(name))[j] = static_cast<float>(rng.next_double() - 0.5);
      tgt.row(tgt.find(name))[j] = static_cast<float>(rng.next_double() - 0.5);
    }
  }
  l2_normalize_rows(src);
  l2_normalize_rows(tgt);
  const auto dict = anchor_dictionary(src, tgt);
  CHECK(dict.size() == 6);
  const auto w = procrustes(src, tgt, dict);
  CHECK(w.max_orthogonality_error() <= 1e-6);
}

TEST_CASE("procrustes beats a 10k random-orthogonal search on toy matrices") {
  Rng rng(7);
  const int d = 4;
  auto src = make_matrix(10, d, rng, "s");
  auto tgt = make_matrix(10, d, rng, "t");
  l2_normalize_rows(src);
  l2_normalize_rows(tgt);
  std::vector<std::pair<int, int>> dict;
  for (int i = 0; i < 10; ++i) dict.emplace_back(i, i);
  const auto w = procrustes(src, tgt, dict);
  const double best_fit = frob(src, w, tgt);

  for (int trial = 0; trial < 10000; ++trial) {
    MappingMatrix q;
    q.d = d;
    q.w = random_orthogonal(d, rng, 2);
    CHECK(best_fit <= frob(src, q, tgt) + 1e-9);
  }
}

TEST_CASE("margin scoring evaluates the hand fixture") {
  // cos(x,y)=0.8; NN5(x) cosines {0.8,0.6,0.6,0.6,0.6}; NN5(y) {0.8,0.7x4}
  const int d = 12;
  UnitSpace src, tgt;
  src.dim = tgt.dim = d;
  auto push = [&](UnitSpace& sp, const std::string& key, const std::vector<double>& row) {
    sp.keys.push_back(key);
    sp.rows.insert(sp.rows.end(), row.begin(), row.end());
  };
  auto unit = [&](int axis, double a, int axis2, double b) {
    std::vector<double> r(static_cast<size_t>(d), 0.0);
    r[static_cast<size_t>(axis)] = a;
    r[static_cast<size_t>(axis2)] = b;
    return r;
  };
  const double s = 0.6;  // sqrt(1 - 0.8^2)
  push(src, "x", unit(0, 1.0, 1, 0.0));
  // y = 0.8 e0 + 0.6 e1
  push(tgt, "y", unit(0, 0.8, 1, s));
  // four targets at cosine 0.6 from x
  for (int t = 0; t < 4; ++t) push(tgt, "t" + std::to_string(t), unit(0, 0.6, 2 + t, 0.8));
  // four sources at cosine 0.7 from y: 0.7*y + sqrt(1-0.49)*orth
  for (int t = 0; t < 4; ++t) {
    std::vector<double> r(static_cast<size_t>(d), 0.0);
    r[0] = 0.7 * 0.8;
    r[1] = 0.7 * s;
    r[static_cast<size_t>(6 + t)] = std::sqrt(1.0 - 0.49);
    push(src, "s" + std::to_string(t), r);
  }

  ScorerConfig cfg;
  CHECK(cfg.nn == 5);  // shipped neighborhood size
  const double sim = margin_sim(src, 0, tgt, 0, cfg);
  CHECK(sim == doctest::Approx(0.8 / 0.68).epsilon(1e-9));
  CHECK(sim == doctest::Approx(1.1764705882).epsilon(1e-6));
  CHECK(sim == oracle_margin(src, 0, tgt, 0, 5));
}

TEST_CASE("margin is one when every neighborhood cosine equals cos(x,y)") {
  const int d = 16;
  const double c = 0.55, s = std::sqrt(1 - c * c);
  UnitSpace src, tgt;
  src.dim = tgt.dim = d;
  auto push = [&](UnitSpace& sp, const std::string& key, std::vector<double> row) {
    sp.keys.push_back(key);
    sp.rows.insert(sp.rows.end(), row.begin(), row.end());
  };
  std::vector<double> x(static_cast<size_t>(d), 0.0);
  x[0] = 1.0;
  push(src, "x", x);
  std::vector<double> y(static_cast<size_t>(d), 0.0);
  y[0] = c;
  y[1] = s;
  push(tgt, "y", y);
  for (int t = 0; t < 4; ++t) {
    std::vector<double> r(static_cast<size_t>(d), 0.0);
    r[0] = c;
    r[static_cast<size_t>(2 + t)] = s;
    push(tgt, "t" + std::to_string(t), r);  // cos(x, t) = c
    std::vector<double> q(static_cast<size_t>(d), 0.0);
    for (int j = 0; j < d; ++j) q[static_cast<size_t>(j)] = c * y[static_cast<size_t>(j)];
    q[static_cast<size_t>(7 + t)] = s;
    push(src, "s" + std::to_string(t), q);  // cos(y, q) = c
  }
  ScorerConfig cfg;
  CHECK(margin_sim(src, 0, tgt, 0, cfg) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("degenerate zero-norm vectors score zero") {
  UnitSpace src, tgt;
  src.dim = tgt.dim = 4;
  src.keys = {"x"};
  src.rows = {0, 0, 0, 0};
  tgt.keys = {"y"};
  tgt.rows = {1, 0, 0, 0};
  ScorerConfig cfg;
  CHECK(margin_sim(src, 0, tgt, 0, cfg) == 0.0);
}

TEST_CASE("infer_table equals the exhaustive oracle with k=1 on a toy space") {
  Rng rng(11);
  const int d = 8;
  auto src = make_matrix(3, d, rng, "sx");
  auto tgt = make_matrix(5, d, rng, "ty");
  auto sp_s = make_unit_space(src, src.units, nullptr);
  auto sp_t = make_unit_space(tgt, tgt.units, nullptr);
  ScorerConfig cfg;
  const auto table = infer_table(sp_s, sp_t, 1, cfg, "x2y");
  for (int i = 0; i < sp_s.size(); ++i) {
    double best = -1e300;
    int best_j = -1;
    for (int j = 0; j < sp_t.size(); ++j) {
      const double sim = oracle_margin(sp_s, i, sp_t, j, cfg.nn);
      if (sim > best || (sim == best && sp_t.keys[static_cast<size_t>(j)] <
                                            sp_t.keys[static_cast<size_t>(best_j)])) {
        best = sim;
        best_j = j;
      }
    }
    const auto* cands = table.find(sp_s.keys[static_cast<size_t>(i)]);
    REQUIRE(cands != nullptr);
    REQUIRE(cands->size() == 1);
    CHECK((*cands)[0].tgt == sp_t.keys[static_cast<size_t>(best_j)]);
    CHECK((*cands)[0].sim == best);  // exact float equality against the oracle
    CHECK((*cands)[0].weight == 1.0);
  }
}

TEST_CASE("table candidates are ranked with weights summing to one") {
  Rng rng(13);
  auto src = make_matrix(20, 6, rng, "s");
  auto tgt = make_matrix(30, 6, rng, "t");
  auto sp_s = make_unit_space(src, src.units, nullptr);
  auto sp_t = make_unit_space(tgt, tgt.units, nullptr);
  ScorerConfig cfg;
  const auto table = infer_table(sp_s, sp_t, 4, cfg, "x2y");
  CHECK(table.k == 4);
  for (const auto& s : table.sources) {
    const auto& cands = *table.find(s);
    CHECK(cands.size() <= 4);
    double wsum = 0.0;
    for (size_t c = 0; c < cands.size(); ++c) {
      wsum += cands[c].weight;
      if (c) CHECK(cands[c - 1].sim >= cands[c].sim);
      CHECK(cands[c].weight >= 0.0);
    }
    CHECK(std::abs(wsum - 1.0) <= 1e-9);
  }
}

TEST_CASE("common orthogonal change of basis leaves sims and tables unchanged") {
  Rng rng(17);
  const int d = 6;
  auto src = make_matrix(25, d, rng, "s");
  auto tgt = make_matrix(25, d, rng, "t");
  const auto q = random_orthogonal(d, rng);
  auto src_q = rotate(src, q, "s");
  auto tgt_q = rotate(tgt, q, "t");

  auto sp_s = make_unit_space(src, src.units, nullptr);
  auto sp_t = make_unit_space(tgt, tgt.units, nullptr);
  auto sp_sq = make_unit_space(src_q, src_q.units, nullptr);
  auto sp_tq = make_unit_space(tgt_q, tgt_q.units, nullptr);
  ScorerConfig cfg;
  for (int i = 0; i < sp_s.size(); ++i)
    for (int j = 0; j < sp_t.size(); j += 5)
      CHECK(margin_sim(sp_s, i, sp_t, j, cfg) ==
            doctest::Approx(margin_sim(sp_sq, i, sp_tq, j, cfg)).epsilon(1e-9));

  const auto ta = infer_table(sp_s, sp_t, 3, cfg, "x2y");
  const auto tb = infer_table(sp_sq, sp_tq, 3, cfg, "x2y");
  REQUIRE(ta.sources == tb.sources);
  for (const auto& s : ta.sources) {
    const auto& ca = *ta.find(s);
    const auto& cb = *tb.find(s);
    REQUIRE(ca.size() == cb.size());
    for (size_t c = 0; c < ca.size(); ++c) {
      CHECK(ca[c].tgt == cb[c].tgt);
      CHECK(ca[c].sim == doctest::Approx(cb[c].sim).epsilon(1e-9));
    }
  }
}

TEST_CASE("self-learning with zero rounds is exactly the seeded procrustes") {
  Rng rng(19);
  auto src = make_matrix(40, 5, rng, "u");
  auto tgt = make_matrix(40, 5, rng, "u");  // same names -> all units anchor
  const auto dict = anchor_dictionary(src, tgt);
  SelfLearnConfig cfg;
  cfg.rounds = 0;
  const auto res = self_learning(src, tgt, dict, cfg);

  auto ns = src, nt = tgt;
  l2_normalize_rows(ns);
  l2_normalize_rows(nt);
  const auto w = procrustes(ns, nt, dict);
  CHECK(res.mapping.w == w.w);
  CHECK(res.rounds_run == 0);

  const auto res2 = self_learning(src, tgt, dict, cfg);
  CHECK(res.mapping.w == res2.mapping.w);  // bit-identical replay

  CHECK_THROWS_AS(self_learning(src, tgt, {}, cfg), InputError);
}

TEST_CASE("self-learning recovers a planted rotation beyond the anchors") {
  Rng rng(23);
  const int d = 8;
  auto src = make_matrix(60, d, rng, "w");
  l2_normalize_rows(src);
  const auto r = random_orthogonal(d, rng);
  auto tgt = rotate(src, r, "w");  // shared names, but seed only from 8 anchors
  std::vector<std::pair<int, int>> seed_dict;
  for (int a = 0; a < 8; ++a) seed_dict.emplace_back(a, a);
  SelfLearnConfig cfg;
  cfg.rounds = 3;
  cfg.dict_top_f = 60;
  const auto res = self_learning(src, tgt, seed_dict, cfg);
  CHECK(res.mapping.max_orthogonality_error() <= 1e-6);
  // planted rotation recovered well enough that mutual neighbors align
  CHECK(res.final_dict.size() >= 50);
  size_t correct = 0;
  for (const auto& [i, j] : res.final_dict) correct += (i == j);
  CHECK(static_cast<double>(correct) / res.final_dict.size() >= 0.9);
}

TEST_CASE("mapping and table files round-trip") {
  namespace fs = std::filesystem;
  Rng rng(29);
  MappingMatrix m;
  m.d = 4;
  m.w = random_orthogonal(4, rng);
  const auto dir = fs::temp_directory_path() / "cmlm_xmap_io";
  fs::create_directories(dir);
  write_mapping((dir / "w.txt").string(), m);
  const auto m2 = read_mapping((dir / "w.txt").string());
  CHECK(m2.d == 4);
  CHECK(m2.w == m.w);

  auto src = make_matrix(6, 4, rng, "s");
  auto tgt = make_matrix(9, 4, rng, "t");
  auto sp_s = make_unit_space(src, src.units, nullptr);
  auto sp_t = make_unit_space(tgt, tgt.units, nullptr);
  const auto table = infer_table(sp_s, sp_t, 2, ScorerConfig{}, "x2y");
  write_table((dir / "t.tsv").string(), table);
  const auto t2 = read_table((dir / "t.tsv").string(), "x2y");
  CHECK(t2.sources == table.sources);
  CHECK(t2.k == 2);
  for (const auto& s : table.sources) {
    const auto& ca = *table.find(s);
    const auto& cb = *t2.find(s);
    REQUIRE(ca.size() == cb.size());
    for (size_t c = 0; c < ca.size(); ++c) {
      CHECK(ca[c].tgt == cb[c].tgt);
      CHECK(ca[c].sim == cb[c].sim);  // %.17g round-trips doubles exactly
      CHECK(ca[c].weight == cb[c].weight);
    }
  }
  fs::remove_all(dir);
}
