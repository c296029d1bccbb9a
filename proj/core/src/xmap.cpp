#include "cmlm/xmap.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

#include "cmlm/io.hpp"

namespace cmlm::xmap {

double MappingMatrix::max_orthogonality_error() const {
  double worst = 0.0;
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      double acc = 0.0;
      for (int k = 0; k < d; ++k) acc += at(k, i) * at(k, j);
      worst = std::max(worst, std::abs(acc - (i == j ? 1.0 : 0.0)));
    }
  }
  return worst;
}

void MappingMatrix::apply_row(const float* in, float* out) const {
  for (int j = 0; j < d; ++j) {
    double acc = 0.0;
    for (int i = 0; i < d; ++i) acc += static_cast<double>(in[i]) * at(i, j);
    out[j] = static_cast<float>(acc);
  }
}

void MappingMatrix::apply_row(const double* in, double* out) const {
  for (int j = 0; j < d; ++j) {
    double acc = 0.0;
    for (int i = 0; i < d; ++i) acc += in[i] * at(i, j);
    out[j] = acc;
  }
}

void l2_normalize_rows(embed::EmbeddingMatrix& m) {
  for (int i = 0; i < m.size(); ++i) {
    float* r = m.row(i);
    double n = 0.0;
    for (int j = 0; j < m.dim; ++j) n += static_cast<double>(r[j]) * r[j];
    n = std::sqrt(n);
    if (n > 0.0)
      for (int j = 0; j < m.dim; ++j) r[j] = static_cast<float>(r[j] / n);
  }
}

MappingMatrix procrustes(const embed::EmbeddingMatrix& src, const embed::EmbeddingMatrix& tgt,
                         const std::vector<std::pair<int, int>>& dict) {
  if (src.dim != tgt.dim) throw InputError("procrustes: dimension mismatch");
  const int d = src.dim;
  if (static_cast<int>(dict.size()) < 1) throw InputError("procrustes: empty dictionary");

  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d, d);  // E_tgt^T E_src over the pairs
  for (const auto& [si, ti] : dict) {
    const float* s = src.row(si);
    const float* t = tgt.row(ti);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) m(i, j) += static_cast<double>(t[i]) * s[j];
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv(0) <= 0.0 || sv(d - 1) < 1e-12 * sv(0))
    std::cerr << "procrustes: rank-deficient cross-covariance (sigma_min=" << sv(d - 1) << ")\n";
  Eigen::MatrixXd w = svd.matrixV() * svd.matrixU().transpose();

  MappingMatrix out;
  out.d = d;
  out.w.resize(static_cast<size_t>(d) * d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) = w(i, j);
  return out;
}

std::vector<std::pair<int, int>> anchor_dictionary(const embed::EmbeddingMatrix& src,
                                                   const embed::EmbeddingMatrix& tgt) {
  std::vector<std::pair<int, int>> dict;
  for (int i = 0; i < src.size(); ++i) {
    int j = tgt.find(src.units[static_cast<size_t>(i)]);
    if (j >= 0) dict.emplace_back(i, j);
  }
  return dict;
}

namespace {

std::vector<int> top_frequent_units(const embed::EmbeddingMatrix& m, int f) {
  std::vector<int> idx(static_cast<size_t>(m.size()));
  for (int i = 0; i < m.size(); ++i) idx[static_cast<size_t>(i)] = i;
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    if (m.freq[static_cast<size_t>(a)] != m.freq[static_cast<size_t>(b)])
      return m.freq[static_cast<size_t>(a)] > m.freq[static_cast<size_t>(b)];
    return m.units[static_cast<size_t>(a)] < m.units[static_cast<size_t>(b)];
  });
  if (static_cast<int>(idx.size()) > f) idx.resize(static_cast<size_t>(f));
  return idx;
}

}  // namespace

SelfLearnResult self_learning(const embed::EmbeddingMatrix& src, const embed::EmbeddingMatrix& tgt,
                              const std::vector<std::pair<int, int>>& init,
                              const SelfLearnConfig& cfg) {
  if (init.empty()) throw InputError("self_learning: empty seed dictionary");
  embed::EmbeddingMatrix ns = src, nt = tgt;
  l2_normalize_rows(ns);
  l2_normalize_rows(nt);

  SelfLearnResult res;
  res.final_dict = init;
  res.mapping = procrustes(ns, nt, init);

  const int d = src.dim;
  const std::vector<int> sf = top_frequent_units(src, cfg.dict_top_f);
  const std::vector<int> tf = top_frequent_units(tgt, cfg.dict_top_f);
  const int ns_count = static_cast<int>(sf.size());
  const int nt_count = static_cast<int>(tf.size());

  for (int round = 0; round < cfg.rounds; ++round) {
    // cosines between mapped frequent source units and frequent target units
    std::vector<double> mapped(static_cast<size_t>(ns_count) * d);
    for (int i = 0; i < ns_count; ++i) {
      std::vector<double> row(static_cast<size_t>(d));
      const float* r = ns.row(sf[static_cast<size_t>(i)]);
      for (int j = 0; j < d; ++j) row[static_cast<size_t>(j)] = r[j];
      res.mapping.apply_row(row.data(), mapped.data() + static_cast<size_t>(i) * d);
    }
    std::vector<double> cos(static_cast<size_t>(ns_count) * nt_count);
    for (int i = 0; i < ns_count; ++i) {
      const double* a = mapped.data() + static_cast<size_t>(i) * d;
      for (int j = 0; j < nt_count; ++j) {
        const float* b = nt.row(tf[static_cast<size_t>(j)]);
        double acc = 0.0;
        for (int k = 0; k < d; ++k) acc += a[k] * b[k];
        cos[static_cast<size_t>(i) * nt_count + j] = acc;
      }
    }
    // CSLS hub penalties: mean cosine of the k nearest neighbors
    auto topk_mean = [&](auto get, int count, int k) {
      std::vector<double> best;
      best.reserve(static_cast<size_t>(k) + 1);
      for (int t = 0; t < count; ++t) {
        double v = get(t);
        auto pos = std::lower_bound(best.begin(), best.end(), v, std::greater<double>());
        if (pos != best.end() || static_cast<int>(best.size()) < k) {
          best.insert(pos, v);
          if (static_cast<int>(best.size()) > k) best.pop_back();
        }
      }
      double s = 0.0;
      for (double v : best) s += v;
      return best.empty() ? 0.0 : s / static_cast<double>(best.size());
    };
    const int k = std::min(cfg.csls_k, std::min(ns_count, nt_count));
    std::vector<double> r_src(static_cast<size_t>(ns_count)), r_tgt(static_cast<size_t>(nt_count));
    for (int i = 0; i < ns_count; ++i)
      r_src[static_cast<size_t>(i)] =
          topk_mean([&](int j) { return cos[static_cast<size_t>(i) * nt_count + j]; }, nt_count, k);
    for (int j = 0; j < nt_count; ++j)
      r_tgt[static_cast<size_t>(j)] =
          topk_mean([&](int i) { return cos[static_cast<size_t>(i) * nt_count + j]; }, ns_count, k);

    std::vector<int> fwd(static_cast<size_t>(ns_count), -1), bwd(static_cast<size_t>(nt_count), -1);
    for (int i = 0; i < ns_count; ++i) {
      double best = -1e300;
      for (int j = 0; j < nt_count; ++j) {
        double v = 2.0 * cos[static_cast<size_t>(i) * nt_count + j] - r_src[static_cast<size_t>(i)] -
                   r_tgt[static_cast<size_t>(j)];
        if (v > best) {
          best = v;
          fwd[static_cast<size_t>(i)] = j;
        }
      }
    }
    for (int j = 0; j < nt_count; ++j) {
      double best = -1e300;
      for (int i = 0; i < ns_count; ++i) {
        double v = 2.0 * cos[static_cast<size_t>(i) * nt_count + j] - r_src[static_cast<size_t>(i)] -
                   r_tgt[static_cast<size_t>(j)];
        if (v > best) {
          best = v;
          bwd[static_cast<size_t>(j)] = i;
        }
      }
    }
    std::vector<std::pair<int, int>> induced;
    for (int i = 0; i < ns_count; ++i) {
      int j = fwd[static_cast<size_t>(i)];
      if (j >= 0 && bwd[static_cast<size_t>(j)] == i)
        induced.emplace_back(sf[static_cast<size_t>(i)], tf[static_cast<size_t>(j)]);
    }
    if (induced.empty()) throw InputError("self_learning: induced dictionary is empty");
    std::sort(induced.begin(), induced.end());
    res.rounds_run = round + 1;
    if (induced == res.final_dict) break;
    res.mapping = procrustes(ns, nt, induced);
    res.final_dict = std::move(induced);
  }
  return res;
}

UnitSpace make_unit_space(const embed::EmbeddingMatrix& m, const std::vector<std::string>& keys,
                          const MappingMatrix* mapping) {
  UnitSpace sp;
  sp.dim = m.dim;
  sp.keys = keys;
  sp.rows.assign(keys.size() * static_cast<size_t>(m.dim), 0.0);
  std::vector<double> tmp(static_cast<size_t>(m.dim));
  for (size_t i = 0; i < keys.size(); ++i) {
    int r = m.find(keys[i]);
    if (r < 0) continue;
    const float* row = m.row(r);
    double n = 0.0;
    for (int j = 0; j < m.dim; ++j) n += static_cast<double>(row[j]) * row[j];
    n = std::sqrt(n);
    double* out = sp.rows.data() + i * static_cast<size_t>(m.dim);
    if (n == 0.0) continue;  // degenerate row stays zero
    for (int j = 0; j < m.dim; ++j) tmp[static_cast<size_t>(j)] = row[j] / n;
    if (mapping)
      mapping->apply_row(tmp.data(), out);
    else
      std::copy(tmp.begin(), tmp.end(), out);
  }
  return sp;
}

namespace {

double dot_rows(const double* a, const double* b, int d) {
  double acc = 0.0;
  for (int i = 0; i < d; ++i) acc += a[i] * b[i];
  return acc;
}

// Sum of the n largest cosines of `row` against all of `space`, added in
// descending order so every caller produces identical floats.
double neighborhood_sum(const double* row, const UnitSpace& space, int n) {
  std::vector<double> best;
  best.reserve(static_cast<size_t>(n) + 1);
  for (int t = 0; t < space.size(); ++t) {
    double v = dot_rows(row, space.row(t), space.dim);
    auto pos = std::lower_bound(best.begin(), best.end(), v, std::greater<double>());
    if (pos != best.end() || static_cast<int>(best.size()) < n) {
      best.insert(pos, v);
      if (static_cast<int>(best.size()) > n) best.pop_back();
    }
  }
  double s = 0.0;
  for (double v : best) s += v;
  return s;
}

bool zero_row(const double* r, int d) {
  for (int i = 0; i < d; ++i)
    if (r[i] != 0.0) return false;
  return true;
}

}  // namespace

double margin_sim(const UnitSpace& src, int x, const UnitSpace& tgt, int y,
                  const ScorerConfig& cfg) {
  const double* ex = src.row(x);
  const double* ey = tgt.row(y);
  if (zero_row(ex, src.dim) || zero_row(ey, tgt.dim)) {
    std::cerr << "margin_sim: zero-norm vector for '" << src.keys[static_cast<size_t>(x)] << "' or '"
              << tgt.keys[static_cast<size_t>(y)] << "', score 0\n";
    return 0.0;
  }
  const double c = dot_rows(ex, ey, src.dim);
  const double rx = neighborhood_sum(ex, tgt, cfg.nn);
  const double ry = neighborhood_sum(ey, src, cfg.nn);
  const double denom = (rx + ry) / static_cast<double>(2 * cfg.nn);
  if (denom <= 0.0) {
    std::cerr << "margin_sim: non-positive neighborhood mean, score 0\n";
    return 0.0;
  }
  return c / denom;
}

TranslationTable infer_table(const UnitSpace& src, const UnitSpace& tgt, int k,
                             const ScorerConfig& cfg, const std::string& direction) {
  if (src.size() == 0 || tgt.size() == 0) throw InputError("infer_table: empty inventory");
  TranslationTable table;
  table.direction = direction;
  table.k = k;

  std::vector<double> rx(static_cast<size_t>(src.size()));
  std::vector<double> ry(static_cast<size_t>(tgt.size()));
  for (int i = 0; i < src.size(); ++i) rx[static_cast<size_t>(i)] = neighborhood_sum(src.row(i), tgt, cfg.nn);
  for (int j = 0; j < tgt.size(); ++j) ry[static_cast<size_t>(j)] = neighborhood_sum(tgt.row(j), src, cfg.nn);

  int dropped = 0;
  for (int i = 0; i < src.size(); ++i) {
    if (zero_row(src.row(i), src.dim)) {
      ++dropped;
      continue;
    }
    std::vector<std::pair<double, int>> scored;
    scored.reserve(static_cast<size_t>(tgt.size()));
    for (int j = 0; j < tgt.size(); ++j) {
      double sim = 0.0;
      if (!zero_row(tgt.row(j), tgt.dim)) {
        const double denom =
            (rx[static_cast<size_t>(i)] + ry[static_cast<size_t>(j)]) / static_cast<double>(2 * cfg.nn);
        if (denom > 0.0) sim = dot_rows(src.row(i), tgt.row(j), src.dim) / denom;
      }
      scored.emplace_back(sim, j);
    }
    std::sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return tgt.keys[static_cast<size_t>(a.second)] < tgt.keys[static_cast<size_t>(b.second)];
    });
    const int kk = std::min<int>(k, static_cast<int>(scored.size()));
    double wsum = 0.0;
    for (int c = 0; c < kk; ++c) wsum += std::max(0.0, scored[static_cast<size_t>(c)].first);
    if (wsum <= 0.0) {
      ++dropped;
      continue;
    }
    std::vector<TableEntry> cands;
    cands.reserve(static_cast<size_t>(kk));
    for (int c = 0; c < kk; ++c) {
      TableEntry e;
      e.src = src.keys[static_cast<size_t>(i)];
      e.tgt = tgt.keys[static_cast<size_t>(scored[static_cast<size_t>(c)].second)];
      e.sim = scored[static_cast<size_t>(c)].first;
      e.weight = std::max(0.0, e.sim) / wsum;
      cands.push_back(std::move(e));
    }
    table.sources.push_back(src.keys[static_cast<size_t>(i)]);
    table.entries.emplace(src.keys[static_cast<size_t>(i)], std::move(cands));
  }
  if (dropped > 0)
    std::cerr << "infer_table(" << direction << "): dropped " << dropped
              << " sources with no positive-score candidates\n";
  return table;
}

void write_mapping(const std::string& path, const MappingMatrix& m) {
  std::ostringstream os;
  os << m.d << '\n';
  char buf[32];
  for (int i = 0; i < m.d; ++i) {
    for (int j = 0; j < m.d; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", m.at(i, j));
      os << (j ? " " : "") << buf;
    }
    os << '\n';
  }
  write_text(path, os.str());
}

MappingMatrix read_mapping(const std::string& path) {
  auto lines = read_lines(path);
  if (lines.empty()) throw InputError("empty mapping file " + path);
  MappingMatrix m;
  m.d = std::stoi(lines[0]);
  m.w.resize(static_cast<size_t>(m.d) * m.d);
  for (int i = 0; i < m.d; ++i) {
    auto parts = split_ws(lines[static_cast<size_t>(i) + 1]);
    if (static_cast<int>(parts.size()) != m.d) throw InputError("bad mapping row in " + path);
    for (int j = 0; j < m.d; ++j) m.at(i, j) = std::stod(parts[static_cast<size_t>(j)]);
  }
  return m;
}

void write_table(const std::string& path, const TranslationTable& t) {
  std::ostringstream os;
  char buf[32];
  for (const auto& src : t.sources) {
    for (const auto& e : t.entries.at(src)) {
      os << e.src << '\t' << e.tgt << '\t';
      std::snprintf(buf, sizeof(buf), "%.17g", e.sim);
      os << buf << '\t';
      std::snprintf(buf, sizeof(buf), "%.17g", e.weight);
      os << buf << '\n';
    }
  }
  write_text(path, os.str());
}

TranslationTable read_table(const std::string& path, const std::string& direction) {
  TranslationTable t;
  t.direction = direction;
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    auto parts = split_char(line, '\t');
    if (parts.size() != 4) throw InputError("bad table line in " + path + ": " + line);
    TableEntry e;
    e.src = parts[0];
    e.tgt = parts[1];
    e.sim = std::stod(parts[2]);
    e.weight = std::stod(parts[3]);
    auto it = t.entries.find(e.src);
    if (it == t.entries.end()) {
      t.sources.push_back(e.src);
      t.entries[e.src].push_back(std::move(e));
    } else {
      it->second.push_back(std::move(e));
    }
  }
  for (const auto& src : t.sources)
    t.k = std::max<int>(t.k, static_cast<int>(t.entries.at(src).size()));
  return t;
}

}  // namespace cmlm::xmap
