#include "cmlm/embed.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <thread>

#include "cmlm/io.hpp"
#include "cmlm/rng.hpp"

namespace cmlm::embed {

void SgnsConfig::validate() const {
  if (dim < 8) throw ConfigError("embed dim must be >= 8");
  if (negatives < 1) throw ConfigError("negatives must be >= 1");
  if (window < 1) throw ConfigError("window must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (workers < 1) throw ConfigError("workers must be >= 1");
}

int EmbeddingMatrix::add_unit(const std::string& unit, int64_t f) {
  auto it = index.find(unit);
  if (it != index.end()) return it->second;
  int id = size();
  index.emplace(unit, id);
  units.push_back(unit);
  freq.push_back(f);
  data.resize(data.size() + static_cast<size_t>(dim), 0.0f);
  return id;
}

std::vector<std::vector<std::string>> augment_corpus_with_ngrams(
    const std::vector<textpipe::TokenizedSentence>& corpus, const textpipe::Vocabulary& vocab,
    const textpipe::NGramInventory& inventory) {
  std::vector<std::vector<std::string>> out;
  out.reserve(corpus.size());
  for (const auto& sent : corpus) {
    std::vector<std::string> units;
    const auto& ids = sent.ids;
    size_t i = 0;
    while (i < ids.size()) {
      int n = inventory.longest_match(ids, i, static_cast<int>(ids.size() - i));
      if (n >= 2) {
        std::vector<int> span(ids.begin() + static_cast<long>(i),
                              ids.begin() + static_cast<long>(i) + n);
        units.push_back(textpipe::ngram_key(span, vocab));
        i += static_cast<size_t>(n);
      } else {
        units.push_back(vocab.token(ids[i]));
        ++i;
      }
    }
    out.push_back(std::move(units));
  }
  return out;
}

double sgns_pair_loss(const double* u, const double* v,
                      const std::vector<const double*>& negs, int dim) {
  auto dot = [dim](const double* a, const double* b) {
    double s = 0.0;
    for (int i = 0; i < dim; ++i) s += a[i] * b[i];
    return s;
  };
  auto log_sigmoid = [](double x) {
    // -log(1+exp(-x)) computed stably
    return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
  };
  double loss = -log_sigmoid(dot(u, v));
  for (const double* z : negs) loss -= log_sigmoid(-dot(u, z));
  return loss;
}

void sgns_pair_grad(const double* u, const double* v, const std::vector<const double*>& negs,
                    int dim, double* gu, double* gv, std::vector<double*>& gnegs) {
  auto dot = [dim](const double* a, const double* b) {
    double s = 0.0;
    for (int i = 0; i < dim; ++i) s += a[i] * b[i];
    return s;
  };
  auto sigmoid = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  std::fill(gu, gu + dim, 0.0);
  std::fill(gv, gv + dim, 0.0);
  for (auto* g : gnegs) std::fill(g, g + dim, 0.0);

  const double sp = sigmoid(dot(u, v)) - 1.0;  // d(-log s(uv))/d(uv)
  for (int i = 0; i < dim; ++i) {
    gu[i] += sp * v[i];
    gv[i] += sp * u[i];
  }
  for (size_t t = 0; t < negs.size(); ++t) {
    const double* z = negs[t];
    const double sn = sigmoid(dot(u, z));  // d(-log s(-uz))/d(uz)
    for (int i = 0; i < dim; ++i) {
      gu[i] += sn * z[i];
      gnegs[t][i] += sn * u[i];
    }
  }
}

namespace {

struct UnitCorpus {
  std::vector<std::vector<int>> sentences;
  std::vector<int64_t> freq;
  int64_t total_tokens = 0;
};

// Negative-sampling distribution: unigram^0.75, sampled by binary search
// over the cumulative table.
struct NegTable {
  std::vector<double> cdf;
  void build(const std::vector<int64_t>& freq) {
    cdf.resize(freq.size());
    double acc = 0.0;
    for (size_t i = 0; i < freq.size(); ++i) {
      acc += std::pow(static_cast<double>(freq[i]), 0.75);
      cdf[i] = acc;
    }
    for (auto& x : cdf) x /= acc;
    if (!cdf.empty()) cdf.back() = 1.0;
  }
  int sample(Rng& rng) const {
    double u = rng.next_double();
    return static_cast<int>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
  }
};

struct Shared {
  std::vector<float> in;   // input vectors (the result)
  std::vector<float> out;  // context vectors
  int dim = 0;
};

void train_range(const UnitCorpus& uc, const SgnsConfig& cfg, Shared& sh, const NegTable& neg,
                 size_t begin, size_t stride, int epoch, uint64_t rng_seed, double* loss_sum,
                 int64_t* loss_count, std::atomic<int64_t>* processed, int64_t total_schedule) {
  Rng rng(rng_seed);
  const int dim = sh.dim;
  std::vector<double> gu(static_cast<size_t>(dim));
  const double sub_threshold = cfg.subsample * static_cast<double>(uc.total_tokens);

  for (size_t si = begin; si < uc.sentences.size(); si += stride) {
    const auto& sent = uc.sentences[si];
    std::vector<int> kept;
    kept.reserve(sent.size());
    for (int unit : sent) {
      if (cfg.subsample > 0.0) {
        const double f = static_cast<double>(uc.freq[static_cast<size_t>(unit)]);
        const double keep = (std::sqrt(f / sub_threshold) + 1.0) * sub_threshold / f;
        if (keep < 1.0 && rng.next_double() >= keep) continue;
      }
      kept.push_back(unit);
    }
    for (size_t c = 0; c < kept.size(); ++c) {
      const int64_t done = processed->fetch_add(1, std::memory_order_relaxed);
      const double progress = static_cast<double>(done) / static_cast<double>(total_schedule);
      const double alpha = std::max(cfg.lr * cfg.min_lr_frac, cfg.lr * (1.0 - progress));

      const int center = kept[c];
      const int b = 1 + static_cast<int>(rng.next_int(cfg.window));
      for (int off = -b; off <= b; ++off) {
        if (off == 0) continue;
        const long pos = static_cast<long>(c) + off;
        if (pos < 0 || pos >= static_cast<long>(kept.size())) continue;
        const int ctx = kept[static_cast<size_t>(pos)];

        float* u = sh.in.data() + static_cast<size_t>(center) * dim;
        float* v = sh.out.data() + static_cast<size_t>(ctx) * dim;
        std::fill(gu.begin(), gu.end(), 0.0);

        double dot = 0.0;
        for (int i = 0; i < dim; ++i) dot += static_cast<double>(u[i]) * v[i];
        const double gp = 1.0 / (1.0 + std::exp(-dot)) - 1.0;
        *loss_sum += dot >= 0.0 ? std::log1p(std::exp(-dot)) : -dot + std::log1p(std::exp(dot));
        for (int i = 0; i < dim; ++i) {
          gu[static_cast<size_t>(i)] += gp * v[i];
          v[i] = static_cast<float>(v[i] - alpha * gp * u[i]);
        }

        for (int t = 0; t < cfg.negatives; ++t) {
          const int z = neg.sample(rng);
          if (z == ctx) continue;
          float* zv = sh.out.data() + static_cast<size_t>(z) * dim;
          double dz = 0.0;
          for (int i = 0; i < dim; ++i) dz += static_cast<double>(u[i]) * zv[i];
          const double gn = 1.0 / (1.0 + std::exp(-dz));
          *loss_sum += dz >= 0.0 ? dz + std::log1p(std::exp(-dz)) : std::log1p(std::exp(dz));
          for (int i = 0; i < dim; ++i) {
            gu[static_cast<size_t>(i)] += gn * zv[i];
            zv[i] = static_cast<float>(zv[i] - alpha * gn * u[i]);
          }
        }
        for (int i = 0; i < dim; ++i)
          u[i] = static_cast<float>(u[i] - alpha * gu[static_cast<size_t>(i)]);
        ++*loss_count;
      }
    }
  }
  (void)epoch;
}

}  // namespace

SgnsResult train_sgns(const std::vector<std::vector<std::string>>& corpus, const SgnsConfig& cfg,
                      const std::string& lang) {
  cfg.validate();
  if (corpus.empty()) throw InputError("train_sgns: empty corpus");

  SgnsResult res;
  res.matrix.dim = cfg.dim;
  res.matrix.lang = lang;

  UnitCorpus uc;
  {
    // fix unit ids by first appearance, then count
    std::unordered_map<std::string, int64_t> counts;
    for (const auto& sent : corpus)
      for (const auto& unit : sent) ++counts[unit];
    std::vector<std::pair<std::string, int64_t>> ordered(counts.begin(), counts.end());
    std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    for (auto& [unit, c] : ordered) res.matrix.add_unit(unit, c);
    uc.freq = res.matrix.freq;
    uc.sentences.reserve(corpus.size());
    for (const auto& sent : corpus) {
      std::vector<int> s;
      s.reserve(sent.size());
      for (const auto& unit : sent) s.push_back(res.matrix.index.at(unit));
      uc.sentences.push_back(std::move(s));
      uc.total_tokens += static_cast<int64_t>(sent.size());
    }
  }
  if (res.matrix.size() == 0) throw InputError("train_sgns: no units");

  Shared sh;
  sh.dim = cfg.dim;
  sh.in.resize(static_cast<size_t>(res.matrix.size()) * cfg.dim);
  sh.out.assign(static_cast<size_t>(res.matrix.size()) * cfg.dim, 0.0f);
  {
    Rng init(substream(cfg.seed, "sgns_init"));
    for (auto& x : sh.in)
      x = static_cast<float>((init.next_double() - 0.5) / cfg.dim);
  }

  NegTable neg;
  neg.build(uc.freq);

  const int64_t total_schedule =
      std::max<int64_t>(1, static_cast<int64_t>(cfg.epochs) * uc.total_tokens);
  std::atomic<int64_t> processed{0};

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<double> loss_sums(static_cast<size_t>(cfg.workers), 0.0);
    std::vector<int64_t> loss_counts(static_cast<size_t>(cfg.workers), 0);
    if (cfg.workers == 1) {
      train_range(uc, cfg, sh, neg, 0, 1, epoch,
                  mix64(substream(cfg.seed, "sgns_epoch"), static_cast<uint64_t>(epoch)),
                  &loss_sums[0], &loss_counts[0], &processed, total_schedule);
    } else {
      std::vector<std::thread> threads;
      for (int w = 0; w < cfg.workers; ++w)
        threads.emplace_back(train_range, std::cref(uc), std::cref(cfg), std::ref(sh),
                             std::cref(neg), static_cast<size_t>(w),
                             static_cast<size_t>(cfg.workers), epoch,
                             mix64(substream(cfg.seed, "sgns_epoch"),
                                   mix64(static_cast<uint64_t>(epoch), static_cast<uint64_t>(w))),
                             &loss_sums[static_cast<size_t>(w)],
                             &loss_counts[static_cast<size_t>(w)], &processed, total_schedule);
      for (auto& t : threads) t.join();
    }
    double sum = 0.0;
    int64_t count = 0;
    for (int w = 0; w < cfg.workers; ++w) {
      sum += loss_sums[static_cast<size_t>(w)];
      count += loss_counts[static_cast<size_t>(w)];
    }
    res.epoch_loss.push_back(count > 0 ? sum / static_cast<double>(count) : 0.0);
  }

  res.matrix.data.assign(sh.in.begin(), sh.in.end());
  return res;
}

void write_embeddings(const std::string& path, const EmbeddingMatrix& m) {
  std::ostringstream os;
  os << m.size() << ' ' << m.dim << '\n';
  for (int i = 0; i < m.size(); ++i) {
    os << m.units[static_cast<size_t>(i)];
    const float* r = m.row(i);
    for (int j = 0; j < m.dim; ++j) os << ' ' << fixed6(r[j]);
    os << '\n';
  }
  write_text(path, os.str());
}

EmbeddingMatrix read_embeddings(const std::string& path, const std::string& lang) {
  auto lines = read_lines(path);
  if (lines.empty()) throw InputError("empty embedding file " + path);
  auto header = split_ws(lines[0]);
  if (header.size() != 2) throw InputError("bad embedding header in " + path);
  const int count = std::stoi(header[0]);
  const int dim = std::stoi(header[1]);
  EmbeddingMatrix m;
  m.dim = dim;
  m.lang = lang;
  for (int i = 0; i < count; ++i) {
    auto parts = split_ws(lines[static_cast<size_t>(i) + 1]);
    if (static_cast<int>(parts.size()) != dim + 1)
      throw InputError("bad embedding line in " + path);
    int id = m.add_unit(parts[0], 0);
    float* r = m.row(id);
    for (int j = 0; j < dim; ++j) r[j] = std::stof(parts[static_cast<size_t>(j) + 1]);
  }
  return m;
}

void fill_unit_freqs(EmbeddingMatrix& m, const textpipe::Vocabulary& vocab,
                     const textpipe::NGramInventory& inventory) {
  for (int i = 0; i < m.size(); ++i) {
    const std::string& unit = m.units[static_cast<size_t>(i)];
    if (const auto* g = inventory.find_key(unit)) {
      m.freq[static_cast<size_t>(i)] = g->freq;
      continue;
    }
    auto it = vocab.token_to_id.find(unit);
    if (it != vocab.token_to_id.end())
      m.freq[static_cast<size_t>(i)] = vocab.freq[static_cast<size_t>(it->second)];
  }
}

}  // namespace cmlm::embed
