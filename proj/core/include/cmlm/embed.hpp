#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "cmlm/textpipe.hpp"

namespace cmlm::embed {

struct SgnsConfig {
  int dim = 64;
  int window = 5;
  int negatives = 5;
  int epochs = 5;
  double lr = 0.05;
  double min_lr_frac = 1e-4;
  double subsample = 1e-4;  // 0 disables
  uint64_t seed = 1;
  int workers = 1;  // >1 is hogwild; 1 is bit-reproducible

  void validate() const;
};

struct EmbeddingMatrix {
  int dim = 0;
  std::string lang;
  std::vector<std::string> units;
  std::unordered_map<std::string, int> index;
  std::vector<int64_t> freq;
  std::vector<float> data;  // row-major units.size() x dim

  int size() const { return static_cast<int>(units.size()); }
  float* row(int i) { return data.data() + static_cast<size_t>(i) * dim; }
  const float* row(int i) const { return data.data() + static_cast<size_t>(i) * dim; }
  int find(const std::string& unit) const {
    auto it = index.find(unit);
    return it == index.end() ? -1 : it->second;
  }
  int add_unit(const std::string& unit, int64_t f);
};

// Greedy leftmost-longest segmentation into inventory n-grams; remaining
// positions stay single tokens. Output sentences are unit surface strings.
std::vector<std::vector<std::string>> augment_corpus_with_ngrams(
    const std::vector<textpipe::TokenizedSentence>& corpus, const textpipe::Vocabulary& vocab,
    const textpipe::NGramInventory& inventory);

struct SgnsResult {
  EmbeddingMatrix matrix;
  std::vector<double> epoch_loss;  // mean objective per epoch
};

SgnsResult train_sgns(const std::vector<std::vector<std::string>>& corpus, const SgnsConfig& cfg,
                      const std::string& lang);

// Per-pair negative-sampling objective and its gradient, shared by the
// trainer and the finite-difference check.
// loss = -log s(u.v) - sum_z log s(-u.z)
double sgns_pair_loss(const double* u, const double* v,
                      const std::vector<const double*>& negs, int dim);
void sgns_pair_grad(const double* u, const double* v, const std::vector<const double*>& negs,
                    int dim, double* gu, double* gv, std::vector<double*>& gnegs);

void write_embeddings(const std::string& path, const EmbeddingMatrix& m);
EmbeddingMatrix read_embeddings(const std::string& path, const std::string& lang);

// The embedding file carries no counts; refill unit frequencies from the
// vocabulary (tokens) and inventory (n-grams) after reading.
void fill_unit_freqs(EmbeddingMatrix& m, const textpipe::Vocabulary& vocab,
                     const textpipe::NGramInventory& inventory);

}  // namespace cmlm::embed
