#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "cmlm/embed.hpp"

namespace cmlm::xmap {

// Orthogonal map applied to source-language row vectors: x_mapped = x * W.
struct MappingMatrix {
  int d = 0;
  std::vector<double> w;  // row-major d x d

  double at(int i, int j) const { return w[static_cast<size_t>(i) * d + j]; }
  double& at(int i, int j) { return w[static_cast<size_t>(i) * d + j]; }
  double max_orthogonality_error() const;
  void apply_row(const float* in, float* out) const;
  void apply_row(const double* in, double* out) const;
};

struct ScorerConfig {
  int nn = 5;  // neighborhood size in the ratio margin
};

struct SelfLearnConfig {
  int rounds = 5;
  int csls_k = 10;
  int dict_top_f = 1500;
};

struct TableEntry {
  std::string src;
  std::string tgt;
  double sim = 0.0;     // raw margin score, may exceed 1
  double weight = 0.0;  // normalized over the source's candidates
};

struct TranslationTable {
  std::string direction;  // e.g. "x2y"
  int k = 0;
  std::vector<std::string> sources;  // deterministic write order
  std::unordered_map<std::string, std::vector<TableEntry>> entries;

  bool has(const std::string& src) const { return entries.count(src) > 0; }
  const std::vector<TableEntry>* find(const std::string& src) const {
    auto it = entries.find(src);
    return it == entries.end() ? nullptr : &it->second;
  }
};

void l2_normalize_rows(embed::EmbeddingMatrix& m);

// Least-squares orthogonal fit of src onto tgt over the dictionary pairs
// (src index, tgt index). Inputs are expected length-normalized.
MappingMatrix procrustes(const embed::EmbeddingMatrix& src, const embed::EmbeddingMatrix& tgt,
                         const std::vector<std::pair<int, int>>& dict);

// Anchor seed pairs: units with identical surfaces in both matrices.
std::vector<std::pair<int, int>> anchor_dictionary(const embed::EmbeddingMatrix& src,
                                                   const embed::EmbeddingMatrix& tgt);

struct SelfLearnResult {
  MappingMatrix mapping;
  std::vector<std::pair<int, int>> final_dict;
  int rounds_run = 0;
};

// Alternates Procrustes with mutual-CSLS dictionary induction over the
// top-f frequent units; stops early once the induced dictionary repeats.
SelfLearnResult self_learning(const embed::EmbeddingMatrix& src, const embed::EmbeddingMatrix& tgt,
                              const std::vector<std::pair<int, int>>& init,
                              const SelfLearnConfig& cfg);

// A unit space ready for margin scoring: normalized (and, for the source
// side, mapped) vectors of inventory entries only.
struct UnitSpace {
  int dim = 0;
  std::vector<std::string> keys;
  std::vector<double> rows;  // row-major, each row L2-normalized (or zero)

  const double* row(int i) const { return rows.data() + static_cast<size_t>(i) * dim; }
  int size() const { return static_cast<int>(keys.size()); }
};

UnitSpace make_unit_space(const embed::EmbeddingMatrix& m, const std::vector<std::string>& keys,
                          const MappingMatrix* mapping);

// Ratio-margin similarity: cos(x,y) over the mean cosine of the two
// opposite-language neighborhoods of size cfg.nn.
double margin_sim(const UnitSpace& src, int x, const UnitSpace& tgt, int y,
                  const ScorerConfig& cfg);

TranslationTable infer_table(const UnitSpace& src, const UnitSpace& tgt, int k,
                             const ScorerConfig& cfg, const std::string& direction);

void write_mapping(const std::string& path, const MappingMatrix& m);
MappingMatrix read_mapping(const std::string& path);

void write_table(const std::string& path, const TranslationTable& t);
TranslationTable read_table(const std::string& path, const std::string& direction);

}  // namespace cmlm::xmap
