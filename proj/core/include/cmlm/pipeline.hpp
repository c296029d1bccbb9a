#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cmlm/embed.hpp"
#include "cmlm/textpipe.hpp"
#include "cmlm/trainloop.hpp"

namespace cmlm::pipeline {

inline constexpr const char* kToolVersion = "cmlm 0.1.0";

// Flat dotted-key configuration; `preset` picks desk or full defaults,
// file keys override the preset, CLI key=value overrides override the file.
struct PipelineConfig {
  std::string preset = "desk";
  uint64_t seed = 42;
  std::string out_dir = "out";

  textpipe::CipherSpec corpus;
  int bpe_num_merges = 1200;
  int ngram_n_max = 3;
  int64_t ngram_min_count = 5;
  int ngram_top_m = 2000;
  embed::SgnsConfig sgns;
  xmap::SelfLearnConfig mapping;
  int table_k = 4;
  int table_nn = 5;
  trainloop::TrainConfig pretrain;
  int eval_at_k = 1;
  int eval_top_words = 200;
  std::string eval_method = "encoder";  // or "static"

  static PipelineConfig defaults(const std::string& preset);
  static PipelineConfig from_file(const std::string& path,
                                  const std::vector<std::string>& overrides);
  static PipelineConfig from_map(const std::map<std::string, std::string>& kv,
                                 const std::vector<std::string>& overrides);

  // Sorted key=value dump of every effective field.
  std::string canonical() const;
  uint64_t config_hash() const;

  std::string path(const std::string& name) const { return out_dir + "/" + name; }

  // Stage randomness flows from the one global seed via named substreams.
  textpipe::CipherSpec corpus_spec() const {
    textpipe::CipherSpec s = corpus;
    s.seed = substream(seed, "corpus");
    return s;
  }
};

void write_provenance(const PipelineConfig& cfg, const std::string& artifact_path);
// Recomputes the config hash and compares with the sidecar.
bool check_provenance(const PipelineConfig& cfg, const std::string& artifact_path);

struct GradCheckOutcome {
  double max_rel_error = 0.0;
  std::string report;
  bool ok = false;
};

void run_gen_corpus(const PipelineConfig& cfg);
void run_learn_bpe(const PipelineConfig& cfg);
void run_apply_bpe(const PipelineConfig& cfg);
void run_extract_ngrams(const PipelineConfig& cfg);
void run_train_embed(const PipelineConfig& cfg);
void run_map_embed(const PipelineConfig& cfg);
void run_infer_table(const PipelineConfig& cfg);
void run_pretrain(const PipelineConfig& cfg);
void run_eval_align(const PipelineConfig& cfg);
void run_eval_table(const PipelineConfig& cfg);
GradCheckOutcome run_grad_check(const PipelineConfig& cfg);
void run_pipeline(const PipelineConfig& cfg);

}  // namespace cmlm::pipeline
