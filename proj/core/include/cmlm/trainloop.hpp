#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmlm/objective.hpp"
#include "cmlm/optim.hpp"

namespace cmlm::trainloop {

struct TrainConfig {
  encoder::EncoderConfig enc;
  objective::CmlmConfig obj;
  LrSchedule lr;
  int stream_len = 128;
  int batch = 16;
  int64_t max_steps = 20000;
  int eval_every = 500;
  int patience = 5;
  double val_fraction = 0.05;
  uint64_t seed = 42;
  int threads = 1;
  bool mlm_only = false;  // baseline: plain MLM, no code-switching
  int max_consecutive_nonfinite = 10;

  void validate() const;
};

struct StepRecord {
  int64_t step = 0;
  objective::ObjKind kind = objective::ObjKind::MLM;
  int lang = 0;
  double l_cmlm = 0.0;  // most recent value of each component
  double l_mlm = 0.0;
  double l_pre = 0.0;
  double lr = 0.0;
  int tokens = 0;
};

std::string format_metrics_line(const StepRecord& r);

// Windowed realization of the combined pre-training loss: mean of each
// component over the window, summed.
double combine_window(const std::vector<StepRecord>& window);

struct TrainResult {
  encoder::EncoderState<float> best_state;
  double step0_avg_ppl = 0.0;
  double best_avg_ppl = 0.0;
  int64_t steps_run = 0;
  int batches_skipped = 0;
  std::vector<StepRecord> records;
};

// Shuffle sentences, join with EOS, chop to fixed length, prepend BOS,
// pad the tail stream with PAD.
std::vector<std::vector<int>> make_streams(const std::vector<std::vector<int>>& sentences,
                                           int stream_len, Rng& rng);

// exp(mean masked cross-entropy) under a masking plan fixed by mask_seed,
// so the number is comparable across checkpoints. Dropout off.
double eval_perplexity(encoder::EncoderState<float>& st,
                       const std::vector<std::vector<int>>& streams, int lang_id,
                       const textpipe::NGramInventory& inventory,
                       const textpipe::Vocabulary& vocab, const objective::CmlmConfig& cfg,
                       uint64_t mask_seed);

TrainResult train(const TrainConfig& cfg, const std::vector<std::vector<int>>& corpus_x,
                  const std::vector<std::vector<int>>& corpus_y,
                  const textpipe::NGramInventory& inv_x, const textpipe::NGramInventory& inv_y,
                  const xmap::TranslationTable& table_x2y, const xmap::TranslationTable& table_y2x,
                  const objective::StaticTokenEmbeddings& statics,
                  const textpipe::Vocabulary& vocab);

}  // namespace cmlm::trainloop
