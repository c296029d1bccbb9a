#include "cmlm/trainloop.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <thread>

namespace cmlm::trainloop {

void TrainConfig::validate() const {
  enc.validate();
  obj.validate();
  if (stream_len < 2 || stream_len > enc.max_len)
    throw ConfigError("stream_len must be in [2, enc.max_len]");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (val_fraction < 0.0 || val_fraction >= 1.0) throw ConfigError("val_fraction must be in [0,1)");
  if (threads < 1) throw ConfigError("threads must be >= 1");
}

std::string format_metrics_line(const StepRecord& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "step=%lld kind=%s lang=%s L_cmlm=%.6f L_mlm=%.6f L_pre=%.6f lr=%.8f tokens=%d",
                static_cast<long long>(r.step), r.kind == objective::ObjKind::CMLM ? "CMLM" : "MLM",
                r.lang == 0 ? "x" : "y", r.l_cmlm, r.l_mlm, r.l_pre, r.lr, r.tokens);
  return buf;
}

double combine_window(const std::vector<StepRecord>& window) {
  double cm = 0.0, ml = 0.0;
  int ncm = 0, nml = 0;
  for (const auto& r : window) {
    if (r.kind == objective::ObjKind::CMLM) {
      cm += r.l_cmlm;
      ++ncm;
    } else {
      ml += r.l_mlm;
      ++nml;
    }
  }
  return objective::combine(ncm ? cm / ncm : 0.0, nml ? ml / nml : 0.0);
}

std::vector<std::vector<int>> make_streams(const std::vector<std::vector<int>>& sentences,
                                           int stream_len, Rng& rng) {
  std::vector<int> order(sentences.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);

  std::vector<int> flat;
  for (int idx : order) {
    const auto& s = sentences[static_cast<size_t>(idx)];
    flat.insert(flat.end(), s.begin(), s.end());
    flat.push_back(textpipe::Vocabulary::kEos);
  }

  std::vector<std::vector<int>> streams;
  const int content = stream_len - 1;  // BOS takes the first slot
  for (size_t off = 0; off < flat.size(); off += static_cast<size_t>(content)) {
    std::vector<int> stream;
    stream.reserve(static_cast<size_t>(stream_len));
    stream.push_back(textpipe::Vocabulary::kBos);
    const size_t end = std::min(flat.size(), off + static_cast<size_t>(content));
    stream.insert(stream.end(), flat.begin() + static_cast<long>(off),
                  flat.begin() + static_cast<long>(end));
    stream.resize(static_cast<size_t>(stream_len), textpipe::Vocabulary::kPad);
    streams.push_back(std::move(stream));
  }
  return streams;
}

double eval_perplexity(encoder::EncoderState<float>& st,
                       const std::vector<std::vector<int>>& streams, int lang_id,
                       const textpipe::NGramInventory& inventory,
                       const textpipe::Vocabulary& vocab, const objective::CmlmConfig& cfg,
                       uint64_t mask_seed) {
  double nll = 0.0;
  int64_t count = 0;
  for (size_t si = 0; si < streams.size(); ++si) {
    Rng rng(mix64(mask_seed, si));
    auto plan = objective::plan_masks(streams[si], inventory, nullptr, objective::ObjKind::MLM,
                                      cfg, vocab, rng);
    if (plan.spans.empty()) continue;
    const auto input = objective::masked_stream(streams[si], plan, vocab);
    Graph<float> g;
    encoder::BoundParams<float> bp(&g, &st, nullptr);
    auto piece = objective::build_mlm_stream_loss(g, bp, input, plan, lang_id, false);
    nll += g.scalar_value(piece.sum_node);
    count += piece.covered_tokens;
  }
  if (count == 0) return 1.0;
  return std::exp(nll / static_cast<double>(count));
}

namespace {

struct BatchSource {
  std::vector<std::vector<int>> streams;
  std::vector<int> order;
  size_t cursor = 0;
  uint64_t shuffle_seed = 0;
  int pass = 0;

  void reset_order() {
    order.resize(streams.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng rng(mix64(shuffle_seed, static_cast<uint64_t>(pass)));
    rng.shuffle(order);
    cursor = 0;
    ++pass;
  }

  const std::vector<int>& next() {
    if (cursor >= order.size()) reset_order();
    return streams[static_cast<size_t>(order[cursor++])];
  }
};

struct StreamTask {
  const std::vector<int>* stream = nullptr;
  objective::MaskPlan plan;
  std::vector<int> input;
  double num = 0.0;
  double denom = 0.0;
  int tokens = 0;
  bool ok = false;
};

}  // namespace

TrainResult train(const TrainConfig& cfg, const std::vector<std::vector<int>>& corpus_x,
                  const std::vector<std::vector<int>>& corpus_y,
                  const textpipe::NGramInventory& inv_x, const textpipe::NGramInventory& inv_y,
                  const xmap::TranslationTable& table_x2y, const xmap::TranslationTable& table_y2x,
                  const objective::StaticTokenEmbeddings& statics,
                  const textpipe::Vocabulary& vocab) {
  cfg.validate();
  using objective::ObjKind;

  // train/validation split per language
  const std::vector<std::vector<int>>* corpora[2] = {&corpus_x, &corpus_y};
  const textpipe::NGramInventory* inventories[2] = {&inv_x, &inv_y};
  const xmap::TranslationTable* tables[2] = {&table_x2y, &table_y2x};
  BatchSource source[2];
  std::vector<std::vector<int>> val_streams[2];
  for (int lang = 0; lang < 2; ++lang) {
    const auto& corpus = *corpora[lang];
    std::vector<int> idx(corpus.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    Rng split_rng(substream(cfg.seed, lang == 0 ? "split_x" : "split_y"));
    split_rng.shuffle(idx);
    const size_t n_val = static_cast<size_t>(cfg.val_fraction * static_cast<double>(idx.size()));
    std::vector<std::vector<int>> val_sents, train_sents;
    for (size_t i = 0; i < idx.size(); ++i)
      (i < n_val ? val_sents : train_sents).push_back(corpus[static_cast<size_t>(idx[i])]);
    if (train_sents.empty()) throw InputError("train: empty training corpus");
    Rng vs_rng(substream(cfg.seed, lang == 0 ? "val_streams_x" : "val_streams_y"));
    val_streams[lang] = make_streams(val_sents, cfg.stream_len, vs_rng);
    Rng ts_rng(substream(cfg.seed, lang == 0 ? "train_streams_x" : "train_streams_y"));
    source[lang].streams = make_streams(train_sents, cfg.stream_len, ts_rng);
    source[lang].shuffle_seed = substream(cfg.seed, lang == 0 ? "order_x" : "order_y");
  }

  TrainResult res;
  encoder::EncoderState<float> st;
  st.cfg = cfg.enc;
  st.init(cfg.seed);
  st.vocab_hash = textpipe::vocab_hash(vocab);

  auto params_named = st.named_params();
  std::vector<Tensor<float>*> params;
  for (auto& [name, t] : params_named) params.push_back(t);
  AdamState<float> adam;
  adam.init(params);

  // per-slot gradient buffers reduced in slot order, so results do not
  // depend on the thread count
  std::vector<encoder::ParamGrads<float>> slot_grads;
  for (int b = 0; b < cfg.batch; ++b) slot_grads.emplace_back(st);
  encoder::ParamGrads<float> total_grads(st);

  const uint64_t plan_seed = substream(cfg.seed, "mask_plans");
  const uint64_t cs_seed = substream(cfg.seed, "code_switch");
  const uint64_t val_mask_seed = substream(cfg.seed, "val_masks");
  Rng cs_coin(substream(cfg.seed, "cs_coin"));

  auto avg_val_ppl = [&]() {
    double acc = 0.0;
    for (int lang = 0; lang < 2; ++lang)
      acc += eval_perplexity(st, val_streams[lang], lang, *inventories[lang], vocab, cfg.obj,
                             mix64(val_mask_seed, static_cast<uint64_t>(lang)));
    return acc / 2.0;
  };

  res.step0_avg_ppl = avg_val_ppl();
  res.best_avg_ppl = res.step0_avg_ppl;
  res.best_state = st;

  double last_cmlm = 0.0, last_mlm = 0.0;
  int consecutive_nonfinite = 0;
  int evals_without_improvement = 0;

  for (int64_t step = 0; step < cfg.max_steps; ++step) {
    const ObjKind kind =
        cfg.mlm_only ? ObjKind::MLM : (step % 2 == 0 ? ObjKind::MLM : ObjKind::CMLM);
    const int lang = cfg.mlm_only ? static_cast<int>(step % 2) : static_cast<int>((step / 2) % 2);
    const bool switch_batch =
        kind == ObjKind::MLM && !cfg.mlm_only && cs_coin.bernoulli(cfg.obj.cs_prob);

    std::vector<StreamTask> tasks(static_cast<size_t>(cfg.batch));
    for (int b = 0; b < cfg.batch; ++b) {
      auto& task = tasks[static_cast<size_t>(b)];
      const auto& raw = source[lang].next();
      Rng plan_rng(mix64(plan_seed, mix64(static_cast<uint64_t>(step), static_cast<uint64_t>(b))));
      if (kind == ObjKind::MLM && switch_batch) {
        Rng cs_rng(mix64(cs_seed, mix64(static_cast<uint64_t>(step), static_cast<uint64_t>(b))));
        auto cs = objective::code_switch(raw, *inventories[lang], *tables[lang], cfg.obj, vocab,
                                         cs_rng);
        task.plan = objective::plan_masks(cs.stream, *inventories[lang], nullptr, kind, cfg.obj,
                                          vocab, plan_rng, cs.replaced);
        task.plan.code_switched = true;
        task.input = objective::masked_stream(cs.stream, task.plan, vocab);
      } else {
        task.plan = objective::plan_masks(raw, *inventories[lang], tables[lang], kind, cfg.obj,
                                          vocab, plan_rng);
        task.input = objective::masked_stream(raw, task.plan, vocab);
      }
    }

    auto run_slot = [&](int b) {
      auto& task = tasks[static_cast<size_t>(b)];
      slot_grads[static_cast<size_t>(b)].zero();
      if (task.plan.spans.empty()) return;
      Graph<float> g;
      g.set_dropout_stream(cfg.seed, static_cast<uint64_t>(step), static_cast<uint64_t>(b));
      encoder::BoundParams<float> bp(&g, &st, &slot_grads[static_cast<size_t>(b)]);
      objective::StreamLossBuild piece;
      if (kind == ObjKind::CMLM) {
        auto prior = objective::make_static_prior(statics, lang, 1 - lang, cfg.obj.tau);
        piece = objective::build_cmlm_stream_loss(g, bp, task.input, task.plan, *tables[lang],
                                                  vocab, prior, cfg.obj, lang, true);
      } else {
        piece = objective::build_mlm_stream_loss(g, bp, task.input, task.plan, lang, true);
      }
      if (piece.sum_node < 0) return;
      g.backward(piece.sum_node);
      task.num = g.scalar_value(piece.sum_node);
      task.denom = piece.denom;
      task.tokens = piece.covered_tokens;
      task.ok = true;
    };

    if (cfg.threads == 1) {
      for (int b = 0; b < cfg.batch; ++b) run_slot(b);
    } else {
      std::vector<std::thread> pool;
      for (int w = 0; w < cfg.threads; ++w)
        pool.emplace_back([&, w]() {
          for (int b = w; b < cfg.batch; b += cfg.threads) run_slot(b);
        });
      for (auto& t : pool) t.join();
    }

    double num = 0.0, denom = 0.0;
    int tokens = 0;
    for (const auto& task : tasks) {
      if (!task.ok) continue;
      num += task.num;
      denom += task.denom;
      tokens += task.tokens;
    }
    if (denom <= 0.0) {
      ++res.batches_skipped;
      continue;
    }
    const double loss = num / denom;
    if (!std::isfinite(loss)) {
      ++res.batches_skipped;
      ++consecutive_nonfinite;
      std::cerr << "train: non-finite loss at step " << step << ", skipping batch\n";
      if (consecutive_nonfinite >= cfg.max_consecutive_nonfinite)
        throw StageError("pretrain", "aborting after " + std::to_string(consecutive_nonfinite) +
                                         " consecutive non-finite losses");
      continue;
    }
    consecutive_nonfinite = 0;

    total_grads.zero();
    for (auto& sg : slot_grads) total_grads.add(sg);
    total_grads.scale(1.0 / denom);

    const double lr = lr_at(cfg.lr, step + 1);
    adam_step(adam, params, total_grads.g, lr);
    st.step = step + 1;

    StepRecord rec;
    rec.step = step + 1;
    rec.kind = kind;
    rec.lang = lang;
    if (kind == ObjKind::CMLM)
      last_cmlm = loss;
    else
      last_mlm = loss;
    rec.l_cmlm = last_cmlm;
    rec.l_mlm = last_mlm;
    rec.l_pre = objective::combine(rec.l_cmlm, rec.l_mlm);
    rec.lr = lr;
    rec.tokens = tokens;
    res.records.push_back(rec);

    if ((step + 1) % cfg.eval_every == 0) {
      const double ppl = avg_val_ppl();
      if (ppl < res.best_avg_ppl) {
        res.best_avg_ppl = ppl;
        res.best_state = st;
        evals_without_improvement = 0;
      } else {
        ++evals_without_improvement;
        if (evals_without_improvement >= cfg.patience) {
          res.steps_run = step + 1;
          return res;
        }
      }
    }
  }
  res.steps_run = cfg.max_steps;
  return res;
}

}  // namespace cmlm::trainloop
