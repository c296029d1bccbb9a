#include "cmlm/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>

#include "cmlm/evalsuite.hpp"
#include "cmlm/io.hpp"

namespace cmlm::pipeline {

namespace fs = std::filesystem;

PipelineConfig PipelineConfig::defaults(const std::string& preset) {
  PipelineConfig c;
  c.preset = preset;
  if (preset == "desk") {
    c.pretrain.enc.layers = 2;
    c.pretrain.enc.dim = 64;
    c.pretrain.enc.heads = 4;
    c.pretrain.enc.ffn = 256;
    c.pretrain.enc.max_len = 64;
    c.pretrain.stream_len = 64;
    c.pretrain.batch = 8;
    c.pretrain.max_steps = 2000;
    c.pretrain.eval_every = 250;
    c.pretrain.patience = 5;
    c.pretrain.lr.warmup_steps = 200;
    c.pretrain.lr.peak_lr = 5e-4;
    c.pretrain.threads = 2;
  } else if (preset == "full") {
    // documented full-scale setup: 1024 units, 8 heads, 256-token streams,
    // batches of 64
    c.corpus.num_sentences = 200000;
    c.bpe_num_merges = 60000;
    c.sgns.dim = 300;
    c.pretrain.enc = encoder::EncoderConfig::full_scale();
    c.pretrain.stream_len = 256;
    c.pretrain.batch = 64;
    c.pretrain.max_steps = 100000;
    c.pretrain.eval_every = 2000;
    c.pretrain.patience = 10;
    c.pretrain.lr.warmup_steps = 4000;
    c.pretrain.lr.peak_lr = 5e-4;
    c.pretrain.threads = 8;
  } else {
    throw ConfigError("unknown preset: " + preset + " (expected desk or full)");
  }
  return c;
}

namespace {

struct Field {
  std::function<void(PipelineConfig&, const std::string&)> set;
  std::function<std::string(const PipelineConfig&)> get;
};

int64_t to_i64(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    int64_t x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected integer, got '" + v + "'");
  }
}

double to_f64(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected number, got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key " + key + ": expected bool, got '" + v + "'");
}

std::string fmt_f(double x) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.12g", x);
  return buf;
}

const std::map<std::string, Field>& field_table() {
  static const std::map<std::string, Field> table = [] {
    std::map<std::string, Field> t;
    auto add_i = [&t](const std::string& key, auto getter) {
      t[key] = {[key, getter](PipelineConfig& c, const std::string& v) {
                  *getter(c) = static_cast<std::remove_reference_t<decltype(*getter(c))>>(
                      to_i64(key, v));
                },
                [getter](const PipelineConfig& c) {
                  return std::to_string(*getter(const_cast<PipelineConfig&>(c)));
                }};
    };
    auto add_f = [&t](const std::string& key, auto getter) {
      t[key] = {[key, getter](PipelineConfig& c, const std::string& v) { *getter(c) = to_f64(key, v); },
                [getter](const PipelineConfig& c) {
                  return fmt_f(*getter(const_cast<PipelineConfig&>(c)));
                }};
    };
    auto add_s = [&t](const std::string& key, auto getter) {
      t[key] = {[getter](PipelineConfig& c, const std::string& v) { *getter(c) = v; },
                [getter](const PipelineConfig& c) {
                  return *getter(const_cast<PipelineConfig&>(c));
                }};
    };
    auto add_b = [&t](const std::string& key, auto getter) {
      t[key] = {[key, getter](PipelineConfig& c, const std::string& v) { *getter(c) = to_bool(key, v); },
                [getter](const PipelineConfig& c) {
                  return *getter(const_cast<PipelineConfig&>(c)) ? "true" : "false";
                }};
    };

    add_s("out_dir", [](PipelineConfig& c) { return &c.out_dir; });
    add_i("seed", [](PipelineConfig& c) { return &c.seed; });

    add_i("corpus.base_vocab_size", [](PipelineConfig& c) { return &c.corpus.base_vocab_size; });
    add_f("corpus.zipf_exponent", [](PipelineConfig& c) { return &c.corpus.zipf_exponent; });
    add_i("corpus.markov_order", [](PipelineConfig& c) { return &c.corpus.markov_order; });
    add_f("corpus.swap_prob", [](PipelineConfig& c) { return &c.corpus.swap_prob; });
    add_i("corpus.num_sentences", [](PipelineConfig& c) { return &c.corpus.num_sentences; });
    add_i("corpus.sentence_min", [](PipelineConfig& c) { return &c.corpus.sentence_min; });
    add_i("corpus.sentence_max", [](PipelineConfig& c) { return &c.corpus.sentence_max; });
    add_i("corpus.eval_pairs", [](PipelineConfig& c) { return &c.corpus.num_eval_pairs; });

    add_i("bpe.num_merges", [](PipelineConfig& c) { return &c.bpe_num_merges; });

    add_i("ngram.n_max", [](PipelineConfig& c) { return &c.ngram_n_max; });
    add_i("ngram.min_count", [](PipelineConfig& c) { return &c.ngram_min_count; });
    add_i("ngram.top_m", [](PipelineConfig& c) { return &c.ngram_top_m; });

    add_i("embed.dim", [](PipelineConfig& c) { return &c.sgns.dim; });
    add_i("embed.window", [](PipelineConfig& c) { return &c.sgns.window; });
    add_i("embed.negatives", [](PipelineConfig& c) { return &c.sgns.negatives; });
    add_i("embed.epochs", [](PipelineConfig& c) { return &c.sgns.epochs; });
    add_f("embed.lr", [](PipelineConfig& c) { return &c.sgns.lr; });
    add_f("embed.subsample", [](PipelineConfig& c) { return &c.sgns.subsample; });
    add_i("embed.workers", [](PipelineConfig& c) { return &c.sgns.workers; });

    add_i("map.rounds", [](PipelineConfig& c) { return &c.mapping.rounds; });
    add_i("map.csls_k", [](PipelineConfig& c) { return &c.mapping.csls_k; });
    add_i("map.dict_top_f", [](PipelineConfig& c) { return &c.mapping.dict_top_f; });

    add_i("table.k", [](PipelineConfig& c) { return &c.table_k; });
    add_i("table.nn", [](PipelineConfig& c) { return &c.table_nn; });

    add_i("pretrain.layers", [](PipelineConfig& c) { return &c.pretrain.enc.layers; });
    add_i("pretrain.dim", [](PipelineConfig& c) { return &c.pretrain.enc.dim; });
    add_i("pretrain.heads", [](PipelineConfig& c) { return &c.pretrain.enc.heads; });
    add_i("pretrain.ffn", [](PipelineConfig& c) { return &c.pretrain.enc.ffn; });
    add_i("pretrain.max_len", [](PipelineConfig& c) { return &c.pretrain.enc.max_len; });
    add_f("pretrain.dropout", [](PipelineConfig& c) { return &c.pretrain.enc.dropout; });
    add_i("pretrain.stream_len", [](PipelineConfig& c) { return &c.pretrain.stream_len; });
    add_i("pretrain.batch", [](PipelineConfig& c) { return &c.pretrain.batch; });
    add_i("pretrain.max_steps", [](PipelineConfig& c) { return &c.pretrain.max_steps; });
    add_i("pretrain.eval_every", [](PipelineConfig& c) { return &c.pretrain.eval_every; });
    add_i("pretrain.patience", [](PipelineConfig& c) { return &c.pretrain.patience; });
    add_f("pretrain.val_fraction", [](PipelineConfig& c) { return &c.pretrain.val_fraction; });
    add_i("pretrain.warmup", [](PipelineConfig& c) { return &c.pretrain.lr.warmup_steps; });
    add_f("pretrain.peak_lr", [](PipelineConfig& c) { return &c.pretrain.lr.peak_lr; });
    add_i("pretrain.threads", [](PipelineConfig& c) { return &c.pretrain.threads; });
    add_b("pretrain.mlm_only", [](PipelineConfig& c) { return &c.pretrain.mlm_only; });
    add_i("pretrain.k", [](PipelineConfig& c) { return &c.pretrain.obj.k; });
    add_f("pretrain.tau", [](PipelineConfig& c) { return &c.pretrain.obj.tau; });
    add_f("pretrain.coverage", [](PipelineConfig& c) { return &c.pretrain.obj.coverage; });
    add_f("pretrain.mask_rate", [](PipelineConfig& c) { return &c.pretrain.obj.mask_rate; });
    add_f("pretrain.random_rate", [](PipelineConfig& c) { return &c.pretrain.obj.random_rate; });
    add_f("pretrain.keep_rate", [](PipelineConfig& c) { return &c.pretrain.obj.keep_rate; });
    add_f("pretrain.cs_prob", [](PipelineConfig& c) { return &c.pretrain.obj.cs_prob; });
    add_f("pretrain.cs_coverage", [](PipelineConfig& c) { return &c.pretrain.obj.cs_coverage; });

    add_i("eval.at_k", [](PipelineConfig& c) { return &c.eval_at_k; });
    add_i("eval.top_words", [](PipelineConfig& c) { return &c.eval_top_words; });
    add_s("eval.method", [](PipelineConfig& c) { return &c.eval_method; });
    return t;
  }();
  return table;
}

void apply_kv(PipelineConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "preset") return;  // handled up front
  auto it = field_table().find(key);
  if (it == field_table().end()) throw ConfigError("unknown config key: " + key);
  it->second.set(cfg, value);
}

std::pair<std::string, std::string> parse_kv(const std::string& raw) {
  const auto eq = raw.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + raw + "'");
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t");
    const auto b = s.find_last_not_of(" \t");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  return {trim(raw.substr(0, eq)), trim(raw.substr(eq + 1))};
}

}  // namespace

PipelineConfig PipelineConfig::from_map(const std::map<std::string, std::string>& kv,
                                        const std::vector<std::string>& overrides) {
  std::string preset = "desk";
  if (auto it = kv.find("preset"); it != kv.end()) preset = it->second;
  for (const auto& raw : overrides) {
    auto [k, v] = parse_kv(raw);
    if (k == "preset") preset = v;
  }
  PipelineConfig cfg = defaults(preset);
  for (const auto& [k, v] : kv) apply_kv(cfg, k, v);
  for (const auto& raw : overrides) {
    auto [k, v] = parse_kv(raw);
    apply_kv(cfg, k, v);
  }
  return cfg;
}

PipelineConfig PipelineConfig::from_file(const std::string& path,
                                         const std::vector<std::string>& overrides) {
  std::map<std::string, std::string> kv;
  for (const auto& line : read_lines(path)) {
    std::string s = line;
    if (auto hash = s.find('#'); hash != std::string::npos) s = s.substr(0, hash);
    if (s.find_first_not_of(" \t") == std::string::npos) continue;
    auto [k, v] = parse_kv(s);
    if (kv.count(k)) throw ConfigError("duplicate config key: " + k);
    kv[k] = v;
  }
  return from_map(kv, overrides);
}

std::string PipelineConfig::canonical() const {
  std::ostringstream os;
  os << "preset=" << preset << '\n';
  for (const auto& [key, field] : field_table()) os << key << '=' << field.get(*this) << '\n';
  return os.str();
}

uint64_t PipelineConfig::config_hash() const { return fnv1a64(canonical()); }

void write_provenance(const PipelineConfig& cfg, const std::string& artifact_path) {
  std::ostringstream os;
  char tbuf[64] = "unknown";
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  if (gmtime_r(&now, &tm)) std::strftime(tbuf, sizeof(tbuf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  os << "artifact=" << fs::path(artifact_path).filename().string() << '\n';
  os << "config_hash=" << hex64(cfg.config_hash()) << '\n';
  os << "seed=" << cfg.seed << '\n';
  os << "tool=" << kToolVersion << '\n';
  os << "created_utc=" << tbuf << '\n';
  write_text(artifact_path + ".prov", os.str());
}

bool check_provenance(const PipelineConfig& cfg, const std::string& artifact_path) {
  for (const auto& line : read_lines(artifact_path + ".prov"))
    if (line.rfind("config_hash=", 0) == 0)
      return line.substr(std::string("config_hash=").size()) == hex64(cfg.config_hash());
  return false;
}

// ------------------------------------------------------------- stages ----

namespace {

void ensure_out_dir(const PipelineConfig& cfg) {
  std::error_code ec;
  fs::create_directories(cfg.out_dir, ec);
  if (ec) throw StageError("setup", "cannot create out_dir " + cfg.out_dir);
}

std::vector<textpipe::TokenizedSentence> read_tokenized(const std::string& path,
                                                        const textpipe::Vocabulary& vocab) {
  std::vector<textpipe::TokenizedSentence> out;
  for (const auto& line : read_lines(path)) {
    textpipe::TokenizedSentence ts;
    int word = 0;
    for (const auto& tok : split_ws(line)) {
      ts.ids.push_back(vocab.id(tok));
      ts.word_index.push_back(word);
      const bool cont = tok.size() >= 2 && tok.compare(tok.size() - 2, 2, textpipe::kBpeCont) == 0;
      if (!cont) ++word;
    }
    out.push_back(std::move(ts));
  }
  return out;
}

void write_tokenized(const std::string& path, const std::vector<textpipe::TokenizedSentence>& corpus,
                     const textpipe::Vocabulary& vocab) {
  std::ostringstream os;
  for (const auto& sent : corpus) {
    for (size_t i = 0; i < sent.ids.size(); ++i) {
      if (i) os << ' ';
      os << vocab.token(sent.ids[i]);
    }
    os << '\n';
  }
  write_text(path, os.str());
}

std::vector<std::vector<int>> id_sentences(const std::vector<textpipe::TokenizedSentence>& corpus) {
  std::vector<std::vector<int>> out;
  out.reserve(corpus.size());
  for (const auto& s : corpus) out.push_back(s.ids);
  return out;
}

embed::EmbeddingMatrix load_embeddings_with_freqs(const PipelineConfig& cfg,
                                                  const std::string& name, const std::string& lang,
                                                  const textpipe::Vocabulary& vocab,
                                                  const textpipe::NGramInventory& inv) {
  auto m = embed::read_embeddings(cfg.path(name), lang);
  embed::fill_unit_freqs(m, vocab, inv);
  return m;
}

}  // namespace

void run_gen_corpus(const PipelineConfig& cfg) {
  ensure_out_dir(cfg);
  auto corpus = textpipe::gen_cipher_corpus(cfg.corpus_spec());
  textpipe::write_corpus(cfg.path("corpus.x.txt"), corpus.corpus_x);
  textpipe::write_corpus(cfg.path("corpus.y.txt"), corpus.corpus_y);
  textpipe::write_lexicon(cfg.path("lexicon.tsv"), corpus.gold);
  std::vector<textpipe::Sentence> ex, ey;
  std::vector<std::vector<std::pair<int, int>>> aligns;
  for (const auto& p : corpus.parallel_eval) {
    ex.push_back(p.x);
    ey.push_back(p.y);
    aligns.push_back(p.align);
  }
  textpipe::write_corpus(cfg.path("eval.x.txt"), ex);
  textpipe::write_corpus(cfg.path("eval.y.txt"), ey);
  textpipe::write_alignments(cfg.path("eval.align"), aligns);
  for (const char* f : {"corpus.x.txt", "corpus.y.txt", "lexicon.tsv", "eval.x.txt", "eval.y.txt",
                        "eval.align"})
    write_provenance(cfg, cfg.path(f));
}

void run_learn_bpe(const PipelineConfig& cfg) {
  ensure_out_dir(cfg);
  auto cx = textpipe::read_corpus(cfg.path("corpus.x.txt"));
  auto cy = textpipe::read_corpus(cfg.path("corpus.y.txt"));
  auto merges = textpipe::learn_bpe({&cx, &cy}, cfg.bpe_num_merges);
  textpipe::write_merges(cfg.path("codes.bpe"), merges);
  write_provenance(cfg, cfg.path("codes.bpe"));
}

void run_apply_bpe(const PipelineConfig& cfg) {
  ensure_out_dir(cfg);
  auto cx = textpipe::read_corpus(cfg.path("corpus.x.txt"));
  auto cy = textpipe::read_corpus(cfg.path("corpus.y.txt"));
  textpipe::BpeSegmenter bpe(textpipe::read_merges(cfg.path("codes.bpe")));
  auto counts = textpipe::count_tokens({&cx, &cy}, bpe);
  auto vocab = textpipe::Vocabulary::build(counts);
  textpipe::write_vocab(cfg.path("vocab.txt"), vocab);

  for (const auto& [cname, tname, corpus] :
       std::vector<std::tuple<std::string, std::string, const std::vector<textpipe::Sentence>*>>{
           {"corpus.x.txt", "tok.x.txt", &cx}, {"corpus.y.txt", "tok.y.txt", &cy}}) {
    std::vector<textpipe::TokenizedSentence> tok;
    tok.reserve(corpus->size());
    for (const auto& sent : *corpus) tok.push_back(textpipe::apply_bpe(sent, bpe, vocab));
    write_tokenized(cfg.path(tname), tok, vocab);
    write_provenance(cfg, cfg.path(tname));
  }
  write_provenance(cfg, cfg.path("vocab.txt"));
}

void run_extract_ngrams(const PipelineConfig& cfg) {
  ensure_out_dir(cfg);
  auto vocab = textpipe::read_vocab(cfg.path("vocab.txt"));
  for (int lang = 0; lang < 2; ++lang) {
    const std::string tok_name = lang == 0 ? "tok.x.txt" : "tok.y.txt";
    const std::string inv_name = lang == 0 ? "ngrams.x.tsv" : "ngrams.y.tsv";
    auto corpus = read_tokenized(cfg.path(tok_name), vocab);
    auto inv = textpipe::extract_ngrams(corpus, vocab, cfg.ngram_n_max, cfg.ngram_min_count,
                                        cfg.ngram_top_m, lang);
    textpipe::write_inventory(cfg.path(inv_name), inv);
    write_provenance(cfg, cfg.path(inv_name));
  }
}

void run_train_embed(const PipelineConfig& cfg) {
  ensure_out_dir(cfg);
  auto vocab = textpipe::read_vocab(cfg.path("vocab.txt"));
  for (int lang = 0; lang < 2; ++lang) {
    const std::string tok_name = lang == 0 ? "tok.x.txt" : "tok.y.txt";
    const std::string inv_name = lang == 0 ? "ngrams.x.tsv" : "ngrams.y.tsv";
    const std::string emb_name = lang == 0 ? "emb.x.vec" : "emb.y.vec";
    auto corpus = read_tokenized(cfg.path(tok_name), vocab);
    auto inv = textpipe::read_inventory(cfg.path(inv_name), vocab, lang);
    auto units = embed::augment_corpus_with_ngrams(corpus, vocab, inv);
    embed::SgnsConfig sc = cfg.sgns;
    sc.seed = substream(cfg.seed, lang == 0 ? "sgns_x" : "sgns_y");
    auto result = embed::train_sgns(units, sc, lang == 0 ? "x" : "y");
    embed::write_embeddings(cfg.path(emb_name), result.matrix);
    write_provenance(cfg, cfg.path(emb_name));
  }
}

void run_map_embed(const PipelineConfig& cfg) {
  ensure_out_dir(cfg);
  auto vocab = textpipe::read_vocab(cfg.path("vocab.txt"));
  auto inv_x = textpipe::read_inventory(cfg.path("ngrams.x.tsv"), vocab, 0);
  auto inv_y = textpipe::read_inventory(cfg.path("ngrams.y.tsv"), vocab, 1);
  auto ex = load_embeddings_with_freqs(cfg, "emb.x.vec", "x", vocab, inv_x);
  auto ey = load_embeddings_with_freqs(cfg, "emb.y.vec", "y", vocab, inv_y);
  auto seed_dict = xmap::anchor_dictionary(ex, ey);
  if (seed_dict.empty()) throw StageError("map-embed", "no shared anchor units between languages");
  auto result = xmap::self_learning(ex, ey, seed_dict, cfg.mapping);
  std::cerr << "map-embed: " << result.rounds_run << " rounds, final dictionary "
            << result.final_dict.size() << " pairs, orthogonality error "
            << result.mapping.max_orthogonality_error() << "\n";
  xmap::write_mapping(cfg.path("mapping.txt"), result.mapping);
  write_provenance(cfg, cfg.path("mapping.txt"));
}

void run_infer_table(const PipelineConfig& cfg) {
  ensure_out_dir(cfg);
  auto vocab = textpipe::read_vocab(cfg.path("vocab.txt"));
  auto inv_x = textpipe::read_inventory(cfg.path("ngrams.x.tsv"), vocab, 0);
  auto inv_y = textpipe::read_inventory(cfg.path("ngrams.y.tsv"), vocab, 1);
  auto ex = load_embeddings_with_freqs(cfg, "emb.x.vec", "x", vocab, inv_x);
  auto ey = load_embeddings_with_freqs(cfg, "emb.y.vec", "y", vocab, inv_y);
  auto mapping = xmap::read_mapping(cfg.path("mapping.txt"));

  auto keys_with_rows = [](const textpipe::NGramInventory& inv, const embed::EmbeddingMatrix& m) {
    std::vector<std::string> keys;
    for (const auto& k : inv.sorted_keys())
      if (m.find(k) >= 0) keys.push_back(k);
    std::sort(keys.begin(), keys.end());
    return keys;
  };
  const auto keys_x = keys_with_rows(inv_x, ex);
  const auto keys_y = keys_with_rows(inv_y, ey);
  xmap::ScorerConfig sc;
  sc.nn = cfg.table_nn;

  auto sp_x_mapped = xmap::make_unit_space(ex, keys_x, &mapping);
  auto sp_y_plain = xmap::make_unit_space(ey, keys_y, nullptr);
  auto t_x2y = xmap::infer_table(sp_x_mapped, sp_y_plain, cfg.table_k, sc, "x2y");
  xmap::write_table(cfg.path("table.x2y.tsv"), t_x2y);
  auto t_y2x = xmap::infer_table(sp_y_plain, sp_x_mapped, cfg.table_k, sc, "y2x");
  xmap::write_table(cfg.path("table.y2x.tsv"), t_y2x);
  write_provenance(cfg, cfg.path("table.x2y.tsv"));
  write_provenance(cfg, cfg.path("table.y2x.tsv"));
}

void run_pretrain(const PipelineConfig& cfg) {
  ensure_out_dir(cfg);
  auto vocab = textpipe::read_vocab(cfg.path("vocab.txt"));
  auto inv_x = textpipe::read_inventory(cfg.path("ngrams.x.tsv"), vocab, 0);
  auto inv_y = textpipe::read_inventory(cfg.path("ngrams.y.tsv"), vocab, 1);
  auto tok_x = read_tokenized(cfg.path("tok.x.txt"), vocab);
  auto tok_y = read_tokenized(cfg.path("tok.y.txt"), vocab);
  auto table_x2y = xmap::read_table(cfg.path("table.x2y.tsv"), "x2y");
  auto table_y2x = xmap::read_table(cfg.path("table.y2x.tsv"), "y2x");
  auto ex = load_embeddings_with_freqs(cfg, "emb.x.vec", "x", vocab, inv_x);
  auto ey = load_embeddings_with_freqs(cfg, "emb.y.vec", "y", vocab, inv_y);
  auto mapping = xmap::read_mapping(cfg.path("mapping.txt"));
  auto statics = objective::StaticTokenEmbeddings::build(vocab, ex, ey, mapping);

  trainloop::TrainConfig tc = cfg.pretrain;
  tc.seed = substream(cfg.seed, "pretrain");
  tc.enc.vocab = vocab.size();
  auto result = trainloop::train(tc, id_sentences(tok_x), id_sentences(tok_y), inv_x, inv_y,
                                 table_x2y, table_y2x, statics, vocab);
  encoder::save_checkpoint(cfg.path("model.ckpt"), result.best_state);
  std::ostringstream metrics;
  for (const auto& rec : result.records) metrics << trainloop::format_metrics_line(rec) << '\n';
  metrics << "final step0_avg_ppl=" << fmt_f(result.step0_avg_ppl)
          << " best_avg_ppl=" << fmt_f(result.best_avg_ppl) << " steps=" << result.steps_run
          << '\n';
  write_text(cfg.path("metrics.log"), metrics.str());
  write_provenance(cfg, cfg.path("model.ckpt"));
  write_provenance(cfg, cfg.path("metrics.log"));
}

void run_eval_align(const PipelineConfig& cfg) {
  ensure_out_dir(cfg);
  auto vocab = textpipe::read_vocab(cfg.path("vocab.txt"));
  textpipe::BpeSegmenter bpe(textpipe::read_merges(cfg.path("codes.bpe")));
  auto ex_sents = textpipe::read_corpus(cfg.path("eval.x.txt"));
  auto ey_sents = textpipe::read_corpus(cfg.path("eval.y.txt"));
  auto gold = textpipe::read_alignments(cfg.path("eval.align"));
  if (ex_sents.size() != ey_sents.size() || ex_sents.size() != gold.size())
    throw StageError("eval-align", "eval corpora and alignments disagree in length");

  encoder::EncoderState<float> st;
  objective::StaticTokenEmbeddings statics;
  const bool use_encoder = cfg.eval_method == "encoder";
  if (use_encoder) {
    st = encoder::load_checkpoint(cfg.path("model.ckpt"));
    if (st.vocab_hash != textpipe::vocab_hash(vocab))
      throw StageError("eval-align", "checkpoint vocab hash does not match vocab.txt");
  } else if (cfg.eval_method == "static") {
    auto inv_x = textpipe::read_inventory(cfg.path("ngrams.x.tsv"), vocab, 0);
    auto inv_y = textpipe::read_inventory(cfg.path("ngrams.y.tsv"), vocab, 1);
    auto emx = load_embeddings_with_freqs(cfg, "emb.x.vec", "x", vocab, inv_x);
    auto emy = load_embeddings_with_freqs(cfg, "emb.y.vec", "y", vocab, inv_y);
    auto mapping = xmap::read_mapping(cfg.path("mapping.txt"));
    statics = objective::StaticTokenEmbeddings::build(vocab, emx, emy, mapping);
  } else {
    throw ConfigError("eval.method must be encoder or static");
  }

  size_t inter = 0, a_total = 0, s_total = 0;
  std::vector<std::vector<std::pair<int, int>>> preds;
  for (size_t s = 0; s < ex_sents.size(); ++s) {
    auto pred = use_encoder ? evalsuite::align_words(st, ex_sents[s], ey_sents[s], bpe, vocab)
                            : evalsuite::align_words_static(statics, ex_sents[s], ey_sents[s], bpe,
                                                            vocab);
    auto gold_f = evalsuite::filter_gold(gold[s], evalsuite::retained_words(ex_sents[s], bpe, vocab),
                                         evalsuite::retained_words(ey_sents[s], bpe, vocab));
    for (const auto& link : pred.links) inter += gold_f.links.count(link);
    a_total += pred.links.size();
    s_total += gold_f.links.size();
    preds.emplace_back(pred.links.begin(), pred.links.end());
  }
  textpipe::write_alignments(cfg.path("align.pred.txt"), preds);

  const double p = a_total ? static_cast<double>(inter) / a_total : 0.0;
  const double r = s_total ? static_cast<double>(inter) / s_total : 0.0;
  const double f = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  const double aer =
      a_total + s_total ? 1.0 - 2.0 * static_cast<double>(inter) / (a_total + s_total) : 0.0;
  std::ostringstream rep;
  rep << "method=" << cfg.eval_method << " pairs=" << ex_sents.size() << '\n';
  rep << "precision=" << fmt_f(p) << '\n';
  rep << "recall=" << fmt_f(r) << '\n';
  rep << "f_measure=" << fmt_f(f) << '\n';
  rep << "aer=" << fmt_f(aer) << '\n';
  write_text(cfg.path("align.report.txt"), rep.str());
  write_provenance(cfg, cfg.path("align.pred.txt"));
  write_provenance(cfg, cfg.path("align.report.txt"));
}

void run_eval_table(const PipelineConfig& cfg) {
  ensure_out_dir(cfg);
  auto gold = textpipe::read_lexicon(cfg.path("lexicon.tsv"));
  auto table = xmap::read_table(cfg.path("table.x2y.tsv"), "x2y");
  auto per_order = evalsuite::table_precision(table, gold, cfg.eval_at_k);

  std::unordered_map<std::string, int64_t> wf;
  for (const auto& sent : textpipe::read_corpus(cfg.path("corpus.x.txt")))
    for (const auto& w : sent) ++wf[w];
  std::vector<std::pair<std::string, int64_t>> word_freqs(wf.begin(), wf.end());
  auto top = evalsuite::top_words_precision(table, gold, word_freqs, cfg.eval_top_words,
                                            cfg.eval_at_k);

  std::ostringstream rep;
  rep << "at_k=" << cfg.eval_at_k << '\n';
  for (const auto& op : per_order)
    rep << "order=" << op.order << " considered=" << op.considered << " hits=" << op.hits
        << " precision=" << fmt_f(op.precision) << '\n';
  rep << "top_words=" << cfg.eval_top_words << " considered=" << top.considered
      << " hits=" << top.hits << " precision=" << fmt_f(top.precision) << '\n';
  write_text(cfg.path("table.report.txt"), rep.str());
  write_provenance(cfg, cfg.path("table.report.txt"));
}

GradCheckOutcome run_grad_check(const PipelineConfig& cfg) {
  // Small double-precision encoder with a synthetic translation table;
  // checks the reverse-mode gradient of the translation-prediction loss
  // against central differences.
  GradCheckOutcome out;
  encoder::EncoderState<double> st;
  st.cfg.layers = 2;
  st.cfg.dim = 32;
  st.cfg.heads = 4;
  st.cfg.ffn = 64;
  st.cfg.max_len = 16;
  st.cfg.dropout = 0.0;
  st.cfg.vocab = 40;
  st.cfg.n_langs = 2;
  st.init(substream(cfg.seed, "grad_check"));

  // vocabulary of single letters so n-gram keys resolve
  std::unordered_map<std::string, int64_t> counts;
  for (int i = 0; i < 35; ++i) counts["t" + std::to_string(i)] = 100 - i;
  auto vocab = textpipe::Vocabulary::build(counts);

  textpipe::NGramInventory inv(2, 1, 100, 0);
  std::vector<int> ids01 = {vocab.id("t1"), vocab.id("t2")};
  inv.insert({ids01, 0, 10}, vocab);
  std::vector<int> ids2 = {vocab.id("t3")};
  inv.insert({ids2, 0, 8}, vocab);

  xmap::TranslationTable table;
  table.direction = "x2y";
  table.k = 2;
  const std::string key01 = textpipe::ngram_key(ids01, vocab);
  table.sources.push_back(key01);
  table.entries[key01] = {
      {key01, textpipe::ngram_key({vocab.id("t5"), vocab.id("t6"), vocab.id("t7")}, vocab), 1.2, 0.7},
      {key01, textpipe::ngram_key({vocab.id("t8")}, vocab), 0.8, 0.3}};
  const std::string key3 = "t3";
  table.sources.push_back(key3);
  table.entries[key3] = {{key3, textpipe::ngram_key({vocab.id("t9"), vocab.id("t4")}, vocab), 1.0, 1.0}};

  std::vector<int> stream = {textpipe::Vocabulary::kBos, vocab.id("t1"), vocab.id("t2"),
                             vocab.id("t10"), vocab.id("t3"), vocab.id("t11"), vocab.id("t4"),
                             textpipe::Vocabulary::kEos};
  objective::CmlmConfig oc;
  oc.k = 2;
  oc.coverage = 0.6;
  Rng rng(substream(cfg.seed, "grad_check_plan"));
  auto plan = objective::plan_masks(stream, inv, &table, objective::ObjKind::CMLM, oc, vocab, rng);
  if (plan.spans.empty()) throw StageError("grad-check", "empty mask plan");
  auto input = objective::masked_stream(stream, plan, vocab);

  // fixed non-trivial prior
  auto prior = [](const objective::MaskedSpan& span, const std::vector<int>& cand) {
    const int l = span.len(), m = static_cast<int>(cand.size());
    std::vector<double> a(static_cast<size_t>(l) * m, 0.0);
    for (int j = 0; j < m; ++j) {
      double z = 0.0;
      for (int i = 0; i < l; ++i) z += 1.0 + ((i + j) % 3);
      for (int i = 0; i < l; ++i)
        a[static_cast<size_t>(i) * m + j] = (1.0 + ((i + j) % 3)) / z;
    }
    return a;
  };

  encoder::ParamGrads<double> grads(st);
  auto loss_value = [&]() {
    Graph<double> g;
    encoder::BoundParams<double> bp(&g, &st, nullptr);
    auto piece =
        objective::build_cmlm_stream_loss(g, bp, input, plan, table, vocab, prior, oc, 0, false);
    return g.scalar_value(piece.sum_node) / piece.denom;
  };
  {
    Graph<double> g;
    encoder::BoundParams<double> bp(&g, &st, &grads);
    auto piece =
        objective::build_cmlm_stream_loss(g, bp, input, plan, table, vocab, prior, oc, 0, false);
    g.backward(piece.sum_node);
    grads.scale(1.0 / piece.denom);
  }
  std::vector<std::pair<std::string, TensorD*>> params;
  for (auto& [name, t] : st.named_params()) params.emplace_back(name, t);
  auto rep = grad_check(loss_value, params, grads.g, 1e-5);

  out.max_rel_error = rep.max_rel_error;
  out.ok = rep.max_rel_error <= 1e-3;
  std::ostringstream os;
  os << "grad-check: max_rel_error=" << fmt_f(rep.max_rel_error) << " worst_param="
     << rep.worst_param << " coord=" << rep.worst_coord << " analytic=" << fmt_f(rep.analytic)
     << " numeric=" << fmt_f(rep.numeric) << (out.ok ? " PASS" : " FAIL");
  out.report = os.str();
  return out;
}

void run_pipeline(const PipelineConfig& cfg) {
  run_gen_corpus(cfg);
  run_learn_bpe(cfg);
  run_apply_bpe(cfg);
  run_extract_ngrams(cfg);
  run_train_embed(cfg);
  run_map_embed(cfg);
  run_infer_table(cfg);
  run_pretrain(cfg);
  run_eval_align(cfg);
  run_eval_table(cfg);
}

}  // namespace cmlm::pipeline
