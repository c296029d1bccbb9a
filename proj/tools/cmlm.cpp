// Command-line front end for the cross-lingual pre-training pipeline.
//
// Subcommands run one stage each against a shared flat config file;
// `pipeline` runs everything in order. Exit codes: 1 usage, 2 bad config,
// 3 stage failure.

#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cmlm/pipeline.hpp"

namespace {

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
};

cmlm::pipeline::PipelineConfig load_config(const Options& opt) {
  if (opt.config_path.empty())
    return cmlm::pipeline::PipelineConfig::from_map({}, opt.overrides);
  return cmlm::pipeline::PipelineConfig::from_file(opt.config_path, opt.overrides);
}

void add_common(CLI::App* cmd, Options& opt) {
  cmd->add_option("-c,--config", opt.config_path, "Pipeline config file (flat key = value)");
  cmd->add_option("-s,--set", opt.overrides,
                  "Override config entries as dotted key=value pairs (repeatable)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cmlm: cross-lingual masked language model pre-training pipeline"};
  app.require_subcommand(1);

  Options opt;
  using Runner = void (*)(const cmlm::pipeline::PipelineConfig&);
  struct Stage {
    const char* name;
    const char* help;
    Runner run;
  };
  const std::vector<Stage> stages = {
      {"gen-corpus", "Generate the synthetic cipher language pair", cmlm::pipeline::run_gen_corpus},
      {"learn-bpe", "Learn shared BPE merges over both corpora", cmlm::pipeline::run_learn_bpe},
      {"apply-bpe", "Tokenize both corpora and build the shared vocabulary",
       cmlm::pipeline::run_apply_bpe},
      {"extract-ngrams", "Build per-language frequent n-gram inventories",
       cmlm::pipeline::run_extract_ngrams},
      {"train-embed", "Train monolingual unit embeddings (SGNS)", cmlm::pipeline::run_train_embed},
      {"map-embed", "Map the embedding spaces (Procrustes self-learning)",
       cmlm::pipeline::run_map_embed},
      {"infer-table", "Score n-gram pairs and emit top-k translation tables",
       cmlm::pipeline::run_infer_table},
      {"pretrain", "Pre-train the encoder with alternating MLM/CMLM batches",
       cmlm::pipeline::run_pretrain},
      {"eval-align", "Evaluate word alignment on the parallel eval set",
       cmlm::pipeline::run_eval_align},
      {"eval-table", "Score the translation table against the gold lexicon",
       cmlm::pipeline::run_eval_table},
      {"pipeline", "Run every stage in order", cmlm::pipeline::run_pipeline},
  };

  Runner selected = nullptr;
  bool grad_check_selected = false;
  for (const auto& stage : stages) {
    CLI::App* cmd = app.add_subcommand(stage.name, stage.help);
    add_common(cmd, opt);
    cmd->callback([&selected, &stage]() { selected = stage.run; });
  }
  {
    CLI::App* cmd = app.add_subcommand(
        "grad-check", "Check the objective gradient against central finite differences");
    add_common(cmd, opt);
    cmd->callback([&grad_check_selected]() { grad_check_selected = true; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  std::string stage_name = app.get_subcommands().empty()
                               ? std::string("?")
                               : app.get_subcommands().front()->get_name();
  try {
    const auto cfg = load_config(opt);
    if (grad_check_selected) {
      const auto outcome = cmlm::pipeline::run_grad_check(cfg);
      std::cout << outcome.report << "\n";
      return outcome.ok ? 0 : 3;
    }
    selected(cfg);
  } catch (const cmlm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const cmlm::StageError& e) {
    std::cerr << "stage " << e.stage << " failed: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "stage " << stage_name << " failed: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
