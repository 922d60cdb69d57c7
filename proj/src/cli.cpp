#include "redbert/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "redbert/analyze.hpp"
#include "redbert/datapipe.hpp"
#include "redbert/error.hpp"
#include "redbert/synthetic.hpp"
#include "redbert/trainkit.hpp"

namespace redbert {

namespace {

namespace fs = std::filesystem;

std::string text(const std::string& v) { return v; }
std::string text(bool v) { return v ? "true" : "false"; }
std::string text(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
template <typename T>
  requires std::is_integral_v<T>
std::string text(T v) {
  return std::to_string(v);
}

// Registers options on a subcommand and remembers how to print their
// resolved values for the manifest.
class Settings {
 public:
  explicit Settings(CLI::App* app) : app_(app) {}

  template <typename T>
  CLI::Option* option(const std::string& key, T& var, const std::string& help) {
    values_.emplace_back(key, [&var] { return text(var); });
    return app_->add_option("--" + key, var, help)->capture_default_str();
  }

  CLI::Option* flag(const std::string& key, bool& var, const std::string& help) {
    values_.emplace_back(key, [&var] { return text(var); });
    return app_->add_flag("--" + key, var, help);
  }

  // Path-valued keys go to the manifest's inputs as well.
  template <typename T>
  CLI::Option* input(const std::string& key, T& var, const std::string& help) {
    inputs_.push_back(key);
    return option(key, var, help);
  }

  std::vector<std::pair<std::string, std::string>> resolved() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [k, get] : values_) out.emplace_back(k, get());
    return out;
  }
  const std::vector<std::string>& inputs() const { return inputs_; }

 private:
  CLI::App* app_;
  std::vector<std::pair<std::string, std::function<std::string()>>> values_;
  std::vector<std::string> inputs_;
};

struct CommonOptions {
  std::uint64_t seed = 0;
  std::string run_root;
  std::string name;

  void add(Settings& s) {
    s.option("seed", seed, "Random seed");
    s.option("run-root", run_root, "Output root (default: $REDBERT_RUN_DIR or ./runs)");
    s.option("name", name, "Run directory name (default: <command>-seed<seed>)");
  }
};

struct ModelOptions {
  std::string vocab = (fs::path(REDBERT_DATA_DIR) / "vocab.txt").string();
  std::size_t layers = 2;
  std::size_t hidden = 64;
  std::size_t heads = 4;
  std::size_t ff = 0;
  std::size_t max_len = kDefaultMaxLen;
  double dropout = 0.1;
  bool inject_deps = false;
  std::size_t dep_dim = 300;
  std::size_t dep_heads = 4;
  std::string dep_embeddings;
  bool freeze_deps = false;

  void add(Settings& s) {
    s.input("vocab", vocab, "WordPiece vocabulary file");
    s.option("layers", layers, "Encoder blocks");
    s.option("hidden", hidden, "Hidden size");
    s.option("heads", heads, "Attention heads");
    s.option("ff", ff, "Feed-forward size (0 = 4 x hidden)");
    s.option("max-len", max_len, "Maximum sequence length in pieces");
    s.option("dropout", dropout, "Dropout probability");
    s.flag("inject-deps", inject_deps, "Add the dependency-embedding side path");
    s.option("dep-dim", dep_dim, "Dependency embedding width");
    s.option("dep-heads", dep_heads, "Attention heads of the side block");
    s.input("dep-embeddings", dep_embeddings, "word2vec text file for the dependency table");
    s.flag("freeze-deps", freeze_deps, "Keep the dependency table fixed");
  }

  ModelConfig config(std::size_t vocab_size) const {
    ModelConfig c;
    c.num_layers = layers;
    c.hidden_size = hidden;
    c.num_heads = heads;
    c.ff_size = ff ? ff : 4 * hidden;
    c.vocab_size = vocab_size;
    c.max_len = max_len;
    c.dropout = dropout;
    c.dep_dim = dep_dim;
    c.dep_heads = dep_heads;
    c.validate();
    return c;
  }

  Backbone backbone(const Vocab& vocab, std::uint64_t seed) const {
    Backbone b = Backbone::init(config(vocab.size()), inject_deps, seed);
    if (inject_deps) {
      b.injector->table.set_fine_tune(!freeze_deps);
      if (!dep_embeddings.empty()) {
        b.set_dep_table(load_dep_embeddings(dep_embeddings, vocab, dep_dim, seed));
      }
    }
    return b;
  }
};

struct TrainOptions {
  TrainRunConfig run;
  void add(Settings& s) {
    s.option("batch-size", run.batch_size, "Batch size");
    s.option("lr", run.learning_rate, "Adam learning rate (constant)");
    s.option("epochs", run.max_epochs, "Maximum epochs");
    s.option("patience", run.patience, "Validation rounds without improvement before stopping");
    s.option("eval-every", run.eval_every, "Validate every n steps (0 = every epoch)");
    s.option("max-steps", run.max_steps, "Stop after n steps (0 = no limit)");
    s.option("clip", run.clip_norm, "Global gradient-norm clip (0 = off)");
    s.option("validation-fraction", run.validation_fraction,
             "Share of the training split held out for early stopping");
  }
};

class RunDir {
 public:
  RunDir(const std::string& command, const CommonOptions& common) {
    fs::path root = "runs";
    if (!common.run_root.empty()) {
      root = common.run_root;
    } else if (const char* env = std::getenv("REDBERT_RUN_DIR"); env && *env) {
      root = env;
    }
    path_ = root / (common.name.empty() ? command + "-seed" + std::to_string(common.seed)
                                        : common.name);
    std::error_code ec;
    fs::create_directories(path_, ec);
    if (ec) throw IoError("cannot create run directory " + path_.string() + ": " + ec.message());
  }

  fs::path operator/(const std::string& file) const { return path_ / file; }
  const fs::path& path() const { return path_; }

  // Written before any computation; config.txt can be fed back via --config.
  void write_manifest(const std::string& command, const Settings& settings,
                      std::uint64_t seed, const std::vector<std::string>& outputs) const {
    nlohmann::json cfg = nlohmann::json::object();
    nlohmann::json inputs = nlohmann::json::object();
    std::string config_text;
    for (const auto& [k, v] : settings.resolved()) {
      cfg[k] = v;
      config_text += k + "=" + v + "\n";
    }
    for (const auto& k : settings.inputs()) inputs[k] = cfg[k];
    nlohmann::json j = {{"command", command},
                        {"version", REDBERT_VERSION},
                        {"seed", seed},
                        {"config", cfg},
                        {"inputs", inputs},
                        {"outputs", outputs}};
    write_file(path_ / "manifest.json", j.dump(2) + "\n");
    write_file(path_ / "config.txt", config_text);
  }

  static void write_file(const fs::path& p, const std::string& body) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot write " + p.string());
    out << body;
    if (!out) throw IoError("failed writing " + p.string());
  }

 private:
  fs::path path_;
};

// ---------------------------------------------------------------------------

struct GenCorpus {
  CommonOptions common;
  std::string grammar = default_grammar_path().string();
  SyntheticSpec spec;
  std::size_t dep_dim = 300;

  void add(Settings& s) {
    common.add(s);
    s.input("grammar", grammar, "Template grammar file");
    s.option("docs", spec.num_docs, "Corpus documents");
    s.option("chat-fraction", spec.chat_fraction, "Share of chat-log documents");
    s.option("examples", spec.examples_per_task, "Labeled examples per task");
    s.option("dep-dim", dep_dim, "Width of the synthetic dependency embeddings");
  }

  void run(const Settings& s) {
    RunDir dir("gen-corpus", common);
    std::vector<std::string> outputs = {"corpus.jsonl", "vocab.txt", "dep_embeddings.txt",
                                        "metrics.csv"};
    for (auto k : kAllTasks) {
      outputs.push_back(std::string(task_name(k)) + ".jsonl");
      outputs.push_back(std::string(task_name(k)) + ".labels");
    }
    dir.write_manifest("gen-corpus", s, common.seed, outputs);
    spec.seed = common.seed;
    const Grammar g = load_grammar(grammar);
    const SyntheticData data = generate_synthetic_corpus(g, spec);
    write_corpus(data.corpus, dir / "corpus.jsonl");
    save_vocab(build_vocab(g), dir / "vocab.txt");
    write_dep_embeddings(dir / "dep_embeddings.txt",
                         synthesize_dep_embeddings(g, dep_dim, common.seed));
    for (const auto& [kind, ds] : data.tasks) {
      write_task_examples(ds.examples, kind, dir / (std::string(task_name(kind)) + ".jsonl"));
      write_labels(ds.labels, dir / (std::string(task_name(kind)) + ".labels"));
    }
    RunDir::write_file(dir / "metrics.csv", "step,split,loss,f1\n");
    std::cout << "wrote " << data.corpus.size() << " documents and "
              << data.tasks.size() << " task files to " << dir.path().string() << "\n";
  }
};

struct Pretrain {
  CommonOptions common;
  ModelOptions model;
  TrainOptions train;
  std::string corpus;
  std::size_t instances = 10000;

  void add(Settings& s) {
    common.add(s);
    model.add(s);
    train.add(s);
    s.input("corpus", corpus, "Corpus JSON-lines file")->required();
    s.option("instances", instances, "Training instances drawn from the training documents");
  }

  void run(const Settings& s) {
    RunDir dir("pretrain", common);
    dir.write_manifest("pretrain", s, common.seed,
                       {"checkpoint.bin", "metrics.csv", "run_log.jsonl"});
    train.run.seed = common.seed;
    const Vocab vocab = load_vocab(model.vocab);
    const Corpus docs = read_corpus(corpus);
    auto [train_docs, test_docs] = split_corpus(docs, {0.9, common.seed});
    auto [fit_docs, val_docs] =
        split(train_docs, SplitSpec{1.0 - train.run.validation_fraction, common.seed + 1});
    const std::size_t max_len = model.max_len;
    const auto fit = build_pretraining_instances(fit_docs, vocab, instances, max_len,
                                                 common.seed);
    std::vector<TrainingInstance> val;
    if (val_docs.size() >= 2) {
      const auto n_val = std::max<std::size_t>(
          1, static_cast<std::size_t>(instances * train.run.validation_fraction));
      val = build_pretraining_instances(val_docs, vocab, n_val, max_len, common.seed + 2);
    }
    PretrainModel m;
    m.backbone = model.backbone(vocab, common.seed);
    {
      PretrainModel fresh = PretrainModel::init(m.backbone.config(), model.inject_deps,
                                                common.seed);
      m.mlm = fresh.mlm;
      m.nsp = fresh.nsp;
    }
    RunLogger log(dir / "metrics.csv", dir / "run_log.jsonl");
    log.event("start", nlohmann::json({{"parameters", count_elements(m.all_params())},
                                       {"train_instances", fit.size()},
                                       {"validation_instances", val.size()}})
                           .dump());
    const PretrainResult r = pretrain(m, fit, val, train.run, &log, dir / "checkpoint.bin");
    if (test_docs.size() >= 2) {
      const auto test = build_pretraining_instances(
          test_docs, vocab, std::max<std::size_t>(1, instances / 10), max_len, common.seed + 3);
      log.metric(r.steps, "test", pretrain_eval_loss(m, test, train.run.batch_size));
    }
    log.event("done", nlohmann::json({{"steps", r.steps}, {"epochs", r.epochs}}).dump());
    std::cout << "pretrained " << r.steps << " steps; best validation loss "
              << r.best_validation_loss << "; checkpoint " << (dir / "checkpoint.bin").string()
              << "\n";
  }
};

TaskDataset load_dataset(TaskKind kind, const std::string& data, const std::string& labels,
                         const std::string& intent_labels) {
  TaskDataset ds;
  ds.kind = kind;
  ds.examples = read_task_examples(data, kind);
  if (ds.examples.empty()) throw DataError("task file " + data + " has no examples");
  ds.labels = labels.empty() ? infer_labels(ds.examples, kind) : read_labels(labels);
  if (kind == TaskKind::kProactive) {
    if (!intent_labels.empty()) {
      ds.intent_labels = read_labels(intent_labels);
    } else {
      ds.intent_labels = ds.labels;
    }
  }
  check_label_set(ds);
  return ds;
}

void write_report(const RunDir& dir, const MetricReport& report) {
  RunDir::write_file(dir / "report.csv", render_report_csv(report));
}

struct Finetune {
  CommonOptions common;
  ModelOptions model;
  TrainOptions train;
  std::string task;
  std::string data;
  std::string labels;
  std::string intent_labels;
  std::string checkpoint;
  bool freeze_encoder = false;
  double test_fraction = 0.1;
  std::size_t intent_dim = 32;

  void add(Settings& s) {
    common.add(s);
    model.add(s);
    train.add(s);
    s.option("task", task, "intent, ner, sentiment, title or proactive")->required();
    s.input("data", data, "Task JSON-lines file")->required();
    s.input("labels", labels, "Label file (default: labels found in the data)");
    s.input("intent-labels", intent_labels, "Current-intent label file (proactive)");
    s.input("checkpoint", checkpoint, "Starting checkpoint (default: random initialization)");
    s.flag("freeze-encoder", freeze_encoder, "Train the task head only");
    s.option("test-fraction", test_fraction, "Share of the data held out as test");
    s.option("intent-dim", intent_dim, "Width of the current-intent network (proactive)");
  }

  void run(const Settings& s) {
    RunDir dir("finetune", common);
    dir.write_manifest("finetune", s, common.seed,
                       {"checkpoint.bin", "metrics.csv", "report.csv", "run_log.jsonl"});
    train.run.seed = common.seed;
    const TaskKind kind = parse_task(task);
    const Vocab vocab = load_vocab(model.vocab);
    const TaskDataset all = load_dataset(kind, data, labels, intent_labels);
    auto [train_part, test_part] = carve_validation(all, test_fraction, common.seed);
    auto [fit, val] = carve_validation(train_part, train.run.validation_fraction,
                                       common.seed + 1);
    Backbone backbone = checkpoint.empty() ? model.backbone(vocab, common.seed)
                                           : backbone_from(load_checkpoint(checkpoint));
    if (backbone.config().vocab_size != vocab.size()) {
      throw ConfigError("checkpoint vocabulary has " +
                        std::to_string(backbone.config().vocab_size) + " entries, vocab file " +
                        std::to_string(vocab.size()));
    }
    const std::size_t max_len = backbone.config().max_len;
    TaskModel m = TaskModel::init(kind, std::move(backbone), all.labels, all.intent_labels,
                                  common.seed, intent_dim);
    m.freeze_encoder = freeze_encoder;
    RunLogger log(dir / "metrics.csv", dir / "run_log.jsonl");
    log.event("start", nlohmann::json({{"trainable", count_elements(m.params())},
                                       {"train_examples", fit.examples.size()},
                                       {"validation_examples", val.examples.size()},
                                       {"test_examples", test_part.examples.size()}})
                           .dump());
    const FineTuneResult r =
        fine_tune(m, fit, val, vocab, max_len, train.run, &log, dir / "checkpoint.bin");
    const MetricReport report = test_part.examples.empty()
                                    ? r.best_validation
                                    : evaluate_task(m, test_part, vocab, max_len);
    log.metric(r.steps, "test", report.loss, report.f1());
    write_report(dir, report);
    std::cout << task_name(kind) << ": test F1 " << report.f1() << " (macro " << report.macro_f1
              << ", micro " << report.micro_f1 << ") after " << r.epochs << " epochs\n";
  }
};

struct Eval {
  CommonOptions common;
  std::string vocab = (fs::path(REDBERT_DATA_DIR) / "vocab.txt").string();
  std::string checkpoint;
  std::string data;

  void add(Settings& s) {
    common.add(s);
    s.input("vocab", vocab, "WordPiece vocabulary file");
    s.input("checkpoint", checkpoint, "Fine-tuned checkpoint")->required();
    s.input("data", data, "Task JSON-lines file")->required();
  }

  void run(const Settings& s) {
    RunDir dir("eval", common);
    dir.write_manifest("eval", s, common.seed, {"metrics.csv", "report.csv"});
    const Vocab v = load_vocab(vocab);
    const TaskModel m = task_model_from(load_checkpoint(checkpoint));
    TaskDataset ds;
    ds.kind = m.kind;
    ds.labels = m.labels;
    ds.intent_labels = m.intent_labels;
    ds.examples = read_task_examples(data, m.kind);
    check_label_set(ds);
    const MetricReport report = evaluate_task(m, ds, v, m.backbone.config().max_len);
    RunLogger log(dir / "metrics.csv", dir / "run_log.jsonl");
    log.metric(0, "test", report.loss, report.f1());
    write_report(dir, report);
    std::cout << task_name(m.kind) << ": F1 " << report.f1() << " over " << report.total
              << (is_tagging(m.kind) ? " tokens\n" : " examples\n");
  }
};

struct Project {
  CommonOptions common;
  std::string vocab = (fs::path(REDBERT_DATA_DIR) / "vocab.txt").string();
  std::string sentence;
  std::string model_a;
  std::string model_b;
  std::string name_a = "original";
  std::string name_b = "retrained";

  void add(Settings& s) {
    common.add(s);
    s.input("vocab", vocab, "WordPiece vocabulary file");
    s.option("sentence", sentence, "Sentence to embed")->required();
    s.input("model-a", model_a, "First checkpoint (red)")->required();
    s.input("model-b", model_b, "Second checkpoint (blue)")->required();
    s.option("name-a", name_a, "Legend name of the first model");
    s.option("name-b", name_b, "Legend name of the second model");
  }

  void run(const Settings& s) {
    RunDir dir("project", common);
    dir.write_manifest("project", s, common.seed,
                       {"projection.svg", "projection.csv", "distances.csv", "metrics.csv"});
    const Vocab v = load_vocab(vocab);
    const Backbone a = backbone_from(load_checkpoint(model_a));
    const Backbone b = backbone_from(load_checkpoint(model_b));
    const std::size_t max_len = std::min(a.config().max_len, b.config().max_len);
    ProjectionReport r = projection_report(a, b, v, sentence, max_len);
    r.name_a = name_a;
    r.name_b = name_b;
    emit_figure(r, dir / "projection.svg");
    RunDir::write_file(dir / "distances.csv", render_distances(r));
    RunDir::write_file(dir / "metrics.csv", "step,split,loss,f1\n");
    std::cout << "projected " << r.words.size() << " tokens; explained variance "
              << r.explained_ratio[0] << ", " << r.explained_ratio[1] << "\n";
  }
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Appends "--key=value" for every entry of the --config file whose key was not
// given on the command line, so flags take precedence over the file.
std::vector<std::string> merge_config(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) path = args[i].substr(9);
  }
  if (path.empty()) return args;
  std::ifstream in(path);
  if (!in) throw CLI::FileError::Missing(path);
  auto given = [&](const std::string& key) {
    for (const auto& a : args) {
      if (a == "--" + key || a.rfind("--" + key + "=", 0) == 0) return true;
    }
    return false;
  };
  std::vector<std::string> extra;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw CLI::ConversionError(path + " line " + std::to_string(line_no) +
                                 ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    if (key == "config" || value.empty() || given(key)) continue;
    extra.push_back("--" + key + "=" + value);
  }
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args) {
  CLI::App app{"Retail-domain BERT toolkit: corpus generation, pretraining, fine-tuning, "
               "evaluation and embedding projection"};
  app.name(args.empty() ? "redbert" : args[0]);
  app.require_subcommand(1);

  GenCorpus gen;
  Pretrain pre;
  Finetune fin;
  Eval ev;
  Project proj;
  std::vector<std::unique_ptr<Settings>> settings;
  std::vector<std::pair<CLI::App*, std::function<void(const Settings&)>>> commands;
  auto add = [&](const char* name, const char* help, auto& cmd) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", "key=value settings file (flags take precedence)");
    settings.push_back(std::make_unique<Settings>(sub));
    cmd.add(*settings.back());
    commands.emplace_back(sub, [&cmd](const Settings& s) { cmd.run(s); });
  };
  add("gen-corpus", "Generate the synthetic corpus, vocabulary and task files", gen);
  add("pretrain", "Pretrain with masked-token and next-sentence objectives", pre);
  add("finetune", "Fine-tune a task head (and encoder) on a task file", fin);
  add("eval", "Score a fine-tuned checkpoint on a task file", ev);
  add("project", "PCA projection of two models' token embeddings for one sentence", proj);

  try {
    std::vector<std::string> rest =
        merge_config({args.begin() + (args.empty() ? 0 : 1), args.end()});
    std::reverse(rest.begin(), rest.end());  // CLI11 consumes vectors from the back
    app.parse(rest);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  try {
    for (std::size_t i = 0; i < commands.size(); ++i) {
      if (commands[i].first->parsed()) commands[i].second(*settings[i]);
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

int cli_dispatch(int argc, char** argv) {
  return cli_dispatch(std::vector<std::string>(argv, argv + argc));
}

}  // namespace redbert
