#include "cli.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cbert/bench.hpp"
#include "cbert/checkpoint.hpp"
#include "cbert/errors.hpp"
#include "cbert/finetune.hpp"
#include "cbert/gradcheck.hpp"
#include "cbert/io.hpp"
#include "cbert/noise.hpp"
#include "cbert/pretrain.hpp"
#include "cbert/wordpiece.hpp"

namespace cbert::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr int kRunConfigVersion = 1;

struct Common {
  std::string config_path;
  std::uint64_t seed = 0;
  std::string mode = "character";
  std::string out = "runs";
};

class Context {
 public:
  Context(std::string command, Common common, json file, std::ostream& out, std::ostream& err)
      : command_(std::move(command)),
        common_(std::move(common)),
        file_(std::move(file)),
        out(out),
        err(err) {}

  const Common& common() const { return common_; }
  std::uint64_t seed() const { return common_.seed; }
  FrontendMode mode() const { return parse_frontend_mode(common_.mode); }
  const json& file() const { return file_; }
  const fs::path& run_dir() const { return run_dir_; }

  // The "model" object of the config file, or the desk configuration.
  ModelConfig model_config(FrontendMode mode) const {
    if (file_.contains("model")) {
      json j = file_.at("model");
      j["mode"] = to_string(mode);
      return ModelConfig::from_json(j);
    }
    return desk_config(mode);
  }

  void start(const json& options) {
    const std::time_t now =
        std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
    const std::string base =
        command_ + "-" + stamp + "-seed" + std::to_string(common_.seed);
    fs::path dir = fs::path(common_.out) / base;
    for (int n = 1; fs::exists(dir); ++n) {
      dir = fs::path(common_.out) / (base + "-" + std::to_string(n));
    }
    fs::create_directories(dir);
    run_dir_ = dir;
    run_config_ = {{"format_version", kRunConfigVersion},
                   {"command", command_},
                   {"seed", common_.seed},
                   {"mode", common_.mode},
                   {"options", options}};
    for (const char* key : {"model", "phases", "task"}) {
      if (file_.contains(key)) run_config_[key] = file_.at(key);
    }
    write_run_config();
    out << "run directory: " << run_dir_.string() << '\n';
  }

  // Adds a resolved value to the logged RunConfig.
  void record(const std::string& key, json value) {
    run_config_[key] = std::move(value);
    write_run_config();
  }

  void write(const std::string& name, const std::string& contents) const {
    write_file_atomic(run_dir_ / name, contents);
  }

 private:
  void write_run_config() const { write("run_config.json", run_config_.dump(2) + "\n"); }

  std::string command_;
  Common common_;
  json file_;
  fs::path run_dir_;
  json run_config_;

 public:
  std::ostream& out;
  std::ostream& err;
};

using Runner = std::function<int(Context&)>;
using Setup = std::function<Runner(CLI::App&)>;

std::shared_ptr<const wordpiece::Vocab> load_vocab(const std::string& path) {
  return std::make_shared<const wordpiece::Vocab>(wordpiece::Vocab::load(path));
}

finetune::TaskSpec load_task(const Context& ctx, const std::string& path) {
  if (!path.empty()) {
    try {
      return finetune::TaskSpec::from_json(json::parse(read_file(path)));
    } catch (const json::exception& e) {
      throw ConfigError(path + ": " + e.what());
    }
  }
  if (ctx.file().contains("task")) return finetune::TaskSpec::from_json(ctx.file().at("task"));
  throw ConfigError("a task spec is required (--task or a \"task\" entry in --config)");
}

std::vector<finetune::TaskExample> load_split(const std::string& path, TaskKind kind) {
  if (path.empty()) return {};
  return finetune::read_examples(path, kind);
}

// Vocabulary and config for a model trained from scratch in `mode`.
std::pair<ModelConfig, std::shared_ptr<const wordpiece::Vocab>> fresh_model(
    const Context& ctx, FrontendMode mode, const std::string& vocab_path) {
  ModelConfig config = ctx.model_config(mode);
  std::shared_ptr<const wordpiece::Vocab> vocab;
  if (mode == FrontendMode::kWordpiece) {
    if (vocab_path.empty()) throw ConfigError("wordpiece mode needs --vocab");
    vocab = load_vocab(vocab_path);
    config.vocab_size = vocab->size();
  }
  return {config, vocab};
}

// ---------------------------------------------------------------- commands

Runner setup_build_vocab(CLI::App& app) {
  struct Opts {
    std::string corpus;
    std::size_t size = 0;
    std::size_t min_pair_freq = 2;
  };
  auto o = std::make_shared<Opts>();
  app.add_option("--corpus", o->corpus, "Whitespace-separated word stream")->required();
  app.add_option("--size", o->size, "Target vocabulary size")->required();
  app.add_option("--min-pair-freq", o->min_pair_freq, "Stop below this pair frequency");
  return [o](Context& ctx) {
    const auto words = read_word_stream(o->corpus);
    const auto vocab = wordpiece::learn_vocab(words, o->size, o->min_pair_freq);
    vocab.save(ctx.run_dir() / "vocab.txt");
    ctx.out << "pieces\t" << vocab.size() << "\nwords\t" << words.size() << '\n';
    return kExitOk;
  };
}

Runner setup_analyze(CLI::App& app) {
  struct Opts {
    std::string corpus;
    std::vector<std::string> vocabs;
  };
  auto o = std::make_shared<Opts>();
  app.add_option("--corpus", o->corpus, "Word stream to segment")->required();
  app.add_option("--vocab", o->vocabs, "Vocabulary files; several must share one size")
      ->required();
  return [o](Context& ctx) {
    const auto words = read_word_stream(o->corpus);
    std::vector<wordpiece::Vocab> vocabs;
    for (const auto& p : o->vocabs) vocabs.push_back(wordpiece::Vocab::load(p));
    for (const auto& v : vocabs) {
      if (v.size() != vocabs.front().size()) {
        throw ConfigError("vocabularies must have equal sizes to be compared (" +
                          std::to_string(vocabs.front().size()) + " vs " +
                          std::to_string(v.size()) + ")");
      }
    }
    ctx.out << "vocab\tsize\tmean_pieces_per_occurrence\tunsplit_fraction\n";
    json summary = json::array();
    for (std::size_t i = 0; i < vocabs.size(); ++i) {
      const auto report = wordpiece::analyze_fragmentation(vocabs[i], words);
      const std::string stem = "fragmentation-" + std::to_string(i);
      auto j = report.to_json();
      j["vocab"] = o->vocabs[i];
      ctx.write(stem + ".json", j.dump(2) + "\n");
      ctx.write(stem + ".tsv", report.to_tsv());
      summary.push_back(j);
      ctx.out << o->vocabs[i] << '\t' << vocabs[i].size() << '\t'
              << report.mean_pieces_per_occurrence << '\t' << report.unsplit_fraction << '\n';
    }
    ctx.write("report.json", summary.dump(2) + "\n");
    return kExitOk;
  };
}

Runner setup_pretrain(CLI::App& app) {
  struct Opts {
    std::string corpus;
    std::string vocab;
    std::size_t updates = 100;
    std::size_t batch = 8;
    std::size_t seq_len = 64;
    double lr = 1e-3;
    double warmup = 0.01;
    std::string optimizer = "lamb";
    std::size_t targets = 100000;
    std::size_t dupe_factor = 1;
    std::size_t log_every = 10;
    std::size_t checkpoint_every = 0;
  };
  auto o = std::make_shared<Opts>();
  app.add_option("--corpus", o->corpus, "Documents: one sentence per line")->required();
  app.add_option("--vocab", o->vocab, "Wordpiece vocabulary (wordpiece mode)");
  app.add_option("--updates", o->updates, "Updates of the single phase");
  app.add_option("--batch", o->batch, "Instances per update");
  app.add_option("--seq-len", o->seq_len, "Maximum units per instance");
  app.add_option("--lr", o->lr, "Peak learning rate");
  app.add_option("--warmup", o->warmup, "Warm-up fraction");
  app.add_option("--optimizer", o->optimizer, "lamb or adam")
      ->check(CLI::IsMember({"lamb", "adam"}));
  app.add_option("--targets", o->targets, "MLM target vocabulary size (wordpiece mode)");
  app.add_option("--dupe-factor", o->dupe_factor, "Masked copies per pair");
  app.add_option("--log-every", o->log_every, "Loss log interval");
  app.add_option("--checkpoint-every", o->checkpoint_every, "Checkpoint interval (0: final)");
  return [o](Context& ctx) {
    const auto docs = read_documents(o->corpus);
    auto [config, vocab] = fresh_model(ctx, ctx.mode(), o->vocab);
    pretrain::PretrainOptions opts;
    opts.model = config;
    if (ctx.file().contains("phases")) {
      for (const auto& p : ctx.file().at("phases")) {
        opts.phases.push_back({p.at("updates").get<std::size_t>(), p.at("batch").get<std::size_t>(),
                               p.at("seq_len").get<std::size_t>(), p.at("lr").get<double>(),
                               p.value("warmup", 0.01)});
      }
    } else {
      opts.phases = {{o->updates, o->batch, o->seq_len, o->lr, o->warmup}};
    }
    opts.optimizer =
        o->optimizer == "adam" ? pretrain::OptimizerKind::kAdam : pretrain::OptimizerKind::kLamb;
    opts.target_vocab_size = o->targets;
    opts.dupe_factor = o->dupe_factor;
    opts.log_every = o->log_every;
    opts.checkpoint_every = o->checkpoint_every;
    opts.seed = ctx.seed();
    ctx.record("model", config.to_json());
    const auto result = pretrain::run_pretraining(docs, opts, vocab, ctx.run_dir());
    const auto eval = pretrain::evaluate(result.model, result.instances.back());
    json j = {{"mlm_loss", eval.mlm_loss},
              {"mlm_accuracy", eval.mlm_accuracy},
              {"nsp_loss", eval.nsp_loss},
              {"nsp_accuracy", eval.nsp_accuracy},
              {"masked", eval.masked},
              {"labels_outside_targets", result.labels_outside_targets}};
    ctx.write("final_eval.json", j.dump(2) + "\n");
    ctx.out << "final mlm_loss " << eval.mlm_loss << " mlm_accuracy " << eval.mlm_accuracy
            << " nsp_accuracy " << eval.nsp_accuracy << '\n';
    return kExitOk;
  };
}

struct TrainingFlags {
  std::size_t epochs = 15;
  std::size_t batch = 32;
  double lr = 3e-5;
  double warmup = 0.1;
  double weight_decay = 0.1;

  void add(CLI::App& app) {
    app.add_option("--epochs", epochs, "Fine-tuning epochs");
    app.add_option("--batch", batch, "Batch size");
    app.add_option("--lr", lr, "Peak learning rate");
    app.add_option("--warmup", warmup, "Warm-up fraction");
    app.add_option("--weight-decay", weight_decay, "Decoupled weight decay");
  }
  finetune::FinetuneOptions options() const {
    finetune::FinetuneOptions o;
    o.epochs = epochs;
    o.batch = batch;
    o.lr = lr;
    o.warmup_fraction = warmup;
    o.weight_decay = weight_decay;
    return o;
  }
};

Runner setup_finetune(CLI::App& app) {
  struct Opts {
    std::string task, train, validation, test, checkpoint, vocab;
    std::size_t seeds = 1;
    TrainingFlags training;
  };
  auto o = std::make_shared<Opts>();
  app.add_option("--task", o->task, "Task spec JSON");
  app.add_option("--train", o->train, "Training split")->required();
  app.add_option("--validation", o->validation, "Validation split (default: 20% of train)");
  app.add_option("--test", o->test, "Test split")->required();
  app.add_option("--checkpoint", o->checkpoint, "Pretrained checkpoint directory");
  app.add_option("--vocab", o->vocab, "Wordpiece vocabulary when training from scratch");
  app.add_option("--seeds", o->seeds, "Runs with seeds seed, seed+1, ...")
      ->check(CLI::PositiveNumber);
  o->training.add(app);
  return [o](Context& ctx) {
    const auto task = load_task(ctx, o->task);
    const finetune::Dataset data{load_split(o->train, task.kind),
                                 load_split(o->validation, task.kind),
                                 load_split(o->test, task.kind)};
    ModelConfig base;
    std::shared_ptr<const wordpiece::Vocab> vocab;
    std::optional<Checkpoint> ckpt;
    if (!o->checkpoint.empty()) {
      ckpt = load_checkpoint(o->checkpoint, ctx.mode());
      base = ckpt->config;
      if (base.mode == FrontendMode::kWordpiece) {
        std::istringstream in(ckpt->attachments.at("vocab.txt"));
        vocab = std::make_shared<const wordpiece::Vocab>(wordpiece::Vocab::read(in));
      }
    } else {
      std::tie(base, vocab) = fresh_model(ctx, ctx.mode(), o->vocab);
    }
    ctx.record("model", finetune::task_config(base, task).to_json());
    ctx.record("task", task.to_json());
    std::vector<finetune::RunResult> runs;
    for (std::size_t i = 0; i < o->seeds; ++i) {
      const std::uint64_t seed = ctx.seed() + i;
      auto outcome = finetune::finetune_run(task, data, base, ckpt ? &ckpt->params : nullptr,
                                            vocab, seed, o->training.options());
      ctx.write("run-seed" + std::to_string(seed) + ".json",
                outcome.result.to_json().dump(2) + "\n");
      ctx.out << "seed " << seed << " best_epoch " << outcome.result.best_epoch << " test "
              << outcome.result.test_score << '\n';
      runs.push_back(std::move(outcome.result));
    }
    const std::string agg = finetune::aggregate_tsv(task.name, runs);
    ctx.write("aggregate.tsv", agg);
    ctx.out << agg;
    return kExitOk;
  };
}

finetune::Predictions predictions_from_json(const json& j) {
  finetune::Predictions out;
  for (const auto& p : j) {
    finetune::Prediction pred;
    if (p.is_array()) {
      pred.labels = p.get<std::vector<std::size_t>>();
    } else {
      pred.score = p.get<double>();
    }
    out.push_back(std::move(pred));
  }
  return out;
}

Runner setup_ensemble(CLI::App& app) {
  struct Opts {
    std::string task, test;
    std::vector<std::string> runs;
  };
  auto o = std::make_shared<Opts>();
  app.add_option("--task", o->task, "Task spec JSON");
  app.add_option("--test", o->test, "Test split with gold labels")->required();
  app.add_option("--runs", o->runs, "Run result JSON files")->required();
  return [o](Context& ctx) {
    const auto task = load_task(ctx, o->task);
    const auto gold = finetune::gold_predictions(task, load_split(o->test, task.kind));
    std::vector<finetune::Predictions> members;
    for (const auto& path : o->runs) {
      try {
        members.push_back(predictions_from_json(json::parse(read_file(path)).at("test_predictions")));
      } catch (const json::exception& e) {
        throw FormatError(path + ": " + e.what());
      }
    }
    json report;
    const auto all = finetune::ensemble_predict(task, members);
    report["ensemble_all_score"] = finetune::compute_metric(task, all, gold);
    if (members.size() >= 3) {
      const auto loo = finetune::leave_one_out(task, members, gold);
      report["leave_one_out"] = loo.to_json();
      ctx.out << "member_mean\t" << loo.member_mean << "\nmember_variance\t"
              << loo.member_variance << "\nensemble_mean\t" << loo.ensemble_mean
              << "\nensemble_variance\t" << loo.ensemble_variance << '\n';
    }
    ctx.out << "ensemble_all_score\t" << report["ensemble_all_score"].get<double>() << '\n';
    ctx.write("ensemble.json", report.dump(2) + "\n");
    return kExitOk;
  };
}

Runner setup_perturb(CLI::App& app) {
  struct Opts {
    std::string input, kind = "pair_class", task;
    double level = 0.1;
  };
  auto o = std::make_shared<Opts>();
  app.add_option("--input", o->input, "Split to perturb")->required();
  app.add_option("--kind", o->kind, "token_tag, pair_class or pair_score");
  app.add_option("--task", o->task, "Task spec JSON (overrides --kind)");
  app.add_option("--level", o->level, "Per-token perturbation probability");
  return [o](Context& ctx) {
    const TaskKind kind =
        o->task.empty() ? parse_task_kind(o->kind) : load_task(ctx, o->task).kind;
    noise::NoiseConfig{o->level, noise::NoiseScope::kTestOnly, ctx.seed()}.validate();
    Rng rng(ctx.seed());
    noise::PerturbStats stats;
    const auto noisy =
        noise::perturb_examples(finetune::read_examples(o->input, kind), o->level, rng, &stats);
    const std::string name = fs::path(o->input).filename().string();
    ctx.write(name, finetune::format_examples(noisy, kind));
    ctx.out << "tokens\t" << stats.tokens << "\nperturbed\t" << stats.perturbed << '\n';
    return kExitOk;
  };
}

Runner setup_robustness(CLI::App& app) {
  struct Opts {
    std::string task, train, validation, test, vocab, scope = "test_only";
    std::vector<double> levels{0.0, 0.1, 0.2, 0.3, 0.4};
    std::vector<std::string> models{"character"};
    std::size_t seeds = 5;
    TrainingFlags training;
  };
  auto o = std::make_shared<Opts>();
  app.add_option("--task", o->task, "Task spec JSON");
  app.add_option("--train", o->train, "Training split")->required();
  app.add_option("--validation", o->validation, "Validation split");
  app.add_option("--test", o->test, "Test split")->required();
  app.add_option("--vocab", o->vocab, "Wordpiece vocabulary");
  app.add_option("--scope", o->scope, "test_only or all_splits");
  app.add_option("--levels", o->levels, "Noise levels");
  app.add_option("--models", o->models, "Frontends to compare")
      ->check(CLI::IsMember({"character", "wordpiece"}));
  app.add_option("--seeds", o->seeds, "Seeds per model")->check(CLI::PositiveNumber);
  o->training.add(app);
  return [o](Context& ctx) {
    const auto task = load_task(ctx, o->task);
    const finetune::Dataset data{load_split(o->train, task.kind),
                                 load_split(o->validation, task.kind),
                                 load_split(o->test, task.kind)};
    const auto opts = o->training.options();
    std::vector<noise::CurveModel> models;
    json configs;
    for (const auto& name : o->models) {
      auto [config, vocab] = fresh_model(ctx, parse_frontend_mode(name), o->vocab);
      configs[name] = finetune::task_config(config, task).to_json();
      models.push_back({name, [task, config, vocab, opts](const finetune::Dataset& d,
                                                          std::uint64_t seed) {
                          return finetune::finetune_run(task, d, config, nullptr, vocab, seed,
                                                        opts);
                        }});
    }
    ctx.record("model", configs);
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = 0; i < o->seeds; ++i) seeds.push_back(ctx.seed() + i);
    const auto report =
        noise::robustness_curve(models, task, data, o->levels,
                                noise::parse_noise_scope(o->scope), seeds, ctx.seed());
    ctx.write("curve.tsv", report.rows_tsv());
    ctx.write("summary.tsv", report.summary_tsv());
    ctx.write("curve.json", report.to_json().dump(2) + "\n");
    ctx.out << report.summary_tsv();
    return kExitOk;
  };
}

ModelConfig gradcheck_config(FrontendMode mode, std::size_t vocab_size) {
  ModelConfig c;
  c.mode = mode;
  c.layers = 2;
  c.attention_heads = 2;
  c.hidden = 8;
  c.ffn = 12;
  c.max_positions = 16;
  c.dropout = 0.0;
  c.layer_norm_eps = 1e-5;
  c.vocab_size = vocab_size;
  c.mlm_vocab_size = 7;
  c.charcnn = {4, {{1, 3}, {2, 4}, {3, 5}}, 1};
  return c;
}

Runner setup_gradcheck(CLI::App& app) {
  struct Opts {
    std::size_t seeds = 1;
    double tolerance = 1e-4;
    double eps = 1e-5;
    std::size_t samples = 0;
  };
  auto o = std::make_shared<Opts>();
  app.add_option("--seeds", o->seeds, "Random seeds to check")->check(CLI::PositiveNumber);
  app.add_option("--tolerance", o->tolerance, "Maximum relative error");
  app.add_option("--eps", o->eps, "Central-difference step");
  app.add_option("--samples", o->samples, "Entries checked per tensor (0: all)");
  return [o](Context& ctx) {
    const FrontendMode mode = ctx.mode();
    auto vocab = std::make_shared<wordpiece::Vocab>(wordpiece::Vocab::with_specials());
    for (const char* p : {"the", "cat", "sat", "on", "mat", "app", "##le", "a", "##t"}) {
      vocab->add(p);
    }
    const auto config = gradcheck_config(mode, vocab->size());
    ctx.record("model", config.to_json());
    const std::vector<std::string> words{"[CLS]", "the", "apple", "[MASK]", "[SEP]", "cat",
                                         "[SEP]"};
    bool all_passed = true;
    json results = json::array();
    ctx.out << "seed\tmax_rel_error\ttolerance\tresult\n";
    for (std::size_t i = 0; i < o->seeds; ++i) {
      const std::uint64_t seed = ctx.seed() + i;
      const auto model = Model<double>::initialize(
          config, seed,
          mode == FrontendMode::kWordpiece ? std::shared_ptr<const wordpiece::Vocab>(vocab)
                                           : nullptr);
      const auto in = model.prepare(words, {0, 0, 0, 0, 0, 1, 1});
      const bool chars = mode == FrontendMode::kCharacter;
      std::vector<std::size_t> rows{2, 3};
      if (!chars) rows.push_back(4);
      std::vector<std::size_t> targets;
      for (std::size_t r = 0; r < rows.size(); ++r) targets.push_back((seed + 3 * r) % 7);
      auto loss = [&] {
        const auto enc = model.forward(in);
        return ops::add(
            ops::cross_entropy(
                model.head(enc, in, chars ? Head::kMlmWords : Head::kMlmPieces, rows), targets),
            ops::cross_entropy(model.head(enc, in, Head::kNsp), {seed % 2}));
      };
      NamedParams params;
      for (const auto& [name, v] : model.params()) params.emplace_back(name, v);
      GradCheckOptions gopts;
      gopts.eps = o->eps;
      gopts.tolerance = o->tolerance;
      gopts.max_checks_per_tensor = o->samples;
      gopts.sample_seed = seed;
      const auto report = grad_check(loss, params, gopts);
      all_passed = all_passed && report.passed;
      ctx.out << seed << '\t' << report.max_rel_error << '\t' << o->tolerance << '\t'
              << (report.passed ? "PASS" : "FAIL") << '\n';
      json entries = json::array();
      for (const auto& e : report.entries) {
        entries.push_back({{"name", e.name},
                           {"checked", e.checked},
                           {"max_rel_error", e.max_rel_error},
                           {"max_abs_error", e.max_abs_error}});
      }
      results.push_back({{"seed", seed},
                         {"max_rel_error", report.max_rel_error},
                         {"passed", report.passed},
                         {"tensors", entries}});
    }
    ctx.write("gradcheck.json", results.dump(2) + "\n");
    return all_passed ? kExitOk : kExitFailure;
  };
}

Runner setup_count_params(CLI::App& app) {
  auto base = std::make_shared<bool>(false);
  app.add_flag("--base", *base, "Use the 12-layer base configuration");
  return [base](Context& ctx) {
    const ModelConfig config = *base || !ctx.file().contains("model")
                                   ? ModelConfig::base(ctx.mode())
                                   : ctx.model_config(ctx.mode());
    ctx.record("model", config.to_json());
    const auto b = count_parameters(config);
    std::ostringstream os;
    os << "frontend\t" << b.frontend << "\nencoder\t" << b.encoder << "\npooler\t" << b.pooler
       << "\nbackbone\t" << b.backbone() << "\nmlm_head\t" << b.mlm_head << "\nnsp_head\t"
       << b.nsp_head << "\ntask_head\t" << b.task_head << "\ntotal\t" << b.total() << '\n';
    if (config.mode == FrontendMode::kCharacter) {
      os << "charcnn\t" << charcnn_param_count(config.charcnn, config.hidden) << '\n';
    }
    ctx.write("count_params.tsv", os.str());
    ctx.out << os.str();
    return kExitOk;
  };
}

Runner setup_bench(CLI::App& app) {
  struct Opts {
    std::string corpus, vocab;
    std::size_t repeats = 1;
  };
  auto o = std::make_shared<Opts>();
  app.add_option("--corpus", o->corpus, "Documents: one sentence per line")->required();
  app.add_option("--vocab", o->vocab, "Wordpiece vocabulary; adds the wordpiece model");
  app.add_option("--repeats", o->repeats, "Passes per phase")->check(CLI::PositiveNumber);
  return [o](Context& ctx) {
    std::vector<Sentence> sentences;
    for (const auto& doc : read_documents(o->corpus)) {
      sentences.insert(sentences.end(), doc.begin(), doc.end());
    }
    std::vector<Model<float>> models;
    json configs;
    std::vector<FrontendMode> modes{FrontendMode::kCharacter};
    if (!o->vocab.empty()) modes.push_back(FrontendMode::kWordpiece);
    for (FrontendMode mode : modes) {
      auto [config, vocab] = fresh_model(ctx, mode, o->vocab);
      // Room for the longest sentence of the workload.
      std::size_t longest = 0;
      for (const auto& s : sentences) {
        std::size_t units = s.size() + 2;
        if (vocab) {
          units = 2;
          for (const auto& w : s) units += wordpiece::tokenize_word(*vocab, w).size();
        }
        longest = std::max(longest, units);
      }
      config.max_positions = std::max(config.max_positions, longest);
      configs[to_string(mode)] = config.to_json();
      models.push_back(Model<float>::initialize(config, ctx.seed(), vocab));
    }
    ctx.record("model", configs);
    std::vector<const Model<float>*> ptrs;
    for (const auto& m : models) ptrs.push_back(&m);
    bench::BenchOptions opts;
    opts.repeats = o->repeats;
    opts.seed = ctx.seed();
    const auto report = bench::bench(ptrs, sentences, opts);
    ctx.write("bench.json", report.to_json().dump(2) + "\n");
    ctx.write("bench.tsv", report.to_tsv());
    ctx.out << report.to_tsv();
    return kExitOk;
  };
}

const std::map<std::string, std::pair<std::string, Setup>>& commands() {
  static const std::map<std::string, std::pair<std::string, Setup>> table{
      {"build-vocab", {"Learn a wordpiece vocabulary", setup_build_vocab}},
      {"analyze-tokenization", {"Fragmentation statistics of vocabularies", setup_analyze}},
      {"pretrain", {"Masked-word and next-sentence pretraining", setup_pretrain}},
      {"finetune", {"Fine-tune on a task over one or more seeds", setup_finetune}},
      {"ensemble", {"Majority-vote ensembles of fine-tuning runs", setup_ensemble}},
      {"perturb", {"Write a misspelled copy of a split", setup_perturb}},
      {"robustness", {"Score-versus-noise curves", setup_robustness}},
      {"gradcheck", {"Finite-difference check of the full objective", setup_gradcheck}},
      {"count-params", {"Parameter accounting of a configuration", setup_count_params}},
      {"bench", {"Throughput and input lengths per frontend", setup_bench}},
  };
  return table;
}

void print_usage(std::ostream& os) {
  os << "usage: cbert <command> [--config FILE] [--seed N] [--mode character|wordpiece] "
        "[--out DIR] [options]\n\ncommands:\n";
  for (const auto& [name, entry] : commands()) os << "  " << name << "\t" << entry.first << '\n';
}

bool given_on_command_line(const std::vector<std::string>& args, const std::string& flag) {
  for (const auto& a : args) {
    if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
  }
  return false;
}

std::string config_path_from(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
  }
  return {};
}

std::string scalar_text(const json& v) {
  return v.is_string() ? v.get<std::string>() : v.dump();
}

// Flags derived from config-file keys that the command line does not set.
std::vector<std::string> config_tokens(const json& file, const CLI::App& app,
                                       const std::vector<std::string>& args) {
  std::vector<std::string> tokens;
  for (const auto& [key, value] : file.items()) {
    if (key == "model" || key == "phases" || key == "config") continue;
    if (key == "task" && value.is_object()) continue;
    const std::string flag = "--" + key;
    if (!app.get_option_no_throw(flag)) {
      throw CLI::ExtrasError("unknown config key '" + key + "'", CLI::ExitCodes::ExtrasError);
    }
    if (given_on_command_line(args, flag)) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) tokens.push_back(flag);
    } else if (value.is_array()) {
      tokens.push_back(flag);
      for (const auto& v : value) tokens.push_back(scalar_text(v));
    } else {
      tokens.push_back(flag);
      tokens.push_back(scalar_text(value));
    }
  }
  return tokens;
}

json resolved_options(const CLI::App& app) {
  json out = json::object();
  for (const CLI::Option* opt : app.get_options()) {
    const auto names = opt->get_lnames();
    if (names.empty() || names.front() == "help") continue;
    if (opt->count() > 0) {
      const auto& r = opt->results();
      out[names.front()] = r.size() == 1 ? json(r.front()) : json(r);
    } else {
      out[names.front()] = opt->get_default_str();
    }
  }
  return out;
}

}  // namespace

ModelConfig desk_config(FrontendMode mode) {
  ModelConfig c;
  c.mode = mode;
  c.layers = 2;
  c.attention_heads = 2;
  c.hidden = 64;
  c.ffn = 256;
  c.max_positions = 128;
  c.dropout = 0.1;
  c.vocab_size = 1000;
  c.mlm_vocab_size = 1000;
  c.charcnn = {16, {{1, 32}, {2, 32}, {3, 64}, {4, 128}}, 2};
  c.outputs.pooler = true;
  return c;
}

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [name, entry] : commands()) out.push_back(name);
    return out;
  }();
  return names;
}

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (args.empty()) {
    print_usage(err);
    return kExitUsage;
  }
  if (args[0] == "--help" || args[0] == "-h" || args[0] == "help") {
    print_usage(out);
    return kExitOk;
  }
  const auto it = commands().find(args[0]);
  if (it == commands().end()) {
    err << "unknown command '" << args[0] << "'\n";
    print_usage(err);
    return kExitUsage;
  }
  const std::string& command = it->first;
  CLI::App app{it->second.first, "cbert " + command};
  app.option_defaults()->always_capture_default();
  Common common;
  app.add_option("--config", common.config_path, "JSON config; flags override its values");
  app.add_option("--seed", common.seed, "Random seed");
  app.add_option("--mode", common.mode, "Frontend")
      ->check(CLI::IsMember({"character", "wordpiece"}));
  app.add_option("--out", common.out, "Parent directory of the run directory");
  const Runner runner = it->second.second(app);

  const std::vector<std::string> user(args.begin() + 1, args.end());
  json file = json::object();
  try {
    const std::string config_path = config_path_from(user);
    if (!config_path.empty()) {
      try {
        file = json::parse(read_file(config_path));
      } catch (const json::exception& e) {
        throw ConfigError(config_path + ": " + e.what());
      }
      if (!file.is_object()) throw ConfigError(config_path + ": expected a JSON object");
    }
    std::vector<std::string> tokens = config_tokens(file, app, user);
    tokens.insert(tokens.end(), user.begin(), user.end());
    std::reverse(tokens.begin(), tokens.end());
    app.parse(tokens);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "cbert " << command << ": " << e.what() << "\n" << app.help();
    return kExitUsage;
  } catch (const Error& e) {
    err << "cbert " << command << ": " << e.what() << '\n';
    return kExitFailure;
  }

  try {
    Context ctx(command, common, file, out, err);
    ctx.start(resolved_options(app));
    return runner(ctx);
  } catch (const Error& e) {
    err << "cbert " << command << ": " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "cbert " << command << ": " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace cbert::cli
