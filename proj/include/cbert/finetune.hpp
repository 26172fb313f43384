#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cbert/encoder.hpp"
#include "cbert/parameter_store.hpp"

namespace cbert::finetune {

enum class Metric { kSpanF1, kAccuracy, kPositiveMicroF1, kPearson };

std::string to_string(Metric metric);
Metric parse_metric(const std::string& text);

struct TaskSpec {
  std::string name;
  TaskKind kind = TaskKind::kPairClass;
  // Declared label order; ids are positions. BIO tags for kTokenTag, empty
  // for kPairScore.
  std::vector<std::string> labels;
  Metric metric = Metric::kAccuracy;
  std::string negative_label;  // excluded class for kPositiveMicroF1

  // ConfigError when the metric does not fit the kind or labels are missing.
  void validate() const;
  std::size_t label_id(const std::string& label) const;  // DataError if unknown
  std::size_t num_outputs() const;

  nlohmann::json to_json() const;
  static TaskSpec from_json(const nlohmann::json& j);
};

struct TaskExample {
  std::vector<std::string> tokens_a;
  std::vector<std::string> tokens_b;  // empty for single-sequence inputs
  std::vector<std::string> tags;      // one per token of tokens_a (kTokenTag)
  std::string label;                  // kPairClass
  double score = 0.0;                 // kPairScore
};

struct Dataset {
  std::vector<TaskExample> train;
  std::vector<TaskExample> validation;  // carved from train when empty
  std::vector<TaskExample> test;
};

// "token<TAB>tag" lines, blank line between sentences. Tokens are lowercased.
std::vector<TaskExample> parse_conll(const std::string& text);
// "text_a<TAB>text_b<TAB>label-or-score"; text_b may be empty.
std::vector<TaskExample> parse_pair_tsv(const std::string& text, TaskKind kind);
std::vector<TaskExample> read_examples(const std::filesystem::path& path, TaskKind kind);
// Inverses of the readers: parse(format(x)) == x for lowercased tokens.
std::string format_conll(const std::vector<TaskExample>& examples);
std::string format_pair_tsv(const std::vector<TaskExample>& examples, TaskKind kind);
std::string format_examples(const std::vector<TaskExample>& examples, TaskKind kind);

// DataError on labels outside the spec or tags misaligned with tokens.
void validate_examples(const TaskSpec& task, const std::vector<TaskExample>& examples);

// Per example: one label id per word (kTokenTag), one label id (kPairClass),
// or a score (kPairScore).
struct Prediction {
  std::vector<std::size_t> labels;
  double score = 0.0;
  bool operator==(const Prediction&) const = default;
};
using Predictions = std::vector<Prediction>;

Predictions gold_predictions(const TaskSpec& task, const std::vector<TaskExample>& examples);

// Exact-span micro-F1 over BIO decoding, accuracy, micro-F1 over
// non-negative classes, or Pearson correlation. InputError on misaligned
// inputs; NumericError for Pearson with zero variance.
double compute_metric(const TaskSpec& task, const Predictions& predicted,
                      const Predictions& gold);

struct Span {
  std::string type;
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  auto operator<=>(const Span&) const = default;
};
// conlleval-style decoding: I-X continues an open X span, otherwise starts one.
std::vector<Span> decode_bio(const std::vector<std::string>& tags);

// [CLS] a [SEP] (b [SEP]); the longer side is trimmed first to fit.
std::pair<std::vector<std::string>, std::vector<int>> model_words(
    const TaskExample& example, std::size_t max_words);

template <typename T>
Predictions predict(const Model<T>& model, const TaskSpec& task,
                    const std::vector<TaskExample>& examples);

struct FinetuneOptions {
  std::size_t epochs = 15;
  std::size_t batch = 32;
  double lr = 3e-5;
  double warmup_fraction = 0.1;
  double weight_decay = 0.1;
  double validation_fraction = 0.2;
  // Seed of the validation carve; fixed so every run sees the same split.
  std::uint64_t carve_seed = 0x5eed;
};

struct RunResult {
  std::uint64_t seed = 0;
  std::vector<double> validation_scores;  // one per epoch
  std::size_t best_epoch = 0;             // 1-based
  double test_score = 0.0;
  Predictions test_predictions;

  nlohmann::json to_json() const;
};

struct FinetuneOutcome {
  RunResult result;
  Model<float> model;  // parameters of the best validation epoch
};

// Splits off floor(fraction * n) examples after a shuffle seeded by
// carve_seed. Returns {train, validation}.
std::pair<std::vector<TaskExample>, std::vector<TaskExample>> carve_validation(
    const std::vector<TaskExample>& train, double fraction, std::uint64_t carve_seed);

// The model config with the pretraining heads replaced by the task head.
ModelConfig task_config(const ModelConfig& base, const TaskSpec& task);

// Fine-tunes a model initialized from `pretrained` (every tensor whose name
// exists in both) or from scratch when null. Evaluates validation after every
// epoch and reports the test score of the best epoch (earliest on ties).
FinetuneOutcome finetune_run(const TaskSpec& task, const Dataset& data,
                             const ModelConfig& base_config,
                             const ParameterStore<float>* pretrained,
                             std::shared_ptr<const wordpiece::Vocab> vocab,
                             std::uint64_t seed, const FinetuneOptions& options = {});

// Majority vote per label (ties go to the earliest declared label) or mean
// score. InputError on fewer than two members or misaligned members.
Predictions ensemble_predict(const TaskSpec& task, const std::vector<Predictions>& members);

struct EnsembleReport {
  std::vector<double> member_scores;
  std::vector<double> ensemble_scores;  // ensemble i leaves member i out
  double member_mean = 0.0;
  double member_variance = 0.0;  // sample variance
  double ensemble_mean = 0.0;
  double ensemble_variance = 0.0;

  nlohmann::json to_json() const;
};

EnsembleReport leave_one_out(const TaskSpec& task, const std::vector<Predictions>& members,
                             const Predictions& gold);

double mean(const std::vector<double>& xs);
double sample_variance(const std::vector<double>& xs);

// Mean and standard deviation of the test scores, one TSV row per task.
std::string aggregate_tsv(const std::string& task, const std::vector<RunResult>& runs);

}  // namespace cbert::finetune
