#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cbert/encoder.hpp"
#include "cbert/io.hpp"
#include "cbert/rng.hpp"

namespace cbert::pretrain {

// Top-K most frequent corpus words, ordered by descending frequency with
// ties broken lexicographically. Id = rank.
class MlmTargetVocab {
 public:
  MlmTargetVocab() = default;
  explicit MlmTargetVocab(std::vector<std::string> words);

  static MlmTargetVocab from_counts(const std::map<std::string, std::size_t>& counts,
                                    std::size_t k);
  static MlmTargetVocab from_documents(const std::vector<Document>& docs, std::size_t k);

  std::size_t size() const { return words_.size(); }
  bool empty() const { return words_.empty(); }
  std::optional<std::size_t> find(const std::string& word) const;
  bool contains(const std::string& word) const { return find(word).has_value(); }
  const std::string& word(std::size_t id) const { return words_.at(id); }
  const std::vector<std::string>& words() const { return words_; }

  std::string to_text() const;
  static MlmTargetVocab from_text(const std::string& text);

 private:
  std::vector<std::string> words_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// A [CLS] A [SEP] B [SEP] pair before masking.
struct SentencePair {
  std::vector<std::string> words;
  std::vector<int> segments;
  bool is_next = false;
};

// Units a word occupies in the model input; 1 in character mode.
using UnitCounter = std::function<std::size_t(const std::string&)>;

// For every document with at least two sentences and every consecutive
// sentence pair, a fair coin picks the true next sentence or a sentence from
// a different document. The pair is trimmed, longest side first, to
// max_seq - 3 units. ConfigError with fewer than two documents.
std::vector<SentencePair> build_nsp_pairs(const std::vector<Document>& docs,
                                          std::size_t max_seq, Rng& rng,
                                          const UnitCounter& units = {});

enum class MaskBranch { kMask, kRandom, kKeep };

struct MaskingOptions {
  double mask_rate = 0.15;
  double mask_prob = 0.8;
  double random_prob = 0.1;  // the remainder keeps the word
};

struct WordDecision {
  std::size_t word = 0;
  MaskBranch branch = MaskBranch::kMask;
};

// Model-ready masked instance. Positions index units (pieces in wordpiece
// mode, words in character mode). Labels are target-vocab ids in character
// mode and piece ids in wordpiece mode.
struct PretrainInstance {
  ModelInput input;
  bool is_next = false;
  std::vector<std::size_t> masked_positions;
  std::vector<std::size_t> masked_labels;
  std::vector<WordDecision> decisions;
  std::vector<std::string> original_words;
};

// Each eligible word (in `targets`, not a special) is selected with
// probability mask_rate; a selected word then draws one branch. In wordpiece
// mode the branch covers all of the word's pieces and each piece is a
// target; a random replacement draws an independent non-special piece per
// position. In character mode a random replacement is a uniform target word.
// Draw order per word: selection uniform, branch uniform, replacement index.
PretrainInstance apply_whole_word_masking(const SentencePair& pair,
                                          const MlmTargetVocab& targets,
                                          const MaskingOptions& options, Rng& rng,
                                          FrontendMode mode,
                                          const wordpiece::Vocab* vocab = nullptr);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-6;
  double weight_decay = 0.0;
  // Biases and layer-norm gains/shifts are exempt from decay and from LAMB's
  // trust ratio unless set.
  bool decay_all = false;
};

template <typename T>
struct OptimizerState {
  std::map<std::string, Tensor<T>> m;
  std::map<std::string, Tensor<T>> v;
  std::size_t step = 0;
};

// Single-tensor updates; `step` is the 1-based count after this update.
// weight_decay is the effective value for this tensor.
template <typename T>
void adam_update(Tensor<T>& w, const Tensor<T>& g, Tensor<T>& m, Tensor<T>& v,
                 std::size_t step, double lr, const AdamConfig& config,
                 double weight_decay);

// Returns the trust ratio that was applied.
template <typename T>
double lamb_update(Tensor<T>& w, const Tensor<T>& g, Tensor<T>& m, Tensor<T>& v,
                   std::size_t step, double lr, const AdamConfig& config,
                   double weight_decay, bool force_unit_trust = false);

// Store-level steps using the gradients held by the parameters (absent
// gradients count as zero). NumericError before any change if a gradient is
// not finite.
template <typename T>
void adam_step(ParameterStore<T>& params, OptimizerState<T>& state, double lr,
               const AdamConfig& config);

// Tensors exempt from weight decay (see decays()) are also exempt from the
// trust ratio and take the plain Adam step.
template <typename T>
void lamb_step(ParameterStore<T>& params, OptimizerState<T>& state, double lr,
               const AdamConfig& config, bool force_unit_trust = false);

bool decays(const std::string& name, const AdamConfig& config);

// Linear warm-up from 0 to peak over warmup_fraction * total_steps, then
// linear decay to 0 at total_steps.
double lr_schedule(std::size_t step, std::size_t total_steps, double peak_lr,
                   double warmup_fraction);

// Learning rate of the k-th update (1-based) of an n-update phase. Evaluates
// the schedule on n + 1 points so neither the first nor the last update is
// wasted at rate 0.
double update_lr(std::size_t k, std::size_t n, double peak_lr, double warmup_fraction);

enum class OptimizerKind { kAdam, kLamb };

struct SchedulePhase {
  std::size_t updates = 0;
  std::size_t batch = 1;   // instances per update, accumulated one at a time
  std::size_t seq_len = 128;
  double peak_lr = 1e-3;
  double warmup_fraction = 0.01;
};

struct PretrainOptions {
  ModelConfig model;
  std::vector<SchedulePhase> phases;
  MaskingOptions masking;
  OptimizerKind optimizer = OptimizerKind::kLamb;
  AdamConfig adam{0.9, 0.999, 1e-6, 0.01, false};
  // K in wordpiece mode; character mode uses model.mlm_vocab_size.
  std::size_t target_vocab_size = 100000;
  std::size_t dupe_factor = 1;             // masked copies of each pair
  std::size_t log_every = 10;
  std::size_t checkpoint_every = 0;  // 0 writes only the final checkpoint
  std::uint64_t seed = 0;
};

struct LossRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double mlm_loss = 0.0;
  double nsp_loss = 0.0;
};

struct MlmEvaluation {
  double mlm_loss = 0.0;
  double mlm_accuracy = 0.0;
  double nsp_loss = 0.0;
  double nsp_accuracy = 0.0;
  std::size_t masked = 0;
};

struct PretrainResult {
  Model<float> model;
  MlmTargetVocab targets;
  std::vector<LossRecord> log;
  // Static instances of each phase, in generation order.
  std::vector<std::vector<PretrainInstance>> instances;
  std::size_t labels_outside_targets = 0;
};

std::vector<PretrainInstance> make_instances(const std::vector<Document>& docs,
                                             std::size_t seq_len,
                                             const MlmTargetVocab& targets,
                                             const MaskingOptions& masking,
                                             std::size_t dupe_factor, Rng& rng,
                                             FrontendMode mode,
                                             const wordpiece::Vocab* vocab);

// Joint MLM + NSP loss of one instance; MLM is averaged over its masked
// positions and skipped when there are none.
template <typename T>
Var<T> instance_loss(const Model<T>& model, const PretrainInstance& inst,
                     ForwardMode mode, Var<T>* mlm = nullptr, Var<T>* nsp = nullptr);

template <typename T>
MlmEvaluation evaluate(const Model<T>& model, const std::vector<PretrainInstance>& instances);

// Runs every phase in order. With `out_dir`, writes loss.tsv, periodic
// checkpoints under checkpoints/step-N and the final checkpoint under final/.
PretrainResult run_pretraining(const std::vector<Document>& docs,
                               const PretrainOptions& options,
                               std::shared_ptr<const wordpiece::Vocab> vocab = nullptr,
                               const std::optional<std::filesystem::path>& out_dir = {});

std::string loss_log_tsv(const std::vector<LossRecord>& log);

// Attachments written next to a model checkpoint.
std::map<std::string, std::string> model_attachments(
    const wordpiece::Vocab* vocab, const MlmTargetVocab* targets);

}  // namespace cbert::pretrain
