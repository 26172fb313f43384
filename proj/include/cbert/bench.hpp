#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cbert/encoder.hpp"
#include "cbert/pretrain.hpp"

namespace cbert::bench {

enum class Phase { kTrain, kInfer };

std::string to_string(Phase phase);

struct BenchOptions {
  std::size_t repeats = 1;  // passes over the workload per phase
  pretrain::MaskingOptions masking;
  std::uint64_t seed = 0;
};

struct ThroughputRow {
  FrontendMode mode = FrontendMode::kCharacter;
  Phase phase = Phase::kInfer;
  std::size_t examples = 0;
  std::size_t words = 0;  // text words processed, identical across modes
  std::size_t units = 0;  // model input positions processed
  double seconds = 0.0;

  double words_per_second() const { return seconds > 0 ? double(words) / seconds : 0.0; }
};

struct LengthRow {
  FrontendMode mode = FrontendMode::kCharacter;
  std::vector<std::size_t> lengths;  // input units per example, [CLS]/[SEP] included
  double mean = 0.0;
};

struct BenchReport {
  std::vector<ThroughputRow> throughput;
  std::vector<LengthRow> lengths;

  nlohmann::json to_json() const;
  // mode, phase, examples, words, units, seconds, words_per_second,
  // mean_input_length
  std::string to_tsv() const;
};

// Input lengths of every sentence as "[CLS] words [SEP]" for one model.
LengthRow input_lengths(const Model<float>& model, const std::vector<Sentence>& sentences);

// INFER runs the encoder forward on each sentence. TRAIN additionally masks
// whole words, evaluates the MLM loss and backpropagates. Models must carry
// pretraining heads; every model sees the same sentences.
BenchReport bench(const std::vector<const Model<float>*>& models,
                  const std::vector<Sentence>& sentences, const BenchOptions& options = {});

}  // namespace cbert::bench
