#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cbert/charcnn.hpp"
#include "cbert/model_config.hpp"
#include "cbert/parameter_store.hpp"
#include "cbert/rng.hpp"
#include "cbert/wordpiece.hpp"

namespace cbert {

// Model input at the frontend's granularity: words in character mode, pieces
// in wordpiece mode. `alignment[w]` is the [begin, end) unit span of word w.
struct ModelInput {
  std::vector<std::string> units;
  std::vector<int> segments;
  std::vector<std::pair<std::size_t, std::size_t>> alignment;

  // keep[i] == 0 hides unit i from attention. Derived from "[PAD]" units.
  std::vector<std::uint8_t> attention_keep() const;
};

enum class Head { kMlmPieces, kMlmWords, kNsp, kTokenTag, kPairClass, kPairScore };

struct ForwardMode {
  bool training = false;
  Rng* rng = nullptr;  // required when training with dropout > 0
};

template <typename T>
ParameterStore<T> initialize_parameters(const ModelConfig& config,
                                        std::uint64_t seed);

// Shared transformer encoder with a character or wordpiece frontend.
template <typename T>
class Model {
 public:
  Model(ModelConfig config, ParameterStore<T> params,
        std::shared_ptr<const wordpiece::Vocab> vocab = nullptr);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  // Copies would share parameter tensors; use clone().
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  Model clone() const { return Model(config_, params_.clone(), vocab_); }

  static Model initialize(const ModelConfig& config, std::uint64_t seed,
                          std::shared_ptr<const wordpiece::Vocab> vocab = nullptr);

  const ModelConfig& config() const { return config_; }
  FrontendMode mode() const { return config_.mode; }
  ParameterStore<T>& params() { return params_; }
  const ParameterStore<T>& params() const { return params_; }
  const std::shared_ptr<const wordpiece::Vocab>& vocab() const { return vocab_; }

  // Maps words (specials as "[CLS]"-style literals) to frontend units.
  // Wordpiece mode expands each word with tokenize_word.
  ModelInput prepare(const std::vector<std::string>& words,
                     const std::vector<int>& segments) const;

  // Frontend embeddings + position + segment, then layer norm and dropout.
  Var<T> embed(const ModelInput& input, ForwardMode mode = {}) const;

  // Context-independent frontend vectors of the given units (no position,
  // segment, or norm).
  Var<T> frontend(const std::vector<std::string>& units) const;

  Var<T> encode(const Var<T>& x, const std::vector<std::uint8_t>& keep,
                ForwardMode mode = {}) const;

  Var<T> forward(const ModelInput& input, ForwardMode mode = {}) const {
    return encode(embed(input, mode), input.attention_keep(), mode);
  }

  // MLM heads take the unit rows to predict. kTokenTag reads the first unit
  // of each word index in `positions` (all words when empty). Sentence heads
  // read the pooled row 0.
  Var<T> head(const Var<T>& encoded, const ModelInput& input, Head which,
              const std::vector<std::size_t>& positions = {},
              ForwardMode mode = {}) const;

  Var<T> pooled(const Var<T>& encoded) const;

 private:
  const Var<T>& p(const std::string& name) const { return params_.get(name); }
  Var<T> dense(const Var<T>& x, const std::string& name) const {
    return ops::linear(x, p(name + ".weight"), p(name + ".bias"));
  }
  Var<T> norm(const Var<T>& x, const std::string& name) const;
  Var<T> maybe_dropout(const Var<T>& x, ForwardMode mode) const;

  ModelConfig config_;
  ParameterStore<T> params_;
  std::shared_ptr<const wordpiece::Vocab> vocab_;
};

}  // namespace cbert
