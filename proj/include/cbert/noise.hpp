#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cbert/finetune.hpp"
#include "cbert/rng.hpp"

namespace cbert::noise {

enum class EditKind { kDelete, kInsert, kReplace, kSwap };

std::string to_string(EditKind kind);

// Positions count code points. kInsert places `letter` before `position`
// (position == length appends); kSwap exchanges position and position + 1.
struct Edit {
  EditKind kind = EditKind::kDelete;
  std::size_t position = 0;
  char letter = 'a';
  bool operator==(const Edit&) const = default;
};

// IndexError when the edit does not fit the token.
std::string apply_edit(const std::string& token, const Edit& edit);

// Uniform over the applicable kinds (insert and replace only for one-character
// tokens), then a uniform position, then a letter from a-z. A replacement
// letter always differs from the character it overwrites.
Edit sample_edit(const std::string& token, Rng& rng);

// One sampled edit applied. InputError for the empty token.
std::string perturb_token(const std::string& token, Rng& rng);

enum class NoiseScope { kTestOnly, kAllSplits };

std::string to_string(NoiseScope scope);
NoiseScope parse_noise_scope(const std::string& text);

struct NoiseConfig {
  double level = 0.0;  // per-token perturbation probability
  NoiseScope scope = NoiseScope::kTestOnly;
  std::uint64_t seed = 0;

  void validate() const;  // ConfigError unless level is in [0, 1]
};

struct PerturbStats {
  std::size_t tokens = 0;
  std::size_t perturbed = 0;
};

// Every token is perturbed independently with probability `level`; tags,
// labels and scores are untouched.
std::vector<finetune::TaskExample> perturb_examples(
    const std::vector<finetune::TaskExample>& examples, double level, Rng& rng,
    PerturbStats* stats = nullptr);

// A named model factory: trains on the given splits with the given seed.
struct CurveModel {
  std::string name;
  std::function<finetune::FinetuneOutcome(const finetune::Dataset&, std::uint64_t seed)>
      train;
};

struct CurveRow {
  std::string model;
  NoiseScope scope = NoiseScope::kTestOnly;
  double level = 0.0;
  std::uint64_t seed = 0;
  double clean_score = 0.0;
  double score = 0.0;

  double drop() const { return clean_score - score; }
};

struct RobustnessReport {
  std::vector<CurveRow> rows;

  // One row per (model, scope, level, seed).
  std::string rows_tsv() const;
  // One row per (model, scope, level): mean score and mean drop over seeds.
  std::string summary_tsv() const;
  nlohmann::json to_json() const;
};

// For every seed, each model is trained on clean data and scored on the
// clean test set. TEST_ONLY then scores that model on noisy copies of the
// test set; ALL_SPLITS retrains on noisy train and validation splits and
// scores on the noisy test set. Noise draws come from `noise_seed` and the
// seed index only, so every model sees the same noisy data.
RobustnessReport robustness_curve(const std::vector<CurveModel>& models,
                                  const finetune::TaskSpec& task,
                                  const finetune::Dataset& data,
                                  const std::vector<double>& levels, NoiseScope scope,
                                  const std::vector<std::uint64_t>& seeds,
                                  std::uint64_t noise_seed);

}  // namespace cbert::noise
