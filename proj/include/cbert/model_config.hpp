#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cbert/tensor.hpp"

namespace cbert {

enum class FrontendMode { kCharacter, kWordpiece };

std::string to_string(FrontendMode mode);
FrontendMode parse_frontend_mode(const std::string& text);

struct CharCnnFilter {
  std::size_t width = 1;
  std::size_t count = 1;
  bool operator==(const CharCnnFilter&) const = default;
};

struct CharCnnSpec {
  std::size_t char_dim = 16;
  std::vector<CharCnnFilter> filters;
  std::size_t highway_layers = 2;

  // 16-d characters, seven filters up to [7, 1024], two highway layers.
  static CharCnnSpec canonical();
  std::size_t total_filters() const;
  bool operator==(const CharCnnSpec&) const = default;
};

enum class TaskKind { kNone, kTokenTag, kPairClass, kPairScore };

std::string to_string(TaskKind kind);
TaskKind parse_task_kind(const std::string& text);

// Which output tensors a model carries on top of the encoder.
struct OutputConfig {
  bool pooler = true;
  bool pretraining = true;  // MLM + NSP heads
  TaskKind task = TaskKind::kNone;
  std::size_t num_labels = 0;  // classes or tags; 1 for kPairScore
  bool operator==(const OutputConfig&) const = default;
};

struct ModelConfig {
  FrontendMode mode = FrontendMode::kWordpiece;
  std::size_t layers = 12;
  std::size_t attention_heads = 12;
  std::size_t hidden = 768;
  std::size_t ffn = 3072;
  std::size_t max_positions = 512;
  std::size_t segments = 2;
  double dropout = 0.1;
  double layer_norm_eps = 1e-12;
  std::size_t vocab_size = 30522;      // wordpiece inventory (wordpiece mode)
  std::size_t mlm_vocab_size = 100000;  // MLM word targets (character mode)
  CharCnnSpec charcnn = CharCnnSpec::canonical();
  OutputConfig outputs;

  // 12 layers, 12 heads, 768-d, 3072 feed-forward, 512 positions.
  static ModelConfig base(FrontendMode mode);

  // ConfigError on inconsistent values.
  void validate() const;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

// Every named tensor the config implies, in lexicographic name order.
std::map<std::string, Shape> parameter_shapes(const ModelConfig& config);

struct ParameterBreakdown {
  std::size_t frontend = 0;
  std::size_t encoder = 0;
  std::size_t pooler = 0;
  std::size_t mlm_head = 0;
  std::size_t nsp_head = 0;
  std::size_t task_head = 0;

  // Frontend, encoder and pooler: the pretrained model without its
  // pretraining-only output layers.
  std::size_t backbone() const { return frontend + encoder + pooler; }
  std::size_t total() const {
    return backbone() + mlm_head + nsp_head + task_head;
  }
};

ParameterBreakdown count_parameters(const ModelConfig& config);

// Parameters of the character module alone.
std::size_t charcnn_param_count(const CharCnnSpec& spec, std::size_t output_dim);

}  // namespace cbert
