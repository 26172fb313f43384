#pragma once

#include <span>
#include <string>
#include <vector>

#include "cbert/chartok.hpp"
#include "cbert/model_config.hpp"
#include "cbert/ops.hpp"
#include "cbert/parameter_store.hpp"

namespace cbert::charcnn {

inline const std::string kPrefix = "frontend.charcnn";

// g = sigmoid(gate(x)), t = relu(transform(x)), out = g*t + (1-g)*x,
// computed as x + g*(t - x).
template <typename T>
Var<T> highway(const Var<T>& x, const Var<T>& transform_weight,
               const Var<T>& transform_bias, const Var<T>& gate_weight,
               const Var<T>& gate_bias) {
  const Var<T> gate = ops::sigmoid(ops::linear(x, gate_weight, gate_bias));
  const Var<T> transformed =
      ops::relu(ops::linear(x, transform_weight, transform_bias));
  return ops::add(x, ops::mul(gate, ops::sub(transformed, x)));
}

// Character-CNN word embedder over the tensors named frontend.charcnn.*.
template <typename T>
class CharCnn {
 public:
  CharCnn(const ParameterStore<T>& params, CharCnnSpec spec)
      : params_(params), spec_(std::move(spec)) {}

  // One row per input word: char lookup, per-filter valid convolution + ReLU
  // + max-over-time, concatenation, highway layers, projection.
  Var<T> embed(std::span<const chartok::CharSeq> words) const {
    if (words.empty()) throw LengthError("CharCnn::embed: no words");
    const Var<T>& table = params_.get(kPrefix + ".char_embeddings");
    std::vector<Var<T>> rows;
    rows.reserve(words.size());
    std::vector<std::size_t> ids(chartok::kSeqLength);
    for (const auto& seq : words) {
      chartok::validate(seq);
      for (std::size_t i = 0; i < seq.size(); ++i) ids[i] = seq[i];
      const Var<T> chars = ops::embedding(table, ids);
      std::vector<Var<T>> pooled;
      pooled.reserve(spec_.filters.size());
      for (std::size_t k = 0; k < spec_.filters.size(); ++k) {
        const std::string name = kPrefix + ".conv" + std::to_string(k);
        pooled.push_back(ops::max_over_time(ops::relu(ops::conv1d_valid(
            chars, params_.get(name + ".weight"), params_.get(name + ".bias")))));
      }
      rows.push_back(ops::concat_cols(pooled));
    }
    Var<T> x = rows.size() == 1 ? rows[0] : ops::concat_rows(rows);
    for (std::size_t h = 0; h < spec_.highway_layers; ++h) {
      const std::string name = kPrefix + ".highway" + std::to_string(h);
      x = highway(x, params_.get(name + ".transform.weight"),
                  params_.get(name + ".transform.bias"),
                  params_.get(name + ".gate.weight"),
                  params_.get(name + ".gate.bias"));
    }
    return ops::linear(x, params_.get(kPrefix + ".projection.weight"),
                       params_.get(kPrefix + ".projection.bias"));
  }

  Var<T> embed_token(const chartok::CharSeq& chars) const {
    return embed(std::span<const chartok::CharSeq>(&chars, 1));
  }

  const CharCnnSpec& spec() const { return spec_; }

 private:
  const ParameterStore<T>& params_;
  CharCnnSpec spec_;
};

// Sum of element counts over frontend.charcnn.* tensors in `params`.
template <typename T>
std::size_t charcnn_param_count(const ParameterStore<T>& params) {
  std::size_t n = 0;
  for (const auto& [name, v] : params) {
    if (name.starts_with(kPrefix + ".")) n += v.value().size();
  }
  return n;
}

}  // namespace cbert::charcnn
