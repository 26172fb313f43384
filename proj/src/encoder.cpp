#include "cbert/encoder.hpp"

#include <cmath>
#include <unordered_map>

#include "cbert/chartok.hpp"

namespace cbert {
namespace {

constexpr double kDenseInitStd = 0.02;
constexpr double kGateBiasInit = -2.0;

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <typename T>
Tensor<T> init_tensor(const std::string& name, const Shape& shape, Rng& rng) {
  Tensor<T> t(shape);
  const bool charcnn = name.starts_with(charcnn::kPrefix);
  if (ends_with(name, ".gamma")) {
    t.fill(T{1});
  } else if (ends_with(name, ".beta")) {
    // zeros
  } else if (ends_with(name, ".gate.bias")) {
    t.fill(static_cast<T>(kGateBiasInit));
  } else if (ends_with(name, ".bias")) {
    // zeros
  } else if (ends_with(name, "char_embeddings")) {
    for (auto& v : t.data()) v = static_cast<T>(rng.normal());
  } else if (charcnn && ends_with(name, ".weight")) {
    // Uniform Xavier. Conv kernels {Cout, w, Cin}; dense {in, out}.
    double fan_in, fan_out;
    if (shape.size() == 3) {
      fan_in = static_cast<double>(shape[1] * shape[2]);
      fan_out = static_cast<double>(shape[1] * shape[0]);
    } else {
      fan_in = static_cast<double>(shape[0]);
      fan_out = static_cast<double>(shape[1]);
    }
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-limit, limit));
  } else {
    for (auto& v : t.data()) v = static_cast<T>(rng.normal(0.0, kDenseInitStd));
  }
  return t;
}

}  // namespace

std::vector<std::uint8_t> ModelInput::attention_keep() const {
  std::vector<std::uint8_t> keep(units.size(), 1);
  for (std::size_t i = 0; i < units.size(); ++i) {
    if (units[i] == chartok::kPadToken) keep[i] = 0;
  }
  return keep;
}

template <typename T>
ParameterStore<T> initialize_parameters(const ModelConfig& config,
                                        std::uint64_t seed) {
  ParameterStore<T> store;
  Rng root(seed);
  for (const auto& [name, shape] : parameter_shapes(config)) {
    Rng rng = root.split();
    store.add(name, init_tensor<T>(name, shape, rng));
  }
  return store;
}

template <typename T>
Model<T>::Model(ModelConfig config, ParameterStore<T> params,
                std::shared_ptr<const wordpiece::Vocab> vocab)
    : config_(std::move(config)), params_(std::move(params)), vocab_(std::move(vocab)) {
  const auto shapes = parameter_shapes(config_);
  if (shapes.size() != params_.tensor_count()) {
    throw ConfigError("parameter set does not match the model config");
  }
  for (const auto& [name, shape] : shapes) {
    if (!params_.contains(name)) throw ConfigError("missing parameter " + name);
    if (params_.get(name).shape() != shape) {
      throw ShapeError("parameter " + name + " has shape " +
                       shape_string(params_.get(name).shape()) + ", expected " +
                       shape_string(shape));
    }
  }
  if (config_.mode == FrontendMode::kWordpiece) {
    if (!vocab_) throw ConfigError("wordpiece mode requires a vocabulary");
    if (vocab_->size() != config_.vocab_size) {
      throw ConfigError("vocabulary has " + std::to_string(vocab_->size()) +
                        " pieces but config says " +
                        std::to_string(config_.vocab_size));
    }
  }
}

template <typename T>
Model<T> Model<T>::initialize(const ModelConfig& config, std::uint64_t seed,
                              std::shared_ptr<const wordpiece::Vocab> vocab) {
  return Model(config, initialize_parameters<T>(config, seed), std::move(vocab));
}

template <typename T>
ModelInput Model<T>::prepare(const std::vector<std::string>& words,
                             const std::vector<int>& segments) const {
  if (words.size() != segments.size()) {
    throw InputError("prepare: words and segments differ in length");
  }
  ModelInput in;
  for (std::size_t w = 0; w < words.size(); ++w) {
    if (segments[w] != 0 && segments[w] != 1) {
      throw InputError("segment id must be 0 or 1");
    }
    const std::size_t begin = in.units.size();
    if (config_.mode == FrontendMode::kCharacter ||
        chartok::special_from_token(words[w])) {
      in.units.push_back(words[w]);
    } else {
      for (auto& piece : wordpiece::tokenize_word(*vocab_, words[w])) {
        in.units.push_back(std::move(piece));
      }
    }
    in.segments.resize(in.units.size(), segments[w]);
    in.alignment.emplace_back(begin, in.units.size());
  }
  if (in.units.size() > config_.max_positions) {
    throw LengthError("sequence of " + std::to_string(in.units.size()) +
                      " units exceeds " + std::to_string(config_.max_positions) +
                      " positions");
  }
  return in;
}

template <typename T>
Var<T> Model<T>::frontend(const std::vector<std::string>& units) const {
  if (units.empty()) throw LengthError("empty input");
  if (config_.mode == FrontendMode::kWordpiece) {
    std::vector<std::size_t> ids;
    ids.reserve(units.size());
    const std::size_t unk = vocab_->unk_id();
    for (const auto& u : units) ids.push_back(vocab_->find(u).value_or(unk));
    return ops::embedding(p("frontend.word_embeddings"), ids);
  }
  // Embed each distinct word once and gather; the embedding of a word does
  // not depend on its neighbours.
  std::unordered_map<std::string, std::size_t> slot;
  std::vector<chartok::CharSeq> distinct;
  std::vector<std::size_t> rows;
  rows.reserve(units.size());
  for (const auto& u : units) {
    auto [it, inserted] = slot.emplace(u, distinct.size());
    if (inserted) distinct.push_back(chartok::encode_token(u));
    rows.push_back(it->second);
  }
  const charcnn::CharCnn<T> cnn(params_, config_.charcnn);
  const Var<T> table = cnn.embed(distinct);
  return ops::gather_rows(table, rows);
}

template <typename T>
Var<T> Model<T>::norm(const Var<T>& x, const std::string& name) const {
  return ops::layer_norm(x, p(name + ".gamma"), p(name + ".beta"),
                         static_cast<T>(config_.layer_norm_eps));
}

template <typename T>
Var<T> Model<T>::maybe_dropout(const Var<T>& x, ForwardMode mode) const {
  if (!mode.training || config_.dropout == 0.0) return x;
  if (!mode.rng) throw ConfigError("training forward needs an Rng");
  return ops::dropout(x, config_.dropout, *mode.rng, true);
}

template <typename T>
Var<T> Model<T>::embed(const ModelInput& input, ForwardMode mode) const {
  const std::size_t n = input.units.size();
  if (input.segments.size() != n) throw InputError("segments length mismatch");
  if (n > config_.max_positions) {
    throw LengthError("sequence of " + std::to_string(n) + " units exceeds " +
                      std::to_string(config_.max_positions) + " positions");
  }
  std::vector<std::size_t> positions(n), segs(n);
  for (std::size_t i = 0; i < n; ++i) {
    positions[i] = i;
    if (input.segments[i] != 0 && input.segments[i] != 1) {
      throw InputError("segment id must be 0 or 1");
    }
    segs[i] = static_cast<std::size_t>(input.segments[i]);
  }
  Var<T> x = frontend(input.units);
  x = ops::add(x, ops::embedding(p("frontend.position_embeddings"), positions));
  x = ops::add(x, ops::embedding(p("frontend.segment_embeddings"), segs));
  return maybe_dropout(norm(x, "frontend.layer_norm"), mode);
}

template <typename T>
Var<T> Model<T>::encode(const Var<T>& input, const std::vector<std::uint8_t>& keep,
                        ForwardMode mode) const {
  const std::size_t heads = config_.attention_heads;
  const std::size_t head_dim = config_.hidden / heads;
  const T score_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(head_dim)));
  if (input.value().cols() != config_.hidden) {
    throw ShapeError("encode: input width does not match hidden size");
  }
  if (!keep.empty() && keep.size() != input.value().rows()) {
    throw ShapeError("encode: mask length does not match sequence");
  }
  Var<T> x = input;
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string prefix = "encoder.layer" + std::to_string(l);
    const Var<T> q = dense(x, prefix + ".attention.query");
    const Var<T> k = dense(x, prefix + ".attention.key");
    const Var<T> v = dense(x, prefix + ".attention.value");
    std::vector<Var<T>> contexts;
    contexts.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = h * head_dim;
      const Var<T> qh = ops::slice_cols(q, off, head_dim);
      const Var<T> kh = ops::slice_cols(k, off, head_dim);
      const Var<T> vh = ops::slice_cols(v, off, head_dim);
      Var<T> probs = ops::softmax(
          ops::scale(ops::matmul(qh, ops::transpose(kh)), score_scale), keep);
      probs = maybe_dropout(probs, mode);
      contexts.push_back(ops::matmul(probs, vh));
    }
    const Var<T> context = heads == 1 ? contexts[0] : ops::concat_cols(contexts);
    const Var<T> attended =
        maybe_dropout(dense(context, prefix + ".attention.output"), mode);
    x = norm(ops::add(x, attended), prefix + ".attention.layer_norm");

    const Var<T> inner = ops::gelu(dense(x, prefix + ".ffn.intermediate"));
    const Var<T> ffn_out = maybe_dropout(dense(inner, prefix + ".ffn.output"), mode);
    x = norm(ops::add(x, ffn_out), prefix + ".ffn.layer_norm");
  }
  return x;
}

template <typename T>
Var<T> Model<T>::pooled(const Var<T>& encoded) const {
  if (!config_.outputs.pooler) throw ConfigError("model has no pooler");
  return ops::tanh(dense(ops::gather_rows(encoded, {0}), "heads.pooler"));
}

template <typename T>
Var<T> Model<T>::head(const Var<T>& encoded, const ModelInput& input, Head which,
                      const std::vector<std::size_t>& positions,
                      ForwardMode mode) const {
  const auto& out = config_.outputs;
  switch (which) {
    case Head::kMlmPieces:
    case Head::kMlmWords: {
      if (!out.pretraining) throw ConfigError("model has no MLM head");
      const bool wants_words = which == Head::kMlmWords;
      if (wants_words != (config_.mode == FrontendMode::kCharacter)) {
        throw ConfigError(wants_words
                              ? "word-level MLM requested in wordpiece mode"
                              : "piece-level MLM requested in character mode");
      }
      Var<T> h = ops::gather_rows(encoded, positions);
      h = norm(ops::gelu(dense(h, "heads.mlm.transform")), "heads.mlm.layer_norm");
      if (config_.mode == FrontendMode::kWordpiece) {
        return ops::add_bias(
            ops::matmul(h, ops::transpose(p("frontend.word_embeddings"))),
            p("heads.mlm.decoder.bias"));
      }
      return dense(h, "heads.mlm.decoder");
    }
    case Head::kNsp:
      if (!out.pretraining) throw ConfigError("model has no NSP head");
      return dense(maybe_dropout(pooled(encoded), mode), "heads.nsp");
    case Head::kTokenTag: {
      if (out.task != TaskKind::kTokenTag) throw ConfigError("model has no tagging head");
      // positions, when given, selects words; otherwise every word is tagged.
      std::vector<std::size_t> rows;
      if (positions.empty()) {
        for (const auto& span : input.alignment) rows.push_back(span.first);
      } else {
        for (std::size_t w : positions) rows.push_back(input.alignment.at(w).first);
      }
      const Var<T> h = maybe_dropout(ops::gather_rows(encoded, rows), mode);
      return dense(h, "heads.task");
    }
    case Head::kPairClass:
      if (out.task != TaskKind::kPairClass) {
        throw ConfigError("model has no pair classification head");
      }
      return dense(maybe_dropout(pooled(encoded), mode), "heads.task");
    case Head::kPairScore:
      if (out.task != TaskKind::kPairScore) throw ConfigError("model has no scoring head");
      return dense(maybe_dropout(pooled(encoded), mode), "heads.task");
  }
  throw ConfigError("unknown head");
}

template ParameterStore<float> initialize_parameters<float>(const ModelConfig&,
                                                            std::uint64_t);
template ParameterStore<double> initialize_parameters<double>(const ModelConfig&,
                                                              std::uint64_t);
template class Model<float>;
template class Model<double>;

}  // namespace cbert
