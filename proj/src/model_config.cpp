#include "cbert/model_config.hpp"

#include "cbert/chartok.hpp"
#include "cbert/errors.hpp"

namespace cbert {

std::string to_string(FrontendMode mode) {
  return mode == FrontendMode::kCharacter ? "character" : "wordpiece";
}

FrontendMode parse_frontend_mode(const std::string& text) {
  if (text == "character") return FrontendMode::kCharacter;
  if (text == "wordpiece") return FrontendMode::kWordpiece;
  throw ConfigError("unknown mode '" + text + "' (character|wordpiece)");
}

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kNone: return "none";
    case TaskKind::kTokenTag: return "token_tag";
    case TaskKind::kPairClass: return "pair_class";
    case TaskKind::kPairScore: return "pair_score";
  }
  return "none";
}

TaskKind parse_task_kind(const std::string& text) {
  if (text == "none") return TaskKind::kNone;
  if (text == "token_tag") return TaskKind::kTokenTag;
  if (text == "pair_class") return TaskKind::kPairClass;
  if (text == "pair_score") return TaskKind::kPairScore;
  throw ConfigError("unknown task kind '" + text + "'");
}

CharCnnSpec CharCnnSpec::canonical() {
  return {16,
          {{1, 32}, {2, 32}, {3, 64}, {4, 128}, {5, 256}, {6, 512}, {7, 1024}},
          2};
}

std::size_t CharCnnSpec::total_filters() const {
  std::size_t total = 0;
  for (const auto& f : filters) total += f.count;
  return total;
}

ModelConfig ModelConfig::base(FrontendMode mode) {
  ModelConfig c;
  c.mode = mode;
  return c;
}

void ModelConfig::validate() const {
  if (hidden == 0 || attention_heads == 0 || hidden % attention_heads != 0) {
    throw ConfigError("hidden size must be a positive multiple of heads");
  }
  if (ffn == 0 || max_positions == 0) throw ConfigError("ffn/positions must be positive");
  if (segments != 2) throw ConfigError("segment count must be 2");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout outside [0, 1)");
  if (!(layer_norm_eps > 0.0)) throw ConfigError("layer_norm_eps must be positive");
  if (mode == FrontendMode::kWordpiece && vocab_size == 0) {
    throw ConfigError("wordpiece mode needs a vocabulary size");
  }
  if (mode == FrontendMode::kCharacter) {
    if (charcnn.filters.empty() || charcnn.char_dim == 0) {
      throw ConfigError("character mode needs a CharCNN filter spec");
    }
    for (const auto& f : charcnn.filters) {
      if (f.width == 0 || f.count == 0 || f.width > chartok::kSeqLength) {
        throw ConfigError("invalid CharCNN filter");
      }
    }
    if (outputs.pretraining && mlm_vocab_size == 0) {
      throw ConfigError("character-mode MLM needs a target vocabulary size");
    }
  }
  if (outputs.task != TaskKind::kNone) {
    if (outputs.num_labels == 0) throw ConfigError("task head needs labels");
    if (outputs.task == TaskKind::kPairScore && outputs.num_labels != 1) {
      throw ConfigError("pair_score head has exactly one output");
    }
    if (outputs.task != TaskKind::kTokenTag && !outputs.pooler) {
      throw ConfigError("sentence-level heads need the pooler");
    }
  }
  if (outputs.pretraining && !outputs.pooler) {
    throw ConfigError("NSP head needs the pooler");
  }
}

nlohmann::json ModelConfig::to_json() const {
  nlohmann::json filters = nlohmann::json::array();
  for (const auto& f : charcnn.filters) filters.push_back({f.width, f.count});
  return {{"mode", to_string(mode)},
          {"layers", layers},
          {"attention_heads", attention_heads},
          {"hidden", hidden},
          {"ffn", ffn},
          {"max_positions", max_positions},
          {"segments", segments},
          {"dropout", dropout},
          {"layer_norm_eps", layer_norm_eps},
          {"vocab_size", vocab_size},
          {"mlm_vocab_size", mlm_vocab_size},
          {"charcnn",
           {{"char_dim", charcnn.char_dim},
            {"filters", filters},
            {"highway_layers", charcnn.highway_layers}}},
          {"outputs",
           {{"pooler", outputs.pooler},
            {"pretraining", outputs.pretraining},
            {"task", to_string(outputs.task)},
            {"num_labels", outputs.num_labels}}}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    if (j.contains("mode")) c.mode = parse_frontend_mode(j.at("mode"));
    c.layers = j.value("layers", c.layers);
    c.attention_heads = j.value("attention_heads", c.attention_heads);
    c.hidden = j.value("hidden", c.hidden);
    c.ffn = j.value("ffn", c.ffn);
    c.max_positions = j.value("max_positions", c.max_positions);
    c.segments = j.value("segments", c.segments);
    c.dropout = j.value("dropout", c.dropout);
    c.layer_norm_eps = j.value("layer_norm_eps", c.layer_norm_eps);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.mlm_vocab_size = j.value("mlm_vocab_size", c.mlm_vocab_size);
    if (j.contains("charcnn")) {
      const auto& cc = j.at("charcnn");
      c.charcnn.char_dim = cc.value("char_dim", c.charcnn.char_dim);
      c.charcnn.highway_layers =
          cc.value("highway_layers", c.charcnn.highway_layers);
      if (cc.contains("filters")) {
        c.charcnn.filters.clear();
        for (const auto& f : cc.at("filters")) {
          c.charcnn.filters.push_back(
              {f.at(0).get<std::size_t>(), f.at(1).get<std::size_t>()});
        }
      }
    }
    if (j.contains("outputs")) {
      const auto& o = j.at("outputs");
      c.outputs.pooler = o.value("pooler", c.outputs.pooler);
      c.outputs.pretraining = o.value("pretraining", c.outputs.pretraining);
      if (o.contains("task")) c.outputs.task = parse_task_kind(o.at("task"));
      c.outputs.num_labels = o.value("num_labels", c.outputs.num_labels);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return c;
}

std::map<std::string, Shape> parameter_shapes(const ModelConfig& c) {
  c.validate();
  std::map<std::string, Shape> s;
  const std::size_t d = c.hidden;
  auto dense = [&s](const std::string& name, std::size_t in, std::size_t out) {
    s[name + ".weight"] = {in, out};
    s[name + ".bias"] = {out};
  };
  auto norm = [&s](const std::string& name, std::size_t dim) {
    s[name + ".gamma"] = {dim};
    s[name + ".beta"] = {dim};
  };

  if (c.mode == FrontendMode::kWordpiece) {
    s["frontend.word_embeddings"] = {c.vocab_size, d};
  } else {
    const auto& cc = c.charcnn;
    s["frontend.charcnn.char_embeddings"] = {chartok::kVocabSize, cc.char_dim};
    for (std::size_t k = 0; k < cc.filters.size(); ++k) {
      const std::string name = "frontend.charcnn.conv" + std::to_string(k);
      s[name + ".weight"] = {cc.filters[k].count, cc.filters[k].width,
                             cc.char_dim};
      s[name + ".bias"] = {cc.filters[k].count};
    }
    const std::size_t width = cc.total_filters();
    for (std::size_t h = 0; h < cc.highway_layers; ++h) {
      const std::string name = "frontend.charcnn.highway" + std::to_string(h);
      dense(name + ".transform", width, width);
      dense(name + ".gate", width, width);
    }
    dense("frontend.charcnn.projection", width, d);
  }
  s["frontend.position_embeddings"] = {c.max_positions, d};
  s["frontend.segment_embeddings"] = {c.segments, d};
  norm("frontend.layer_norm", d);

  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = "encoder.layer" + std::to_string(l);
    for (const char* part : {"query", "key", "value", "output"}) {
      dense(p + ".attention." + part, d, d);
    }
    norm(p + ".attention.layer_norm", d);
    dense(p + ".ffn.intermediate", d, c.ffn);
    dense(p + ".ffn.output", c.ffn, d);
    norm(p + ".ffn.layer_norm", d);
  }

  if (c.outputs.pooler) dense("heads.pooler", d, d);
  if (c.outputs.pretraining) {
    dense("heads.mlm.transform", d, d);
    norm("heads.mlm.layer_norm", d);
    if (c.mode == FrontendMode::kWordpiece) {
      // Decoder weights are tied to frontend.word_embeddings.
      s["heads.mlm.decoder.bias"] = {c.vocab_size};
    } else {
      dense("heads.mlm.decoder", d, c.mlm_vocab_size);
    }
    dense("heads.nsp", d, 2);
  }
  if (c.outputs.task != TaskKind::kNone) {
    dense("heads.task", d, c.outputs.num_labels);
  }
  return s;
}

ParameterBreakdown count_parameters(const ModelConfig& config) {
  ParameterBreakdown b;
  for (const auto& [name, shape] : parameter_shapes(config)) {
    const std::size_t n = shape_size(shape);
    if (name.starts_with("frontend.")) {
      b.frontend += n;
    } else if (name.starts_with("encoder.")) {
      b.encoder += n;
    } else if (name.starts_with("heads.pooler.")) {
      b.pooler += n;
    } else if (name.starts_with("heads.mlm.")) {
      b.mlm_head += n;
    } else if (name.starts_with("heads.nsp.")) {
      b.nsp_head += n;
    } else {
      b.task_head += n;
    }
  }
  return b;
}

std::size_t charcnn_param_count(const CharCnnSpec& spec, std::size_t output_dim) {
  ModelConfig c;
  c.mode = FrontendMode::kCharacter;
  c.charcnn = spec;
  c.hidden = output_dim;
  c.attention_heads = 1;
  c.layers = 0;
  c.outputs = {false, false, TaskKind::kNone, 0};
  std::size_t total = 0;
  for (const auto& [name, shape] : parameter_shapes(c)) {
    if (name.starts_with("frontend.charcnn.")) total += shape_size(shape);
  }
  return total;
}

}  // namespace cbert
