#include "cbert/checkpoint.hpp"

#include <bit>
#include <cstring>

#include <nlohmann/json.hpp>

#include "cbert/errors.hpp"
#include "cbert/io.hpp"

namespace cbert {
namespace {

static_assert(sizeof(float) == 4);

void append_le(std::string& out, float v) {
  std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

float read_le(const char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) {
    bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  }
  return std::bit_cast<float>(bits);
}

void check_attachment_name(const std::string& name) {
  if (name.empty() || name.find('/') != std::string::npos || name == "." ||
      name == ".." || name == kManifestFile || name == kBlobFile) {
    throw FormatError("invalid attachment name '" + name + "'");
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir,
                     const ParameterStore<float>& params, const ModelConfig& config,
                     const std::map<std::string, std::string>& attachments) {
  const auto shapes = parameter_shapes(config);
  if (shapes.size() != params.tensor_count()) {
    throw FormatError("parameter set does not match the model config");
  }
  std::string blob;
  blob.reserve(params.element_count() * 4);
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, var] : params) {
    auto it = shapes.find(name);
    if (it == shapes.end()) throw FormatError("parameter " + name + " not in config");
    if (it->second != var.shape()) throw FormatError("parameter " + name + " has wrong shape");
    const std::size_t offset = blob.size();
    for (float v : var.value().data()) append_le(blob, v);
    tensors.push_back({{"name", name},
                       {"dtype", "f32"},
                       {"shape", var.shape()},
                       {"offset", offset},
                       {"length", blob.size() - offset}});
  }
  nlohmann::json names = nlohmann::json::array();
  for (const auto& [name, contents] : attachments) {
    check_attachment_name(name);
    names.push_back(name);
  }
  const nlohmann::json manifest = {{"format_version", kCheckpointFormatVersion},
                                   {"mode", to_string(config.mode)},
                                   {"config", config.to_json()},
                                   {"tensors", tensors},
                                   {"attachments", names}};
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir.string());
  write_file_atomic(dir / kBlobFile, blob);
  for (const auto& [name, contents] : attachments) write_file_atomic(dir / name, contents);
  // The manifest goes last so a complete manifest implies complete data.
  write_file_atomic(dir / kManifestFile, manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& dir,
                           std::optional<FrontendMode> expected) {
  if (!std::filesystem::exists(dir / kManifestFile)) {
    throw IoError("no checkpoint manifest in " + dir.string());
  }
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(dir / kManifestFile));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what());
  }
  const std::string blob = read_file(dir / kBlobFile);

  Checkpoint ckpt;
  try {
    const int version = manifest.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
      throw FormatError("unsupported checkpoint format version " + std::to_string(version));
    }
    ckpt.config = ModelConfig::from_json(manifest.at("config"));
    const FrontendMode mode = parse_frontend_mode(manifest.at("mode").get<std::string>());
    if (mode != ckpt.config.mode) throw FormatError("manifest mode disagrees with config");
    if (expected && *expected != mode) {
      throw ModeError("checkpoint holds a " + to_string(mode) + " model but a " +
                      to_string(*expected) + " model was requested");
    }
    const auto shapes = parameter_shapes(ckpt.config);
    std::size_t cursor = 0;
    for (const auto& entry : manifest.at("tensors")) {
      const std::string name = entry.at("name").get<std::string>();
      auto it = shapes.find(name);
      if (it == shapes.end()) throw FormatError("unknown tensor " + name);
      if (entry.at("dtype").get<std::string>() != "f32") {
        throw FormatError("tensor " + name + " has unsupported dtype");
      }
      const Shape shape = entry.at("shape").get<Shape>();
      if (shape != it->second) {
        throw FormatError("tensor " + name + " has shape " + shape_string(shape) +
                          ", config implies " + shape_string(it->second));
      }
      const std::size_t offset = entry.at("offset").get<std::size_t>();
      const std::size_t length = entry.at("length").get<std::size_t>();
      if (offset != cursor) throw FormatError("tensor " + name + " offset out of order");
      if (length != shape_size(shape) * 4) {
        throw FormatError("tensor " + name + " length disagrees with its shape");
      }
      if (offset + length > blob.size()) {
        throw FormatError("tensor blob truncated at " + name);
      }
      Tensor<float> t(shape);
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = read_le(blob.data() + offset + 4 * i);
      if (ckpt.params.contains(name)) throw FormatError("duplicate tensor " + name);
      ckpt.params.add(name, std::move(t));
      cursor = offset + length;
    }
    if (cursor != blob.size()) throw FormatError("tensor blob has trailing bytes");
    if (ckpt.params.tensor_count() != shapes.size()) {
      throw FormatError("checkpoint is missing tensors the config requires");
    }
    for (const auto& name : manifest.value("attachments", nlohmann::json::array())) {
      const std::string file = name.get<std::string>();
      check_attachment_name(file);
      ckpt.attachments[file] = read_file(dir / file);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid model config in manifest: ") + e.what());
  }
  return ckpt;
}

}  // namespace cbert
