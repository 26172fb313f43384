#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "cbert/model_config.hpp"
#include "cbert/parameter_store.hpp"

namespace cbert {

inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kBlobFile = "tensors.bin";

// A checkpoint directory holds manifest.json, tensors.bin (little-endian f32,
// row-major, tensors in name order) and optional text attachments such as
// vocab.txt.
struct Checkpoint {
  ModelConfig config;
  ParameterStore<float> params;
  std::map<std::string, std::string> attachments;  // file name -> contents
};

void save_checkpoint(const std::filesystem::path& dir,
                     const ParameterStore<float>& params,
                     const ModelConfig& config,
                     const std::map<std::string, std::string>& attachments = {});

inline void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt) {
  save_checkpoint(dir, ckpt.params, ckpt.config, ckpt.attachments);
}

// FormatError on malformed or inconsistent files, ModeError when `expected`
// is given and differs from the stored mode, IoError when files are missing.
Checkpoint load_checkpoint(const std::filesystem::path& dir,
                           std::optional<FrontendMode> expected = std::nullopt);

}  // namespace cbert
