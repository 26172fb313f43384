#include <gtest/gtest.h>

#include <filesystem>
#include <cstring>
#include <fstream>
#include <functional>

#include <nlohmann/json.hpp>

#include "cbert/checkpoint.hpp"
#include "cbert/encoder.hpp"
#include "cbert/errors.hpp"
#include "cbert/io.hpp"
#include "test_util.hpp"

namespace cbert {
namespace {

namespace fs = std::filesystem;

ModelConfig small_config(FrontendMode mode) {
  ModelConfig c;
  c.mode = mode;
  c.layers = 1;
  c.attention_heads = 2;
  c.hidden = 8;
  c.ffn = 16;
  c.max_positions = 12;
  c.vocab_size = 20;
  c.mlm_vocab_size = 9;
  c.charcnn = {4, {{1, 2}, {2, 3}}, 1};
  return c;
}

void save_model(const fs::path& dir, FrontendMode mode, std::uint64_t seed = 1) {
  const auto c = small_config(mode);
  save_checkpoint(dir, initialize_parameters<float>(c, seed), c, {{"notes.txt", "hello\n"}});
}

std::string bytes(const fs::path& p) { return read_file(p); }

TEST(Checkpoint, RoundTripIsBitExact) {
  test::TempDir dir("ckpt");
  const auto c = small_config(FrontendMode::kCharacter);
  const auto params = initialize_parameters<float>(c, 4);
  save_checkpoint(dir.path() / "a", params, c, {{"mlm_vocab.txt", "x\ny\n"}});
  const auto loaded = load_checkpoint(dir.path() / "a");
  EXPECT_EQ(loaded.config, c);
  EXPECT_EQ(loaded.attachments.at("mlm_vocab.txt"), "x\ny\n");
  ASSERT_EQ(loaded.params.names(), params.names());
  for (const auto& [name, v] : params) {
    const auto& got = loaded.params.get(name).value();
    ASSERT_EQ(got.shape(), v.shape());
    EXPECT_EQ(std::memcmp(got.data().data(), v.value().data().data(), 4 * got.size()), 0)
        << name;
  }
  save_checkpoint(dir.path() / "b", loaded);
  for (const char* f : {"manifest.json", "tensors.bin", "mlm_vocab.txt"}) {
    EXPECT_EQ(bytes(dir.path() / "a" / f), bytes(dir.path() / "b" / f)) << f;
  }
}

TEST(Checkpoint, RepeatedSavesAreByteIdentical) {
  test::TempDir dir("ckpt");
  save_model(dir.path() / "a", FrontendMode::kWordpiece);
  save_model(dir.path() / "b", FrontendMode::kWordpiece);
  for (const char* f : {"manifest.json", "tensors.bin", "notes.txt"}) {
    EXPECT_EQ(bytes(dir.path() / "a" / f), bytes(dir.path() / "b" / f));
  }
}

TEST(Checkpoint, ManifestLayout) {
  test::TempDir dir("ckpt");
  save_model(dir.path(), FrontendMode::kCharacter);
  const auto m = nlohmann::json::parse(bytes(dir.path() / "manifest.json"));
  EXPECT_EQ(m["format_version"], 1);
  EXPECT_EQ(m["mode"], "character");
  std::size_t cursor = 0;
  std::string previous;
  for (const auto& t : m["tensors"]) {
    EXPECT_EQ(t["dtype"], "f32");
    EXPECT_EQ(t["offset"].get<std::size_t>(), cursor);
    cursor += t["length"].get<std::size_t>();
    EXPECT_LT(previous, t["name"].get<std::string>());
    previous = t["name"];
  }
  EXPECT_EQ(cursor, fs::file_size(dir.path() / "tensors.bin"));
  // Little-endian f32: the first gamma entry of a norm is 1.0f = 00 00 80 3f.
  std::size_t gamma_offset = 0;
  for (const auto& t : m["tensors"]) {
    if (t["name"] == "frontend.layer_norm.gamma") gamma_offset = t["offset"];
  }
  const std::string blob = bytes(dir.path() / "tensors.bin");
  EXPECT_EQ(blob.substr(gamma_offset, 4), std::string("\x00\x00\x80\x3f", 4));
}

TEST(Checkpoint, LoadedModelReproducesOutputs) {
  test::TempDir dir("ckpt");
  const auto c = small_config(FrontendMode::kCharacter);
  const auto model = Model<float>::initialize(c, 8);
  save_checkpoint(dir.path(), model.params(), c);
  auto ckpt = load_checkpoint(dir.path(), FrontendMode::kCharacter);
  const Model<float> loaded(ckpt.config, std::move(ckpt.params));
  const auto in = model.prepare({"[CLS]", "some", "words", "[SEP]"}, {0, 0, 0, 0});
  EXPECT_EQ(model.forward(in).value(), loaded.forward(in).value());
}

void edit_manifest(const fs::path& dir, const std::function<void(nlohmann::json&)>& edit) {
  auto m = nlohmann::json::parse(bytes(dir / "manifest.json"));
  edit(m);
  write_file_atomic(dir / "manifest.json", m.dump(2));
}

TEST(Checkpoint, UnknownTensorNameIsRejected) {
  test::TempDir dir("ckpt");
  save_model(dir.path(), FrontendMode::kWordpiece);
  edit_manifest(dir.path(), [](nlohmann::json& m) { m["tensors"][0]["name"] = "bogus.weight"; });
  EXPECT_THROW(load_checkpoint(dir.path()), FormatError);
}

TEST(Checkpoint, TruncatedBlobIsRejected) {
  test::TempDir dir("ckpt");
  save_model(dir.path(), FrontendMode::kWordpiece);
  const auto blob = dir.path() / "tensors.bin";
  fs::resize_file(blob, fs::file_size(blob) - 1);
  EXPECT_THROW(load_checkpoint(dir.path()), FormatError);
}

TEST(Checkpoint, TrailingBytesAreRejected) {
  test::TempDir dir("ckpt");
  save_model(dir.path(), FrontendMode::kWordpiece);
  std::ofstream(dir.path() / "tensors.bin", std::ios::app | std::ios::binary) << 'x';
  EXPECT_THROW(load_checkpoint(dir.path()), FormatError);
}

TEST(Checkpoint, ModeMismatchIsModeError) {
  test::TempDir dir("ckpt");
  save_model(dir.path(), FrontendMode::kCharacter);
  EXPECT_THROW(load_checkpoint(dir.path(), FrontendMode::kWordpiece), ModeError);
  EXPECT_NO_THROW(load_checkpoint(dir.path(), FrontendMode::kCharacter));
}

TEST(Checkpoint, VersionAndShapeValidation) {
  test::TempDir dir("ckpt");
  save_model(dir.path() / "v", FrontendMode::kCharacter);
  edit_manifest(dir.path() / "v", [](nlohmann::json& m) { m["format_version"] = 2; });
  EXPECT_THROW(load_checkpoint(dir.path() / "v"), FormatError);

  save_model(dir.path() / "s", FrontendMode::kCharacter);
  edit_manifest(dir.path() / "s", [](nlohmann::json& m) {
    for (auto& t : m["tensors"]) {
      if (t["name"] == "frontend.layer_norm.gamma") t["shape"] = {4, 2};
    }
  });
  EXPECT_THROW(load_checkpoint(dir.path() / "s"), FormatError);

  save_model(dir.path() / "m", FrontendMode::kCharacter);
  edit_manifest(dir.path() / "m", [](nlohmann::json& m) { m["tensors"].erase(0); });
  EXPECT_THROW(load_checkpoint(dir.path() / "m"), FormatError);

  EXPECT_THROW(load_checkpoint(dir.path() / "missing"), IoError);
}

TEST(Checkpoint, SaveRejectsInconsistentParameters) {
  test::TempDir dir("ckpt");
  const auto c = small_config(FrontendMode::kWordpiece);
  auto params = initialize_parameters<float>(c, 1);
  params.add("extra.weight", Tensor<float>({2}));
  EXPECT_THROW(save_checkpoint(dir.path(), params, c), FormatError);
  EXPECT_THROW(save_checkpoint(dir.path(), initialize_parameters<float>(c, 1), c,
                               {{"../escape", ""}}),
               FormatError);
}

}  // namespace
}  // namespace cbert
