#include <gtest/gtest.h>

#include "cbert/chartok.hpp"
#include "cbert/errors.hpp"
#include "cbert/rng.hpp"

namespace cbert::chartok {
namespace {

std::vector<std::uint16_t> expected(std::vector<std::uint16_t> head) {
  head.resize(kSeqLength, kCharPad);
  return head;
}

std::vector<std::uint16_t> as_vector(const CharSeq& s) { return {s.begin(), s.end()}; }

TEST(EncodeWord, AsciiBytes) {
  EXPECT_EQ(as_vector(encode_word("cat")), expected({256, 99, 97, 116, 257}));
}

TEST(EncodeWord, MultibyteUtf8) {
  EXPECT_EQ(as_vector(encode_word("\xC3\xA9")), expected({256, 195, 169, 257}));
}

TEST(EncodeWord, TruncatesToFirst48Bytes) {
  std::vector<std::uint16_t> want{256};
  want.insert(want.end(), 48, 97);
  want.push_back(257);
  EXPECT_EQ(as_vector(encode_word(std::string(60, 'a'))), want);
}

TEST(EncodeWord, EmptyAfterStripIsInputError) {
  EXPECT_THROW(encode_word(""), InputError);
  EXPECT_THROW(encode_word("  \t"), InputError);
  EXPECT_EQ(encode_word(" cat "), encode_word("cat"));
}

TEST(EncodeSpecial, Codes) {
  EXPECT_EQ(as_vector(encode_special(Special::kCls)), expected({256, 259, 257}));
  EXPECT_EQ(as_vector(encode_special(Special::kSep)), expected({256, 260, 257}));
  EXPECT_EQ(as_vector(encode_special(Special::kMask)), expected({256, 261, 257}));
  EXPECT_EQ(as_vector(encode_special(Special::kPad)), expected({256, 262, 257}));
  EXPECT_EQ(parse_special("CLS"), Special::kCls);
  EXPECT_THROW(parse_special("BOS"), InputError);
}

TEST(EncodeSpecial, LowercaseTextIsAnOrdinaryWord) {
  EXPECT_EQ(encode_token("cls"), encode_word("cls"));
  EXPECT_NE(encode_token("cls"), encode_special(Special::kCls));
  EXPECT_EQ(encode_token("[CLS]"), encode_special(Special::kCls));
}

TEST(CharSeq, RoundTripAndInjectivityOverRandomTokens) {
  Rng rng(11);
  std::map<CharSeq, std::string> seen;
  for (int i = 0; i < 2000; ++i) {
    const std::size_t len = 1 + rng.index(kMaxContentBytes);
    std::string token;
    for (std::size_t j = 0; j < len; ++j) {
      // Any non-whitespace byte.
      char c;
      do {
        c = static_cast<char>(rng.index(256));
      } while (c == ' ' || (c >= '\t' && c <= '\r'));
      token.push_back(c);
    }
    const CharSeq seq = encode_word(token);
    ASSERT_NO_THROW(validate(seq));
    EXPECT_EQ(decode(seq), token);
    auto [it, inserted] = seen.emplace(seq, token);
    if (!inserted) {
      EXPECT_EQ(it->second, token);
    }
    for (std::size_t k = 1; k <= len; ++k) EXPECT_LT(seq[k], 256);
  }
}

TEST(CharSeq, ValidateRejectsMalformed) {
  CharSeq s = encode_word("ab");
  s[0] = 97;
  EXPECT_THROW(validate(s), InputError);
  s = encode_word("ab");
  s[10] = 97;
  EXPECT_THROW(validate(s), InputError);
  s.fill(kCharPad);
  EXPECT_THROW(validate(s), InputError);
}

}  // namespace
}  // namespace cbert::chartok
