#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace cbert::chartok {

// Byte-level character vocabulary: ids 0-255 are raw UTF-8 bytes, followed by
// seven marker symbols.
inline constexpr std::uint16_t kBeginOfWord = 256;
inline constexpr std::uint16_t kEndOfWord = 257;
inline constexpr std::uint16_t kCharPad = 258;
inline constexpr std::uint16_t kClsCode = 259;
inline constexpr std::uint16_t kSepCode = 260;
inline constexpr std::uint16_t kMaskCode = 261;
inline constexpr std::uint16_t kWordPadCode = 262;
inline constexpr std::size_t kVocabSize = 263;

inline constexpr std::size_t kSeqLength = 50;
inline constexpr std::size_t kMaxContentBytes = kSeqLength - 2;

using CharSeq = std::array<std::uint16_t, kSeqLength>;

enum class Special { kCls, kSep, kMask, kPad };

// Literal token strings standing for the word-level specials. Input text is
// lowercased, so these never collide with corpus words.
inline constexpr std::string_view kClsToken = "[CLS]";
inline constexpr std::string_view kSepToken = "[SEP]";
inline constexpr std::string_view kMaskToken = "[MASK]";
inline constexpr std::string_view kPadToken = "[PAD]";

// [BOW, bytes (first 48 kept), EOW, CHAR_PAD...]. The token is stripped of
// surrounding whitespace; an empty result throws InputError.
CharSeq encode_word(std::string_view token);

CharSeq encode_special(Special symbol);

// Parses "CLS"/"SEP"/"MASK"/"PAD" (or the bracketed forms); InputError
// otherwise.
Special parse_special(std::string_view name);

std::optional<Special> special_from_token(std::string_view token);

// Bracketed literals map to encode_special; everything else to encode_word.
CharSeq encode_token(std::string_view token);

// Throws InputError when `seq` violates the CharSeq layout.
void validate(const CharSeq& seq);

// Inverse of encode_token for valid sequences (bytes, or the bracketed
// special literal).
std::string decode(const CharSeq& seq);

}  // namespace cbert::chartok
