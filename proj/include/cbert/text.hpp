#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace cbert {

// ASCII lowercasing; bytes >= 0x80 are left untouched.
std::string to_lower(std::string_view text);

std::string_view strip(std::string_view text);

// Splits on ASCII whitespace and lowercases each token.
std::vector<std::string> split_words(std::string_view text);

// Splits UTF-8 text into code points, each returned as its byte sequence.
// Invalid lead bytes are returned as single-byte units.
std::vector<std::string> utf8_chars(std::string_view text);

}  // namespace cbert
