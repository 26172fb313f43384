#include "cbert/chartok.hpp"

#include "cbert/errors.hpp"
#include "cbert/text.hpp"

namespace cbert::chartok {
namespace {

CharSeq framed(std::string_view payload_bytes, std::uint16_t special) {
  CharSeq seq;
  seq.fill(kCharPad);
  std::size_t pos = 0;
  seq[pos++] = kBeginOfWord;
  if (special != 0) {
    seq[pos++] = special;
  } else {
    for (unsigned char byte : payload_bytes) seq[pos++] = byte;
  }
  seq[pos] = kEndOfWord;
  return seq;
}

}  // namespace

CharSeq encode_word(std::string_view token) {
  std::string_view body = strip(token);
  if (body.empty()) throw InputError("encode_word: empty token");
  if (body.size() > kMaxContentBytes) body = body.substr(0, kMaxContentBytes);
  return framed(body, 0);
}

CharSeq encode_special(Special symbol) {
  switch (symbol) {
    case Special::kCls: return framed({}, kClsCode);
    case Special::kSep: return framed({}, kSepCode);
    case Special::kMask: return framed({}, kMaskCode);
    case Special::kPad: return framed({}, kWordPadCode);
  }
  throw InputError("encode_special: unknown symbol");
}

Special parse_special(std::string_view name) {
  if (name == "CLS" || name == kClsToken) return Special::kCls;
  if (name == "SEP" || name == kSepToken) return Special::kSep;
  if (name == "MASK" || name == kMaskToken) return Special::kMask;
  if (name == "PAD" || name == kPadToken) return Special::kPad;
  throw InputError("unknown special symbol '" + std::string(name) + "'");
}

std::optional<Special> special_from_token(std::string_view token) {
  if (token == kClsToken) return Special::kCls;
  if (token == kSepToken) return Special::kSep;
  if (token == kMaskToken) return Special::kMask;
  if (token == kPadToken) return Special::kPad;
  return std::nullopt;
}

CharSeq encode_token(std::string_view token) {
  if (auto special = special_from_token(token)) return encode_special(*special);
  return encode_word(token);
}

void validate(const CharSeq& seq) {
  if (seq[0] != kBeginOfWord) throw InputError("CharSeq: missing BOW");
  std::size_t eow = 0;
  for (std::size_t i = 1; i < kSeqLength; ++i) {
    if (seq[i] == kEndOfWord) {
      eow = i;
      break;
    }
  }
  if (eow < 2) throw InputError("CharSeq: missing EOW or empty content");
  for (std::size_t i = 1; i < eow; ++i) {
    if (seq[i] >= kVocabSize ||
        (seq[i] >= kBeginOfWord && !(eow == 2 && seq[i] >= kClsCode))) {
      throw InputError("CharSeq: marker inside content");
    }
  }
  for (std::size_t i = eow + 1; i < kSeqLength; ++i) {
    if (seq[i] != kCharPad) throw InputError("CharSeq: non-pad after EOW");
  }
}

std::string decode(const CharSeq& seq) {
  validate(seq);
  if (seq[1] >= kClsCode) {
    switch (seq[1]) {
      case kClsCode: return std::string(kClsToken);
      case kSepCode: return std::string(kSepToken);
      case kMaskCode: return std::string(kMaskToken);
      default: return std::string(kPadToken);
    }
  }
  std::string out;
  for (std::size_t i = 1; seq[i] != kEndOfWord; ++i) {
    out.push_back(static_cast<char>(seq[i]));
  }
  return out;
}

}  // namespace cbert::chartok
