#pragma once

#include <cstddef>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

namespace cbert::wordpiece {

inline constexpr std::string_view kContinuation = "##";
inline constexpr std::string_view kPad = "[PAD]";
inline constexpr std::string_view kUnk = "[UNK]";
inline constexpr std::string_view kCls = "[CLS]";
inline constexpr std::string_view kSep = "[SEP]";
inline constexpr std::string_view kMask = "[MASK]";
inline constexpr std::size_t kDefaultMaxWordChars = 100;

// Ordered piece inventory; the line number in a vocab file is the id.
class Vocab {
 public:
  Vocab() = default;

  // [PAD], [UNK], [CLS], [SEP], [MASK] at ids 0-4.
  static Vocab with_specials();

  // One piece per line. Every special must be present somewhere; pretrained
  // general-domain files keep them at other ids, which is fine.
  static Vocab read(std::istream& in);
  static Vocab load(const std::filesystem::path& path);
  void write(std::ostream& out) const;
  void save(const std::filesystem::path& path) const;

  // Returns the id of `piece`, adding it when absent.
  std::size_t add(std::string piece);

  std::optional<std::size_t> find(std::string_view piece) const;
  bool contains(std::string_view piece) const { return find(piece).has_value(); }
  std::size_t id(std::string_view piece) const;  // IndexError when absent
  const std::string& piece(std::size_t id) const { return pieces_.at(id); }
  std::size_t size() const { return pieces_.size(); }
  const std::vector<std::string>& pieces() const { return pieces_; }

  std::size_t pad_id() const { return id(kPad); }
  std::size_t unk_id() const { return id(kUnk); }
  std::size_t cls_id() const { return id(kCls); }
  std::size_t sep_id() const { return id(kSep); }
  std::size_t mask_id() const { return id(kMask); }
  bool is_special(std::size_t id) const;

 private:
  struct Hash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const {
      return std::hash<std::string_view>{}(s);
    }
  };
  std::vector<std::string> pieces_;
  std::unordered_map<std::string, std::size_t, Hash, std::equal_to<>> index_;
};

// Specials plus every observed character in bare and "##" form.
std::size_t base_symbol_count(const std::vector<std::string>& corpus);

// Frequency BPE over "##"-continued pieces. Repeatedly merges the most
// frequent adjacent pair inside words (ties: lexicographically smallest
// pair) until `target_size` pieces exist or the best pair is rarer than
// `min_pair_freq`.
Vocab learn_vocab(const std::vector<std::string>& corpus,
                  std::size_t target_size, std::size_t min_pair_freq = 2);

// Greedy longest-match-first segmentation. Any unmatchable position, or a
// word longer than `max_word_chars` code points, yields {"[UNK]"}.
std::vector<std::string> tokenize_word(
    const Vocab& vocab, std::string_view word,
    std::size_t max_word_chars = kDefaultMaxWordChars);

std::vector<std::size_t> tokenize_word_ids(
    const Vocab& vocab, std::string_view word,
    std::size_t max_word_chars = kDefaultMaxWordChars);

struct FragmentationReport {
  std::map<std::size_t, std::size_t> occurrence_histogram;  // pieces -> count
  std::map<std::size_t, std::size_t> type_histogram;
  std::size_t occurrences = 0;
  std::size_t types = 0;
  std::size_t unk_occurrences = 0;
  double unsplit_fraction = 0.0;
  double mean_pieces_per_occurrence = 0.0;

  nlohmann::json to_json() const;
  // Rows: pieces_per_token, occurrences, types.
  std::string to_tsv() const;
};

FragmentationReport analyze_fragmentation(
    const Vocab& vocab, const std::vector<std::string>& corpus);

struct MonotonicityStats {
  std::size_t words_checked = 0;
  std::size_t violations = 0;  // words with more pieces under the larger vocab
  std::vector<std::string> violating_words;
};

// Compares piece counts of every distinct word under `smaller` and `larger`
// (a superset of `smaller`). Greedy matching is not monotone in general, so
// this is a measurement rather than an assertion.
MonotonicityStats monotonicity_check(const Vocab& smaller, const Vocab& larger,
                                     const std::vector<std::string>& words);

}  // namespace cbert::wordpiece
