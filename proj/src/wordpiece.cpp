#include "cbert/wordpiece.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "cbert/errors.hpp"
#include "cbert/io.hpp"
#include "cbert/text.hpp"

namespace cbert::wordpiece {
namespace {

constexpr std::string_view kSpecials[] = {kPad, kUnk, kCls, kSep, kMask};

std::string continuation(std::string_view s) {
  return std::string(kContinuation) + std::string(s);
}

}  // namespace

Vocab Vocab::with_specials() {
  Vocab v;
  for (auto s : kSpecials) v.add(std::string(s));
  return v;
}

Vocab Vocab::read(std::istream& in) {
  Vocab v;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      throw FormatError("vocab line " + std::to_string(lineno) + " is empty");
    }
    if (v.contains(line)) {
      throw FormatError("vocab line " + std::to_string(lineno) +
                        ": duplicate piece '" + line + "'");
    }
    v.add(line);
  }
  for (auto s : kSpecials) {
    if (!v.contains(s)) {
      throw FormatError("vocab is missing special piece " + std::string(s));
    }
  }
  return v;
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocab file " + path.string());
  return read(in);
}

void Vocab::write(std::ostream& out) const {
  for (const auto& p : pieces_) out << p << '\n';
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ostringstream os;
  write(os);
  write_file_atomic(path, os.str());
}

std::size_t Vocab::add(std::string piece) {
  if (auto it = index_.find(piece); it != index_.end()) return it->second;
  const std::size_t id = pieces_.size();
  index_.emplace(piece, id);
  pieces_.push_back(std::move(piece));
  return id;
}

std::optional<std::size_t> Vocab::find(std::string_view piece) const {
  auto it = index_.find(piece);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t Vocab::id(std::string_view piece) const {
  auto found = find(piece);
  if (!found) throw IndexError("piece '" + std::string(piece) + "' not in vocab");
  return *found;
}

bool Vocab::is_special(std::size_t id) const {
  const auto& p = pieces_.at(id);
  return std::find(std::begin(kSpecials), std::end(kSpecials), p) !=
         std::end(kSpecials);
}

std::size_t base_symbol_count(const std::vector<std::string>& corpus) {
  std::set<std::string> chars;
  for (const auto& w : corpus)
    for (auto& c : utf8_chars(w)) chars.insert(std::move(c));
  return std::size(kSpecials) + 2 * chars.size();
}

Vocab learn_vocab(const std::vector<std::string>& corpus,
                  std::size_t target_size, std::size_t min_pair_freq) {
  if (corpus.empty()) throw InputError("learn_vocab: empty corpus");

  std::map<std::string, std::size_t> word_counts;
  for (const auto& w : corpus) {
    if (!w.empty()) ++word_counts[w];
  }
  if (word_counts.empty()) throw InputError("learn_vocab: empty corpus");

  std::set<std::string> chars;
  for (const auto& [w, n] : word_counts)
    for (auto& c : utf8_chars(w)) chars.insert(std::move(c));

  Vocab vocab = Vocab::with_specials();
  for (const auto& c : chars) vocab.add(c);
  for (const auto& c : chars) vocab.add(continuation(c));
  if (target_size < vocab.size()) {
    throw ConfigError("learn_vocab: target size " + std::to_string(target_size) +
                      " below base symbol count " +
                      std::to_string(vocab.size()));
  }

  // Each word type as a sequence of vocab ids.
  struct WordState {
    std::vector<std::size_t> symbols;
    std::size_t count;
  };
  std::vector<WordState> words;
  words.reserve(word_counts.size());
  for (const auto& [w, n] : word_counts) {
    WordState state{{}, n};
    const auto cs = utf8_chars(w);
    for (std::size_t i = 0; i < cs.size(); ++i) {
      state.symbols.push_back(vocab.id(i == 0 ? cs[i] : continuation(cs[i])));
    }
    words.push_back(std::move(state));
  }

  auto pair_less = [&vocab](const std::pair<std::size_t, std::size_t>& a,
                            const std::pair<std::size_t, std::size_t>& b) {
    const int c = vocab.piece(a.first).compare(vocab.piece(b.first));
    if (c != 0) return c < 0;
    return vocab.piece(a.second) < vocab.piece(b.second);
  };

  while (vocab.size() < target_size) {
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> pair_counts;
    for (const auto& w : words) {
      for (std::size_t i = 0; i + 1 < w.symbols.size(); ++i) {
        pair_counts[{w.symbols[i], w.symbols[i + 1]}] += w.count;
      }
    }
    if (pair_counts.empty()) break;
    auto best = pair_counts.begin();
    for (auto it = pair_counts.begin(); it != pair_counts.end(); ++it) {
      if (it->second > best->second ||
          (it->second == best->second && pair_less(it->first, best->first))) {
        best = it;
      }
    }
    if (best->second < min_pair_freq) break;

    const auto [left, right] = best->first;
    const std::string& right_piece = vocab.piece(right);
    std::string merged =
        vocab.piece(left) + right_piece.substr(kContinuation.size());
    const std::size_t merged_id = vocab.add(std::move(merged));
    for (auto& w : words) {
      std::vector<std::size_t> out;
      out.reserve(w.symbols.size());
      for (std::size_t i = 0; i < w.symbols.size(); ++i) {
        if (i + 1 < w.symbols.size() && w.symbols[i] == left &&
            w.symbols[i + 1] == right) {
          out.push_back(merged_id);
          ++i;
        } else {
          out.push_back(w.symbols[i]);
        }
      }
      w.symbols = std::move(out);
    }
  }
  return vocab;
}

std::vector<std::string> tokenize_word(const Vocab& vocab,
                                       std::string_view word,
                                       std::size_t max_word_chars) {
  std::vector<std::string> pieces;
  for (std::size_t id : tokenize_word_ids(vocab, word, max_word_chars)) {
    pieces.push_back(vocab.piece(id));
  }
  return pieces;
}

std::vector<std::size_t> tokenize_word_ids(const Vocab& vocab,
                                           std::string_view word,
                                           std::size_t max_word_chars) {
  const std::size_t unk = vocab.unk_id();
  if (word.empty()) return {unk};
  const auto chars = utf8_chars(word);
  if (chars.size() > max_word_chars) return {unk};

  // Byte offset of each code point boundary.
  std::vector<std::size_t> offsets{0};
  for (const auto& c : chars) offsets.push_back(offsets.back() + c.size());

  std::vector<std::size_t> ids;
  std::string candidate;
  std::size_t start = 0;
  while (start < chars.size()) {
    std::optional<std::size_t> match;
    std::size_t end = chars.size();
    for (; end > start; --end) {
      candidate.clear();
      if (start > 0) candidate.append(kContinuation);
      candidate.append(word.substr(offsets[start], offsets[end] - offsets[start]));
      if ((match = vocab.find(candidate))) break;
    }
    if (!match) return {unk};
    ids.push_back(*match);
    start = end;
  }
  return ids;
}

nlohmann::json FragmentationReport::to_json() const {
  nlohmann::json occ = nlohmann::json::object();
  for (const auto& [k, v] : occurrence_histogram) occ[std::to_string(k)] = v;
  nlohmann::json typ = nlohmann::json::object();
  for (const auto& [k, v] : type_histogram) typ[std::to_string(k)] = v;
  return {{"occurrence_histogram", occ},
          {"type_histogram", typ},
          {"occurrences", occurrences},
          {"types", types},
          {"unk_occurrences", unk_occurrences},
          {"unsplit_fraction", unsplit_fraction},
          {"mean_pieces_per_occurrence", mean_pieces_per_occurrence}};
}

std::string FragmentationReport::to_tsv() const {
  std::ostringstream os;
  os << "pieces_per_token\toccurrences\ttypes\n";
  std::set<std::size_t> keys;
  for (const auto& [k, v] : occurrence_histogram) keys.insert(k);
  for (std::size_t k : keys) {
    auto t = type_histogram.find(k);
    os << k << '\t' << occurrence_histogram.at(k) << '\t'
       << (t == type_histogram.end() ? 0 : t->second) << '\n';
  }
  return os.str();
}

FragmentationReport analyze_fragmentation(
    const Vocab& vocab, const std::vector<std::string>& corpus) {
  if (corpus.empty()) throw InputError("analyze_fragmentation: empty corpus");
  std::map<std::string, std::size_t> counts;
  for (const auto& w : corpus) ++counts[w];

  FragmentationReport r;
  std::size_t total_pieces = 0;
  const std::size_t unk = vocab.unk_id();
  for (const auto& [word, n] : counts) {
    const auto ids = tokenize_word_ids(vocab, word);
    const std::size_t pieces = ids.size();
    r.occurrence_histogram[pieces] += n;
    r.type_histogram[pieces] += 1;
    r.occurrences += n;
    r.types += 1;
    total_pieces += pieces * n;
    if (ids.size() == 1 && ids[0] == unk) r.unk_occurrences += n;
  }
  auto one = r.occurrence_histogram.find(1);
  const std::size_t unsplit = one == r.occurrence_histogram.end() ? 0 : one->second;
  r.unsplit_fraction = static_cast<double>(unsplit) / r.occurrences;
  r.mean_pieces_per_occurrence =
      static_cast<double>(total_pieces) / r.occurrences;
  return r;
}

MonotonicityStats monotonicity_check(const Vocab& smaller, const Vocab& larger,
                                     const std::vector<std::string>& words) {
  MonotonicityStats stats;
  std::set<std::string> distinct(words.begin(), words.end());
  for (const auto& w : distinct) {
    ++stats.words_checked;
    if (tokenize_word_ids(larger, w).size() >
        tokenize_word_ids(smaller, w).size()) {
      ++stats.violations;
      stats.violating_words.push_back(w);
    }
  }
  return stats;
}

}  // namespace cbert::wordpiece
