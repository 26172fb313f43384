#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace cbert {

// Writes to a sibling temporary file and renames it over `path`, so readers
// never observe a partially written file.
void write_file_atomic(const std::filesystem::path& path,
                       std::string_view contents);

std::string read_file(const std::filesystem::path& path);

// Whitespace tokens of a text file, lowercased.
std::vector<std::string> read_word_stream(const std::filesystem::path& path);

using Sentence = std::vector<std::string>;
using Document = std::vector<Sentence>;

// One sentence per line, blank line between documents. Sentences are split
// on whitespace and lowercased; empty documents are dropped.
std::vector<Document> parse_documents(std::string_view text);
std::vector<Document> read_documents(const std::filesystem::path& path);

}  // namespace cbert
