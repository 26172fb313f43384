#include "cbert/io.hpp"

#include <atomic>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "cbert/errors.hpp"
#include "cbert/text.hpp"

namespace cbert {

void write_file_atomic(const std::filesystem::path& path,
                       std::string_view contents) {
  static std::atomic<unsigned> counter{0};
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string());
  }
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." +
         std::to_string(counter.fetch_add(1));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot rename into " + path.string());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::string> read_word_stream(const std::filesystem::path& path) {
  return split_words(read_file(path));
}

std::vector<Document> parse_documents(std::string_view text) {
  std::vector<Document> docs(1);
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = strip(text.substr(pos, end - pos));
    if (line.empty()) {
      if (!docs.back().empty()) docs.emplace_back();
    } else {
      docs.back().push_back(split_words(line));
    }
    pos = end + 1;
  }
  if (docs.back().empty()) docs.pop_back();
  return docs;
}

std::vector<Document> read_documents(const std::filesystem::path& path) {
  return parse_documents(read_file(path));
}

}  // namespace cbert
