// SPDX-License-Identifier: Apache-2.0
#pragma once

// Token-level metaphor datasets in a 7-column TSV:
//   sentence_id  genre  token_index  token  pos  label(0|1)  target(0|1)
// with a blank line between sentences. A leading header row is allowed.

#include <array>
#include <cctype>
#include <charconv>
#include <fstream>
#include <istream>
#include <string>
#include <string_view>
#include <vector>

#include "metaseq/embedding_io.hpp"
#include "metaseq/error.hpp"

namespace metaseq {

inline constexpr int kLiteral = 0;
inline constexpr int kMetaphor = 1;

inline constexpr std::array<std::string_view, 4> kGenres = {"academic", "conversation", "fiction", "news"};
inline constexpr std::string_view kOtherGenre = "other";

/// Maps corpus genre labels (including the BNC-style short forms) onto the
/// four breakdown genres; everything else becomes "other".
inline std::string normalize_genre(std::string_view raw) {
  const std::string g = [&] {
    std::string s(raw);
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
  }();
  if (g == "academic" || g == "acprose" || g == "academic_prose" || g == "ac") return "academic";
  if (g == "conversation" || g == "convrsn" || g == "conv") return "conversation";
  if (g == "fiction" || g == "fict") return "fiction";
  if (g == "news" || g == "newspaper") return "news";
  return std::string(kOtherGenre);
}

struct TokenRecord {
  std::string text;
  std::string pos;
  int label = kLiteral;
  bool target = true;
};

struct SentenceRecord {
  std::string id;
  std::string genre = std::string(kOtherGenre);
  std::vector<TokenRecord> tokens;
};

struct DatasetStats {
  std::size_t sequences = 0;
  std::size_t tokens = 0;
  std::size_t target_tokens = 0;
  std::size_t metaphor_targets = 0;
  std::size_t metaphorical_sentences = 0;

  double percent_metaphor() const {
    return target_tokens == 0 ? 0.0 : 100.0 * static_cast<double>(metaphor_targets) / static_cast<double>(target_tokens);
  }
  /// Average number of metaphoric targets per sentence containing at least one.
  double metaphors_per_metaphorical_sentence() const {
    return metaphorical_sentences == 0
               ? 0.0
               : static_cast<double>(metaphor_targets) / static_cast<double>(metaphorical_sentences);
  }
};

inline DatasetStats dataset_stats(const std::vector<SentenceRecord>& sentences) {
  DatasetStats st;
  st.sequences = sentences.size();
  for (const auto& s : sentences) {
    std::size_t met = 0;
    for (const auto& t : s.tokens) {
      ++st.tokens;
      if (!t.target) continue;
      ++st.target_tokens;
      if (t.label == kMetaphor) ++met;
    }
    st.metaphor_targets += met;
    if (met > 0) ++st.metaphorical_sentences;
  }
  return st;
}

namespace detail {

inline std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const auto tab = line.find('\t', pos);
    out.push_back(line.substr(pos, tab == std::string_view::npos ? std::string_view::npos : tab - pos));
    if (tab == std::string_view::npos) break;
    pos = tab + 1;
  }
  return out;
}

inline int parse_flag(std::string_view field, std::string_view column, std::string_view source, std::size_t line) {
  if (field == "0") return 0;
  if (field == "1") return 1;
  fail(ErrorKind::kParse, source, ":", line, ": ", column, " must be 0 or 1, got '", field, "'");
}

}  // namespace detail

inline std::vector<SentenceRecord> read_dataset(std::istream& in, std::string_view source = "<stream>") {
  std::vector<SentenceRecord> sentences;
  SentenceRecord current;
  long long expected_index = -1;
  std::size_t first_line_of_sentence = 0;
  auto flush = [&] {
    if (!current.tokens.empty()) sentences.push_back(std::move(current));
    current = SentenceRecord{};
    expected_index = -1;
  };
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    detail::strip_cr(line);
    if (line.find_first_not_of(" \t") == std::string::npos) {
      flush();
      continue;
    }
    const auto f = detail::split_tabs(line);
    if (line_no == 1 && f[0] == "sentence_id") continue;
    if (f.size() != 7) fail(ErrorKind::kParse, source, ":", line_no, ": expected 7 columns, found ", f.size());
    if (f[0].empty()) fail(ErrorKind::kParse, source, ":", line_no, ": empty sentence_id");
    if (!current.tokens.empty() && current.id != f[0]) flush();
    if (current.tokens.empty()) {
      current.id = std::string(f[0]);
      current.genre = normalize_genre(f[1]);
      first_line_of_sentence = line_no;
    }
    long long index = 0;
    {
      auto [ptr, ec] = std::from_chars(f[2].data(), f[2].data() + f[2].size(), index);
      if (ec != std::errc() || ptr != f[2].data() + f[2].size() || index < 0) {
        fail(ErrorKind::kParse, source, ":", line_no, ": bad token_index '", f[2], "'");
      }
    }
    if (expected_index >= 0 && index != expected_index) {
      fail(ErrorKind::kParse, source, ":", line_no, ": token_index ", index, " out of order (expected ",
           expected_index, ", sentence starting at line ", first_line_of_sentence, ")");
    }
    expected_index = index + 1;
    if (f[3].empty()) fail(ErrorKind::kParse, source, ":", line_no, ": empty token");
    TokenRecord tok;
    tok.text = std::string(f[3]);
    tok.pos = std::string(f[4]);
    tok.label = detail::parse_flag(f[5], "label", source, line_no);
    tok.target = detail::parse_flag(f[6], "target", source, line_no) == 1;
    current.tokens.push_back(std::move(tok));
  }
  flush();
  return sentences;
}

inline std::vector<SentenceRecord> parse_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open dataset '", path, "'");
  return read_dataset(in, path);
}

inline void write_dataset(std::ostream& out, const std::vector<SentenceRecord>& sentences) {
  for (std::size_t s = 0; s < sentences.size(); ++s) {
    if (s) out << '\n';
    const auto& sent = sentences[s];
    for (std::size_t i = 0; i < sent.tokens.size(); ++i) {
      const auto& t = sent.tokens[i];
      out << sent.id << '\t' << sent.genre << '\t' << i << '\t' << t.text << '\t' << t.pos << '\t' << t.label << '\t'
          << (t.target ? 1 : 0) << '\n';
    }
  }
}

}  // namespace metaseq
