// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "metaseq/embedding_io.hpp"
#include "metaseq/error.hpp"

namespace metaseq {

inline std::string to_lower_ascii(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

/// Ordered PoS tag set with a reserved slot for unknown tags.
///
/// When `unk_tag` names one of `tags`, that entry doubles as the unknown
/// slot; otherwise an extra "<unk>" slot is appended.
class PosVocabulary {
 public:
  PosVocabulary(std::vector<std::string> tags, std::optional<std::string> unk_tag = std::nullopt) {
    for (auto& t : tags) {
      if (index_.count(t)) fail(ErrorKind::kParameter, "duplicate PoS tag '", t, "'");
      index_.emplace(t, tags_.size());
      tags_.push_back(std::move(t));
    }
    if (unk_tag && index_.count(*unk_tag)) {
      unk_ = index_.at(*unk_tag);
    } else {
      unk_ = tags_.size();
      tags_.push_back(unk_tag.value_or("<unk>"));
      index_.emplace(tags_.back(), unk_);
    }
  }

  /// The 17 Universal Dependencies coarse tags; "X" absorbs unknowns.
  static PosVocabulary universal() {
    return PosVocabulary({"ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM", "PART", "PRON",
                          "PROPN", "PUNCT", "SCONJ", "SYM", "VERB", "X"},
                         "X");
  }

  std::size_t size() const noexcept { return tags_.size(); }
  std::size_t unk_index() const noexcept { return unk_; }
  const std::vector<std::string>& tags() const noexcept { return tags_; }

  std::size_t index(std::string_view tag) const {
    auto it = index_.find(std::string(tag));
    return it == index_.end() ? unk_ : it->second;
  }

  std::string unk_tag() const { return tags_[unk_]; }

 private:
  std::vector<std::string> tags_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t unk_ = 0;
};

inline std::vector<double> pos_one_hot(std::string_view tag, const PosVocabulary& vocab) {
  std::vector<double> out(vocab.size(), 0.0);
  out[vocab.index(tag)] = 1.0;
  return out;
}

/// u·v / (|u||v|); defined as 0 when either vector is zero.
inline double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) fail(ErrorKind::kDimension, "cosine of vectors of length ", u.size(), " and ", v.size());
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

/// word -> abstractness score in [0,1].
class AbstractnessLexicon {
 public:
  explicit AbstractnessLexicon(bool lowercase = true) : lowercase_(lowercase) {}

  bool lowercase() const noexcept { return lowercase_; }
  std::string key(std::string_view word) const { return lowercase_ ? to_lower_ascii(word) : std::string(word); }

  /// Adds an entry; the first occurrence of a word wins.
  void insert(std::string_view word, double score) {
    if (!(score >= 0.0 && score <= 1.0)) fail(ErrorKind::kRange, "abstractness of '", word, "' is ", score);
    entries_.emplace(key(word), score);
  }

  std::optional<double> find(std::string_view word) const {
    auto it = entries_.find(key(word));
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t size() const noexcept { return entries_.size(); }
  /// Entries sorted by (normalised) word.
  const std::map<std::string, double>& entries() const noexcept { return entries_; }

 private:
  bool lowercase_;
  std::map<std::string, double> entries_;
};

/// Reads `word TAB score` lines.
inline AbstractnessLexicon read_lexicon(std::istream& in, bool lowercase = true, std::string_view source = "<stream>") {
  AbstractnessLexicon lex(lowercase);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    detail::strip_cr(line);
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) fail(ErrorKind::kParse, source, ":", line_no, ": expected word<TAB>score");
    auto score = detail::parse_double(std::string_view(line).substr(tab + 1));
    if (!score) fail(ErrorKind::kParse, source, ":", line_no, ": score is not a number");
    if (*score < 0.0 || *score > 1.0) fail(ErrorKind::kParse, source, ":", line_no, ": score ", *score, " outside [0,1]");
    lex.insert(std::string_view(line).substr(0, tab), *score);
  }
  return lex;
}

inline AbstractnessLexicon load_lexicon(const std::string& path, bool lowercase = true) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot open abstractness lexicon '", path, "'");
  return read_lexicon(in, lowercase, path);
}

/// Abstractness lookup with nearest-neighbour backoff through static vectors.
///
/// Lexicon words are scored directly. Other words take the score of the
/// lexicon word whose static vector has the highest cosine similarity (ties
/// go to the lexicographically smallest word). Words with no static vector
/// get 0.5. Results are memoised; the scorer is safe to share across threads.
class AbstractnessScorer {
 public:
  static constexpr double kUnknownScore = 0.5;

  AbstractnessScorer(const AbstractnessLexicon& lexicon, const StaticEmbeddingTable& table)
      : lexicon_(&lexicon), table_(&table) {
    for (const auto& [word, score] : lexicon.entries()) {
      auto vec = static_vector(word);
      double norm = 0.0;
      for (double v : vec) norm += v * v;
      if (norm == 0.0) continue;
      norm = std::sqrt(norm);
      Candidate c{word, score, {}};
      c.unit.reserve(vec.size());
      for (double v : vec) c.unit.push_back(v / norm);
      candidates_.push_back(std::move(c));
    }
  }

  double score(std::string_view word) const {
    if (auto direct = lexicon_->find(word)) return *direct;
    const std::string key = lexicon_->key(word);
    {
      std::lock_guard lock(mutex_);
      if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    }
    const auto neighbour = nearest(word);
    const double s = neighbour ? lexicon_->entries().at(*neighbour) : kUnknownScore;
    std::lock_guard lock(mutex_);
    memo_.emplace(key, s);
    return s;
  }

  /// The lexicon word chosen for an out-of-lexicon word, if any.
  std::optional<std::string> nearest(std::string_view word) const {
    auto vec = static_vector(word);
    double norm = 0.0;
    for (double v : vec) norm += v * v;
    if (norm == 0.0 || candidates_.empty()) return std::nullopt;
    norm = std::sqrt(norm);
    const Candidate* best = nullptr;
    double best_sim = -2.0;
    for (const auto& c : candidates_) {  // sorted by word, so ">" keeps the smallest on ties
      double dot = 0.0;
      for (std::size_t i = 0; i < vec.size(); ++i) dot += vec[i] * c.unit[i];
      const double sim = dot / norm;
      if (sim > best_sim) {
        best_sim = sim;
        best = &c;
      }
    }
    return best->word;
  }

  std::size_t candidate_count() const noexcept { return candidates_.size(); }

 private:
  struct Candidate {
    std::string word;
    double score;
    std::vector<double> unit;
  };

  std::span<const double> static_vector(std::string_view word) const {
    if (table_->contains(word)) return table_->lookup(word);
    return table_->lookup(lexicon_->key(word));
  }

  const AbstractnessLexicon* lexicon_;
  const StaticEmbeddingTable* table_;
  std::vector<Candidate> candidates_;
  mutable std::mutex mutex_;
  mutable std::unordered_map<std::string, double> memo_;
};

inline double abstractness(std::string_view word, const AbstractnessLexicon& lexicon,
                           const StaticEmbeddingTable& table) {
  return AbstractnessScorer(lexicon, table).score(word);
}

}  // namespace metaseq
