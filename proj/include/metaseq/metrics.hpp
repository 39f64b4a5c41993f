// SPDX-License-Identifier: Apache-2.0
#pragma once

// Precision/recall/F1/accuracy with metaphor as the positive class, genre and
// PoS breakdowns, k-fold planning and the CSV report format.

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "metaseq/dataset.hpp"
#include "metaseq/error.hpp"
#include "metaseq/tensor.hpp"

namespace metaseq {

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::size_t total() const noexcept { return tp + fp + fn + tn; }
  Confusion& operator+=(const Confusion& o) noexcept {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend Confusion operator+(Confusion a, const Confusion& b) noexcept { return a += b; }
  friend bool operator==(const Confusion&, const Confusion&) = default;

  void add(int predicted, int gold) noexcept {
    if (gold == kMetaphor) {
      (predicted == kMetaphor ? tp : fn) += 1;
    } else {
      (predicted == kMetaphor ? fp : tn) += 1;
    }
  }
};

struct MetricsReport {
  Confusion counts;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
  /// Set when any ratio had a zero denominator and was reported as 0.
  bool zero_division = false;

  static MetricsReport from_counts(const Confusion& c) {
    MetricsReport r;
    r.counts = c;
    auto ratio = [&r](std::size_t num, std::size_t den) {
      if (den == 0) {
        r.zero_division = true;
        return 0.0;
      }
      return static_cast<double>(num) / static_cast<double>(den);
    };
    r.precision = ratio(c.tp, c.tp + c.fp);
    r.recall = ratio(c.tp, c.tp + c.fn);
    if (r.precision + r.recall > 0.0) {
      r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
    } else {
      r.zero_division = true;
    }
    r.accuracy = ratio(c.tp + c.tn, c.total());
    return r;
  }
};

/// F1 from precision and recall; 0 when both are 0.
inline double f1_from(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

/// Scores the positions where `mask` is set.
inline MetricsReport compute_metrics(std::span<const int> predictions, std::span<const int> gold,
                                     std::span<const std::uint8_t> mask) {
  if (predictions.size() != gold.size() || gold.size() != mask.size()) {
    fail(ErrorKind::kContract, "compute_metrics: ", predictions.size(), " predictions, ", gold.size(), " gold, ",
         mask.size(), " mask entries");
  }
  Confusion c;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (mask[i]) c.add(predictions[i], gold[i]);
  }
  return MetricsReport::from_counts(c);
}

/// One scored (target) token with the annotations breakdowns key on.
struct ScoredToken {
  int predicted = kLiteral;
  int gold = kLiteral;
  std::string genre;
  std::string pos;
};

enum class BreakdownKey { kGenre, kPos };

inline constexpr std::array<std::string_view, 4> kOpenClassPos = {"VERB", "ADJ", "NOUN", "ADV"};

struct Breakdown {
  std::vector<std::pair<std::string, MetricsReport>> rows;
  std::vector<std::string> notes;

  const MetricsReport* find(std::string_view cls) const {
    for (const auto& [k, r] : rows)
      if (k == cls) return &r;
    return nullptr;
  }
};

/// Per-genre rows (four genres, "other" excluded) or per-PoS rows (open
/// classes followed by ALL). Classes without scored tokens are omitted and
/// listed in `notes`.
inline Breakdown breakdown(std::span<const ScoredToken> tokens, BreakdownKey key) {
  Breakdown out;
  auto add_class = [&](std::string_view cls, auto&& member) {
    Confusion c;
    std::size_t n = 0;
    for (const auto& t : tokens) {
      if (!member(t)) continue;
      c.add(t.predicted, t.gold);
      ++n;
    }
    if (n == 0) {
      out.notes.push_back(std::string(cls) + ": no targets, omitted");
      return;
    }
    out.rows.emplace_back(std::string(cls), MetricsReport::from_counts(c));
  };
  if (key == BreakdownKey::kGenre) {
    for (auto g : kGenres) add_class(g, [g](const ScoredToken& t) { return t.genre == g; });
    std::size_t other = 0;
    for (const auto& t : tokens) other += t.genre == kOtherGenre ? 1 : 0;
    if (other) out.notes.push_back("other: " + std::to_string(other) + " targets excluded from genre breakdown");
  } else {
    for (auto p : kOpenClassPos) add_class(p, [p](const ScoredToken& t) { return t.pos == p; });
    add_class("ALL", [](const ScoredToken&) { return true; });
  }
  return out;
}

// ---------------------------------------------------------------------------
// k-fold planning
// ---------------------------------------------------------------------------

struct FoldPlan {
  std::size_t folds = 10;
  std::uint64_t seed = 0;
  bool stratified = false;
  std::vector<std::size_t> assignment;  // fold of each item

  std::vector<std::size_t> test_indices(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment.size(); ++i)
      if (assignment[i] == fold) out.push_back(i);
    return out;
  }
  std::vector<std::size_t> train_indices(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment.size(); ++i)
      if (assignment[i] != fold) out.push_back(i);
    return out;
  }
  std::vector<std::size_t> fold_sizes() const {
    std::vector<std::size_t> sizes(folds, 0);
    for (auto f : assignment) ++sizes[f];
    return sizes;
  }
};

/// Seeded shuffle, then contiguous blocks whose sizes differ by at most one.
/// With `strata`, items are grouped by stratum after the shuffle and dealt
/// round-robin so each fold gets a near-equal share of every stratum.
inline FoldPlan kfold(std::size_t item_count, std::size_t k, std::uint64_t seed,
                      std::span<const int> strata = {}) {
  if (k < 2) fail(ErrorKind::kParameter, "k-fold needs k >= 2, got ", k);
  if (k > item_count) fail(ErrorKind::kParameter, "k = ", k, " exceeds dataset size ", item_count);
  if (!strata.empty() && strata.size() != item_count) {
    fail(ErrorKind::kParameter, strata.size(), " strata for ", item_count, " items");
  }
  FoldPlan plan;
  plan.folds = k;
  plan.seed = seed;
  plan.stratified = !strata.empty();
  plan.assignment.assign(item_count, 0);
  std::vector<std::size_t> order(item_count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  RngStream rng(seed, 0x6b666f6c64ULL);
  rng.shuffle(order);
  if (plan.stratified) {
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return strata[a] < strata[b]; });
    for (std::size_t pos = 0; pos < item_count; ++pos) plan.assignment[order[pos]] = pos % k;
    return plan;
  }
  const std::size_t base = item_count / k, extra = item_count % k;
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = base + (f < extra ? 1 : 0);
    for (std::size_t j = 0; j < size; ++j) plan.assignment[order[pos++]] = f;
  }
  return plan;
}

inline std::vector<SentenceRecord> select(const std::vector<SentenceRecord>& data,
                                          std::span<const std::size_t> indices) {
  std::vector<SentenceRecord> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(data.at(i));
  return out;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

/// Fixed 6-decimal rendering used for every numeric CSV field.
inline std::string format_fixed(double value, int decimals = 6) {
  char buf[64];
  if (value == 0.0) value = 0.0;  // no "-0.000000"
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::fixed, decimals);
  if (ec != std::errc()) fail(ErrorKind::kNumeric, "cannot format ", value);
  std::string s(buf, ptr);
  if (s.find_first_not_of("-0.") == std::string::npos && s.front() == '-') s.erase(0, 1);
  return s;
}

inline constexpr std::string_view kMetricsCsvHeader = "split,class,P,R,F1,Acc,TP,FP,FN,TN";

inline void write_metrics_row(std::ostream& out, std::string_view split, std::string_view cls,
                              const MetricsReport& r) {
  out << split << ',' << cls << ',' << format_fixed(r.precision) << ',' << format_fixed(r.recall) << ','
      << format_fixed(r.f1) << ',' << format_fixed(r.accuracy) << ',' << r.counts.tp << ',' << r.counts.fp << ','
      << r.counts.fn << ',' << r.counts.tn << '\n';
}

}  // namespace metaseq
