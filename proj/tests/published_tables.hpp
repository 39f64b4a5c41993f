// SPDX-License-Identifier: Apache-2.0
#pragma once

// Published (P, R, F1) rows, in percent, as printed. Group "results" is the
// four-benchmark comparison, "breakdown" the genre and PoS rows.

#include <array>
#include <string_view>

namespace metaseq::testing {

struct PublishedRow {
  std::string_view group;
  std::string_view model;
  std::string_view column;
  double p, r, f1;
};

inline constexpr std::array<PublishedRow, 76> kPublishedRows{{
    {"results", "baseline-A", "VUA ALL POS", 60.8, 70.0, 65.1},
    {"results", "baseline-A", "VUA VERB", 60.0, 76.3, 67.2},
    {"results", "baseline-A", "MOH-X", 69.2, 69.9, 69.6},
    {"results", "baseline-A", "TroFi", 79.6, 78.8, 79.2},
    {"results", "baseline-B", "VUA ALL POS", 71.6, 73.6, 72.6},
    {"results", "baseline-B", "VUA VERB", 68.2, 71.3, 69.7},
    {"results", "baseline-B", "MOH-X", 79.1, 73.5, 75.6},
    {"results", "baseline-B", "TroFi", 87.7, 87.4, 87.6},
    {"results", "baseline-C-SPV", "VUA ALL POS", 73.0, 75.7, 74.3},
    {"results", "baseline-C-SPV", "VUA VERB", 66.3, 75.2, 70.5},
    {"results", "baseline-C-SPV", "MOH-X", 77.5, 83.1, 80.0},
    {"results", "baseline-C-SPV", "TroFi", 89.8, 88.1, 88.9},
    {"results", "GEB17", "VUA ALL POS", 74.9, 74.4, 74.7},
    {"results", "GEB17", "VUA VERB", 70.4, 72.1, 71.2},
    {"results", "GEB17", "MOH-X", 78.0, 83.1, 80.4},
    {"results", "GEB17", "TroFi", 90.7, 89.0, 89.8},
    {"results", "PoS+Abst+GEB17", "VUA ALL POS", 72.5, 77.4, 74.9},
    {"results", "PoS+Abst+GEB17", "VUA VERB", 68.8, 74.5, 71.5},
    {"results", "PoS+Abst+GEB17", "MOH-X", 77.9, 83.8, 80.7},
    {"results", "PoS+Abst+GEB17", "TroFi", 89.3, 91.0, 90.2},
    {"breakdown", "GloVe", "Academic", 65.2, 67.5, 66.3},
    {"breakdown", "GloVe", "Conversation", 58.4, 62.6, 60.4},
    {"breakdown", "GloVe", "Fiction", 60.1, 55.6, 57.8},
    {"breakdown", "GloVe", "News", 69.3, 64.9, 67.0},
    {"breakdown", "ELMo", "Academic", 65.1, 74.1, 69.3},
    {"breakdown", "ELMo", "Conversation", 67.6, 65.1, 66.4},
    {"breakdown", "ELMo", "Fiction", 62.3, 68.4, 65.2},
    {"breakdown", "ELMo", "News", 72.6, 73.4, 73.0},
    {"breakdown", "BERT17", "Academic", 67.3, 71.7, 69.4},
    {"breakdown", "BERT17", "Conversation", 70.9, 63.0, 67.7},
    {"breakdown", "BERT17", "Fiction", 70.3, 65.9, 68.1},
    {"breakdown", "BERT17", "News", 74.0, 71.1, 72.6},
    {"breakdown", "GE", "Academic", 66.9, 74.6, 70.5},
    {"breakdown", "GE", "Conversation", 63.3, 69.3, 66.1},
    {"breakdown", "GE", "Fiction", 65.8, 65.5, 65.7},
    {"breakdown", "GE", "News", 73.1, 74.5, 73.8},
    {"breakdown", "GB17", "Academic", 64.7, 77.2, 70.4},
    {"breakdown", "GB17", "Conversation", 68.1, 67.5, 67.8},
    {"breakdown", "GB17", "Fiction", 70.3, 67.6, 68.9},
    {"breakdown", "GB17", "News", 74.3, 71.5, 72.9},
    {"breakdown", "EB17", "Academic", 71.8, 72.3, 72.0},
    {"breakdown", "EB17", "Conversation", 69.9, 66.3, 68.1},
    {"breakdown", "EB17", "Fiction", 72.9, 64.8, 68.6},
    {"breakdown", "EB17", "News", 76.1, 70.5, 73.2},
    {"breakdown", "GEB17", "Academic", 72.7, 72.0, 72.3},
    {"breakdown", "GEB17", "Conversation", 74.0, 64.9, 69.1},
    {"breakdown", "GEB17", "Fiction", 75.9, 67.1, 71.2},
    {"breakdown", "GEB17", "News", 77.7, 71.4, 74.4},
    {"breakdown", "GloVe", "Verb", 60.2, 57.2, 58.7},
    {"breakdown", "GloVe", "Adjective", 54.9, 42.2, 47.7},
    {"breakdown", "GloVe", "Noun", 59.1, 50.5, 54.5},
    {"breakdown", "GloVe", "Adverb", 49.4, 49.4, 49.4},
    {"breakdown", "ELMo", "Verb", 62.7, 70.3, 66.3},
    {"breakdown", "ELMo", "Adjective", 46.7, 54.9, 50.5},
    {"breakdown", "ELMo", "Noun", 61.5, 58.6, 60.0},
    {"breakdown", "ELMo", "Adverb", 57.6, 51.9, 54.6},
    {"breakdown", "BERT17", "Verb", 63.3, 72.2, 67.5},
    {"breakdown", "BERT17", "Adjective", 54.7, 49.1, 51.8},
    {"breakdown", "BERT17", "Noun", 66.8, 51.7, 58.3},
    {"breakdown", "BERT17", "Adverb", 66.7, 45.5, 54.1},
    {"breakdown", "GE", "Verb", 62.4, 68.9, 65.5},
    {"breakdown", "GE", "Adjective", 56.9, 58.7, 57.8},
    {"breakdown", "GE", "Noun", 62.4, 59.9, 61.1},
    {"breakdown", "GE", "Adverb", 53.7, 56.5, 55.1},
    {"breakdown", "GB17", "Verb", 64.7, 69.1, 66.8},
    {"breakdown", "GB17", "Adjective", 58.4, 53.8, 56.0},
    {"breakdown", "GB17", "Noun", 65.0, 57.7, 61.1},
    {"breakdown", "GB17", "Adverb", 61.3, 49.4, 54.7},
    {"breakdown", "EB17", "Verb", 66.9, 69.0, 67.9},
    {"breakdown", "EB17", "Adjective", 53.7, 53.2, 53.4},
    {"breakdown", "EB17", "Noun", 73.4, 49.5, 59.1},
    {"breakdown", "EB17", "Adverb", 63.3, 49.4, 55.5},
    {"breakdown", "GEB17", "Verb", 71.6, 67.4, 69.4},
    {"breakdown", "GEB17", "Adjective", 62.8, 53.5, 57.8},
    {"breakdown", "GEB17", "Noun", 69.9, 54.5, 61.3},
    {"breakdown", "GEB17", "Adverb", 69.1, 49.4, 57.6},
}};

}  // namespace metaseq::testing
