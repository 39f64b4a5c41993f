// SPDX-License-Identifier: Apache-2.0
#pragma once

// Seeded synthetic corpora in the same shape as real data: a labelled
// dataset, a static vector table and two token-aligned contextual layers in
// which metaphoric tokens are linearly separable from literal ones.

#include <cstdint>
#include <string>
#include <vector>

#include "metaseq/dataset.hpp"
#include "metaseq/embedding_io.hpp"
#include "metaseq/tensor.hpp"

namespace metaseq {

struct SyntheticSpec {
  std::size_t sentences = 20;
  std::size_t min_length = 4;
  std::size_t max_length = 9;
  std::size_t vocabulary = 30;
  std::size_t dim = 16;
  std::size_t static_dim = 8;
  double metaphor_rate = 0.3;
  double separation = 1.0;  // offset of the label direction
  double noise = 0.3;       // std-dev of the isotropic noise
  std::uint64_t seed = 7;
};

struct SyntheticCorpus {
  std::vector<SentenceRecord> sentences;
  StaticEmbeddingTable glove;
  ContextualLayerFile elmo;
  ContextualLayerFile bert;
};

inline SyntheticCorpus make_synthetic(const SyntheticSpec& spec) {
  static const char* const kPos[] = {"NOUN", "VERB", "ADJ", "ADV", "DET"};
  static const char* const kGenreNames[] = {"academic", "conversation", "fiction", "news"};
  RngStream rng(spec.seed, 0x73796e74ULL);
  SyntheticCorpus c;
  c.glove = StaticEmbeddingTable(spec.static_dim);
  std::vector<std::string> words;
  std::vector<std::string> word_pos;
  for (std::size_t w = 0; w < spec.vocabulary; ++w) {
    words.push_back("w" + std::to_string(w));
    word_pos.push_back(kPos[w % 5]);
    std::vector<double> v(spec.static_dim);
    for (auto& x : v) x = rng.normal();
    c.glove.insert(words.back(), v);
  }
  c.elmo = ContextualLayerFile(1, static_cast<std::uint32_t>(spec.dim));
  c.bert = ContextualLayerFile(17, static_cast<std::uint32_t>(spec.dim));
  for (std::size_t s = 0; s < spec.sentences; ++s) {
    SentenceRecord rec;
    rec.id = "syn-" + std::to_string(s);
    rec.genre = kGenreNames[s % 4];
    const std::size_t len = spec.min_length + rng.index(spec.max_length - spec.min_length + 1);
    std::vector<double> e_rows, b_rows;
    for (std::size_t i = 0; i < len; ++i) {
      const std::size_t w = rng.index(words.size());
      TokenRecord t;
      t.text = words[w];
      t.pos = word_pos[w];
      t.label = rng.uniform() < spec.metaphor_rate ? kMetaphor : kLiteral;
      t.target = true;
      const double sign = t.label == kMetaphor ? 1.0 : -1.0;
      for (std::size_t j = 0; j < spec.dim; ++j) {
        e_rows.push_back(spec.noise * rng.normal() + (j == 0 ? sign * spec.separation : 0.0));
        b_rows.push_back(spec.noise * rng.normal() + (j == 1 ? sign * spec.separation : 0.0));
      }
      rec.tokens.push_back(std::move(t));
    }
    c.elmo.add(static_cast<std::uint32_t>(s), e_rows, len);
    c.bert.add(static_cast<std::uint32_t>(s), b_rows, len);
    c.sentences.push_back(std::move(rec));
  }
  return c;
}

}  // namespace metaseq
