// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "metaseq/metaseq.hpp"

namespace metaseq::testing {

inline std::filesystem::path data_path(const std::string& name) {
  return std::filesystem::path(METASEQ_TEST_DATA) / name;
}

/// Fresh, empty scratch directory for one test.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "metaseq-tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void spit(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

// Central-difference gradient check.
//
// For each tracked tensor the error is max_i |fd_i - an_i| / max_i |an_i|,
// i.e. the infinity-norm relative error of the whole gradient. Elementwise
// ratios are dominated by round-off on entries whose true gradient is
// ~1e-7 or smaller, so they are reported separately and not gated on.
struct GradCheckReport {
  double max_rel = 0.0;  // worst tensor
  std::string worst;
  double max_elementwise = 0.0;
  std::vector<std::pair<std::string, double>> per_tensor;
};

inline GradCheckReport check_gradients(std::vector<std::pair<std::string, Tensor>> tracked,
                                       const std::function<Tensor(Tape&)>& build_loss, double h = 1e-6) {
  for (auto& [_, t] : tracked) t.zero_grad();
  {
    Tape tape;
    Tensor loss = build_loss(tape);
    backward(loss, tape);
  }
  auto evaluate = [&] {
    Tape tape(Tape::Mode::kInference);
    return build_loss(tape).item();
  };
  GradCheckReport report;
  for (auto& [name, t] : tracked) {
    const std::vector<double> an(t.grad().begin(), t.grad().end());
    double err = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double orig = t[i];
      t.mutable_data()[i] = orig + h;
      const double up = evaluate();
      t.mutable_data()[i] = orig - h;
      const double down = evaluate();
      t.mutable_data()[i] = orig;
      const double fd = (up - down) / (2.0 * h);
      err = std::max(err, std::abs(fd - an[i]));
      scale = std::max({scale, std::abs(an[i]), std::abs(fd)});
      const double denom = std::max(std::abs(fd), std::abs(an[i]));
      if (denom > 0.0) report.max_elementwise = std::max(report.max_elementwise, std::abs(fd - an[i]) / denom);
    }
    const double rel = scale > 0.0 ? err / scale : 0.0;
    report.per_tensor.emplace_back(name, rel);
    if (rel >= report.max_rel) {
      report.max_rel = rel;
      report.worst = name;
    }
  }
  return report;
}

/// Random tracked tensor with entries in [-1, 1).
inline Tensor random_tensor(Shape shape, RngStream& rng, bool requires_grad = true) {
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Micro model used for end-to-end gradient checks: d=8, two windows with two
// kernels each, hidden 4, two sentences, dropout off.
inline ModelConfig micro_config() {
  ModelConfig c;
  c.dim = 8;
  c.windows = {2, 3};
  c.kernels = 2;
  c.hidden = 4;
  c.static_dim = 5;
  c.input_dropout = 0.0;
  c.hidden_dropout = 0.0;
  c.epochs = 1;
  return c;
}

inline SyntheticSpec micro_spec() {
  SyntheticSpec s;
  s.sentences = 2;
  s.dim = 8;
  s.static_dim = 5;
  s.min_length = 3;
  s.max_length = 5;
  return s;
}

// Scaled-down configuration for the overfit fixture (20 sentences, d=16).
// Input dropout is off: the fixture tests capacity, not regularisation.
inline ModelConfig overfit_config() {
  ModelConfig c;
  c.dim = 16;
  c.windows = {2, 3};
  c.kernels = 4;
  c.hidden = 8;
  c.static_dim = 8;
  c.input_dropout = 0.0;
  c.hidden_dropout = 0.1;
  c.learning_rate = 0.2;
  c.epochs = 300;
  return c;
}

inline SyntheticSpec overfit_spec() { return SyntheticSpec{}; }

inline std::vector<SentenceInput> synthetic_inputs(const SyntheticCorpus& corpus, const ModelConfig& config) {
  FeatureSources src;
  src.glove = &corpus.glove;
  for (Channel c : config.channels) {
    if (c == Channel::kElmo) src.layers.push_back(&corpus.elmo);
    if (c == Channel::kBert) src.layers.push_back(&corpus.bert);
  }
  return assemble_inputs(corpus.sentences, src, config);
}

/// Summed loss of the model over `inputs` with dropout disabled.
inline Tensor batch_loss(Tape& tape, const TaggerModel& model, const std::vector<SentenceInput>& inputs) {
  Tensor total;
  RngStream unused(0, 0);
  for (const auto& in : inputs) {
    const auto trace = model.forward(tape, in, unused, false);
    Tensor l = model.loss(tape, trace, in);
    total = total.defined() ? add(tape, total, l) : l;
  }
  return total;
}

/// Random orthogonal d×d matrix (QR of a Gaussian matrix, sign-fixed).
inline Matrix random_orthogonal(Eigen::Index d, RngStream& rng) {
  Matrix g(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ();
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < d; ++j)
    if (r(j, j) < 0) q.col(j) *= -1.0;
  return q;
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, RngStream& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

// Probe fixture: word k occurs once as a metaphoric target (sentence 2k) and
// once as a literal target (sentence 2k+1), one token per sentence.
inline std::vector<SentenceRecord> pair_dataset(std::size_t words) {
  std::vector<SentenceRecord> data;
  for (std::size_t k = 0; k < words; ++k) {
    for (int label : {kMetaphor, kLiteral}) {
      SentenceRecord s;
      s.id = "p" + std::to_string(k) + (label == kMetaphor ? "m" : "l");
      s.genre = "news";
      s.tokens.push_back(TokenRecord{"word" + std::to_string(k), "NOUN", label, true});
      data.push_back(std::move(s));
    }
  }
  return data;
}

// Layer for pair_dataset in which every pair's two vectors are separated by
// exactly `theta` radians; vector lengths are random, directions random.
inline ContextualLayerFile angle_layer(std::size_t words, std::uint32_t layer_index, double theta, std::size_t dim,
                                       std::uint64_t seed) {
  RngStream rng(seed, layer_index);
  ContextualLayerFile f(layer_index, static_cast<std::uint32_t>(dim));
  for (std::size_t k = 0; k < words; ++k) {
    Vector u(dim), v(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      u(j) = rng.normal();
      v(j) = rng.normal();
    }
    u.normalize();
    v -= v.dot(u) * u;
    v.normalize();
    const Vector lit = rng.uniform(0.5, 2.0) * u;
    const Vector met = rng.uniform(0.5, 2.0) * (std::cos(theta) * u + std::sin(theta) * v);
    f.add(static_cast<std::uint32_t>(2 * k), std::vector<double>(met.data(), met.data() + dim), 1);
    f.add(static_cast<std::uint32_t>(2 * k + 1), std::vector<double>(lit.data(), lit.data() + dim), 1);
  }
  return f;
}

// Brute-force reference for the backoff: scan every lexicon word with a
// non-zero vector, keep the best cosine, break ties by smallest word.
inline double oracle_abstractness(const std::string& word, const std::map<std::string, double>& lexicon,
                                  const StaticEmbeddingTable& table) {
  if (auto it = lexicon.find(word); it != lexicon.end()) return it->second;
  if (!table.contains(word)) return 0.5;
  const auto v = table.lookup(word);
  double best = -2.0;
  std::string best_word;
  for (const auto& [w, s] : lexicon) {
    if (!table.contains(w)) continue;
    const auto u = table.lookup(w);
    double dot = 0, nu = 0, nv = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
      dot += u[i] * v[i];
      nu += u[i] * u[i];
      nv += v[i] * v[i];
    }
    if (nu == 0 || nv == 0) continue;
    const double c = dot / std::sqrt(nu * nv);
    if (c > best + 1e-12 || (std::abs(c - best) <= 1e-12 && w < best_word)) {
      best = c;
      best_word = w;
    }
  }
  return best_word.empty() ? 0.5 : lexicon.at(best_word);
}

}  // namespace metaseq::testing
