// SPDX-License-Identifier: Apache-2.0
#pragma once

// Embedding-space probes: metaphor/literal word-pair cosine, orthogonal
// alignment between two embedding spaces with average L2 distance, 2-D PCA
// projection and Pearson correlation.
//
// Matrices are row-per-token (n × d). The alignment solves
//   W* = argmin_{W orthogonal} ‖W·Bᶜ − Eᶜ‖_F
// for the column-per-token forms Bᶜ = Bᵀ, Eᶜ = Eᵀ. With UΣVᵀ = SVD(Eᵀ·B), a
// d × d matrix, the minimiser is W* = U·Vᵀ and the rotated rows are B·W*ᵀ.

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "metaseq/dataset.hpp"
#include "metaseq/embedding_io.hpp"
#include "metaseq/error.hpp"
#include "metaseq/linguistic_features.hpp"
#include "metaseq/tensor.hpp"

namespace metaseq {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Word pairs
// ---------------------------------------------------------------------------

struct TokenLocator {
  std::uint32_t sentence = 0;  // position in the dataset
  std::uint32_t token = 0;
  std::string sentence_id;
};

struct WordPair {
  std::string word;
  TokenLocator metaphor;
  TokenLocator literal;
};

struct WordPairSet {
  std::vector<WordPair> pairs;
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return pairs.size(); }
  bool empty() const noexcept { return pairs.empty(); }
};

/// For every surface form seen among target tokens with both labels, draws
/// one metaphoric and one literal occurrence. Words are visited in sorted
/// order so the draws depend only on the seed.
inline WordPairSet build_pairs(const std::vector<SentenceRecord>& dataset, std::uint64_t seed) {
  struct Occurrences {
    std::vector<TokenLocator> by_label[2];
  };
  std::map<std::string, Occurrences> words;
  for (std::size_t s = 0; s < dataset.size(); ++s) {
    const auto& sent = dataset[s];
    for (std::size_t i = 0; i < sent.tokens.size(); ++i) {
      const auto& t = sent.tokens[i];
      if (!t.target) continue;
      words[t.text].by_label[t.label == kMetaphor ? 1 : 0].push_back(
          TokenLocator{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(i), sent.id});
    }
  }
  WordPairSet set;
  set.seed = seed;
  RngStream rng(seed, 0x70616972ULL);
  for (const auto& [word, occ] : words) {
    const auto& lit = occ.by_label[0];
    const auto& met = occ.by_label[1];
    if (lit.empty() || met.empty()) continue;
    WordPair p;
    p.word = word;
    p.metaphor = met[rng.index(met.size())];
    p.literal = lit[rng.index(lit.size())];
    set.pairs.push_back(std::move(p));
  }
  return set;
}

namespace detail {

inline std::vector<double> layer_vector(const ContextualLayerFile& layer, const TokenLocator& loc) {
  const ContextualSentence* s = layer.find(loc.sentence);
  if (!s || loc.token >= s->token_count) {
    fail(ErrorKind::kAlignment, "layer ", layer.layer_index(), " cannot resolve sentence ",
         loc.sentence_id.empty() ? std::to_string(loc.sentence) : loc.sentence_id, " token ", loc.token);
  }
  const auto v = layer.token_vector(loc.sentence, loc.token);
  return std::vector<double>(v.begin(), v.end());
}

}  // namespace detail

/// Mean cosine similarity between the two occurrences of every pair.
inline double avg_pair_cosine(const WordPairSet& pairs, const ContextualLayerFile& layer) {
  if (pairs.empty()) fail(ErrorKind::kDegeneracy, "no word pairs to average over");
  double total = 0.0;
  for (const auto& p : pairs.pairs) {
    total += cosine(detail::layer_vector(layer, p.metaphor), detail::layer_vector(layer, p.literal));
  }
  return total / static_cast<double>(pairs.size());
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

struct SvdResult {
  Matrix u;      // m × r, orthonormal columns
  Vector sigma;  // r, non-negative, non-increasing
  Matrix v;      // n × r, orthonormal columns
};

namespace detail {

/// Flips the sign of column k (and its partner) so that the largest-magnitude
/// entry of `primary.col(k)` is positive.
inline void fix_column_sign(Matrix& primary, Matrix* partner, Eigen::Index k) {
  Eigen::Index arg = 0;
  primary.col(k).cwiseAbs().maxCoeff(&arg);
  if (primary(arg, k) < 0.0) {
    primary.col(k) *= -1.0;
    if (partner) partner->col(k) *= -1.0;
  }
}

inline void require_finite(const Matrix& m, std::string_view what) {
  if (!m.allFinite()) fail(ErrorKind::kNumeric, what, " has non-finite entries");
}

}  // namespace detail

/// Thin SVD, M = U·diag(σ)·Vᵀ.
inline SvdResult svd(const Matrix& m) {
  if (m.size() == 0) fail(ErrorKind::kDimension, "svd of an empty matrix");
  detail::require_finite(m, "svd input");
  Eigen::BDCSVD<Matrix> solver(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (solver.info() != Eigen::Success) fail(ErrorKind::kNumeric, "svd did not converge");
  SvdResult r{solver.matrixU(), solver.singularValues(), solver.matrixV()};
  if (!r.u.allFinite() || !r.v.allFinite() || !r.sigma.allFinite()) {
    fail(ErrorKind::kNumeric, "svd produced non-finite factors");
  }
  for (Eigen::Index k = 0; k < r.u.cols(); ++k) detail::fix_column_sign(r.u, &r.v, k);
  return r;
}

/// Mean Euclidean distance between corresponding rows.
inline double avg_l2(const Matrix& e, const Matrix& b) {
  if (e.rows() != b.rows() || e.cols() != b.cols()) {
    fail(ErrorKind::kDimension, "avg_l2: (", e.rows(), ",", e.cols(), ") vs (", b.rows(), ",", b.cols(), ")");
  }
  if (e.rows() == 0) fail(ErrorKind::kDimension, "avg_l2 of zero rows");
  return (e - b).rowwise().norm().mean();
}

struct AlignmentResult {
  Matrix w;                 // d × d orthogonal map
  Matrix rotated;           // n × d, rows of B mapped into E's space
  double average_l2 = 0.0;  // between E and the rotated rows
  double orthogonality_residual = 0.0;  // ‖W·Wᵀ − I‖_F
};

/// Orthogonal map taking the rows of `b` onto the rows of `e`.
inline AlignmentResult procrustes_align(const Matrix& b, const Matrix& e) {
  if (b.rows() != e.rows() || b.cols() != e.cols()) {
    fail(ErrorKind::kDimension, "procrustes_align: B is (", b.rows(), ",", b.cols(), "), E is (", e.rows(), ",",
         e.cols(), ")");
  }
  if (b.rows() == 0) fail(ErrorKind::kDimension, "procrustes_align needs at least one token");
  const SvdResult f = svd(e.transpose() * b);
  AlignmentResult r;
  r.w = f.u * f.v.transpose();
  r.rotated = b * r.w.transpose();
  r.average_l2 = avg_l2(e, r.rotated);
  r.orthogonality_residual = (r.w * r.w.transpose() - Matrix::Identity(r.w.rows(), r.w.cols())).norm();
  return r;
}

struct PcaProjection {
  Vector mean;                 // d
  Matrix axes;                 // 2 × d, orthonormal rows
  Matrix points;               // n × 2
  double explained_ratio[2] = {0.0, 0.0};
};

/// Projection onto the top two principal axes of the centred rows.
inline PcaProjection pca_2d(const Matrix& x) {
  if (x.rows() < 3) fail(ErrorKind::kParameter, "pca_2d needs at least 3 rows, got ", x.rows());
  if (x.cols() < 2) fail(ErrorKind::kParameter, "pca_2d needs at least 2 columns, got ", x.cols());
  detail::require_finite(x, "pca_2d input");
  PcaProjection p;
  p.mean = x.colwise().mean().transpose();
  const Matrix centred = x.rowwise() - p.mean.transpose();
  const Matrix cov = centred.transpose() * centred / static_cast<double>(x.rows() - 1);
  const double total = cov.trace();
  const double scale = std::max(1.0, x.cwiseAbs().maxCoeff());
  if (!(total > 1e-24 * scale * scale)) fail(ErrorKind::kDegeneracy, "pca_2d: all rows are identical");
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  if (eig.info() != Eigen::Success) fail(ErrorKind::kNumeric, "pca_2d eigensolver failed");
  const Eigen::Index d = cov.rows();
  Matrix axes_cols(d, 2);
  for (int k = 0; k < 2; ++k) {  // eigenvalues come in ascending order
    axes_cols.col(k) = eig.eigenvectors().col(d - 1 - k);
    detail::fix_column_sign(axes_cols, nullptr, k);
    p.explained_ratio[k] = std::clamp(eig.eigenvalues()(d - 1 - k) / total, 0.0, 1.0);
  }
  p.axes = axes_cols.transpose();
  p.points = centred * axes_cols;
  return p;
}

/// Sample Pearson correlation coefficient.
inline double pearson_r(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorKind::kContract, "pearson_r: series of length ", x.size(), " and ", y.size());
  if (x.size() < 2) fail(ErrorKind::kContract, "pearson_r needs at least 2 points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) fail(ErrorKind::kDegeneracy, "pearson_r: a series has zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Dataset <-> layer helpers
// ---------------------------------------------------------------------------

/// Throws an alignment error naming the first sentence the layer does not cover.
inline void check_alignment(const std::vector<SentenceRecord>& dataset, const ContextualLayerFile& layer) {
  for (std::size_t s = 0; s < dataset.size(); ++s) {
    const ContextualSentence* row = layer.find(static_cast<std::uint32_t>(s));
    if (!row) {
      fail(ErrorKind::kAlignment, "layer ", layer.layer_index(), " is missing sentence ", dataset[s].id, " (index ",
           s, ")");
    }
    if (row->token_count != dataset[s].tokens.size()) {
      fail(ErrorKind::kAlignment, "layer ", layer.layer_index(), ": sentence ", dataset[s].id, " (index ", s,
           ") has ", dataset[s].tokens.size(), " tokens, layer holds ", row->token_count);
    }
  }
}

/// Stacks the layer vectors of every token accepted by `keep`, in dataset order.
inline Matrix gather_tokens(const std::vector<SentenceRecord>& dataset, const ContextualLayerFile& layer,
                            const std::function<bool(const SentenceRecord&, const TokenRecord&)>& keep = {},
                            std::vector<TokenLocator>* locators = nullptr) {
  check_alignment(dataset, layer);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> picked;
  for (std::size_t s = 0; s < dataset.size(); ++s)
    for (std::size_t i = 0; i < dataset[s].tokens.size(); ++i)
      if (!keep || keep(dataset[s], dataset[s].tokens[i]))
        picked.emplace_back(static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(i));
  Matrix m(static_cast<Eigen::Index>(picked.size()), layer.dimension());
  for (std::size_t r = 0; r < picked.size(); ++r) {
    const auto v = layer.token_vector(picked[r].first, picked[r].second);
    for (std::size_t j = 0; j < v.size(); ++j) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = v[j];
    if (locators) locators->push_back({picked[r].first, picked[r].second, dataset[picked[r].first].id});
  }
  return m;
}

}  // namespace metaseq
