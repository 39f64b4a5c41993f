// SPDX-License-Identifier: Apache-2.0
#pragma once

// k-fold cross-validation of the tagger with pooled (micro) aggregation.

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#include "metaseq/metrics.hpp"
#include "metaseq/tagger_model.hpp"

namespace metaseq {

struct FoldResult {
  std::size_t fold = 0;
  std::size_t train_sentences = 0;
  std::size_t test_sentences = 0;
  std::size_t best_epoch = 0;
  Confusion counts;
  std::vector<ScoredToken> tokens;  // test targets in dataset order
};

struct CrossValidationResult {
  FoldPlan plan;
  std::vector<FoldResult> folds;
  Confusion pooled;
  MetricsReport report;  // from the pooled counts

  std::vector<ScoredToken> pooled_tokens() const {
    std::vector<ScoredToken> all;
    for (const auto& f : folds) all.insert(all.end(), f.tokens.begin(), f.tokens.end());
    return all;
  }
};

/// 1 for sentences with at least one metaphoric target, else 0.
inline std::vector<int> metaphor_strata(const std::vector<SentenceRecord>& records) {
  std::vector<int> strata;
  strata.reserve(records.size());
  for (const auto& s : records) {
    int has = 0;
    for (const auto& t : s.tokens) has |= (t.target && t.label == kMetaphor) ? 1 : 0;
    strata.push_back(has);
  }
  return strata;
}

/// Trains one model per fold on the remaining folds (checkpoint chosen by F1
/// on the training portion) and scores the held-out fold. Folds run on up to
/// `threads` workers; every fold draws only from its own seeded streams, so
/// results do not depend on the worker count.
inline CrossValidationResult cross_validate(const std::vector<SentenceRecord>& records,
                                            const std::vector<SentenceInput>& inputs, const ModelConfig& config,
                                            std::size_t k, std::uint64_t fold_seed, std::size_t threads = 1,
                                            bool stratify = false) {
  if (records.size() != inputs.size()) {
    fail(ErrorKind::kContract, records.size(), " records but ", inputs.size(), " inputs");
  }
  CrossValidationResult out;
  const auto strata = stratify ? metaphor_strata(records) : std::vector<int>{};
  out.plan = kfold(records.size(), k, fold_seed, strata);
  out.folds.resize(k);

  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t f = next++; f < k; f = next++) {
      try {
        const auto train_idx = out.plan.train_indices(f);
        const auto test_idx = out.plan.test_indices(f);
        std::vector<SentenceInput> train_in, test_in;
        for (auto i : train_idx) train_in.push_back(inputs[i]);
        for (auto i : test_idx) test_in.push_back(inputs[i]);
        const auto test_records = select(records, test_idx);
        const TrainResult trained = train(train_in, {}, config);
        const TaggerModel model(config, trained.best.params.clone());
        FoldResult r;
        r.fold = f;
        r.train_sentences = train_idx.size();
        r.test_sentences = test_idx.size();
        r.best_epoch = trained.best.epoch;
        r.tokens = score_sentences(model, test_in, &test_records);
        for (const auto& t : r.tokens) r.counts.add(t.predicted, t.gold);
        out.folds[f] = std::move(r);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(threads, 1, k);
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);

  for (const auto& f : out.folds) out.pooled += f.counts;
  out.report = MetricsReport::from_counts(out.pooled);
  return out;
}

}  // namespace metaseq
