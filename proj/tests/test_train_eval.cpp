// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <numeric>
#include <set>
#include <sstream>

#include "support.hpp"

using namespace metaseq;
namespace mt = metaseq::testing;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::kUsage;
}

std::vector<SentenceRecord> parse_text(const std::string& text) {
  std::istringstream in(text);
  return read_dataset(in, "data.tsv");
}

}  // namespace

TEST(Dataset, TwoSentenceFixtureHandCounts) {
  const auto data = parse_dataset(mt::data_path("two_sentences.tsv").string());
  ASSERT_EQ(data.size(), 2u);
  EXPECT_EQ(data[0].id, "s1");
  EXPECT_EQ(data[0].genre, "news");
  EXPECT_EQ(data[1].genre, "fiction");
  EXPECT_EQ(data[1].tokens[2].text, "devoured");
  EXPECT_EQ(data[1].tokens[2].pos, "VERB");
  const auto st = dataset_stats(data);
  EXPECT_EQ(st.sequences, 2u);
  EXPECT_EQ(st.tokens, 11u);
  EXPECT_EQ(st.target_tokens, 7u);
  EXPECT_EQ(st.metaphor_targets, 3u);
  EXPECT_EQ(st.metaphorical_sentences, 2u);
  EXPECT_NEAR(st.percent_metaphor(), 300.0 / 7.0, 1e-12);
  EXPECT_DOUBLE_EQ(st.metaphors_per_metaphorical_sentence(), 1.5);
}

TEST(Dataset, WriteParseRoundTrip) {
  const auto data = parse_dataset(mt::data_path("two_sentences.tsv").string());
  std::ostringstream out;
  write_dataset(out, data);
  const auto back = parse_text(out.str());
  ASSERT_EQ(back.size(), data.size());
  for (std::size_t s = 0; s < data.size(); ++s) {
    EXPECT_EQ(back[s].id, data[s].id);
    EXPECT_EQ(back[s].genre, data[s].genre);
    ASSERT_EQ(back[s].tokens.size(), data[s].tokens.size());
    for (std::size_t i = 0; i < data[s].tokens.size(); ++i) {
      EXPECT_EQ(back[s].tokens[i].text, data[s].tokens[i].text);
      EXPECT_EQ(back[s].tokens[i].label, data[s].tokens[i].label);
      EXPECT_EQ(back[s].tokens[i].target, data[s].tokens[i].target);
    }
  }
}

TEST(Dataset, ParseErrorsCarryLineNumbers) {
  try {
    parse_text("a\tnews\t0\tx\tNOUN\t0\t1\na\tnews\t1\ty\tNOUN\t0\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kParse);
    EXPECT_NE(std::string(e.what()).find("data.tsv:2"), std::string::npos) << e.what();
  }
  EXPECT_EQ(kind_of([] { parse_text("a\tnews\t0\tx\tNOUN\t2\t1\n"); }), ErrorKind::kParse);
  EXPECT_EQ(kind_of([] { parse_text("a\tnews\t0\tx\tNOUN\t0\tyes\n"); }), ErrorKind::kParse);
  EXPECT_EQ(kind_of([] { parse_text("a\tnews\t0\tx\tNOUN\t0\t1\na\tnews\t5\ty\tNOUN\t0\t1\n"); }), ErrorKind::kParse);
  EXPECT_EQ(kind_of([] { parse_dataset("/nonexistent.tsv"); }), ErrorKind::kIo);
}

TEST(Dataset, SentenceBoundariesAndGenreNormalisation) {
  const auto data = parse_text(
      "a\tACPROSE\t0\tx\tNOUN\t0\t1\n"
      "b\tconvrsn\t0\ty\tVERB\t1\t1\n"
      "\n"
      "c\tweblog\t0\tz\tADJ\t0\t1\n");
  ASSERT_EQ(data.size(), 3u);
  EXPECT_EQ(data[0].genre, "academic");
  EXPECT_EQ(data[1].genre, "conversation");
  EXPECT_EQ(data[2].genre, "other");
}

TEST(Metrics, PerfectAndBalancedConfusion) {
  const std::vector<int> gold{1, 0, 1, 0};
  const std::vector<std::uint8_t> mask{1, 1, 1, 1};
  auto r = compute_metrics(gold, gold, mask);
  EXPECT_EQ(r.precision, 1.0);
  EXPECT_EQ(r.recall, 1.0);
  EXPECT_EQ(r.f1, 1.0);
  EXPECT_EQ(r.accuracy, 1.0);

  const std::vector<int> pred{1, 1, 0, 0};  // TP FP FN TN
  r = compute_metrics(pred, gold, mask);
  EXPECT_EQ(r.counts, (Confusion{1, 1, 1, 1}));
  EXPECT_EQ(r.precision, 0.5);
  EXPECT_EQ(r.recall, 0.5);
  EXPECT_EQ(r.f1, 0.5);
  EXPECT_EQ(r.accuracy, 0.5);
  EXPECT_FALSE(r.zero_division);
}

TEST(Metrics, ZeroDivisionFlagAndMask) {
  const std::vector<int> gold{0, 0, 1}, pred{0, 0, 1};
  const std::vector<std::uint8_t> mask{1, 1, 0};
  const auto r = compute_metrics(pred, gold, mask);
  EXPECT_EQ(r.f1, 0.0);
  EXPECT_TRUE(r.zero_division);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(kind_of([&] { compute_metrics(std::vector<int>{0}, gold, mask); }), ErrorKind::kContract);
}

TEST(Metrics, PublishedRowArithmetic) {
  EXPECT_NEAR(100.0 * f1_from(0.749, 0.744), 74.65, 0.001);
}

TEST(Metrics, PermutationInvariant) {
  RngStream rng(8, 8);
  std::vector<int> pred(50), gold(50);
  std::vector<std::uint8_t> mask(50);
  for (int i = 0; i < 50; ++i) {
    pred[i] = static_cast<int>(rng.index(2));
    gold[i] = static_cast<int>(rng.index(2));
    mask[i] = static_cast<std::uint8_t>(rng.index(2));
  }
  const auto base = compute_metrics(pred, gold, mask);
  std::vector<std::size_t> perm(50);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  std::vector<int> p2, g2;
  std::vector<std::uint8_t> m2;
  for (auto i : perm) {
    p2.push_back(pred[i]);
    g2.push_back(gold[i]);
    m2.push_back(mask[i]);
  }
  const auto shuffled = compute_metrics(p2, g2, m2);
  EXPECT_EQ(shuffled.counts, base.counts);
  EXPECT_EQ(shuffled.f1, base.f1);
}

TEST(Breakdown, SingleGenreAndMaskedClasses) {
  std::vector<ScoredToken> tokens{{1, 1, "news", "VERB"}, {0, 0, "news", "VERB"}, {1, 0, "news", "VERB"}};
  const auto by_genre = breakdown(tokens, BreakdownKey::kGenre);
  ASSERT_EQ(by_genre.rows.size(), 1u);
  EXPECT_EQ(by_genre.rows[0].first, "news");

  std::vector<ScoredToken> verbs{{1, 1, "news", "VERB"}, {0, 0, "fiction", "VERB"}};
  const auto by_pos = breakdown(verbs, BreakdownKey::kPos);
  ASSERT_NE(by_pos.find("VERB"), nullptr);
  EXPECT_EQ(by_pos.find("VERB")->f1, 1.0);
  EXPECT_EQ(by_pos.find("NOUN"), nullptr);
  EXPECT_EQ(by_pos.find("ADJ"), nullptr);
  EXPECT_NE(by_pos.find("ALL"), nullptr);
  EXPECT_EQ(by_pos.notes.size(), 3u);
}

TEST(Breakdown, GenrePartitionLaw) {
  RngStream rng(3, 3);
  const char* genres[] = {"academic", "conversation", "fiction", "news"};
  std::vector<ScoredToken> tokens;
  Confusion overall;
  for (int i = 0; i < 400; ++i) {
    ScoredToken t{static_cast<int>(rng.index(2)), static_cast<int>(rng.index(2)), genres[rng.index(4)], "NOUN"};
    overall.add(t.predicted, t.gold);
    tokens.push_back(t);
  }
  Confusion summed;
  for (const auto& [_, r] : breakdown(tokens, BreakdownKey::kGenre).rows) summed += r.counts;
  EXPECT_EQ(summed, overall);
}

TEST(Breakdown, OtherGenreIsExcludedWithNote) {
  std::vector<ScoredToken> tokens{{1, 1, "other", "NOUN"}, {0, 1, "news", "NOUN"}};
  const auto b = breakdown(tokens, BreakdownKey::kGenre);
  ASSERT_EQ(b.rows.size(), 1u);
  bool noted = false;
  for (const auto& n : b.notes) noted = noted || n.starts_with("other:");
  EXPECT_TRUE(noted);
}

TEST(KFold, BalancedSizesPartitionAndDeterminism) {
  const auto plan = kfold(647, 10, 42);
  auto sizes = plan.fold_sizes();
  std::sort(sizes.begin(), sizes.end());
  EXPECT_EQ(sizes, (std::vector<std::size_t>{64, 64, 64, 65, 65, 65, 65, 65, 65, 65}));
  std::set<std::size_t> seen;
  for (std::size_t f = 0; f < 10; ++f) {
    for (auto i : plan.test_indices(f)) EXPECT_TRUE(seen.insert(i).second);
    EXPECT_EQ(plan.test_indices(f).size() + plan.train_indices(f).size(), 647u);
  }
  EXPECT_EQ(seen.size(), 647u);
  EXPECT_EQ(kfold(647, 10, 42).assignment, plan.assignment);
  EXPECT_NE(kfold(647, 10, 43).assignment, plan.assignment);
}

TEST(KFold, ParameterErrors) {
  EXPECT_EQ(kind_of([] { kfold(5, 6, 1); }), ErrorKind::kParameter);
  EXPECT_EQ(kind_of([] { kfold(5, 1, 1); }), ErrorKind::kParameter);
}

TEST(KFold, StratifiedKeepsClassSharesEven) {
  std::vector<int> strata(100);
  for (int i = 0; i < 100; ++i) strata[i] = i < 30 ? 1 : 0;
  const auto plan = kfold(100, 10, 7, strata);
  for (std::size_t f = 0; f < 10; ++f) {
    int positives = 0;
    for (auto i : plan.test_indices(f)) positives += strata[i];
    EXPECT_EQ(positives, 3);
  }
}

TEST(CrossValidation, PooledCountsAreSumOfFoldsAndThreadIndependent) {
  ModelConfig c = mt::micro_config();
  c.epochs = 2;
  SyntheticSpec spec = mt::micro_spec();
  spec.sentences = 12;
  const auto corpus = make_synthetic(spec);
  const auto inputs = mt::synthetic_inputs(corpus, c);
  const auto one = cross_validate(corpus.sentences, inputs, c, 4, 5, 1);
  const auto four = cross_validate(corpus.sentences, inputs, c, 4, 5, 4);
  Confusion summed;
  for (const auto& f : one.folds) summed += f.counts;
  EXPECT_EQ(summed, one.pooled);
  EXPECT_EQ(one.pooled, four.pooled);
  for (std::size_t f = 0; f < 4; ++f) EXPECT_EQ(one.folds[f].counts, four.folds[f].counts);
  std::size_t targets = 0;
  for (const auto& s : corpus.sentences)
    for (const auto& t : s.tokens) targets += t.target;
  EXPECT_EQ(one.pooled.total(), targets);
}

TEST(Csv, FixedSixDecimals) {
  EXPECT_EQ(format_fixed(0.5), "0.500000");
  EXPECT_EQ(format_fixed(-0.0), "0.000000");
  EXPECT_EQ(format_fixed(-1e-9), "0.000000");
  EXPECT_EQ(format_fixed(2.0 / 3.0), "0.666667");
  std::ostringstream out;
  write_metrics_row(out, "test", "ALL", MetricsReport::from_counts(Confusion{1, 1, 1, 1}));
  EXPECT_EQ(out.str(), "test,ALL,0.500000,0.500000,0.500000,0.500000,1,1,1,1\n");
  // parse-format round trip at six decimals
  for (double v : {0.123456, 0.999999, 0.0, 1.0}) EXPECT_EQ(format_fixed(std::stod(format_fixed(v))), format_fixed(v));
}
