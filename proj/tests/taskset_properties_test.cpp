#include "oracles.hpp"
#include "support.hpp"

namespace attnboost {
namespace {

using testing::make_stats;

TEST(Difficulty, MeanErrorRate) {
  const auto s = make_stats({1.0, 0.5, 0.8}, {{1}, {1}, {1}});
  const std::vector<std::uint32_t> all{0, 1, 2}, two{0, 1};
  EXPECT_NEAR(difficulty(all, s), (0.0 + 0.5 + 0.2) / 3, 1e-15);
  EXPECT_DOUBLE_EQ(difficulty(two, s), 0.25);
}

TEST(Difficulty, UnknownCategoryIsAnError) {
  const auto s = make_stats({1.0, 0.5}, {{1}, {1}});
  const std::vector<std::uint32_t> bad{0, 7};
  try {
    difficulty(bad, s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("unknown category id"), std::string::npos);
  }
}

TEST(Similarity, CosineOfKnownVectors) {
  const std::vector<double> a{1, 0}, b{1, 1}, c{0, 3}, d{-2, 0};
  EXPECT_NEAR(cosine_similarity(a, b), 1 / std::sqrt(2.0), 1e-15);
  EXPECT_EQ(cosine_similarity(a, c), 0.0);
  EXPECT_EQ(cosine_similarity(a, d), -1.0);
  EXPECT_EQ(cosine_similarity(a, b), cosine_similarity(b, a));
}

TEST(Similarity, ZeroNormIsAnError) {
  const std::vector<double> a{0, 0}, b{1, 1};
  EXPECT_THROW(cosine_similarity(a, b), Error);
}

TEST(Similarity, SetMeanOverUnorderedPairs) {
  const auto s = make_stats({1, 1, 1}, {{1, 0}, {1, 1}, {0, 1}});
  const std::vector<std::uint32_t> all{0, 1, 2};
  const double r = 1 / std::sqrt(2.0);
  EXPECT_NEAR(set_similarity(all, s), (r + 0.0 + r) / 3, 1e-15);
  const std::vector<std::uint32_t> one{1};
  EXPECT_THROW(set_similarity(one, s), Error);
}

TEST(Size, CountsMembers) {
  std::vector<std::uint32_t> v(256);
  std::iota(v.begin(), v.end(), 0u);
  EXPECT_EQ(attnboost::size(v), 256u);
  EXPECT_EQ(attnboost::size(std::span<const std::uint32_t>(v).first(2)), 2u);
}

TEST(PropertyMetrics, MatchBruteForceRecomputation) {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const auto stats = testing::random_stats(rng, 30, 1 + rng.below(20));
    std::vector<std::uint32_t> ids(30);
    std::iota(ids.begin(), ids.end(), 0u);
    rng.shuffle(std::span<std::uint32_t>(ids));
    ids.resize(2 + rng.below(28));
    const auto t = make_task_set(ids, stats);
    EXPECT_NEAR(t.difficulty, oracle::difficulty(ids, stats), 1e-12);
    EXPECT_NEAR(t.similarity, oracle::similarity(ids, stats), 1e-12);
    EXPECT_EQ(t.size, ids.size());
  }
}

TEST(PropertyMetrics, SimilarityInvariantUnderMemberPermutation) {
  Rng rng(5);
  const auto stats = testing::random_stats(rng, 20, 8);
  std::vector<std::uint32_t> ids{3, 7, 1, 12, 19, 4};
  const double base = set_similarity(ids, stats);
  for (int t = 0; t < 20; ++t) {
    rng.shuffle(std::span<std::uint32_t>(ids));
    EXPECT_NEAR(set_similarity(ids, stats), base, 1e-12);
  }
}

TEST(PropertyMetrics, SimilarityInvariantUnderPositiveScaling) {
  Rng rng(6);
  auto stats = testing::random_stats(rng, 20, 8);
  const std::vector<std::uint32_t> ids{0, 2, 5, 9, 11};
  const double base = set_similarity(ids, stats);
  for (auto& s : stats) {
    const double k = rng.uniform(0.01, 100.0);
    for (auto& v : s.mean_representation) v *= k;
  }
  EXPECT_NEAR(set_similarity(ids, stats), base, 1e-12);
}

TEST(SimilarityTable, MatchesPairwiseFunction) {
  Rng rng(7);
  const auto stats = testing::random_stats(rng, 12, 5);
  const SimilarityTable table(stats);
  for (std::uint32_t i = 0; i < 12; ++i)
    for (std::uint32_t j = 0; j < 12; ++j)
      if (i != j) {
        EXPECT_EQ(table(i, j), pairwise_similarity(i, j, stats));
      }
}

TEST(TaskSet, SortsAndRejectsDuplicates) {
  Rng rng(8);
  const auto stats = testing::random_stats(rng, 10, 4);
  const auto t = make_task_set({5, 1, 3}, stats);
  EXPECT_EQ(t.categories, (std::vector<std::uint32_t>{1, 3, 5}));
  EXPECT_THROW(make_task_set({1, 1, 3}, stats), Error);
}

TEST(CategoryStats, RecountMatchesDirectComputation) {
  const auto d = generate_synthetic(testing::small_synthetic(6, 10), 4);
  auto cfg = default_head_train_config();
  cfg.max_epochs = 3;
  const auto h = train_head(d, {8}, cfg, 2, 0.0);
  const auto stats = compute_category_stats(h, d);
  ASSERT_EQ(stats.size(), 6u);
  for (std::uint32_t c = 0; c < 6; ++c) {
    const auto val = d.indices(Split::val, [&](std::uint32_t k) { return k == c; });
    std::size_t hits = 0;
    for (auto r : val) {
      const auto p = head_forward(h, std::span<const float>(d.records[r].features));
      hits += p.top1() == c;
    }
    EXPECT_DOUBLE_EQ(stats[c].baseline_accuracy, double(hits) / double(val.size()));
    const auto train = d.indices(Split::train, [&](std::uint32_t k) { return k == c; });
    for (std::size_t j = 0; j < 10; ++j) {
      double m = 0;
      for (auto r : train) m += d.records[r].features[j];
      EXPECT_NEAR(stats[c].mean_representation[j], m / double(train.size()), 1e-12);
    }
  }
}

TEST(CategoryStats, AuxiliarySourceSuppliesMeans) {
  const auto d = generate_synthetic(testing::small_synthetic(4, 6), 4);
  auto aux = d;
  aux.shape = {1, 1, 2};
  for (auto& r : aux.records) r.features = {1.0f, float(r.category_id)};
  auto cfg = default_head_train_config();
  cfg.max_epochs = 2;
  const auto h = train_head(d, {4}, cfg, 2, 0.0);
  const auto stats = compute_category_stats(h, d, {&aux});
  EXPECT_EQ(stats[3].mean_representation, (std::vector<double>{1.0, 3.0}));
  aux.records.pop_back();
  EXPECT_THROW(compute_category_stats(h, d, {&aux}), ShapeError);
}

TEST(CategoryStats, CacheRoundTrip) {
  Rng rng(1);
  const auto stats = testing::random_stats(rng, 5, 3);
  const auto dir = testing::scratch_dir();
  write_category_stats(stats, dir);
  const auto back = read_category_stats(dir);
  ASSERT_EQ(back.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(back[i].baseline_accuracy, stats[i].baseline_accuracy);
    for (std::size_t j = 0; j < 3; ++j)
      EXPECT_EQ(back[i].mean_representation[j],
                double(float(stats[i].mean_representation[j])));
  }
}

} // namespace
} // namespace attnboost
