#include "oracles.hpp"
#include "support.hpp"

namespace attnboost::stats {
namespace {

PairedSample sample(std::vector<double> x, std::vector<double> y) {
  return {std::move(x), std::move(y)};
}

// Values on a coarse grid so ties are common.
PairedSample tied_sample(Rng& rng, std::size_t n) {
  PairedSample s;
  for (std::size_t i = 0; i < n; ++i) {
    s.x.push_back(static_cast<double>(rng.below(6)));
    s.y.push_back(0.5 * static_cast<double>(rng.below(8)) + 0.1 * s.x.back());
  }
  return s;
}

TEST(Ranks, TiesShareAveragePosition) {
  const std::vector<double> v{10, 20, 20, 5};
  EXPECT_EQ(average_ranks(v), (std::vector<double>{2, 3.5, 3.5, 1}));
}

TEST(Spearman, MonotoneTransformGivesOne) {
  std::vector<double> x, y;
  for (int i = -5; i <= 5; ++i) {
    x.push_back(i);
    y.push_back(double(i) * i * i);
  }
  EXPECT_DOUBLE_EQ(spearman_rho(sample(x, y)), 1.0);
}

TEST(Spearman, ReversalGivesMinusOne) {
  EXPECT_DOUBLE_EQ(spearman_rho(sample({1, 2, 3, 4}, {9, 7, 3, 1})), -1.0);
}

TEST(Spearman, ConstantSideIsUndefined) {
  EXPECT_THROW(spearman_rho(sample({1, 2, 3}, {4, 4, 4})), Error);
}

TEST(KendallTauB, HandCountedTies) {
  // Pairs: 5 concordant, 1 tied in x, none discordant.
  EXPECT_NEAR(kendall_tau_b(sample({1, 2, 2, 3}, {1, 2, 3, 4})), 5 / std::sqrt(30.0),
              1e-15);
}

TEST(KendallTauB, PerfectOrderings) {
  EXPECT_DOUBLE_EQ(kendall_tau_b(sample({1, 2, 3, 4, 5}, {2, 4, 6, 8, 10})), 1.0);
  EXPECT_DOUBLE_EQ(kendall_tau_b(sample({1, 2, 3, 4, 5}, {5, 4, 3, 2, 1})), -1.0);
}

TEST(Oracles, TauAndRhoMatchBruteForceWithTies) {
  Rng rng(1234);
  for (int t = 0; t < 200; ++t) {
    const auto s = tied_sample(rng, 3 + rng.below(60));
    if (std::all_of(s.x.begin(), s.x.end(), [&](double v) { return v == s.x[0]; }) ||
        std::all_of(s.y.begin(), s.y.end(), [&](double v) { return v == s.y[0]; }))
      continue;
    EXPECT_NEAR(kendall_tau_b(s), oracle::tau_b(s.x, s.y), 1e-12);
    EXPECT_NEAR(spearman_rho(s), oracle::spearman(s.x, s.y), 1e-12);
  }
}

TEST(Invariance, MonotoneTransformsPreserveRankStatistics) {
  Rng rng(9);
  for (int t = 0; t < 50; ++t) {
    auto s = tied_sample(rng, 20);
    auto u = s;
    for (auto& v : u.x) v = std::exp(v) + 3;
    for (auto& v : u.y) v = v * v * v - 1;
    EXPECT_NEAR(spearman_rho(s), spearman_rho(u), 1e-12);
    EXPECT_NEAR(kendall_tau_b(s), kendall_tau_b(u), 1e-12);
  }
}

TEST(Invariance, SwappingAxesPreservesRankStatistics) {
  Rng rng(10);
  const auto s = tied_sample(rng, 30);
  const auto u = sample(s.y, s.x);
  EXPECT_NEAR(spearman_rho(s), spearman_rho(u), 1e-12);
  EXPECT_NEAR(kendall_tau_b(s), kendall_tau_b(u), 1e-12);
}

TEST(Regression, ExactLine) {
  const auto r = linear_regression(sample({0, 1, 2}, {1, 3, 5}));
  EXPECT_NEAR(r.beta0, 1.0, 1e-15);
  EXPECT_NEAR(r.beta1, 2.0, 1e-15);
  EXPECT_NEAR(r.r_squared, 1.0, 1e-15);
}

TEST(Regression, ConstantResponse) {
  const auto r = linear_regression(sample({0, 1, 2, 3}, {4, 4, 4, 4}));
  EXPECT_EQ(r.beta1, 0.0);
  EXPECT_EQ(r.beta0, 4.0);
  EXPECT_EQ(r.r_squared, 0.0);
}

TEST(Regression, DegenerateXIsAnError) {
  EXPECT_THROW(linear_regression(sample({2, 2, 2}, {1, 2, 3})), Error);
}

TEST(Regression, SatisfiesNormalEquations) {
  Rng rng(77);
  for (int t = 0; t < 100; ++t) {
    PairedSample s;
    const auto n = 3 + rng.below(50);
    for (std::size_t i = 0; i < n; ++i) {
      s.x.push_back(rng.normal());
      s.y.push_back(0.3 * s.x.back() + rng.normal());
    }
    const auto r = linear_regression(s);
    double e_sum = 0, ex_sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = s.y[i] - r.beta0 - r.beta1 * s.x[i];
      e_sum += e;
      ex_sum += e * s.x[i];
    }
    EXPECT_LT(std::abs(e_sum), 1e-9);
    EXPECT_LT(std::abs(ex_sum), 1e-9);
    EXPECT_GE(r.r_squared, -1e-12);
    EXPECT_LE(r.r_squared, 1 + 1e-12);
  }
}

TEST(Permutation, PerfectCorrelationHitsTheFloor) {
  PairedSample s;
  for (int i = 0; i < 25; ++i) {
    s.x.push_back(i);
    s.y.push_back(2 * i + 1);
  }
  for (auto which : {Statistic::rho, Statistic::tau_b, Statistic::slope})
    EXPECT_DOUBLE_EQ(permutation_p_value(s, which, 9999, 3), 1.0 / 10000);
}

TEST(Permutation, DeterministicPerSeed) {
  Rng rng(4);
  const auto s = tied_sample(rng, 15);
  EXPECT_EQ(permutation_p_value(s, Statistic::rho, 199, 8),
            permutation_p_value(s, Statistic::rho, 199, 8));
}

TEST(Permutation, RejectsTooFewPermutations) {
  Rng rng(4);
  EXPECT_THROW(permutation_p_value(tied_sample(rng, 10), Statistic::rho, 10, 1), Error);
}

TEST(Permutation, NullRejectionRateIsCalibrated) {
  Rng rng(2718);
  int rejected = 0;
  const int reps = 200;
  for (int t = 0; t < reps; ++t) {
    PairedSample s;
    for (int i = 0; i < 20; ++i) {
      s.x.push_back(rng.normal());
      s.y.push_back(rng.normal());
    }
    rejected += permutation_p_value(s, Statistic::rho, 199, derive_seed(5, "null", t)) < 0.05;
  }
  EXPECT_NEAR(double(rejected) / reps, 0.05, 0.03);
}

TEST(Bootstrap, IntervalCoversExactIntercept) {
  PairedSample s;
  Rng rng(3);
  for (int i = 0; i < 40; ++i) {
    s.x.push_back(i);
    s.y.push_back(2.0 + 0.5 * i + 0.1 * rng.normal());
  }
  const auto [lo, hi] = bootstrap_intercept_interval(s, 999, 1);
  EXPECT_LT(lo, 2.0);
  EXPECT_GT(hi, 2.0);
  EXPECT_LT(hi - lo, 0.5);
}

std::vector<ExperimentResult> synthetic_results() {
  std::vector<ExperimentResult> out;
  std::uint32_t idx = 0;
  for (auto kind : kAllGroupKinds)
    for (int i = 0; i < 10; ++i) {
      ExperimentResult r;
      r.group_kind = kind;
      r.set_index = idx++;
      r.property_value = kind == GroupKind::size ? std::pow(2.0, 1 + i % 5) : 0.1 * i;
      r.in_set_delta = 0.05 + 0.01 * i + (kind == GroupKind::size ? 0.001 * idx : 0);
      r.out_of_set_delta = -0.02 - 0.003 * ((i * 7) % 10);
      out.push_back(r);
    }
  return out;
}

TEST(Table, SixRowsInFixedOrder) {
  StatsConfig cfg;
  cfg.n_permutations = 199;
  cfg.n_bootstrap = 199;
  const auto rows = build_table(synthetic_results(), cfg);
  ASSERT_EQ(rows.size(), 6u);
  const char* labels = "ABCDEF";
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(rows[i].label, std::string(1, labels[i]));
    EXPECT_EQ(rows[i].property, kAllGroupKinds[i / 2]);
    EXPECT_EQ(rows[i].in_set, i % 2 == 0);
    EXPECT_EQ(rows[i].n, 10u);
  }
  EXPECT_DOUBLE_EQ(rows[0].spearman_rho, 1.0);
}

TEST(Table, SizeEntersAsLogTwo) {
  StatsConfig cfg;
  cfg.n_permutations = 199;
  cfg.n_bootstrap = 199;
  const auto results = synthetic_results();
  const auto rows = build_table(results, cfg);
  const auto s = sample_for(results, GroupKind::size, true);
  EXPECT_EQ(s.x[0], 1.0);
  EXPECT_DOUBLE_EQ(rows[2].beta1, linear_regression(s).beta1);
}

TEST(Table, FlatResponseIsDegenerate) {
  auto results = synthetic_results();
  for (auto& r : results)
    if (r.group_kind == GroupKind::similarity) r.out_of_set_delta = 0.0;
  StatsConfig cfg;
  cfg.n_permutations = 99;
  cfg.n_bootstrap = 99;
  const auto rows = build_table(results, cfg);
  EXPECT_TRUE(rows[5].degenerate);
  EXPECT_TRUE(std::isnan(rows[5].spearman_rho));
  EXPECT_TRUE(parenthesised(rows[5].p_rho, cfg));
  EXPECT_FALSE(rows[4].degenerate);
}

TEST(Table, MissingGroupIsAnError) {
  auto results = synthetic_results();
  std::erase_if(results, [](const auto& r) { return r.group_kind == GroupKind::size; });
  EXPECT_THROW(build_table(results, StatsConfig{}), Error);
}

TEST(Table, CsvAndJsonAgree) {
  StatsConfig cfg;
  cfg.n_permutations = 99;
  cfg.n_bootstrap = 99;
  const auto rows = build_table(synthetic_results(), cfg);
  const auto j = table_json(rows, cfg);
  ASSERT_EQ(j["rows"].size(), 6u);
  EXPECT_EQ(j["rows"][0]["label"], "A");
  EXPECT_EQ(j["rows"][0]["spearman_rho"].get<double>(), rows[0].spearman_rho);
  const auto dir = testing::scratch_dir();
  write_table_csv(rows, dir / "table.csv");
  const auto text = testing::slurp(dir / "table.csv");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 7);
  EXPECT_EQ(text.rfind("label,property,test_task,n,", 0), 0u);
}

} // namespace
} // namespace attnboost::stats
