#include <regex>

#include "support.hpp"

namespace attnboost {
namespace {

using testing::scratch_dir;
using testing::slurp;

TEST(Config, DefaultsParse) {
  const auto c = parse_run_config(default_config_json());
  EXPECT_EQ(c.synthetic.n_categories, 64u);
  EXPECT_EQ(c.synthetic.shape.flat_dim(), 64u);
  EXPECT_EQ(c.difficulty_group.n_task_sets, 25u);
  EXPECT_EQ(c.size_group.n_task_sets, 20u);
  EXPECT_EQ(c.similarity_group.n_task_sets, 40u);
  EXPECT_EQ(c.size_group.ladder, (std::vector<std::uint32_t>{2, 4, 8, 16, 32}));
  EXPECT_EQ(c.stats.n_permutations, 10000u);
  EXPECT_EQ(c.granularity, Granularity::unit);
  EXPECT_FALSE(c.difficulty_group.targets.has_value());
}

TEST(Config, ShippedFileMatchesBuiltInDefaults) {
  std::ifstream in(std::filesystem::path(ATTNBOOST_SOURCE_DIR) / "configs" / "default.json");
  ASSERT_TRUE(in);
  EXPECT_EQ(json::parse(in), default_config_json());
}

TEST(Config, OverridesParseJsonOrFallBackToString) {
  auto j = default_config_json();
  apply_override(j, "attention.learning_rate=0.5");
  apply_override(j, "attention.granularity=channel");
  apply_override(j, "assembly.difficulty.targets=[0.1,0.2]");
  EXPECT_EQ(j["attention"]["learning_rate"], 0.5);
  EXPECT_EQ(j["attention"]["granularity"], "channel");
  EXPECT_EQ(j["assembly"]["difficulty"]["targets"].size(), 2u);
  EXPECT_THROW(apply_override(j, "no_equals_sign"), ConfigError);
}

TEST(Config, BadValuesAreConfigErrors) {
  auto j = default_config_json();
  j["stats"]["n_permutations"] = "many";
  EXPECT_THROW(parse_run_config(j), ConfigError);
  j = default_config_json();
  j["head"].erase("hidden");
  EXPECT_THROW(parse_run_config(j), ConfigError);
  j = default_config_json();
  j["attention"]["granularity"] = "pixel";
  EXPECT_THROW(parse_run_config(j), ConfigError);
  j = default_config_json();
  j["dataset"]["path"] = "/nonexistent/features.atnf";
  EXPECT_THROW(parse_run_config(j), ConfigError);
  j = default_config_json();
  j["attention"]["momentum"] = 1.5;
  EXPECT_THROW(parse_run_config(j), ConfigError);
}

TEST(Config, FileIsMergedOverDefaults) {
  const auto dir = scratch_dir();
  std::ofstream(dir / "c.json") << R"({"seed": 7, "attention": {"max_epochs": 3}})";
  const auto j = load_config(dir / "c.json", {"jobs=2"});
  EXPECT_EQ(j["seed"], 7);
  EXPECT_EQ(j["attention"]["max_epochs"], 3);
  EXPECT_EQ(j["attention"]["patience"], 5);
  EXPECT_EQ(j["jobs"], 2);
  std::ofstream(dir / "bad.json") << "[1, 2";
  EXPECT_THROW(load_config(dir / "bad.json"), ConfigError);
}

struct Fixture {
  Dataset data;
  HeadModel head;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture f;
    f.data = generate_synthetic(testing::small_synthetic(6, 8), 31);
    auto cfg = default_head_train_config();
    cfg.max_epochs = 5;
    f.head = train_head(f.data, {8}, cfg, 1);
    return f;
  }();
  return f;
}

TEST(Evaluate, MatchesDirectRecount) {
  const auto& f = fixture();
  auto mask = AttentionMask::ones(f.data.shape);
  mask.weights[3] = 0.0;
  const std::set<std::uint32_t> task{1, 4};
  const auto acc = evaluate_network(f.head, mask, f.data, task);
  std::size_t in = 0, in_hit = 0, out = 0, out_hit = 0;
  for (const auto& r : f.data.records) {
    if (r.split != Split::test) continue;
    std::vector<double> x(r.features.begin(), r.features.end());
    const bool hit = attention_forward(f.head, mask, x).top1() == r.category_id;
    if (task.count(r.category_id)) {
      ++in;
      in_hit += hit;
    } else {
      ++out;
      out_hit += hit;
    }
  }
  EXPECT_EQ(acc.n_in_set, in);
  EXPECT_EQ(acc.n_out_of_set, out);
  EXPECT_EQ(acc.in_set, double(in_hit) / double(in));
  EXPECT_EQ(acc.out_of_set, double(out_hit) / double(out));
}

TEST(Evaluate, PartitionsCoverTheTestSplit) {
  const auto& f = fixture();
  const auto acc = evaluate_network(f.head, AttentionMask::ones(f.data.shape), f.data, {0});
  EXPECT_EQ(acc.n_in_set + acc.n_out_of_set, f.data.indices(Split::test).size());
}

TEST(Evaluate, EmptyPartitionIsAnError) {
  const auto& f = fixture();
  const auto mask = AttentionMask::ones(f.data.shape);
  EXPECT_THROW(evaluate_network(f.head, mask, f.data, {0, 1, 2, 3, 4, 5}), Error);
  EXPECT_THROW(evaluate_network(f.head, mask, f.data, {42}), Error);
}

TEST(Evaluate, IdentityMaskReproducesHeadAccuracy) {
  const auto& f = fixture();
  const auto acc = evaluate_network(f.head, AttentionMask::ones(f.data.shape), f.data, {2});
  const auto rows = f.data.indices(Split::test, [](std::uint32_t c) { return c == 2; });
  EXPECT_EQ(acc.in_set, head_accuracy(f.head, f.data.matrix(rows), f.data.labels(rows)));
}

TEST(Results, CsvRoundTrip) {
  ExperimentResult r;
  r.group_kind = GroupKind::size;
  r.set_index = 3;
  r.property_value = 8;
  r.in_set_delta = 0.1 / 3;
  r.out_of_set_delta = -1e-17;
  r.best_epoch = 4;
  r.mask_path = "masks/size_03.atna";
  const auto dir = scratch_dir();
  write_results_csv({r, r}, dir / "r.csv");
  const auto back = read_results_csv(dir / "r.csv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].in_set_delta, r.in_set_delta);
  EXPECT_EQ(back[1].out_of_set_delta, r.out_of_set_delta);
  EXPECT_EQ(back[1].mask_path, r.mask_path);
  EXPECT_EQ(back[1].group_kind, GroupKind::size);
}

std::vector<ExperimentResult> line_results(double slope) {
  std::vector<ExperimentResult> out;
  for (auto kind : kAllGroupKinds)
    for (int i = 0; i < 6; ++i) {
      ExperimentResult r;
      r.group_kind = kind;
      r.property_value = kind == GroupKind::size ? std::pow(2.0, i + 1) : 0.1 * i;
      const double x = kind == GroupKind::size ? i + 1 : 0.1 * i;
      r.in_set_delta = 0.01 + slope * x;
      r.out_of_set_delta = -0.02;
      out.push_back(r);
    }
  return out;
}

std::vector<double> numbers(const std::string& s, const std::string& prefix) {
  const std::regex re(prefix + R"re(x1="([-0-9.e]+)" y1="([-0-9.e]+)" x2="([-0-9.e]+)" y2="([-0-9.e]+)")re");
  std::smatch m;
  if (!std::regex_search(s, m, re)) return {};
  return {std::stod(m[1]), std::stod(m[2]), std::stod(m[3]), std::stod(m[4])};
}

TEST(Plot, RegressionLinePassesThroughCollinearPoints) {
  const auto results = line_results(0.5);
  const auto rows = stats::build_table(results, {.n_permutations = 99, .n_bootstrap = 99});
  const auto svg = plot::render_group(GroupKind::difficulty, results, &rows[0], &rows[1]);
  const auto line = numbers(svg, R"(class="regression in-set" )");
  ASSERT_EQ(line.size(), 4u);
  // First and last in-set circles.
  const std::regex circle(R"re(<circle cx="([-0-9.e]+)" cy="([-0-9.e]+)" r="3.5"/>)re");
  std::vector<std::pair<double, double>> pts;
  for (std::sregex_iterator it(svg.begin(), svg.end(), circle), end; it != end; ++it)
    pts.emplace_back(std::stod((*it)[1]), std::stod((*it)[2]));
  ASSERT_GE(pts.size(), 6u);
  EXPECT_NEAR(line[0], pts.front().first, 0.01);
  EXPECT_NEAR(line[1], pts.front().second, 0.01);
  EXPECT_NEAR(line[2], pts[5].first, 0.01);
  EXPECT_NEAR(line[3], pts[5].second, 0.01);
}

TEST(Plot, PositiveSlopeRisesOnScreen) {
  const auto results = line_results(0.5);
  const auto rows = stats::build_table(results, {.n_permutations = 99, .n_bootstrap = 99});
  const auto svg = plot::render_group(GroupKind::size, results, &rows[2], &rows[3]);
  const auto line = numbers(svg, R"(class="regression in-set" )");
  ASSERT_EQ(line.size(), 4u);
  EXPECT_LT(line[0], line[2]);
  EXPECT_LT(line[3], line[1]); // screen y grows downwards
  EXPECT_NE(svg.find("out-of-set"), std::string::npos);
  EXPECT_NE(svg.find("<rect x="), std::string::npos);
}

TEST(Plot, EscapesMarkup) {
  EXPECT_EQ(plot::escape_xml("a<b & \"c\">"), "a&lt;b &amp; &quot;c&quot;&gt;");
}

json tiny_run_config(const std::filesystem::path& out) {
  auto j = default_config_json();
  j["output_dir"] = out.string();
  auto& syn = j["dataset"]["synthetic"];
  syn["n_categories"] = 16;
  syn["channels"] = 16;
  syn["n_clusters"] = 4;
  syn["train_per_category"] = 40;
  syn["val_per_category"] = 20;
  syn["test_per_category"] = 40;
  j["head"]["hidden"] = {16};
  j["head"]["train"]["max_epochs"] = 10;
  j["attention"]["max_epochs"] = 5;
  j["assembly"]["difficulty"] = {{"n_task_sets", 4}, {"size", 6}, {"targets", "auto"}};
  j["assembly"]["size"] = {{"n_task_sets", 4}, {"ladder", {2, 4}}};
  j["assembly"]["similarity"] = {{"n_task_sets", 4}, {"size", 6}, {"targets", "auto"}};
  j["assembly"]["hold_tolerances"] = {{"difficulty", 0.1}, {"similarity", 0.1}};
  j["assembly"]["target_tolerance"] = 0.02;
  j["stats"]["n_permutations"] = 99;
  j["stats"]["n_bootstrap"] = 99;
  return j;
}

TEST(Run, SmallPipelineIsDeterministicAndComplete) {
  const auto dir = scratch_dir();
  const auto a = run_experiment(parse_run_config(tiny_run_config(dir / "a")));
  auto jb = tiny_run_config(dir / "b");
  jb["jobs"] = 2;
  const auto b = run_experiment(parse_run_config(jb));
  EXPECT_EQ(a.results.size(), 12u);
  EXPECT_EQ(a.failed_runs, 0u);
  for (const char* f : {"results.csv", "table.csv", "table.json", "manifest.json",
                        "dataset.atnf", "head.atnh", "group_difficulty.csv",
                        "group_size.json", "fig_similarity.svg",
                        "masks/baseline.atna", "masks/size_03.atna"})
    EXPECT_TRUE(std::filesystem::exists(dir / "a" / f)) << f;
  EXPECT_EQ(slurp(dir / "a" / "results.csv"), slurp(dir / "b" / "results.csv"));
  EXPECT_EQ(slurp(dir / "a" / "table.csv"), slurp(dir / "b" / "table.csv"));
  EXPECT_EQ(slurp(dir / "a" / "masks" / "difficulty_02.atna"),
            slurp(dir / "b" / "masks" / "difficulty_02.atna"));
}

TEST(Run, OutputsAreInternallyConsistent) {
  const auto dir = scratch_dir();
  const auto c = parse_run_config(tiny_run_config(dir));
  const auto out = run_experiment(c);
  const auto head = read_head_file(dir / "head.atnh");
  const auto data = read_feature_file(dir / "dataset.atnf");
  const auto stats = compute_category_stats(head, data);
  for (const auto& r : out.results) {
    EXPECT_EQ(r.in_set_delta, r.in_set_accuracy_attention - r.in_set_accuracy_baseline);
    EXPECT_EQ(r.out_of_set_delta,
              r.out_of_set_accuracy_attention - r.out_of_set_accuracy_baseline);
  }
  // Re-evaluating a saved mask reproduces the recorded accuracy.
  const auto g = read_group_csv(dir / "group_similarity.csv", stats);
  const auto& t = g.task_sets[1].categories;
  const auto mask = read_mask_file(dir / "masks" / "similarity_01.atna");
  const auto acc = evaluate_network(head, mask, data, {t.begin(), t.end()});
  const auto it = std::find_if(out.results.begin(), out.results.end(), [](const auto& r) {
    return r.group_kind == GroupKind::similarity && r.set_index == 1;
  });
  ASSERT_NE(it, out.results.end());
  EXPECT_EQ(acc.in_set, it->in_set_accuracy_attention);
  EXPECT_EQ(acc.out_of_set, it->out_of_set_accuracy_attention);
  const auto manifest = json::parse(std::ifstream(dir / "manifest.json"));
  EXPECT_TRUE(manifest.contains("config_hash"));
}

} // namespace
} // namespace attnboost
