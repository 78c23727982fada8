// Files written by tests/interop/make_fixtures.py (numpy) read back through
// the C++ readers, and the C++ writers checked against them byte for byte.

#include <nlohmann/json.hpp>

#include "support.hpp"

namespace attnboost {
namespace {

const std::filesystem::path kDir = ATTNBOOST_FIXTURE_DIR;

nlohmann::json expected() {
  std::ifstream in(kDir / "expected.json");
  return nlohmann::json::parse(in);
}

Dataset golden_dataset() {
  Dataset d;
  d.shape = {7, 7, 512};
  d.n_categories = 2;
  const std::uint32_t cats[] = {0, 1, 1};
  const Split splits[] = {Split::train, Split::val, Split::test};
  for (std::uint64_t r = 0; r < 3; ++r) {
    FeatureRecord rec{r, cats[r], splits[r], std::vector<float>(d.flat_dim())};
    for (std::size_t i = 0; i < rec.features.size(); ++i)
      rec.features[i] = static_cast<float>(static_cast<double>(i) * static_cast<double>(0.001f) -
                                           static_cast<double>(r));
    d.records.push_back(std::move(rec));
  }
  return d;
}

TEST(Interop, GoldenFeatureFileReads) {
  const auto d = read_feature_file(kDir / "golden_7x7x512.atnf", {.require_all_splits = false});
  EXPECT_EQ(d.shape, (FeatureShape{7, 7, 512}));
  ASSERT_EQ(d.records.size(), 3u);
  EXPECT_EQ(d.records[2].split, Split::test);
  const auto e = expected();
  EXPECT_DOUBLE_EQ(feature_checksum(d), e["golden_checksum"].get<double>());
  const auto& p = e["golden_probe"];
  const std::size_t h = p["h"], w = p["w"], c = p["c"];
  EXPECT_EQ(d.records[p["record"].get<std::size_t>()].features[(h * 7 + w) * 512 + c],
            static_cast<float>(p["value"].get<double>()));
}

TEST(Interop, GoldenFeatureFileBytesMatchCppWriter) {
  const auto out = testing::scratch_dir() / "golden.atnf";
  write_feature_file(golden_dataset(), out);
  EXPECT_EQ(testing::slurp(out), testing::slurp(kDir / "golden_7x7x512.atnf"));
}

TEST(Interop, StripedTensorFlattensHeightWidthChannel) {
  const auto d = read_feature_file(kDir / "striped.atnf", {.require_all_splits = false});
  ASSERT_EQ(d.shape, (FeatureShape{2, 3, 4}));
  const auto& f = d.records.at(0).features;
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t w = 0; w < 3; ++w)
      for (std::size_t c = 0; c < 4; ++c)
        EXPECT_EQ(f[(h * 3 + w) * 4 + c], float(100 * h + 10 * w + c));

  Dataset mine;
  mine.shape = {2, 3, 4};
  mine.n_categories = 1;
  FeatureRecord rec{0, 0, Split::test, {}};
  for (std::size_t h = 0; h < 2; ++h)
    for (std::size_t w = 0; w < 3; ++w)
      for (std::size_t c = 0; c < 4; ++c) rec.features.push_back(float(100 * h + 10 * w + c));
  mine.records.push_back(rec);
  const auto out = testing::scratch_dir() / "striped.atnf";
  write_feature_file(mine, out);
  EXPECT_EQ(testing::slurp(out), testing::slurp(kDir / "striped.atnf"));
}

TEST(Interop, HeadChainMatchesReferenceProbabilities) {
  const auto head = read_head_file(kDir / "head.atnh");
  ASSERT_EQ(head.layers.size(), 2u);
  EXPECT_EQ(head.input_dim(), 12u);
  EXPECT_EQ(head.n_categories(), 4u);
  const auto samples = read_feature_file(kDir / "samples.atnf", {.require_all_splits = false});
  const auto ref = expected()["reference_probabilities"];
  ASSERT_EQ(samples.records.size(), ref.size());
  for (std::size_t r = 0; r < ref.size(); ++r) {
    const auto p = head_forward(head, std::span<const float>(samples.records[r].features));
    for (std::size_t k = 0; k < 4; ++k)
      EXPECT_NEAR(p.probabilities[k], ref[r][k].get<double>(), 1e-4);
  }
}

TEST(Interop, HeadFileReWritesIdentically) {
  const auto out = testing::scratch_dir() / "head.atnh";
  write_head_file(read_head_file(kDir / "head.atnh"), out);
  EXPECT_EQ(testing::slurp(out), testing::slurp(kDir / "head.atnh"));
}

TEST(Interop, TruncatedHeadIsRejected) {
  EXPECT_THROW(read_head_file(kDir / "head_truncated.atnh"), FormatError);
}

} // namespace
} // namespace attnboost
