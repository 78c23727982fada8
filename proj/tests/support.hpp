#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "attnboost/attnboost.hpp"

namespace attnboost::testing {

// Fresh scratch directory named after the running test.
inline std::filesystem::path scratch_dir() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  auto dir = std::filesystem::temp_directory_path() / "attnboost_tests" /
             (std::string(info->test_suite_name()) + "." + info->name());
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

inline Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index rows,
                                     Eigen::Index cols, double scale = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = scale * rng.normal();
  return m;
}

// Random head with the given width chain; hidden layers use ReLU.
inline HeadModel random_head(Rng& rng, const std::vector<std::size_t>& dims) {
  HeadModel h;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    DenseLayer l;
    const auto in = static_cast<Eigen::Index>(dims[i]);
    const auto out = static_cast<Eigen::Index>(dims[i + 1]);
    l.weights = random_matrix(rng, out, in, 1.0 / std::sqrt(double(in)));
    l.biases = random_matrix(rng, out, 1, 0.1).col(0);
    l.activation = i + 2 == dims.size() ? Activation::identity : Activation::relu;
    h.layers.push_back(std::move(l));
  }
  return h;
}

inline SyntheticConfig small_synthetic(std::uint32_t categories = 8,
                                       std::uint32_t dim = 16) {
  SyntheticConfig c;
  c.n_categories = categories;
  c.train_per_category = 40;
  c.val_per_category = 20;
  c.test_per_category = 20;
  c.shape = {1, 1, dim};
  c.n_clusters = std::min(categories, 4u);
  return c;
}

inline std::vector<CategoryStats> make_stats(const std::vector<double>& acc,
                                             const std::vector<std::vector<double>>& means) {
  std::vector<CategoryStats> s;
  for (std::size_t i = 0; i < acc.size(); ++i)
    s.push_back({static_cast<std::uint32_t>(i), acc[i], means[i]});
  return s;
}

// Random stats: accuracies in [0.2, 1] and positive mean vectors.
inline std::vector<CategoryStats> random_stats(Rng& rng, std::size_t n,
                                               std::size_t dim) {
  std::vector<CategoryStats> s(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i].category_id = static_cast<std::uint32_t>(i);
    s[i].baseline_accuracy = rng.uniform(0.2, 1.0);
    s[i].mean_representation.resize(dim);
    for (auto& v : s[i].mean_representation) v = rng.uniform(0.0, 1.0);
  }
  return s;
}

} // namespace attnboost::testing
