#pragma once

// Task-set properties: difficulty (mean baseline error over the set), size
// (cardinality) and perceptual similarity (mean pairwise cosine similarity of
// category mean representations, over ordered pairs i != j).

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "attnboost/error.hpp"
#include "attnboost/feature_store.hpp"
#include "attnboost/head_model.hpp"

namespace attnboost {

struct CategoryStats {
  std::uint32_t category_id = 0;
  double baseline_accuracy = 0.0;
  std::vector<double> mean_representation;
};

// Which features define "perceptual similarity". Pooled uses the cached
// head-input features mean-pooled over spatial positions; an auxiliary
// dataset supplies one vector per record (same record order).
struct SimilaritySource {
  const Dataset* auxiliary = nullptr;
};

// Baseline accuracy on the val split under the unmodulated head; mean
// representations over the train split.
inline std::vector<CategoryStats>
compute_category_stats(const HeadModel& head, const Dataset& dataset,
                       SimilaritySource source = {}) {
  if (head.input_dim() != dataset.flat_dim())
    throw ShapeError("head input does not match dataset feature dimension");
  const Dataset& sim = source.auxiliary ? *source.auxiliary : dataset;
  if (source.auxiliary) {
    if (sim.records.size() != dataset.records.size())
      throw ShapeError("auxiliary similarity file has a different record count");
    for (std::size_t i = 0; i < sim.records.size(); ++i)
      if (sim.records[i].category_id != dataset.records[i].category_id ||
          sim.records[i].split != dataset.records[i].split)
        throw ShapeError("auxiliary similarity file disagrees on record " +
                         std::to_string(i));
  }
  const auto n = dataset.n_categories;
  std::vector<CategoryStats> out(n);
  std::vector<std::size_t> hits(n, 0), val_count(n, 0), train_count(n, 0);
  for (std::uint32_t c = 0; c < n; ++c) {
    out[c].category_id = c;
    out[c].mean_representation.assign(sim.shape.channels, 0.0);
  }
  std::vector<double> x(dataset.flat_dim());
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    const auto& rec = dataset.records[i];
    if (rec.split == Split::val) {
      std::copy(rec.features.begin(), rec.features.end(), x.begin());
      const auto logits = head_logits(head, x);
      ++val_count[rec.category_id];
      if (argmax(logits) == rec.category_id) ++hits[rec.category_id];
    } else if (rec.split == Split::train) {
      const auto pooled = pool_channels(sim.shape, sim.records[i].features);
      auto& mean = out[rec.category_id].mean_representation;
      for (std::size_t k = 0; k < pooled.size(); ++k) mean[k] += pooled[k];
      ++train_count[rec.category_id];
    }
  }
  for (std::uint32_t c = 0; c < n; ++c) {
    if (val_count[c] == 0 || train_count[c] == 0)
      throw Error("category " + std::to_string(c) +
                  " has an empty val or train split");
    out[c].baseline_accuracy =
        static_cast<double>(hits[c]) / static_cast<double>(val_count[c]);
    for (auto& v : out[c].mean_representation)
      v /= static_cast<double>(train_count[c]);
  }
  return out;
}

namespace detail {

inline const CategoryStats& lookup(std::span<const CategoryStats> stats,
                                   std::uint32_t c) {
  if (c < stats.size() && stats[c].category_id == c) return stats[c];
  for (const auto& s : stats)
    if (s.category_id == c) return s;
  throw Error("unknown category id " + std::to_string(c));
}

} // namespace detail

inline double difficulty(std::span<const std::uint32_t> categories,
                         std::span<const CategoryStats> stats) {
  if (categories.empty()) throw Error("difficulty of an empty set");
  double sum = 0.0;
  for (auto c : categories)
    sum += 1.0 - detail::lookup(stats, c).baseline_accuracy;
  return sum / static_cast<double>(categories.size());
}

inline double cosine_similarity(std::span<const double> a,
                                std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("representation length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  if (na == 0.0 || nb == 0.0) throw Error("zero-norm mean representation");
  // sqrt(na)*sqrt(nb) commutes exactly, so s(i,j) == s(j,i) bitwise.
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

inline double pairwise_similarity(std::uint32_t ci, std::uint32_t cj,
                                  std::span<const CategoryStats> stats) {
  return cosine_similarity(detail::lookup(stats, ci).mean_representation,
                           detail::lookup(stats, cj).mean_representation);
}

inline double set_similarity(std::span<const std::uint32_t> categories,
                             std::span<const CategoryStats> stats) {
  const auto n = categories.size();
  if (n < 2) throw Error("similarity needs at least two categories");
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      sum += pairwise_similarity(categories[i], categories[j], stats);
  return sum / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
}

inline std::size_t size(std::span<const std::uint32_t> categories) {
  return categories.size();
}

// Dense pairwise similarity table for search loops.
class SimilarityTable {
public:
  explicit SimilarityTable(std::span<const CategoryStats> stats)
      : n_(stats.size()), s_(n_ * n_, 1.0) {
    for (std::size_t i = 0; i < n_; ++i) {
      if (stats[i].category_id != i)
        throw Error("category stats must be ordered by category id");
      for (std::size_t j = i + 1; j < n_; ++j) {
        const double v = cosine_similarity(stats[i].mean_representation,
                                           stats[j].mean_representation);
        s_[i * n_ + j] = v;
        s_[j * n_ + i] = v;
      }
    }
  }

  double operator()(std::size_t i, std::size_t j) const { return s_[i * n_ + j]; }
  std::size_t size() const { return n_; }

private:
  std::size_t n_;
  std::vector<double> s_;
};

struct TaskSet {
  std::vector<std::uint32_t> categories; // ascending
  double difficulty = 0.0;
  std::size_t size = 0;
  double similarity = 0.0;
};

inline TaskSet make_task_set(std::vector<std::uint32_t> categories,
                             std::span<const CategoryStats> stats) {
  std::sort(categories.begin(), categories.end());
  if (std::adjacent_find(categories.begin(), categories.end()) !=
      categories.end())
    throw Error("duplicate category in task set");
  if (categories.size() < 2) throw Error("task set needs at least two categories");
  TaskSet t;
  t.difficulty = difficulty(categories, stats);
  t.similarity = set_similarity(categories, stats);
  t.size = categories.size();
  t.categories = std::move(categories);
  return t;
}

// Cache: `<dir>/category_stats.csv` (category_id,baseline_accuracy) plus
// `<dir>/category_means.atnf`, one record per category.
inline void write_category_stats(std::span<const CategoryStats> stats,
                                 const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "category_stats.csv");
  if (!csv) throw Error("cannot write category_stats.csv");
  csv << "category_id,baseline_accuracy\n" << std::setprecision(17);
  Dataset means;
  means.n_categories = static_cast<std::uint32_t>(stats.size());
  means.shape = {1, 1,
                 static_cast<std::uint32_t>(
                     stats.empty() ? 1 : stats[0].mean_representation.size())};
  for (const auto& s : stats) {
    csv << s.category_id << ',' << s.baseline_accuracy << '\n';
    FeatureRecord r;
    r.record_index = means.records.size();
    r.category_id = s.category_id;
    r.features.assign(s.mean_representation.begin(),
                      s.mean_representation.end());
    means.records.push_back(std::move(r));
  }
  write_feature_file(means, dir / "category_means.atnf");
}

// Means come back at single precision.
inline std::vector<CategoryStats>
read_category_stats(const std::filesystem::path& dir) {
  const auto means = read_feature_file(dir / "category_means.atnf",
                                       ReadOptions{.require_all_splits = false});
  std::ifstream csv(dir / "category_stats.csv");
  if (!csv) throw Error("cannot read category_stats.csv");
  std::string line;
  std::getline(csv, line);
  std::vector<CategoryStats> out(means.n_categories);
  std::size_t seen = 0;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::uint32_t id = 0;
    char comma = 0;
    double acc = 0.0;
    if (!(ss >> id >> comma >> acc) || id >= out.size())
      throw FormatError("bad category_stats.csv row: " + line);
    out[id].category_id = id;
    out[id].baseline_accuracy = acc;
    ++seen;
  }
  if (seen != out.size()) throw FormatError("category_stats.csv is incomplete");
  for (const auto& r : means.records)
    out[r.category_id].mean_representation.assign(r.features.begin(),
                                                  r.features.end());
  return out;
}

} // namespace attnboost
