#pragma once

// Cached latent features: the ATNF binary format, the in-memory Dataset and
// the seeded synthetic generator used for desk-scale runs.
//
// ATNF layout (little-endian):
//   "ATNF" | version u32 = 1 | n_records u64 | height u32 | width u32 |
//   channels u32 | n_categories u32 |
//   n_records x { category_id u32 | split u8 | flat_dim x f32 }
// Values within a record are ordered height-major, then width, then channel.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "attnboost/binary_io.hpp"
#include "attnboost/error.hpp"
#include "attnboost/random.hpp"

namespace attnboost {

struct FeatureShape {
  std::uint32_t height = 1;
  std::uint32_t width = 1;
  std::uint32_t channels = 1;

  std::size_t flat_dim() const {
    return std::size_t{height} * width * channels;
  }
  std::size_t spatial() const { return std::size_t{height} * width; }
  bool valid() const { return height >= 1 && width >= 1 && channels >= 1; }

  friend bool operator==(const FeatureShape&, const FeatureShape&) = default;
};

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };

inline constexpr std::array<Split, 3> kAllSplits{Split::train, Split::val,
                                                 Split::test};

inline const char* to_string(Split s) {
  switch (s) {
  case Split::train: return "train";
  case Split::val: return "val";
  case Split::test: return "test";
  }
  return "?";
}

struct FeatureRecord {
  std::uint64_t record_index = 0;
  std::uint32_t category_id = 0;
  Split split = Split::train;
  std::vector<float> features;

  friend bool operator==(const FeatureRecord&, const FeatureRecord&) = default;
};

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Dataset {
  FeatureShape shape;
  std::uint32_t n_categories = 0;
  std::vector<FeatureRecord> records;
  std::vector<std::string> category_names;

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.shape == b.shape && a.n_categories == b.n_categories &&
           a.records == b.records;
  }

  std::size_t flat_dim() const { return shape.flat_dim(); }

  std::vector<std::size_t> indices(Split split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records.size(); ++i)
      if (records[i].split == split) out.push_back(i);
    return out;
  }

  // Records of `split` whose category satisfies `keep(category_id)`.
  template <typename Pred>
  std::vector<std::size_t> indices(Split split, Pred keep) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records.size(); ++i)
      if (records[i].split == split && keep(records[i].category_id))
        out.push_back(i);
    return out;
  }

  // Stacks the chosen records into a row-per-record double matrix.
  RowMatrix matrix(const std::vector<std::size_t>& rows) const {
    RowMatrix m(static_cast<Eigen::Index>(rows.size()),
                static_cast<Eigen::Index>(flat_dim()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto& f = records[rows[r]].features;
      for (std::size_t j = 0; j < f.size(); ++j)
        m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = f[j];
    }
    return m;
  }

  std::vector<int> labels(const std::vector<std::size_t>& rows) const {
    std::vector<int> out;
    out.reserve(rows.size());
    for (auto i : rows) out.push_back(static_cast<int>(records[i].category_id));
    return out;
  }

  // Throws FormatError describing the first broken invariant.
  void validate(bool require_all_splits = true) const {
    if (!shape.valid()) throw FormatError("feature shape must be positive");
    if (n_categories == 0) throw FormatError("dataset has no categories");
    std::vector<std::array<std::size_t, 3>> counts(n_categories, {0, 0, 0});
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto& r = records[i];
      if (r.record_index != i) throw FormatError("record_index not dense");
      if (r.category_id >= n_categories)
        throw FormatError("category_id out of range");
      if (static_cast<unsigned>(r.split) > 2) throw FormatError("bad split");
      if (r.features.size() != flat_dim())
        throw FormatError("record/shape mismatch");
      for (float v : r.features)
        if (!std::isfinite(v)) throw FormatError("non-finite feature value");
      ++counts[r.category_id][static_cast<unsigned>(r.split)];
    }
    if (require_all_splits)
      for (const auto& c : counts)
        for (auto n : c)
          if (n == 0) throw FormatError("category with an empty split");
  }
};

struct ReadOptions {
  // Stats caches hold one record per category and no split structure.
  bool require_all_splits = true;
};

inline void write_feature_file(const Dataset& dataset,
                               const std::filesystem::path& path) {
  dataset.validate(false);
  io::Writer w(path);
  w.magic("ATNF");
  w.put<std::uint32_t>(1);
  w.put<std::uint64_t>(dataset.records.size());
  w.put<std::uint32_t>(dataset.shape.height);
  w.put<std::uint32_t>(dataset.shape.width);
  w.put<std::uint32_t>(dataset.shape.channels);
  w.put<std::uint32_t>(dataset.n_categories);
  for (const auto& r : dataset.records) {
    w.put<std::uint32_t>(r.category_id);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(r.split));
    for (float v : r.features) w.put<float>(v);
  }
  w.finish();
}

inline Dataset read_feature_file(const std::filesystem::path& path,
                                 ReadOptions options = {}) {
  io::Reader r(path);
  r.expect_magic("ATNF");
  r.expect_version(1);
  Dataset d;
  const auto n_records = r.get<std::uint64_t>();
  d.shape.height = r.get<std::uint32_t>();
  d.shape.width = r.get<std::uint32_t>();
  d.shape.channels = r.get<std::uint32_t>();
  d.n_categories = r.get<std::uint32_t>();
  if (!d.shape.valid()) throw FormatError("feature shape must be positive");
  const auto dim = d.shape.flat_dim();
  // Reject absurd headers before allocating.
  const auto file_size = std::filesystem::file_size(path);
  if (n_records > 0 && (file_size / n_records) < 5 + 4 * dim)
    throw FormatError("truncated payload");
  d.records.resize(n_records);
  for (std::uint64_t i = 0; i < n_records; ++i) {
    auto& rec = d.records[i];
    rec.record_index = i;
    rec.category_id = r.get<std::uint32_t>();
    const auto split = r.get<std::uint8_t>();
    if (split > 2) throw FormatError("bad split");
    rec.split = static_cast<Split>(split);
    rec.features.resize(dim);
    for (auto& v : rec.features) v = r.get<float>();
  }
  if (!r.at_end()) throw FormatError("trailing bytes after payload");
  d.validate(options.require_all_splits);
  return d;
}

// Companion traceability listing: record_index,source_id.
inline void write_manifest_csv(const std::filesystem::path& path,
                               const std::vector<std::string>& source_ids) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open for writing: " + path.string());
  out << "record_index,source_id\n";
  for (std::size_t i = 0; i < source_ids.size(); ++i)
    out << i << ',' << source_ids[i] << '\n';
}

// Sum of every stored value, accumulated in double in record order.
inline double feature_checksum(const Dataset& d) {
  double sum = 0.0;
  for (const auto& r : d.records)
    for (float v : r.features) sum += v;
  return sum;
}

// Spatial mean-pooling of one record to a per-channel vector.
inline std::vector<double> pool_channels(const FeatureShape& shape,
                                         const std::vector<float>& features) {
  std::vector<double> out(shape.channels, 0.0);
  const auto spatial = shape.spatial();
  for (std::size_t p = 0; p < spatial; ++p)
    for (std::size_t c = 0; c < shape.channels; ++c)
      out[c] += features[p * shape.channels + c];
  for (auto& v : out) v /= static_cast<double>(spatial);
  return out;
}

struct SyntheticConfig {
  std::uint32_t n_categories = 64;
  std::uint32_t train_per_category = 200;
  std::uint32_t val_per_category = 50;
  std::uint32_t test_per_category = 50;
  FeatureShape shape{1, 1, 64};
  // Categories are dealt round-robin into clusters that share a direction.
  std::uint32_t n_clusters = 8;
  // Weight of the direction common to every prototype.
  double shared_weight = 0.1;
  // Per-cluster blend weights are spread evenly over this range; larger
  // weights make the cluster's prototypes more alike.
  double cluster_weight_min = 0.05;
  double cluster_weight_max = 0.75;
  double prototype_norm = 1.0;
  // Per-category isotropic noise scale, spread evenly over this range within
  // every cluster so noise and cluster tightness are not confounded.
  double noise_min = 0.05;
  double noise_max = 0.3;
  // Per-category clutter: each sample also carries this multiple of a
  // uniformly drawn other category's prototype. Spread like the noise.
  double clutter_min = 0.0;
  double clutter_max = 0.0;
  // Fraction of dimensions active in each building-block direction; 1 gives
  // dense Gaussian directions, below 1 gives sparse nonnegative ones.
  double support_fraction = 1.0;
  // Clamp samples at zero, like post-ReLU trunk features.
  bool rectify = false;

  void validate() const {
    if (n_categories == 0 || train_per_category == 0 ||
        val_per_category == 0 || test_per_category == 0)
      throw ConfigError("synthetic counts must be positive");
    if (!shape.valid()) throw ConfigError("synthetic shape must be positive");
    if (n_clusters == 0 || n_clusters > n_categories)
      throw ConfigError("n_clusters must be in [1, n_categories]");
    if (shared_weight < 0 || cluster_weight_min < 0 ||
        cluster_weight_max < cluster_weight_min ||
        shared_weight + cluster_weight_max > 1.0)
      throw ConfigError("blend weights must be nonnegative and sum to <= 1");
    if (noise_min < 0 || noise_max < noise_min)
      throw ConfigError("noise range must satisfy 0 <= min <= max");
    if (clutter_min < 0 || clutter_max < clutter_min)
      throw ConfigError("clutter range must satisfy 0 <= min <= max");
    if (!(support_fraction > 0 && support_fraction <= 1))
      throw ConfigError("support_fraction must be in (0, 1]");
    if (prototype_norm <= 0) throw ConfigError("prototype_norm must be > 0");
  }
};

namespace detail {

// Dense Gaussian direction, or a nonnegative one supported on a random
// subset of round(support_fraction * dim) coordinates.
inline std::vector<double> random_unit(Rng& rng, std::size_t dim,
                                       double support_fraction = 1.0) {
  std::vector<double> v(dim, 0.0);
  if (support_fraction >= 1.0) {
    for (auto& x : v) x = rng.normal();
  } else {
    const auto k = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(support_fraction * static_cast<double>(dim))));
    std::vector<std::size_t> idx(dim);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(idx));
    for (std::size_t i = 0; i < k; ++i) v[idx[i]] = std::abs(rng.normal()) + 1e-3;
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

// Evenly spaced levels over [lo, hi], dealt in a shuffled order.
inline std::vector<double> stratified_levels(Rng& rng, std::size_t n,
                                             double lo, double hi) {
  std::vector<double> levels(n);
  for (std::size_t i = 0; i < n; ++i)
    levels[i] = n == 1 ? 0.5 * (lo + hi)
                       : lo + (hi - lo) * static_cast<double>(i) /
                                  static_cast<double>(n - 1);
  rng.shuffle(std::span<double>(levels));
  return levels;
}

} // namespace detail

struct SyntheticPrototypes {
  std::vector<std::vector<double>> prototypes;
  std::vector<double> noise_scales;
  std::vector<double> clutter;
  std::vector<std::uint32_t> cluster_of;
};

inline SyntheticPrototypes make_prototypes(const SyntheticConfig& cfg,
                                           std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, "prototypes", 0));
  const auto dim = cfg.shape.flat_dim();
  const double sf = cfg.support_fraction;
  const auto shared = detail::random_unit(rng, dim, sf);
  const auto cluster_weights = detail::stratified_levels(
      rng, cfg.n_clusters, cfg.cluster_weight_min, cfg.cluster_weight_max);
  std::vector<std::vector<double>> cluster_dirs;
  for (std::uint32_t k = 0; k < cfg.n_clusters; ++k)
    cluster_dirs.push_back(detail::random_unit(rng, dim, sf));

  SyntheticPrototypes out;
  out.noise_scales.assign(cfg.n_categories, 0.0);
  out.clutter.assign(cfg.n_categories, 0.0);
  out.cluster_of.resize(cfg.n_categories);
  std::vector<std::vector<std::uint32_t>> members(cfg.n_clusters);
  for (std::uint32_t c = 0; c < cfg.n_categories; ++c) {
    out.cluster_of[c] = c % cfg.n_clusters;
    members[c % cfg.n_clusters].push_back(c);
  }
  for (const auto& m : members) {
    const auto noise =
        detail::stratified_levels(rng, m.size(), cfg.noise_min, cfg.noise_max);
    const auto clutter = detail::stratified_levels(rng, m.size(), cfg.clutter_min,
                                                   cfg.clutter_max);
    for (std::size_t i = 0; i < m.size(); ++i) {
      out.noise_scales[m[i]] = noise[i];
      out.clutter[m[i]] = clutter[i];
    }
  }
  for (std::uint32_t c = 0; c < cfg.n_categories; ++c) {
    const double wk = cluster_weights[out.cluster_of[c]];
    const auto own = detail::random_unit(rng, dim, sf);
    const double a = std::sqrt(cfg.shared_weight);
    const double b = std::sqrt(wk);
    const double e = std::sqrt(std::max(0.0, 1.0 - cfg.shared_weight - wk));
    std::vector<double> p(dim);
    double norm = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      p[j] = a * shared[j] + b * cluster_dirs[out.cluster_of[c]][j] + e * own[j];
      norm += p[j] * p[j];
    }
    norm = std::sqrt(norm);
    for (auto& x : p) x *= cfg.prototype_norm / norm;
    out.prototypes.push_back(std::move(p));
  }
  return out;
}

// Records are laid out split-major (train, val, test), then by category.
inline Dataset generate_synthetic(const SyntheticConfig& cfg,
                                  std::uint64_t seed) {
  const auto protos = make_prototypes(cfg, seed);
  Dataset d;
  d.shape = cfg.shape;
  d.n_categories = cfg.n_categories;
  const std::array<std::uint32_t, 3> per_split{
      cfg.train_per_category, cfg.val_per_category, cfg.test_per_category};
  const auto dim = cfg.shape.flat_dim();
  for (auto split : kAllSplits) {
    for (std::uint32_t c = 0; c < cfg.n_categories; ++c) {
      Rng rng(derive_seed(seed, "samples",
                          std::uint64_t{c} * 3 + static_cast<unsigned>(split)));
      const double sigma = protos.noise_scales[c];
      const double clutter = protos.clutter[c];
      for (std::uint32_t n = 0; n < per_split[static_cast<unsigned>(split)];
           ++n) {
        FeatureRecord rec;
        rec.record_index = d.records.size();
        rec.category_id = c;
        rec.split = split;
        rec.features.resize(dim);
        const std::vector<double>* distractor = nullptr;
        if (clutter > 0.0 && cfg.n_categories > 1) {
          auto d = static_cast<std::uint32_t>(rng.below(cfg.n_categories - 1));
          if (d >= c) ++d;
          distractor = &protos.prototypes[d];
        }
        for (std::size_t j = 0; j < dim; ++j) {
          double v = protos.prototypes[c][j] + sigma * rng.normal();
          if (distractor) v += clutter * (*distractor)[j];
          if (cfg.rectify) v = std::max(0.0, v);
          rec.features[j] = static_cast<float>(v);
        }
        d.records.push_back(std::move(rec));
      }
    }
  }
  return d;
}

} // namespace attnboost
