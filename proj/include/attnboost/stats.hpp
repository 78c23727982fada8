#pragma once

// Rank correlations, least squares, and resampling significance for the
// property-versus-accuracy-change analysis.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attnboost/error.hpp"
#include "attnboost/random.hpp"
#include "attnboost/results.hpp"

namespace attnboost::stats {

struct PairedSample {
  std::vector<double> x;
  std::vector<double> y;

  std::size_t n() const { return x.size(); }

  void validate() const {
    if (x.size() != y.size()) throw Error("paired sample lengths differ");
    if (x.size() < 3) throw Error("paired sample needs n >= 3");
    for (std::size_t i = 0; i < x.size(); ++i)
      if (!std::isfinite(x[i]) || !std::isfinite(y[i]))
        throw Error("paired sample contains a non-finite value");
  }
};

// 1-based ranks; tied values share the mean of their positions.
inline std::vector<double> average_ranks(std::span<const double> v) {
  const auto n = v.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double pearson_correlation(std::span<const double> x,
                                  std::span<const double> y) {
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw Error("zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

inline double spearman_rho(const PairedSample& s) {
  s.validate();
  const auto rx = average_ranks(s.x);
  const auto ry = average_ranks(s.y);
  try {
    return pearson_correlation(rx, ry);
  } catch (const Error&) {
    throw Error("spearman rho undefined: zero rank variance");
  }
}

namespace detail {

// Sorts `v` and returns the number of inversions removed.
inline std::int64_t merge_count(std::vector<double>& v, std::vector<double>& buf,
                                std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::int64_t swaps = merge_count(v, buf, lo, mid) + merge_count(v, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      swaps += static_cast<std::int64_t>(mid - i);
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + static_cast<long>(lo), buf.begin() + static_cast<long>(hi),
            v.begin() + static_cast<long>(lo));
  return swaps;
}

// Pairs tied within runs of equal values of an already sorted sequence.
template <typename Eq>
std::int64_t tied_pairs(std::size_t n, Eq equal_to_prev) {
  std::int64_t total = 0, run = 1;
  for (std::size_t i = 1; i < n; ++i) {
    if (equal_to_prev(i)) {
      ++run;
    } else {
      total += run * (run - 1) / 2;
      run = 1;
    }
  }
  return total + run * (run - 1) / 2;
}

} // namespace detail

// Pair counts behind tau-b, kept integral so every route lands on the same
// floating-point result.
struct KendallCounts {
  std::int64_t n0 = 0;           // n(n-1)/2
  std::int64_t ties_x = 0;       // pairs tied in x (including joint ties)
  std::int64_t ties_y = 0;       // pairs tied in y (including joint ties)
  std::int64_t concordant_minus_discordant = 0;
};

inline double tau_b_from_counts(const KendallCounts& k) {
  const double denom = std::sqrt(static_cast<double>(k.n0 - k.ties_x) *
                                 static_cast<double>(k.n0 - k.ties_y));
  if (denom == 0.0) throw Error("kendall tau-b undefined: all values tied");
  return static_cast<double>(k.concordant_minus_discordant) / denom;
}

// O(n log n) counting (Knight's algorithm).
inline KendallCounts kendall_counts(std::span<const double> x,
                                    std::span<const double> y) {
  const auto n = x.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return x[a] < x[b] || (x[a] == x[b] && y[a] < y[b]);
  });
  KendallCounts k;
  k.n0 = static_cast<std::int64_t>(n) * static_cast<std::int64_t>(n - 1) / 2;
  k.ties_x = detail::tied_pairs(n, [&](std::size_t i) {
    return x[idx[i]] == x[idx[i - 1]];
  });
  const std::int64_t joint = detail::tied_pairs(n, [&](std::size_t i) {
    return x[idx[i]] == x[idx[i - 1]] && y[idx[i]] == y[idx[i - 1]];
  });
  std::vector<double> ys(n), buf(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = y[idx[i]];
  const std::int64_t swaps = detail::merge_count(ys, buf, 0, n);
  k.ties_y = detail::tied_pairs(n, [&](std::size_t i) { return ys[i] == ys[i - 1]; });
  k.concordant_minus_discordant =
      k.n0 - k.ties_x - k.ties_y + joint - 2 * swaps;
  return k;
}

inline double kendall_tau_b(const PairedSample& s) {
  s.validate();
  return tau_b_from_counts(kendall_counts(s.x, s.y));
}

struct Regression {
  double beta0 = 0.0;
  double beta1 = 0.0;
  double r_squared = 0.0;
};

// Ordinary least squares with intercept. A constant response gives slope 0
// and R^2 = 0.
inline Regression linear_regression(const PairedSample& s) {
  s.validate();
  const auto n = static_cast<double>(s.n());
  const double mx = std::accumulate(s.x.begin(), s.x.end(), 0.0) / n;
  const double my = std::accumulate(s.y.begin(), s.y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < s.n(); ++i) {
    const double dx = s.x[i] - mx, dy = s.y[i] - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (sxx == 0.0) throw Error("linear regression undefined: degenerate x");
  Regression r;
  r.beta1 = sxy / sxx;
  r.beta0 = my - r.beta1 * mx;
  if (syy == 0.0) {
    r.r_squared = 0.0;
    return r;
  }
  double ss_res = 0.0;
  for (std::size_t i = 0; i < s.n(); ++i) {
    const double e = s.y[i] - (r.beta0 + r.beta1 * s.x[i]);
    ss_res += e * e;
  }
  r.r_squared = 1.0 - ss_res / syy;
  return r;
}

enum class Statistic { rho, tau_b, slope };

inline double compute(Statistic which, const PairedSample& s) {
  switch (which) {
  case Statistic::rho: return spearman_rho(s);
  case Statistic::tau_b: return kendall_tau_b(s);
  case Statistic::slope: return linear_regression(s).beta1;
  }
  return 0.0;
}

// Two-sided permutation p-value with the add-one estimator. Permutation i is
// drawn from its own stream derived from (seed, i), so the permutation set
// is fixed by the seed regardless of evaluation order.
inline double permutation_p_value(const PairedSample& s, Statistic which,
                                  std::uint32_t n_permutations,
                                  std::uint64_t seed) {
  if (n_permutations < 99) throw Error("need at least 99 permutations");
  const double observed = std::abs(compute(which, s));
  // Relative slack so the identity permutation always counts as extreme.
  const double threshold = observed * (1.0 - 1e-12);
  PairedSample perm{s.x, s.y};
  std::uint64_t extreme = 0;
  for (std::uint32_t i = 0; i < n_permutations; ++i) {
    perm.y = s.y;
    Rng rng(derive_seed(seed, "permutation", i));
    rng.shuffle(std::span<double>(perm.y));
    if (std::abs(compute(which, perm)) >= threshold) ++extreme;
  }
  return static_cast<double>(1 + extreme) /
         static_cast<double>(n_permutations + 1);
}

// Percentile bootstrap interval for the intercept; resamples with no spread
// in x are skipped.
inline std::pair<double, double>
bootstrap_intercept_interval(const PairedSample& s, std::uint32_t n_resamples,
                             std::uint64_t seed, double level = 0.95) {
  s.validate();
  std::vector<double> b0;
  b0.reserve(n_resamples);
  PairedSample r{std::vector<double>(s.n()), std::vector<double>(s.n())};
  for (std::uint32_t i = 0; i < n_resamples; ++i) {
    Rng rng(derive_seed(seed, "bootstrap", i));
    for (std::size_t k = 0; k < s.n(); ++k) {
      const auto j = static_cast<std::size_t>(rng.below(s.n()));
      r.x[k] = s.x[j];
      r.y[k] = s.y[j];
    }
    try {
      b0.push_back(linear_regression(r).beta0);
    } catch (const Error&) {
    }
  }
  if (b0.empty()) throw Error("bootstrap produced no valid resamples");
  std::sort(b0.begin(), b0.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(b0.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, b0.size() - 1);
    return b0[lo] + (pos - static_cast<double>(lo)) * (b0[hi] - b0[lo]);
  };
  const double tail = 0.5 * (1.0 - level);
  return {quantile(tail), quantile(1.0 - tail)};
}

struct StatsConfig {
  std::uint32_t n_permutations = 10000;
  std::uint32_t n_bootstrap = 10000;
  double significance = 0.001; // values with p >= this print in parentheses
  std::uint64_t seed = 0;
};

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct StatsRow {
  std::string label;     // A..F
  GroupKind property = GroupKind::difficulty;
  bool in_set = true;
  std::size_t n = 0;
  double spearman_rho = kNaN;
  double kendall_tau_b = kNaN;
  double beta0 = kNaN;
  double beta1 = kNaN;
  double r_squared = kNaN;
  double p_rho = kNaN;
  double p_tau = kNaN;
  double p_beta1 = kNaN;
  double beta0_ci_low = kNaN;
  double beta0_ci_high = kNaN;
  bool degenerate = false;
};

inline PairedSample sample_for(const std::vector<ExperimentResult>& results,
                               GroupKind kind, bool in_set) {
  PairedSample s;
  for (const auto& r : results) {
    if (r.group_kind != kind) continue;
    s.x.push_back(kind == GroupKind::size ? std::log2(r.property_value)
                                          : r.property_value);
    s.y.push_back(in_set ? r.in_set_delta : r.out_of_set_delta);
  }
  return s;
}

inline StatsRow analyse(const PairedSample& s, const StatsConfig& cfg,
                        std::uint64_t seed) {
  StatsRow row;
  row.n = s.n();
  s.validate();
  try {
    const auto reg = linear_regression(s);
    row.beta0 = reg.beta0;
    row.beta1 = reg.beta1;
    row.r_squared = reg.r_squared;
  } catch (const Error&) {
    row.degenerate = true;
    return row;
  }
  const bool flat_y = std::all_of(s.y.begin(), s.y.end(),
                                  [&](double v) { return v == s.y.front(); });
  if (flat_y) {
    row.degenerate = true;
    return row;
  }
  row.spearman_rho = spearman_rho(s);
  row.kendall_tau_b = kendall_tau_b(s);
  row.p_rho = permutation_p_value(s, Statistic::rho, cfg.n_permutations,
                                  derive_seed(seed, "rho", 0));
  row.p_tau = permutation_p_value(s, Statistic::tau_b, cfg.n_permutations,
                                  derive_seed(seed, "tau", 0));
  row.p_beta1 = permutation_p_value(s, Statistic::slope, cfg.n_permutations,
                                    derive_seed(seed, "slope", 0));
  const auto ci = bootstrap_intercept_interval(s, cfg.n_bootstrap,
                                               derive_seed(seed, "beta0", 0));
  row.beta0_ci_low = ci.first;
  row.beta0_ci_high = ci.second;
  return row;
}

// Six rows: (difficulty, size, similarity) x (in-set, out-of-set), labelled
// A..F in that order. Size enters as log2(size).
inline std::vector<StatsRow>
build_table(const std::vector<ExperimentResult>& results,
            const StatsConfig& cfg) {
  std::vector<StatsRow> rows;
  char label = 'A';
  for (auto kind : kAllGroupKinds) {
    for (bool in_set : {true, false}) {
      const auto s = sample_for(results, kind, in_set);
      if (s.n() == 0)
        throw Error(std::string("missing group: ") + to_string(kind));
      auto row = analyse(s, cfg, derive_seed(cfg.seed, to_string(kind), in_set ? 0 : 1));
      row.label = std::string(1, label++);
      row.property = kind;
      row.in_set = in_set;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

namespace detail {

inline std::string num(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream ss;
  ss << std::setprecision(17) << v;
  return ss.str();
}

inline nlohmann::json json_num(double v) {
  if (std::isnan(v)) return nullptr;
  return v;
}

} // namespace detail

inline bool parenthesised(double p, const StatsConfig& cfg) {
  return std::isnan(p) || p >= cfg.significance;
}

inline void write_table_csv(const std::vector<StatsRow>& rows,
                            const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "label,property,test_task,n,spearman_rho,kendall_tau_b,beta0,beta1,"
         "r_squared,p_rho,p_tau,p_beta1,degenerate\n";
  for (const auto& r : rows)
    out << r.label << ',' << to_string(r.property) << ','
        << (r.in_set ? "in-set" : "out-of-set") << ',' << r.n << ','
        << detail::num(r.spearman_rho) << ',' << detail::num(r.kendall_tau_b)
        << ',' << detail::num(r.beta0) << ',' << detail::num(r.beta1) << ','
        << detail::num(r.r_squared) << ',' << detail::num(r.p_rho) << ','
        << detail::num(r.p_tau) << ',' << detail::num(r.p_beta1) << ','
        << (r.degenerate ? 1 : 0) << '\n';
}

inline nlohmann::json table_json(const std::vector<StatsRow>& rows,
                                 const StatsConfig& cfg,
                                 const nlohmann::json& metadata = {}) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : rows) {
    arr.push_back({
        {"label", r.label},
        {"property", to_string(r.property)},
        {"test_task", r.in_set ? "in-set" : "out-of-set"},
        {"n", r.n},
        {"spearman_rho", detail::json_num(r.spearman_rho)},
        {"kendall_tau_b", detail::json_num(r.kendall_tau_b)},
        {"beta0", detail::json_num(r.beta0)},
        {"beta1", detail::json_num(r.beta1)},
        {"r_squared", detail::json_num(r.r_squared)},
        {"p_rho", detail::json_num(r.p_rho)},
        {"p_tau", detail::json_num(r.p_tau)},
        {"p_beta1", detail::json_num(r.p_beta1)},
        {"beta0_ci95", {detail::json_num(r.beta0_ci_low),
                        detail::json_num(r.beta0_ci_high)}},
        {"parenthesised",
         {{"spearman_rho", parenthesised(r.p_rho, cfg)},
          {"kendall_tau_b", parenthesised(r.p_tau, cfg)},
          {"beta1", parenthesised(r.p_beta1, cfg)}}},
        {"degenerate", r.degenerate},
    });
  }
  return {{"rows", arr},
          {"n_permutations", cfg.n_permutations},
          {"n_bootstrap", cfg.n_bootstrap},
          {"significance", cfg.significance},
          {"metadata", metadata}};
}

} // namespace attnboost::stats
