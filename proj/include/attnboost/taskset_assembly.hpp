#pragma once

// Builds groups of task sets that vary one property while holding the others
// near group anchors, using seeded swap-based local search with restarts.
//
// Search objective for one set:
//   J = w_v * (varied - target)^2
//     + sum_held w_h * max(0, |held - anchor| - tolerance)^2
// A set is accepted once |varied - target| <= target_tolerance and every
// held property is inside its tolerance band. Several candidates are
// collected per target, each searched inside a narrower sub-band centred at
// a different point of the hold band; one per target is then chosen by
// coordinate descent so the held properties are uncorrelated with the
// varied one across the group.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attnboost/error.hpp"
#include "attnboost/random.hpp"
#include "attnboost/taskset_properties.hpp"

namespace attnboost {

enum class GroupKind { difficulty, size, similarity };

inline const char* to_string(GroupKind k) {
  switch (k) {
  case GroupKind::difficulty: return "difficulty";
  case GroupKind::size: return "size";
  case GroupKind::similarity: return "similarity";
  }
  return "?";
}

inline GroupKind parse_group_kind(const std::string& s) {
  if (s == "difficulty") return GroupKind::difficulty;
  if (s == "size") return GroupKind::size;
  if (s == "similarity") return GroupKind::similarity;
  throw ConfigError("unknown group kind '" + s + "'");
}

inline constexpr GroupKind kAllGroupKinds[] = {
    GroupKind::difficulty, GroupKind::size, GroupKind::similarity};

struct HoldTolerances {
  double difficulty = 0.05;
  double similarity = 0.05;
};

struct AssemblySpec {
  GroupKind kind = GroupKind::difficulty;
  std::uint32_t n_task_sets = 25;
  std::uint32_t fixed_size = 16;
  // Distinct sizes; each is repeated n_task_sets / size_ladder.size() times.
  std::vector<std::uint32_t> size_ladder;
  // Ascending, one per set (difficulty and similarity groups).
  std::vector<double> target_values;
  HoldTolerances hold;
  double target_tolerance = 0.005;
  // Swap evaluations allowed per task set, restarts included.
  std::uint64_t max_iterations = 200000;
  // Candidates gathered per target before group-level selection, and the
  // half-width of each candidate's sub-band as a fraction of the tolerance.
  std::uint32_t candidates_per_set = 9;
  double candidate_band_fraction = 0.2;
  double max_held_correlation = 0.3;
  std::optional<double> difficulty_anchor;
  std::optional<double> similarity_anchor;
  std::uint64_t seed = 0;

  std::uint32_t set_size(std::size_t index) const {
    if (kind != GroupKind::size) return fixed_size;
    const auto repeats = n_task_sets / size_ladder.size();
    return size_ladder[index / repeats];
  }

  void validate() const {
    if (n_task_sets == 0) throw ConfigError("n_task_sets must be positive");
    if (kind == GroupKind::size) {
      if (size_ladder.empty()) throw ConfigError("size group needs a ladder");
      for (auto s : size_ladder)
        if (s < 2) throw ConfigError("ladder entries must be >= 2");
      if (n_task_sets % size_ladder.size() != 0)
        throw ConfigError("n_task_sets must be a multiple of the ladder length");
    } else {
      if (fixed_size < 2) throw ConfigError("fixed_size must be >= 2");
      if (target_values.size() != n_task_sets)
        throw ConfigError("need one target value per task set");
      if (!std::is_sorted(target_values.begin(), target_values.end()))
        throw ConfigError("targets must be sorted ascending");
    }
    if (hold.difficulty <= 0 || hold.similarity <= 0 || target_tolerance <= 0)
      throw ConfigError("tolerances must be positive");
    if (max_iterations == 0) throw ConfigError("max_iterations must be positive");
  }
};

struct SetDeviations {
  double varied = 0.0;     // achieved - target (0 for the size group)
  double difficulty = 0.0; // achieved - anchor
  double similarity = 0.0; // achieved - anchor
  double size = 0.0;       // achieved - required size
};

struct TaskSetGroup {
  GroupKind kind = GroupKind::difficulty;
  std::vector<TaskSet> task_sets;
  std::vector<double> targets; // varied-property targets (the size itself for size)
  std::vector<SetDeviations> achieved_deviations;
  double difficulty_anchor = 0.0;
  double similarity_anchor = 0.0;
};

// Value plotted/analysed on the x axis for a set in this group.
inline double property_value(GroupKind kind, const TaskSet& t) {
  switch (kind) {
  case GroupKind::difficulty: return t.difficulty;
  case GroupKind::size: return std::log2(static_cast<double>(t.size));
  case GroupKind::similarity: return t.similarity;
  }
  return 0.0;
}

inline double pearson(std::span<const double> x, std::span<const double> y) {
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

struct GroupAnchors {
  double difficulty = 0.0;
  double similarity = 0.0;
};

inline GroupAnchors global_anchors(std::span<const CategoryStats> stats) {
  std::vector<std::uint32_t> all(stats.size());
  std::iota(all.begin(), all.end(), 0u);
  return {difficulty(all, stats), set_similarity(all, stats)};
}

namespace detail {

// Incremental state for one candidate set.
class SetSearch {
public:
  SetSearch(std::span<const CategoryStats> stats, const SimilarityTable& sim)
      : sim_(sim), n_(stats.size()), error_(n_), in_(n_, false),
        rowsum_(n_, 0.0) {
    for (std::size_t c = 0; c < n_; ++c) error_[c] = 1.0 - stats[c].baseline_accuracy;
  }

  void reset(std::vector<std::uint32_t> members) {
    members_ = std::move(members);
    std::fill(in_.begin(), in_.end(), false);
    for (auto m : members_) in_[m] = true;
    error_sum_ = 0.0;
    for (auto m : members_) error_sum_ += error_[m];
    for (std::size_t c = 0; c < n_; ++c) {
      double s = 0.0;
      for (auto m : members_)
        if (m != c) s += sim_(c, m);
      rowsum_[c] = s;
    }
    pair_sum_ = 0.0;
    for (auto m : members_) pair_sum_ += rowsum_[m];
    pair_sum_ /= 2.0;
  }

  std::size_t k() const { return members_.size(); }
  double difficulty() const { return error_sum_ / static_cast<double>(k()); }
  double similarity() const { return pair_sum_ / pairs(); }

  // Properties after replacing member `out` by non-member `in`.
  std::pair<double, double> after_swap(std::uint32_t out, std::uint32_t in) const {
    const double e = error_sum_ - error_[out] + error_[in];
    const double p = pair_sum_ - rowsum_[out] + rowsum_[in] - sim_(out, in);
    return {e / static_cast<double>(k()), p / pairs()};
  }

  void swap(std::size_t member_slot, std::uint32_t in) {
    auto v = members_;
    v[member_slot] = in;
    reset(std::move(v));
  }

  const std::vector<std::uint32_t>& members() const { return members_; }
  bool contains(std::uint32_t c) const { return in_[c]; }
  std::size_t n() const { return n_; }

private:
  double pairs() const {
    return static_cast<double>(k()) * static_cast<double>(k() - 1) / 2.0;
  }

  const SimilarityTable& sim_;
  std::size_t n_;
  std::vector<double> error_;
  std::vector<bool> in_;
  std::vector<double> rowsum_;
  std::vector<std::uint32_t> members_;
  double error_sum_ = 0.0;
  double pair_sum_ = 0.0;
};

struct Goal {
  GroupKind kind;
  double target = 0.0;         // unused for the size group
  double target_tolerance = 0.0;
  GroupAnchors anchor;         // centre of the held bands searched
  HoldTolerances hold;         // half-widths of the held bands searched
};

inline double hinge2(double dev, double tol) {
  const double h = std::max(0.0, std::abs(dev) - tol);
  return h * h;
}

inline double objective(const Goal& g, double diff, double sim) {
  switch (g.kind) {
  case GroupKind::difficulty:
    return (diff - g.target) * (diff - g.target) +
           hinge2(sim - g.anchor.similarity, g.hold.similarity);
  case GroupKind::similarity:
    return (sim - g.target) * (sim - g.target) +
           hinge2(diff - g.anchor.difficulty, g.hold.difficulty);
  case GroupKind::size:
    return hinge2(diff - g.anchor.difficulty, g.hold.difficulty) +
           hinge2(sim - g.anchor.similarity, g.hold.similarity);
  }
  return 0.0;
}

inline bool accepted(const Goal& g, double diff, double sim) {
  const bool diff_ok = g.kind == GroupKind::difficulty
                           ? std::abs(diff - g.target) <= g.target_tolerance
                           : std::abs(diff - g.anchor.difficulty) <= g.hold.difficulty;
  const bool sim_ok = g.kind == GroupKind::similarity
                          ? std::abs(sim - g.target) <= g.target_tolerance
                          : std::abs(sim - g.anchor.similarity) <= g.hold.similarity;
  return diff_ok && sim_ok;
}

// Tries swaps in a random order; applies the first one with `score` strictly
// below `current`. Returns false when none exists or the budget runs out.
template <typename Score>
bool improve_once(SetSearch& s, Rng& rng, double current, Score score,
                  std::uint64_t& budget) {
  std::vector<std::size_t> slots(s.k());
  std::iota(slots.begin(), slots.end(), std::size_t{0});
  std::vector<std::uint32_t> outside;
  for (std::uint32_t c = 0; c < s.n(); ++c)
    if (!s.contains(c)) outside.push_back(c);
  rng.shuffle(std::span<std::size_t>(slots));
  rng.shuffle(std::span<std::uint32_t>(outside));
  for (auto slot : slots) {
    for (auto in : outside) {
      if (budget == 0) return false;
      --budget;
      const auto [d, sm] = s.after_swap(s.members()[slot], in);
      if (score(d, sm) < current) {
        s.swap(slot, in);
        return true;
      }
    }
  }
  return false;
}

inline std::vector<std::uint32_t> random_subset(Rng& rng, std::size_t n,
                                                std::size_t k) {
  std::vector<std::uint32_t> all(n);
  std::iota(all.begin(), all.end(), 0u);
  rng.shuffle(std::span<std::uint32_t>(all));
  all.resize(k);
  return all;
}

struct SearchOutcome {
  std::optional<std::vector<std::uint32_t>> members;
  double best_objective = std::numeric_limits<double>::infinity();
};

inline SearchOutcome search_one(const Goal& goal, std::size_t k,
                                std::span<const CategoryStats> stats,
                                const SimilarityTable& sim, std::uint64_t seed,
                                std::uint64_t max_iterations) {
  Rng rng(seed);
  SetSearch s(stats, sim);
  SearchOutcome out;
  std::uint64_t budget = max_iterations;
  auto J = [&](double d, double sm) { return objective(goal, d, sm); };
  while (budget > 0) {
    s.reset(random_subset(rng, stats.size(), k));
    for (;;) {
      const double d = s.difficulty(), sm = s.similarity();
      const double j = J(d, sm);
      out.best_objective = std::min(out.best_objective, j);
      if (accepted(goal, d, sm)) {
        out.members = s.members();
        return out;
      }
      if (!improve_once(s, rng, j, J, budget)) break;
    }
  }
  return out;
}

// Largest |Pearson| between x and any held property of the chosen sets.
inline double held_correlation(GroupKind kind, std::span<const double> x,
                               const std::vector<const TaskSet*>& chosen) {
  std::vector<double> d, sm;
  for (const auto* t : chosen) {
    d.push_back(t->difficulty);
    sm.push_back(t->similarity);
  }
  double worst = 0.0;
  if (kind != GroupKind::difficulty) worst = std::max(worst, std::abs(pearson(x, d)));
  if (kind != GroupKind::similarity) worst = std::max(worst, std::abs(pearson(x, sm)));
  return worst;
}

// Picks one candidate per slot, minimising the worst held correlation by
// coordinate descent from the first candidates.
inline std::vector<std::size_t>
select_candidates(GroupKind kind, std::span<const double> x,
                  const std::vector<std::vector<TaskSet>>& candidates) {
  const auto n = candidates.size();
  std::vector<std::size_t> pick(n, 0);
  std::vector<const TaskSet*> chosen(n);
  for (std::size_t i = 0; i < n; ++i) chosen[i] = &candidates[i][0];
  double current = held_correlation(kind, x, chosen);
  for (int sweep = 0; sweep < 50; ++sweep) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 0; c < candidates[i].size(); ++c) {
        if (c == pick[i]) continue;
        const auto* prev = chosen[i];
        chosen[i] = &candidates[i][c];
        const double v = held_correlation(kind, x, chosen);
        if (v < current - 1e-12) {
          current = v;
          pick[i] = c;
          changed = true;
        } else {
          chosen[i] = prev;
        }
      }
    }
    if (!changed) break;
  }
  return pick;
}

} // namespace detail

// Constrained extremes of the varied property at set size k, found by
// searching towards each end with the held properties penalised.
inline std::pair<double, double>
achievable_range(GroupKind kind, std::size_t k,
                 std::span<const CategoryStats> stats,
                 const HoldTolerances& hold, GroupAnchors anchors,
                 std::uint64_t seed, int restarts = 8) {
  if (kind == GroupKind::size) throw ConfigError("size has no target range");
  if (k < 2 || k > stats.size()) throw ConfigError("set size out of range");
  const SimilarityTable sim(stats);
  detail::SetSearch s(stats, sim);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (int dir : {-1, +1}) {
    Rng rng(derive_seed(seed, "range", dir > 0 ? 1 : 0));
    for (int r = 0; r < restarts; ++r) {
      auto score = [&](double d, double sm) {
        const double v = kind == GroupKind::difficulty ? d : sm;
        const double held = kind == GroupKind::difficulty
                                ? detail::hinge2(sm - anchors.similarity, hold.similarity)
                                : detail::hinge2(d - anchors.difficulty, hold.difficulty);
        return dir * v + 1e4 * held;
      };
      s.reset(detail::random_subset(rng, stats.size(), k));
      std::uint64_t budget = 200000;
      while (detail::improve_once(s, rng, score(s.difficulty(), s.similarity()),
                                  score, budget)) {
      }
      const double d = s.difficulty(), sm = s.similarity();
      const bool held_ok =
          kind == GroupKind::difficulty
              ? std::abs(sm - anchors.similarity) <= hold.similarity
              : std::abs(d - anchors.difficulty) <= hold.difficulty;
      if (!held_ok) continue;
      const double v = kind == GroupKind::difficulty ? d : sm;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!(lo <= hi)) throw InfeasibleError("no set satisfies the held tolerances");
  return {lo, hi};
}

// n targets evenly spaced over [lo, hi] shrunk by `margin` of the span at
// each end.
inline std::vector<double> evenly_spaced_targets(double lo, double hi,
                                                 std::size_t n, double margin) {
  const double a = lo + margin * (hi - lo);
  const double b = hi - margin * (hi - lo);
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i)
    t[i] = n == 1 ? 0.5 * (a + b)
                  : a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
  return t;
}

struct VerifyReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
};

// Recomputes every property from the category stats and audits the group.
inline VerifyReport verify_group(const TaskSetGroup& group,
                                 std::span<const CategoryStats> stats,
                                 const AssemblySpec& spec) {
  VerifyReport rep;
  auto fail = [&](std::size_t i, const std::string& what) {
    rep.violations.push_back("set " + std::to_string(i) + ": " + what);
  };
  if (group.task_sets.size() != spec.n_task_sets)
    rep.violations.push_back("expected " + std::to_string(spec.n_task_sets) +
                             " sets, found " +
                             std::to_string(group.task_sets.size()));
  constexpr double kEps = 1e-9;
  std::vector<double> xs, held_d, held_s;
  for (std::size_t i = 0; i < group.task_sets.size(); ++i) {
    const auto& t = group.task_sets[i];
    TaskSet fresh;
    try {
      fresh = make_task_set(t.categories, stats);
    } catch (const Error& e) {
      fail(i, e.what());
      continue;
    }
    if (std::abs(fresh.difficulty - t.difficulty) > kEps ||
        std::abs(fresh.similarity - t.similarity) > kEps ||
        fresh.size != t.size)
      fail(i, "stored properties differ from recomputation");
    if (i < spec.n_task_sets && fresh.size != spec.set_size(i))
      fail(i, "size " + std::to_string(fresh.size) + " != required " +
                  std::to_string(spec.set_size(i)));
    if (spec.kind != GroupKind::difficulty &&
        std::abs(fresh.difficulty - group.difficulty_anchor) >
            spec.hold.difficulty + kEps)
      fail(i, "difficulty outside hold tolerance");
    if (spec.kind != GroupKind::similarity &&
        std::abs(fresh.similarity - group.similarity_anchor) >
            spec.hold.similarity + kEps)
      fail(i, "similarity outside hold tolerance");
    if (spec.kind != GroupKind::size && i < spec.target_values.size()) {
      const double v = property_value(spec.kind, fresh);
      if (std::abs(v - spec.target_values[i]) > spec.target_tolerance + kEps)
        fail(i, "varied property misses its target");
    }
    xs.push_back(property_value(spec.kind, fresh));
    held_d.push_back(fresh.difficulty);
    held_s.push_back(fresh.similarity);
  }
  if (xs.size() >= 3) {
    if (spec.kind != GroupKind::difficulty &&
        std::abs(pearson(xs, held_d)) >= spec.max_held_correlation)
      rep.violations.push_back("held difficulty correlates with varied property");
    if (spec.kind != GroupKind::similarity &&
        std::abs(pearson(xs, held_s)) >= spec.max_held_correlation)
      rep.violations.push_back("held similarity correlates with varied property");
  }
  return rep;
}

inline TaskSetGroup assemble_group(const AssemblySpec& spec,
                                   std::span<const CategoryStats> stats) {
  spec.validate();
  for (std::size_t i = 0; i < spec.n_task_sets; ++i)
    if (spec.set_size(i) > stats.size())
      throw InfeasibleError("set size " + std::to_string(spec.set_size(i)) +
                            " exceeds the number of categories");
  const SimilarityTable sim(stats);
  const auto global = global_anchors(stats);
  GroupAnchors anchors{spec.difficulty_anchor.value_or(global.difficulty),
                       spec.similarity_anchor.value_or(global.similarity)};

  if (spec.kind != GroupKind::size) {
    // Cheap unconstrained bounds: the k easiest/hardest categories, or the
    // extreme pairwise similarities.
    const std::size_t k = spec.fixed_size;
    double lo = 0.0, hi = 0.0;
    if (spec.kind == GroupKind::difficulty) {
      std::vector<double> err;
      for (const auto& s : stats) err.push_back(1.0 - s.baseline_accuracy);
      std::sort(err.begin(), err.end());
      lo = std::accumulate(err.begin(), err.begin() + static_cast<long>(k), 0.0) / static_cast<double>(k);
      hi = std::accumulate(err.end() - static_cast<long>(k), err.end(), 0.0) / static_cast<double>(k);
    } else {
      lo = 1.0;
      hi = -1.0;
      for (std::size_t i = 0; i < sim.size(); ++i)
        for (std::size_t j = i + 1; j < sim.size(); ++j) {
          lo = std::min(lo, sim(i, j));
          hi = std::max(hi, sim(i, j));
        }
    }
    for (double t : spec.target_values)
      if (t < lo - spec.target_tolerance || t > hi + spec.target_tolerance)
        throw InfeasibleError(std::string("target ") + std::to_string(t) +
                              " for " + to_string(spec.kind) +
                              " is outside the achievable range [" +
                              std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }

  std::vector<double> xs(spec.n_task_sets);
  for (std::size_t i = 0; i < spec.n_task_sets; ++i)
    xs[i] = spec.kind == GroupKind::size
                ? std::log2(static_cast<double>(spec.set_size(i)))
                : spec.target_values[i];

  // Sub-band centres: an evenly spaced sweep across the hold band, paired
  // with a scrambled copy so the two held properties vary independently.
  const auto n_cand = std::max(1u, spec.candidates_per_set);
  std::vector<double> sweep(n_cand, 0.0);
  for (std::uint32_t k = 0; k < n_cand; ++k)
    sweep[k] = n_cand == 1 ? 0.0
                           : -1.0 + 2.0 * static_cast<double>(k) / (n_cand - 1);
  const double reach = std::max(0.0, 1.0 - spec.candidate_band_fraction);
  std::vector<std::vector<TaskSet>> candidates(spec.n_task_sets);
  for (std::size_t i = 0; i < spec.n_task_sets; ++i) {
    double best_objective = std::numeric_limits<double>::infinity();
    for (std::uint32_t k = 0; k <= n_cand; ++k) {
      // The last attempt is the plain full-band search.
      detail::Goal goal{spec.kind,
                        spec.kind == GroupKind::size ? 0.0 : spec.target_values[i],
                        spec.target_tolerance, anchors, spec.hold};
      if (k < n_cand) {
        const double ud = sweep[k];
        const double us = sweep[(k * 4 + 1) % n_cand];
        goal.anchor.difficulty += reach * ud * spec.hold.difficulty;
        goal.anchor.similarity += reach * us * spec.hold.similarity;
        goal.hold.difficulty *= spec.candidate_band_fraction;
        goal.hold.similarity *= spec.candidate_band_fraction;
      }
      const auto outcome = detail::search_one(
          goal, spec.set_size(i), stats, sim,
          derive_seed(spec.seed, "set", i * 1000 + k), spec.max_iterations);
      best_objective = std::min(best_objective, outcome.best_objective);
      if (!outcome.members) continue;
      auto t = make_task_set(*outcome.members, stats);
      const bool duplicate = std::any_of(
          candidates[i].begin(), candidates[i].end(),
          [&](const TaskSet& o) { return o.categories == t.categories; });
      if (!duplicate) candidates[i].push_back(std::move(t));
    }
    if (candidates[i].empty())
      throw InfeasibleError(
          std::string("no ") + to_string(spec.kind) + " task set found for " +
          (spec.kind == GroupKind::size
               ? "size " + std::to_string(spec.set_size(i))
               : "target " + std::to_string(spec.target_values[i])) +
          "; best residual objective " + std::to_string(best_objective));
  }
  const auto pick = detail::select_candidates(spec.kind, xs, candidates);

  TaskSetGroup group;
  group.kind = spec.kind;
  group.difficulty_anchor = anchors.difficulty;
  group.similarity_anchor = anchors.similarity;
  for (std::size_t i = 0; i < spec.n_task_sets; ++i) {
    auto t = candidates[i][pick[i]];
    SetDeviations dev;
    dev.difficulty = t.difficulty - anchors.difficulty;
    dev.similarity = t.similarity - anchors.similarity;
    dev.size = static_cast<double>(t.size) - spec.set_size(i);
    if (spec.kind != GroupKind::size)
      dev.varied = property_value(spec.kind, t) - spec.target_values[i];
    group.targets.push_back(spec.kind == GroupKind::size
                                ? static_cast<double>(spec.set_size(i))
                                : spec.target_values[i]);
    group.task_sets.push_back(std::move(t));
    group.achieved_deviations.push_back(dev);
  }
  return group;
}

// Group file: one CSV row per member; JSON sidecar with achieved properties.
inline void write_group_files(const TaskSetGroup& g,
                              const std::filesystem::path& csv_path) {
  std::ofstream csv(csv_path);
  if (!csv) throw Error("cannot write " + csv_path.string());
  csv << "group_kind,set_index,target,category_id\n" << std::setprecision(17);
  nlohmann::json sets = nlohmann::json::array();
  for (std::size_t i = 0; i < g.task_sets.size(); ++i) {
    const auto& t = g.task_sets[i];
    for (auto c : t.categories)
      csv << to_string(g.kind) << ',' << i << ',' << g.targets[i] << ',' << c << '\n';
    const auto& d = g.achieved_deviations[i];
    sets.push_back({{"set_index", i},
                    {"target", g.targets[i]},
                    {"difficulty", t.difficulty},
                    {"size", t.size},
                    {"similarity", t.similarity},
                    {"deviation",
                     {{"varied", d.varied},
                      {"difficulty", d.difficulty},
                      {"similarity", d.similarity},
                      {"size", d.size}}}});
  }
  nlohmann::json side{{"group_kind", to_string(g.kind)},
                      {"difficulty_anchor", g.difficulty_anchor},
                      {"similarity_anchor", g.similarity_anchor},
                      {"task_sets", sets}};
  auto json_path = csv_path;
  json_path.replace_extension(".json");
  std::ofstream js(json_path);
  if (!js) throw Error("cannot write " + json_path.string());
  js << side.dump(2) << '\n';
}

// Reads the CSV back; properties are recomputed from `stats`.
inline TaskSetGroup read_group_csv(const std::filesystem::path& path,
                                   std::span<const CategoryStats> stats) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  TaskSetGroup g;
  std::vector<std::vector<std::uint32_t>> members;
  bool kind_seen = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string kind, idx, target, cat;
    if (!std::getline(ss, kind, ',') || !std::getline(ss, idx, ',') ||
        !std::getline(ss, target, ',') || !std::getline(ss, cat))
      throw FormatError("bad group row: " + line);
    if (!kind_seen) {
      g.kind = parse_group_kind(kind);
      kind_seen = true;
    }
    const auto i = static_cast<std::size_t>(std::stoul(idx));
    if (i >= members.size()) {
      members.resize(i + 1);
      g.targets.resize(i + 1);
    }
    g.targets[i] = std::stod(target);
    members[i].push_back(static_cast<std::uint32_t>(std::stoul(cat)));
  }
  const auto anchors = global_anchors(stats);
  g.difficulty_anchor = anchors.difficulty;
  g.similarity_anchor = anchors.similarity;
  for (std::size_t i = 0; i < members.size(); ++i) {
    auto t = make_task_set(members[i], stats);
    SetDeviations d;
    d.difficulty = t.difficulty - anchors.difficulty;
    d.similarity = t.similarity - anchors.similarity;
    if (g.kind != GroupKind::size) d.varied = property_value(g.kind, t) - g.targets[i];
    g.achieved_deviations.push_back(d);
    g.task_sets.push_back(std::move(t));
  }
  return g;
}

} // namespace attnboost
