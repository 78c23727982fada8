#pragma once

// End-to-end experiment: head, category statistics, task-set groups,
// baseline and per-set attention training, evaluation, statistics and
// report emission, all driven by one JSON configuration.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "attnboost/attention.hpp"
#include "attnboost/error.hpp"
#include "attnboost/feature_store.hpp"
#include "attnboost/head_model.hpp"
#include "attnboost/random.hpp"
#include "attnboost/results.hpp"
#include "attnboost/stats.hpp"
#include "attnboost/svg_plot.hpp"
#include "attnboost/taskset_assembly.hpp"
#include "attnboost/taskset_properties.hpp"

namespace attnboost {

inline constexpr const char* kToolkitVersion = "0.3.1";

using nlohmann::json;

// Built-in defaults; configs/default.json mirrors this document.
inline json default_config_json() {
  return json::parse(R"({
  "seed": 20240611,
  "output_dir": "out",
  "jobs": 1,
  "dataset": {
    "path": null,
    "synthetic": {
      "n_categories": 64,
      "train_per_category": 200,
      "val_per_category": 100,
      "test_per_category": 400,
      "height": 1,
      "width": 1,
      "channels": 64,
      "n_clusters": 8,
      "shared_weight": 0.0,
      "cluster_weight_min": 0.05,
      "cluster_weight_max": 0.9,
      "prototype_norm": 1.0,
      "noise_min": 0.1,
      "noise_max": 0.2,
      "clutter_min": 0.0,
      "clutter_max": 1.0,
      "support_fraction": 0.25,
      "rectify": true
    }
  },
  "similarity_features": "pooled",
  "head": {
    "path": null,
    "hidden": [256],
    "min_margin_over_chance": 0.1,
    "train": {"learning_rate": 0.05, "momentum": 0.9, "batch_size": 64, "max_epochs": 30}
  },
  "attention": {
    "learning_rate": 0.01,
    "momentum": 0.9,
    "batch_size": 64,
    "max_epochs": 50,
    "patience": 5,
    "granularity": "unit"
  },
  "assembly": {
    "hold_tolerances": {"difficulty": 0.05, "similarity": 0.05},
    "target_tolerance": 0.005,
    "target_margin": 0.05,
    "max_iterations": 200000,
    "difficulty": {"n_task_sets": 25, "size": 16, "targets": "auto"},
    "size": {"n_task_sets": 20, "ladder": [2, 4, 8, 16, 32]},
    "similarity": {"n_task_sets": 40, "size": 16, "targets": "auto"}
  },
  "stats": {"n_permutations": 10000, "n_bootstrap": 10000, "significance": 0.001}
})");
}

// Applies `key.path=value`; the value is parsed as JSON when possible and
// taken as a string otherwise.
inline void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like key=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &config;
  std::istringstream parts(key);
  std::string part;
  std::vector<std::string> path;
  while (std::getline(parts, part, '.')) path.push_back(part);
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    if (!node->is_object()) throw ConfigError("cannot descend into " + key);
    node = &(*node)[path[i]];
  }
  (*node)[path.back()] = std::move(value);
}

inline json load_config(const std::optional<std::filesystem::path>& path,
                        const std::vector<std::string>& overrides = {}) {
  json config = default_config_json();
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError("cannot read config " + path->string());
    json user = json::parse(in, nullptr, false);
    if (user.is_discarded() || !user.is_object())
      throw ConfigError("config is not a JSON object: " + path->string());
    config.merge_patch(user);
  }
  for (const auto& o : overrides) apply_override(config, o);
  return config;
}

struct GroupConfig {
  std::uint32_t n_task_sets = 0;
  std::uint32_t size = 16;
  std::vector<std::uint32_t> ladder;
  std::optional<std::vector<double>> targets; // nullopt = auto
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";
  unsigned jobs = 1;
  std::optional<std::filesystem::path> dataset_path;
  SyntheticConfig synthetic;
  std::optional<std::filesystem::path> similarity_path; // auxiliary features
  std::optional<std::filesystem::path> head_path;
  std::vector<std::uint32_t> head_hidden{256};
  double head_min_margin = 0.1;
  TrainConfig head_train = default_head_train_config();
  TrainConfig attention_train;
  Granularity granularity = Granularity::unit;
  HoldTolerances hold;
  double target_tolerance = 0.005;
  double target_margin = 0.05;
  std::uint64_t max_iterations = 200000;
  GroupConfig difficulty_group, size_group, similarity_group;
  stats::StatsConfig stats;
  json raw;

  const GroupConfig& group(GroupKind k) const {
    switch (k) {
    case GroupKind::difficulty: return difficulty_group;
    case GroupKind::size: return size_group;
    case GroupKind::similarity: return similarity_group;
    }
    return difficulty_group;
  }
};

namespace detail {

template <typename T>
T get(const json& j, const char* key) {
  if (!j.contains(key)) throw ConfigError(std::string("missing config key: ") + key);
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for ") + key + ": " + e.what());
  }
}

inline std::optional<std::filesystem::path> optional_path(const json& j,
                                                          const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return std::filesystem::path(get<std::string>(j, key));
}

inline TrainConfig parse_train(const json& j, TrainConfig base) {
  base.learning_rate = get<double>(j, "learning_rate");
  base.momentum = get<double>(j, "momentum");
  base.batch_size = get<std::uint32_t>(j, "batch_size");
  base.max_epochs = get<std::uint32_t>(j, "max_epochs");
  if (j.contains("patience")) base.patience = get<std::uint32_t>(j, "patience");
  base.validate();
  return base;
}

inline GroupConfig parse_group(const json& j, GroupKind kind) {
  GroupConfig g;
  g.n_task_sets = get<std::uint32_t>(j, "n_task_sets");
  if (kind == GroupKind::size) {
    g.ladder = get<std::vector<std::uint32_t>>(j, "ladder");
  } else {
    g.size = get<std::uint32_t>(j, "size");
    const auto& t = j.at("targets");
    if (!(t.is_string() && t.get<std::string>() == "auto"))
      g.targets = get<std::vector<double>>(j, "targets");
  }
  return g;
}

} // namespace detail

inline RunConfig parse_run_config(const json& j) {
  using detail::get;
  RunConfig c;
  c.raw = j;
  try {
    c.seed = get<std::uint64_t>(j, "seed");
    c.output_dir = get<std::string>(j, "output_dir");
    c.jobs = std::max(1u, get<unsigned>(j, "jobs"));

    const auto& ds = j.at("dataset");
    c.dataset_path = detail::optional_path(ds, "path");
    const auto& syn = ds.at("synthetic");
    auto& s = c.synthetic;
    s.n_categories = get<std::uint32_t>(syn, "n_categories");
    s.train_per_category = get<std::uint32_t>(syn, "train_per_category");
    s.val_per_category = get<std::uint32_t>(syn, "val_per_category");
    s.test_per_category = get<std::uint32_t>(syn, "test_per_category");
    s.shape = {get<std::uint32_t>(syn, "height"), get<std::uint32_t>(syn, "width"),
               get<std::uint32_t>(syn, "channels")};
    s.n_clusters = get<std::uint32_t>(syn, "n_clusters");
    s.shared_weight = get<double>(syn, "shared_weight");
    s.cluster_weight_min = get<double>(syn, "cluster_weight_min");
    s.cluster_weight_max = get<double>(syn, "cluster_weight_max");
    s.prototype_norm = get<double>(syn, "prototype_norm");
    s.noise_min = get<double>(syn, "noise_min");
    s.noise_max = get<double>(syn, "noise_max");
    s.clutter_min = get<double>(syn, "clutter_min");
    s.clutter_max = get<double>(syn, "clutter_max");
    s.support_fraction = get<double>(syn, "support_fraction");
    s.rectify = get<bool>(syn, "rectify");
    if (!c.dataset_path) s.validate();

    const auto sim = get<std::string>(j, "similarity_features");
    if (sim.rfind("auxiliary:", 0) == 0)
      c.similarity_path = sim.substr(10);
    else if (sim != "pooled")
      throw ConfigError("similarity_features must be 'pooled' or 'auxiliary:<path>'");

    const auto& head = j.at("head");
    c.head_path = detail::optional_path(head, "path");
    c.head_hidden = get<std::vector<std::uint32_t>>(head, "hidden");
    c.head_min_margin = get<double>(head, "min_margin_over_chance");
    c.head_train = detail::parse_train(head.at("train"), default_head_train_config());

    const auto& att = j.at("attention");
    c.attention_train = detail::parse_train(att, TrainConfig{});
    c.granularity = parse_granularity(get<std::string>(att, "granularity"));

    const auto& asm_ = j.at("assembly");
    c.hold.difficulty = get<double>(asm_.at("hold_tolerances"), "difficulty");
    c.hold.similarity = get<double>(asm_.at("hold_tolerances"), "similarity");
    c.target_tolerance = get<double>(asm_, "target_tolerance");
    c.target_margin = get<double>(asm_, "target_margin");
    c.max_iterations = get<std::uint64_t>(asm_, "max_iterations");
    c.difficulty_group = detail::parse_group(asm_.at("difficulty"), GroupKind::difficulty);
    c.size_group = detail::parse_group(asm_.at("size"), GroupKind::size);
    c.similarity_group = detail::parse_group(asm_.at("similarity"), GroupKind::similarity);

    const auto& st = j.at("stats");
    c.stats.n_permutations = get<std::uint32_t>(st, "n_permutations");
    c.stats.n_bootstrap = get<std::uint32_t>(st, "n_bootstrap");
    c.stats.significance = get<double>(st, "significance");
    c.stats.seed = derive_seed(c.seed, "stats", 0);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  for (const auto& p : {c.dataset_path, c.head_path, c.similarity_path})
    if (p && !std::filesystem::exists(*p))
      throw ConfigError("referenced path does not exist: " + p->string());
  return c;
}

struct PartitionAccuracy {
  double in_set = 0.0;
  double out_of_set = 0.0;
  std::size_t n_in_set = 0;
  std::size_t n_out_of_set = 0;
};

// Per-record top-1 hits on the test split; reused by every comparison.
struct TestHits {
  std::vector<std::uint32_t> category; // per test record
  std::vector<bool> hit;
};

inline TestHits test_hits(const HeadModel& head, const AttentionMask& mask,
                          const Dataset& dataset) {
  detail::check_mask_against(head, mask, dataset.flat_dim());
  const Eigen::VectorXd a = mask.expanded();
  TestHits t;
  std::vector<double> x(dataset.flat_dim());
  for (const auto& rec : dataset.records) {
    if (rec.split != Split::test) continue;
    std::copy(rec.features.begin(), rec.features.end(), x.begin());
    t.category.push_back(rec.category_id);
    t.hit.push_back(argmax(attention_logits(head, a, x)) == rec.category_id);
  }
  return t;
}

inline PartitionAccuracy partition_accuracy(const TestHits& hits,
                                            const std::set<std::uint32_t>& task) {
  PartitionAccuracy p;
  std::size_t in_hits = 0, out_hits = 0;
  for (std::size_t i = 0; i < hits.category.size(); ++i) {
    if (task.count(hits.category[i])) {
      ++p.n_in_set;
      in_hits += hits.hit[i];
    } else {
      ++p.n_out_of_set;
      out_hits += hits.hit[i];
    }
  }
  if (p.n_in_set == 0 || p.n_out_of_set == 0) throw Error("empty partition");
  p.in_set = static_cast<double>(in_hits) / static_cast<double>(p.n_in_set);
  p.out_of_set = static_cast<double>(out_hits) / static_cast<double>(p.n_out_of_set);
  return p;
}

// Top-1 accuracy over the full label space on test records inside and
// outside the task set.
inline PartitionAccuracy evaluate_network(const HeadModel& head,
                                          const AttentionMask& mask,
                                          const Dataset& dataset,
                                          const std::set<std::uint32_t>& task) {
  return partition_accuracy(test_hits(head, mask, dataset), task);
}

inline AssemblySpec make_assembly_spec(const RunConfig& c, GroupKind kind,
                                       std::span<const CategoryStats> stats) {
  const auto& g = c.group(kind);
  AssemblySpec spec;
  spec.kind = kind;
  spec.n_task_sets = g.n_task_sets;
  spec.fixed_size = g.size;
  spec.size_ladder = g.ladder;
  spec.hold = c.hold;
  spec.target_tolerance = c.target_tolerance;
  spec.max_iterations = c.max_iterations;
  spec.seed = derive_seed(c.seed, std::string("assembly-") + to_string(kind), 0);
  if (kind == GroupKind::size) {
    for (auto size : g.ladder)
      if (size > stats.size())
        throw ConfigError("size ladder entry " + std::to_string(size) +
                          " exceeds the number of categories");
  } else if (g.targets) {
    spec.target_values = *g.targets;
  } else {
    const auto anchors = global_anchors(stats);
    const auto [lo, hi] = achievable_range(
        kind, g.size, stats, c.hold, anchors,
        derive_seed(c.seed, std::string("range-") + to_string(kind), 0));
    spec.target_values = evenly_spaced_targets(lo, hi, g.n_task_sets, c.target_margin);
  }
  return spec;
}

struct RunOutput {
  std::vector<ExperimentResult> results;
  std::vector<stats::StatsRow> table;
  std::vector<TaskSetGroup> groups;
  std::size_t failed_runs = 0;
  double baseline_test_accuracy = 0.0;
  double identity_test_accuracy = 0.0;
};

using ProgressFn = std::function<void(const std::string&)>;

namespace detail {

template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("stage '") + name + "': " + e.what());
  } catch (const std::exception& e) {
    throw Error(std::string("stage '") + name + "': " + e.what());
  }
}

inline std::string two_digit(std::size_t i) {
  return (i < 10 ? "0" : "") + std::to_string(i);
}

} // namespace detail

inline RunOutput run_experiment(const RunConfig& c, const ProgressFn& progress = {}) {
  auto say = [&](const std::string& m) {
    if (progress) progress(m);
  };
  const auto out = c.output_dir;
  detail::stage("output", [&] {
    std::filesystem::create_directories(out / "masks");
    return 0;
  });

  say("dataset");
  const Dataset dataset = detail::stage("dataset", [&] {
    if (c.dataset_path) return read_feature_file(*c.dataset_path);
    auto d = generate_synthetic(c.synthetic, derive_seed(c.seed, "synthetic", 0));
    write_feature_file(d, out / "dataset.atnf");
    return d;
  });
  std::optional<Dataset> auxiliary;
  if (c.similarity_path)
    auxiliary = detail::stage("similarity features", [&] {
      return read_feature_file(*c.similarity_path);
    });

  say("head");
  const HeadModel head = detail::stage("head", [&] {
    if (c.head_path) {
      auto h = read_head_file(*c.head_path);
      if (h.input_dim() != dataset.flat_dim() || h.n_categories() != dataset.n_categories)
        throw ShapeError("head does not match the dataset");
      return h;
    }
    TrainConfig t = c.head_train;
    auto h = train_head(dataset, c.head_hidden, t, derive_seed(c.seed, "head", 0),
                        c.head_min_margin);
    write_head_file(h, out / "head.atnh");
    return h;
  });
  const auto head_checksum = parameter_checksum(head);

  say("category stats");
  const auto cat_stats = detail::stage("category stats", [&] {
    auto s = compute_category_stats(
        head, dataset, SimilaritySource{auxiliary ? &*auxiliary : nullptr});
    write_category_stats(s, out / "category_stats");
    return s;
  });

  RunOutput result;
  std::vector<AssemblySpec> specs;
  for (auto kind : kAllGroupKinds) {
    say(std::string("assemble ") + to_string(kind));
    detail::stage("assembly", [&] {
      auto spec = make_assembly_spec(c, kind, cat_stats);
      auto group = assemble_group(spec, cat_stats);
      const auto report = verify_group(group, cat_stats, spec);
      if (!report.ok())
        throw InfeasibleError(std::string(to_string(kind)) +
                              " group failed its audit: " + report.violations.front());
      write_group_files(group, out / (std::string("group_") + to_string(kind) + ".csv"));
      specs.push_back(std::move(spec));
      result.groups.push_back(std::move(group));
      return 0;
    });
  }

  say("baseline");
  std::set<std::uint32_t> all;
  for (std::uint32_t k = 0; k < dataset.n_categories; ++k) all.insert(k);
  const auto identity = AttentionMask::ones(dataset.shape, c.granularity);
  const auto [baseline_hits, identity_hits] = detail::stage("baseline", [&] {
    TrainConfig t = c.attention_train;
    t.seed = derive_seed(c.seed, "baseline", 0);
    const auto run = train_attention(head, dataset, all, t, {c.granularity});
    write_mask_file(run.mask, out / "masks" / "baseline.atna");
    write_epoch_log(run.history, out / "masks" / "baseline.log.csv");
    return std::pair{test_hits(head, run.mask, dataset),
                     test_hits(head, identity, dataset)};
  });
  auto overall = [](const TestHits& h) {
    std::size_t n = 0;
    for (bool b : h.hit) n += b;
    return static_cast<double>(n) / static_cast<double>(h.hit.size());
  };
  result.baseline_test_accuracy = overall(baseline_hits);
  result.identity_test_accuracy = overall(identity_hits);

  struct Job {
    GroupKind kind;
    std::size_t index;
    const TaskSet* set;
  };
  std::vector<Job> jobs;
  for (const auto& g : result.groups)
    for (std::size_t i = 0; i < g.task_sets.size(); ++i)
      jobs.push_back({g.kind, i, &g.task_sets[i]});

  std::vector<std::optional<ExperimentResult>> slots(jobs.size());
  std::vector<std::string> failures(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex progress_mutex;
  auto worker = [&] {
    for (std::size_t j; (j = next.fetch_add(1)) < jobs.size();) {
      const auto& job = jobs[j];
      const std::set<std::uint32_t> task(job.set->categories.begin(),
                                         job.set->categories.end());
      const auto name = std::string(to_string(job.kind)) + "_" + detail::two_digit(job.index);
      try {
        TrainConfig t = c.attention_train;
        t.seed = derive_seed(c.seed, to_string(job.kind), job.index);
        const auto run = train_attention(head, dataset, task, t, {c.granularity});
        const auto mask_rel = std::filesystem::path("masks") / (name + ".atna");
        write_mask_file(run.mask, out / mask_rel);
        write_epoch_log(run.history, out / "masks" / (name + ".log.csv"));
        const auto att = evaluate_network(head, run.mask, dataset, task);
        const auto base = partition_accuracy(baseline_hits, task);
        const auto ident = partition_accuracy(identity_hits, task);
        if (att.n_in_set + att.n_out_of_set != baseline_hits.hit.size())
          throw Error("partition counts do not cover the test split");
        ExperimentResult r;
        r.group_kind = job.kind;
        r.set_index = static_cast<std::uint32_t>(job.index);
        r.property_value = job.kind == GroupKind::size
                               ? static_cast<double>(job.set->size)
                               : property_value(job.kind, *job.set);
        r.in_set_accuracy_attention = att.in_set;
        r.out_of_set_accuracy_attention = att.out_of_set;
        r.in_set_accuracy_baseline = base.in_set;
        r.out_of_set_accuracy_baseline = base.out_of_set;
        r.in_set_accuracy_identity = ident.in_set;
        r.out_of_set_accuracy_identity = ident.out_of_set;
        r.in_set_delta = att.in_set - base.in_set;
        r.out_of_set_delta = att.out_of_set - base.out_of_set;
        r.best_epoch = run.best_epoch;
        r.mask_path = mask_rel.generic_string();
        slots[j] = std::move(r);
      } catch (const DivergenceError& e) {
        failures[j] = e.what();
      }
      if (progress) {
        std::lock_guard lock(progress_mutex);
        progress("task set " + name + (slots[j] ? "" : " FAILED: " + failures[j]));
      }
    }
  };
  detail::stage("attention sweep", [&] {
    std::vector<std::thread> pool;
    const unsigned n_threads = std::min<unsigned>(c.jobs, static_cast<unsigned>(jobs.size()));
    for (unsigned t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    return 0;
  });
  if (parameter_checksum(head) != head_checksum)
    throw Error("head parameters changed during the sweep");
  for (auto& s : slots) {
    if (s)
      result.results.push_back(std::move(*s));
    else
      ++result.failed_runs;
  }

  say("statistics");
  result.table = detail::stage("statistics", [&] {
    return stats::build_table(result.results, c.stats);
  });

  say("reports");
  detail::stage("reports", [&] {
    write_results_csv(result.results, out / "results.csv");
    stats::write_table_csv(result.table, out / "table.csv");
    json meta{{"toolkit_version", kToolkitVersion},
              {"seed", c.seed},
              {"accuracy_split", "test"},
              {"failed_runs", result.failed_runs}};
    std::ofstream(out / "table.json") << stats::table_json(result.table, c.stats, meta).dump(2) << '\n';
    plot::emit_plots(result.results, result.table, out);
    std::vector<std::string> failed;
    for (std::size_t j = 0; j < jobs.size(); ++j)
      if (!failures[j].empty())
        failed.push_back(std::string(to_string(jobs[j].kind)) + "_" +
                         detail::two_digit(jobs[j].index) + ": " + failures[j]);
    const json manifest{
        {"toolkit_version", kToolkitVersion},
        {"config_hash", fnv1a64(c.raw.dump())},
        {"config", c.raw},
        {"seed", c.seed},
        {"accuracy_split", "test"},
        {"difficulty_split", "val"},
        {"similarity_split", "train"},
        {"head_checksum", head_checksum},
        {"baseline_test_accuracy", result.baseline_test_accuracy},
        {"identity_test_accuracy", result.identity_test_accuracy},
        {"n_results", result.results.size()},
        {"failed_runs", failed},
    };
    std::ofstream(out / "manifest.json") << manifest.dump(2) << '\n';
    return 0;
  });
  return result;
}

} // namespace attnboost
