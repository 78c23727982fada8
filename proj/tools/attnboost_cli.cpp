// Command-line front end for the attention-boost toolkit.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "attnboost/attnboost.hpp"

namespace fs = std::filesystem;
using namespace attnboost;
using nlohmann::json;

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  unsigned jobs = 0;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "JSON run configuration");
  cmd->add_option("--seed", o.seed, "Global seed (overrides the config)");
  cmd->add_option("--out", o.out, "Output directory");
  cmd->add_option("--jobs", o.jobs, "Worker threads for the attention sweep");
  cmd->add_option("--set", o.overrides, "Config override key.path=value")
      ->take_all();
}

RunConfig resolve(const CommonOptions& o) {
  auto overrides = o.overrides;
  if (o.seed) overrides.push_back("seed=" + std::to_string(*o.seed));
  if (!o.out.empty()) overrides.push_back("output_dir=" + json(o.out).dump());
  if (o.jobs > 0) overrides.push_back("jobs=" + std::to_string(o.jobs));
  const auto j = load_config(o.config.empty() ? std::nullopt
                                              : std::optional<fs::path>(o.config),
                             overrides);
  return parse_run_config(j);
}

std::set<std::uint32_t> parse_categories(const std::string& list) {
  std::set<std::uint32_t> out;
  std::istringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.insert(static_cast<std::uint32_t>(std::stoul(item)));
  if (out.empty()) throw ConfigError("no categories given");
  return out;
}

Dataset load_dataset(const RunConfig& c, const std::string& override_path) {
  if (!override_path.empty()) return read_feature_file(override_path);
  if (c.dataset_path) return read_feature_file(*c.dataset_path);
  throw ConfigError("no dataset: pass --dataset or set dataset.path");
}

HeadModel load_head(const RunConfig& c, const std::string& override_path) {
  if (!override_path.empty()) return read_head_file(override_path);
  if (c.head_path) return read_head_file(*c.head_path);
  throw ConfigError("no head: pass --head or set head.path");
}

std::vector<CategoryStats> stats_for(const RunConfig& c, const Dataset& d,
                                     const HeadModel& h) {
  std::optional<Dataset> aux;
  if (c.similarity_path) aux = read_feature_file(*c.similarity_path);
  return compute_category_stats(h, d, {aux ? &*aux : nullptr});
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"attnboost: task-dependence of multiplicative attention"};
  app.require_subcommand(1);
  CommonOptions common;
  std::string dataset_path, head_path, mask_path, categories, group_path,
      stats_dir, results_path;
  std::size_t set_index = 0;

  auto* gen = app.add_subcommand("gen-synthetic", "Generate a synthetic feature file");
  auto* th = app.add_subcommand("train-head", "Bootstrap a classifier head");
  auto* cs = app.add_subcommand("category-stats", "Per-category accuracy and means");
  auto* as = app.add_subcommand("assemble", "Assemble the three task-set groups");
  auto* ta = app.add_subcommand("train-attention", "Train one attention mask");
  auto* ev = app.add_subcommand("evaluate", "In-set/out-of-set accuracy of a mask");
  auto* run = app.add_subcommand("run", "Full experiment pipeline");
  auto* st = app.add_subcommand("stats", "Statistics table from results.csv");
  auto* pl = app.add_subcommand("plot", "SVG figures from results.csv");
  for (auto* cmd : {gen, th, cs, as, ta, ev, run, st, pl}) add_common(cmd, common);
  for (auto* cmd : {th, cs, as, ta, ev})
    cmd->add_option("--dataset", dataset_path, "Feature file (ATNF)");
  for (auto* cmd : {cs, as, ta, ev})
    cmd->add_option("--head", head_path, "Head file (ATNH)");
  as->add_option("--stats-dir", stats_dir, "Cached category statistics directory");
  for (auto* cmd : {ta, ev}) {
    cmd->add_option("--categories", categories, "Comma-separated task categories");
    cmd->add_option("--group", group_path, "Group CSV to take the task set from");
    cmd->add_option("--index", set_index, "Task-set index within --group");
  }
  ev->add_option("--mask", mask_path, "Mask file (ATNA); identity if omitted");
  for (auto* cmd : {st, pl})
    cmd->add_option("--results", results_path, "results.csv (default <out>/results.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const RunConfig c = resolve(common);
    const fs::path out = c.output_dir;
    fs::create_directories(out);

    auto task_from_flags = [&](const Dataset& d, const HeadModel& h) {
      if (!categories.empty()) return parse_categories(categories);
      if (!group_path.empty()) {
        const auto g = read_group_csv(group_path, stats_for(c, d, h));
        if (set_index >= g.task_sets.size()) throw ConfigError("--index out of range");
        const auto& cats = g.task_sets[set_index].categories;
        return std::set<std::uint32_t>(cats.begin(), cats.end());
      }
      throw ConfigError("pass --categories or --group/--index");
    };

    if (*gen) {
      const auto d = generate_synthetic(c.synthetic, derive_seed(c.seed, "synthetic", 0));
      write_feature_file(d, out / "dataset.atnf");
      std::cout << "wrote " << (out / "dataset.atnf").string() << " ("
                << d.records.size() << " records)\n";
    } else if (*th) {
      const auto d = load_dataset(c, dataset_path);
      const auto h = train_head(d, c.head_hidden, c.head_train,
                                derive_seed(c.seed, "head", 0), c.head_min_margin);
      write_head_file(h, out / "head.atnh");
      const auto val = d.indices(Split::val);
      std::cout << "wrote " << (out / "head.atnh").string() << "; val accuracy "
                << head_accuracy(h, d.matrix(val), d.labels(val)) << '\n';
    } else if (*cs) {
      const auto d = load_dataset(c, dataset_path);
      const auto h = load_head(c, head_path);
      write_category_stats(stats_for(c, d, h), out / "category_stats");
      std::cout << "wrote " << (out / "category_stats").string() << '\n';
    } else if (*as) {
      std::vector<CategoryStats> s;
      if (!stats_dir.empty()) {
        s = read_category_stats(stats_dir);
      } else {
        const auto d = load_dataset(c, dataset_path);
        s = stats_for(c, d, load_head(c, head_path));
      }
      for (auto kind : kAllGroupKinds) {
        const auto spec = make_assembly_spec(c, kind, s);
        const auto g = assemble_group(spec, s);
        const auto rep = verify_group(g, s, spec);
        for (const auto& v : rep.violations)
          std::cerr << to_string(kind) << ": " << v << '\n';
        const auto path = out / (std::string("group_") + to_string(kind) + ".csv");
        write_group_files(g, path);
        std::cout << "wrote " << path.string() << " (" << g.task_sets.size()
                  << " sets)\n";
      }
    } else if (*ta) {
      const auto d = load_dataset(c, dataset_path);
      const auto h = load_head(c, head_path);
      const auto task = task_from_flags(d, h);
      TrainConfig t = c.attention_train;
      t.seed = derive_seed(c.seed, "train-attention", 0);
      const auto r = train_attention(h, d, task, t, {c.granularity});
      write_mask_file(r.mask, out / "mask.atna");
      write_epoch_log(r.history, out / "mask.log.csv");
      std::cout << "wrote " << (out / "mask.atna").string() << "; best epoch "
                << r.best_epoch << ", val in-set accuracy " << r.best_val_accuracy
                << '\n';
    } else if (*ev) {
      const auto d = load_dataset(c, dataset_path);
      const auto h = load_head(c, head_path);
      const auto task = task_from_flags(d, h);
      const auto mask = mask_path.empty() ? AttentionMask::ones(d.shape, c.granularity)
                                          : read_mask_file(mask_path);
      const auto acc = evaluate_network(h, mask, d, task);
      const json j{{"in_set_accuracy", acc.in_set},
                   {"out_of_set_accuracy", acc.out_of_set},
                   {"n_in_set", acc.n_in_set},
                   {"n_out_of_set", acc.n_out_of_set}};
      std::ofstream(out / "evaluation.json") << j.dump(2) << '\n';
      std::cout << j.dump() << '\n';
    } else if (*run) {
      const auto r = run_experiment(c, [](const std::string& m) {
        std::cerr << "[run] " << m << '\n';
      });
      std::cout << "results: " << r.results.size() << " task sets ("
                << r.failed_runs << " failed); outputs in " << out.string() << '\n';
      for (const auto& row : r.table)
        std::cout << row.label << ' ' << to_string(row.property) << ' '
                  << (row.in_set ? "in-set" : "out-of-set") << " rho="
                  << row.spearman_rho << " tau_b=" << row.kendall_tau_b
                  << " beta1=" << row.beta1 << " R2=" << row.r_squared
                  << " p_rho=" << row.p_rho << '\n';
    } else if (*st) {
      const auto res = read_results_csv(results_path.empty() ? out / "results.csv"
                                                             : fs::path(results_path));
      const auto rows = stats::build_table(res, c.stats);
      stats::write_table_csv(rows, out / "table.csv");
      std::ofstream(out / "table.json")
          << stats::table_json(rows, c.stats, {{"seed", c.seed}}).dump(2) << '\n';
      std::cout << "wrote " << (out / "table.csv").string() << '\n';
    } else if (*pl) {
      const auto res = read_results_csv(results_path.empty() ? out / "results.csv"
                                                             : fs::path(results_path));
      std::vector<stats::StatsRow> rows;
      for (auto kind : kAllGroupKinds)
        for (bool in_set : {true, false}) {
          stats::StatsRow row;
          row.property = kind;
          row.in_set = in_set;
          try {
            const auto reg = stats::linear_regression(stats::sample_for(res, kind, in_set));
            row.beta0 = reg.beta0;
            row.beta1 = reg.beta1;
          } catch (const Error&) {
            row.degenerate = true;
          }
          rows.push_back(row);
        }
      plot::emit_plots(res, rows, out);
      std::cout << "wrote fig_*.svg to " << out.string() << '\n';
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
