#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "attnboost/error.hpp"
#include "attnboost/taskset_assembly.hpp"

namespace attnboost {

// One task set's comparison between its own attention network and the
// task-agnostic baseline attention network, on the test split.
struct ExperimentResult {
  GroupKind group_kind = GroupKind::difficulty;
  std::uint32_t set_index = 0;
  // Raw varied property (the size itself for size-based sets).
  double property_value = 0.0;
  double in_set_delta = 0.0;
  double out_of_set_delta = 0.0;
  double in_set_accuracy_attention = 0.0;
  double in_set_accuracy_baseline = 0.0;
  double out_of_set_accuracy_attention = 0.0;
  double out_of_set_accuracy_baseline = 0.0;
  // Unmodulated pretrained head on the same partitions.
  double in_set_accuracy_identity = 0.0;
  double out_of_set_accuracy_identity = 0.0;
  std::uint32_t best_epoch = 0;
  std::string mask_path;
};

inline constexpr const char* kResultsHeader =
    "group_kind,set_index,property_value,in_set_delta,out_of_set_delta,"
    "in_set_accuracy_attention,in_set_accuracy_baseline,"
    "out_of_set_accuracy_attention,out_of_set_accuracy_baseline,"
    "in_set_accuracy_identity,out_of_set_accuracy_identity,best_epoch,"
    "mask_path";

inline void write_results_csv(const std::vector<ExperimentResult>& results,
                              const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << kResultsHeader << '\n' << std::setprecision(17);
  for (const auto& r : results)
    out << to_string(r.group_kind) << ',' << r.set_index << ','
        << r.property_value << ',' << r.in_set_delta << ','
        << r.out_of_set_delta << ',' << r.in_set_accuracy_attention << ','
        << r.in_set_accuracy_baseline << ',' << r.out_of_set_accuracy_attention
        << ',' << r.out_of_set_accuracy_baseline << ','
        << r.in_set_accuracy_identity << ',' << r.out_of_set_accuracy_identity
        << ',' << r.best_epoch << ',' << r.mask_path << '\n';
}

inline std::vector<ExperimentResult>
read_results_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != kResultsHeader) throw FormatError("unexpected results.csv header");
  std::vector<ExperimentResult> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() == 12) f.emplace_back();
    if (f.size() != 13) throw FormatError("bad results row: " + line);
    ExperimentResult r;
    r.group_kind = parse_group_kind(f[0]);
    r.set_index = static_cast<std::uint32_t>(std::stoul(f[1]));
    double* fields[] = {&r.property_value,
                        &r.in_set_delta,
                        &r.out_of_set_delta,
                        &r.in_set_accuracy_attention,
                        &r.in_set_accuracy_baseline,
                        &r.out_of_set_accuracy_attention,
                        &r.out_of_set_accuracy_baseline,
                        &r.in_set_accuracy_identity,
                        &r.out_of_set_accuracy_identity};
    for (std::size_t k = 0; k < 9; ++k) *fields[k] = std::stod(f[2 + k]);
    r.best_epoch = static_cast<std::uint32_t>(std::stoul(f[11]));
    r.mask_path = f[12];
    out.push_back(std::move(r));
  }
  return out;
}

} // namespace attnboost
