#pragma once

// Hand-written SVG scatter plots of accuracy change against the varied
// property, one figure per group, with dashed least-squares lines.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "attnboost/error.hpp"
#include "attnboost/results.hpp"
#include "attnboost/stats.hpp"

namespace attnboost::plot {

inline std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
    case '&': out += "&amp;"; break;
    case '<': out += "&lt;"; break;
    case '>': out += "&gt;"; break;
    case '"': out += "&quot;"; break;
    default: out += c;
    }
  }
  return out;
}

struct Frame {
  double width = 480, height = 360;
  double left = 64, right = 20, top = 36, bottom = 52;
  double x_min = 0, x_max = 1, y_min = 0, y_max = 1;

  double px(double x) const {
    return left + (x - x_min) / (x_max - x_min) * (width - left - right);
  }
  double py(double y) const {
    return height - bottom - (y - y_min) / (y_max - y_min) * (height - top - bottom);
  }
};

namespace detail {

inline std::string fmt(double v, int precision = 3) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(precision) << v;
  return ss.str();
}

inline void widen(double& lo, double& hi) {
  if (hi - lo < 1e-12) {
    const double pad = std::max(1e-3, std::abs(lo) * 0.1);
    lo -= pad;
    hi += pad;
  } else {
    const double pad = 0.06 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
}

inline const char* axis_label(GroupKind kind) {
  switch (kind) {
  case GroupKind::difficulty: return "task-set difficulty";
  case GroupKind::size: return "log2(task-set size)";
  case GroupKind::similarity: return "task-set similarity";
  }
  return "";
}

} // namespace detail

// Renders one group. `in_row`/`out_row` supply the fitted lines.
inline std::string render_group(GroupKind kind,
                                const std::vector<ExperimentResult>& results,
                                const stats::StatsRow* in_row,
                                const stats::StatsRow* out_row) {
  std::vector<double> xs, yin, yout;
  for (const auto& r : results) {
    if (r.group_kind != kind) continue;
    xs.push_back(kind == GroupKind::size ? std::log2(r.property_value)
                                         : r.property_value);
    yin.push_back(r.in_set_delta);
    yout.push_back(r.out_of_set_delta);
  }
  if (xs.empty()) throw Error(std::string("no results for ") + to_string(kind));

  Frame f;
  f.x_min = *std::min_element(xs.begin(), xs.end());
  f.x_max = *std::max_element(xs.begin(), xs.end());
  const double data_x_min = f.x_min, data_x_max = f.x_max;
  f.y_min = 0.0;
  f.y_max = 0.0;
  for (double v : yin) f.y_min = std::min(f.y_min, v), f.y_max = std::max(f.y_max, v);
  for (double v : yout) f.y_min = std::min(f.y_min, v), f.y_max = std::max(f.y_max, v);
  detail::widen(f.x_min, f.x_max);
  detail::widen(f.y_min, f.y_max);

  std::ostringstream s;
  s << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.width
    << "\" height=\"" << f.height << "\" viewBox=\"0 0 " << f.width << ' '
    << f.height << "\" font-family=\"sans-serif\" font-size=\"11\">\n"
    << "<rect x=\"0\" y=\"0\" width=\"" << f.width << "\" height=\"" << f.height
    << "\" fill=\"white\"/>\n";

  const double x0 = f.left, x1 = f.width - f.right;
  const double y0 = f.height - f.bottom, y1 = f.top;
  s << "<g class=\"axes\" stroke=\"black\" stroke-width=\"1\">\n"
    << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x1 << "\" y2=\"" << y0 << "\"/>\n"
    << "<line x1=\"" << x0 << "\" y1=\"" << y0 << "\" x2=\"" << x0 << "\" y2=\"" << y1 << "\"/>\n"
    << "</g>\n";
  s << "<line class=\"zero\" x1=\"" << x0 << "\" y1=\"" << detail::fmt(f.py(0.0))
    << "\" x2=\"" << x1 << "\" y2=\"" << detail::fmt(f.py(0.0))
    << "\" stroke=\"#999\" stroke-width=\"0.5\"/>\n";

  s << "<g class=\"ticks\" fill=\"black\">\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = f.x_min + (f.x_max - f.x_min) * i / 4.0;
    const double yv = f.y_min + (f.y_max - f.y_min) * i / 4.0;
    s << "<text x=\"" << detail::fmt(f.px(xv)) << "\" y=\"" << y0 + 16
      << "\" text-anchor=\"middle\">" << detail::fmt(xv, 2) << "</text>\n"
      << "<text x=\"" << x0 - 6 << "\" y=\"" << detail::fmt(f.py(yv) + 4)
      << "\" text-anchor=\"end\">" << detail::fmt(yv, 3) << "</text>\n";
  }
  s << "</g>\n";
  s << "<text x=\"" << 0.5 * (x0 + x1) << "\" y=\"" << f.height - 12
    << "\" text-anchor=\"middle\">" << detail::axis_label(kind) << "</text>\n"
    << "<text x=\"14\" y=\"" << 0.5 * (y0 + y1)
    << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 " << 0.5 * (y0 + y1)
    << ")\">accuracy change</text>\n"
    << "<text x=\"" << 0.5 * (x0 + x1) << "\" y=\"20\" text-anchor=\"middle\">"
    << escape_xml(std::string(to_string(kind)) + "-based task sets")
    << "</text>\n";

  auto line = [&](const stats::StatsRow* row, const char* cls, const char* colour) {
    if (!row || std::isnan(row->beta0) || std::isnan(row->beta1)) return;
    const double ya = row->beta0 + row->beta1 * data_x_min;
    const double yb = row->beta0 + row->beta1 * data_x_max;
    s << "<line class=\"regression " << cls << "\" x1=\"" << detail::fmt(f.px(data_x_min))
      << "\" y1=\"" << detail::fmt(f.py(ya)) << "\" x2=\"" << detail::fmt(f.px(data_x_max))
      << "\" y2=\"" << detail::fmt(f.py(yb)) << "\" stroke=\"" << colour
      << "\" stroke-width=\"1.5\" stroke-dasharray=\"6 4\"/>\n";
  };

  s << "<g class=\"in-set\" fill=\"#1f77b4\">\n";
  for (std::size_t i = 0; i < xs.size(); ++i)
    s << "<circle cx=\"" << detail::fmt(f.px(xs[i])) << "\" cy=\""
      << detail::fmt(f.py(yin[i])) << "\" r=\"3.5\"/>\n";
  s << "</g>\n<g class=\"out-of-set\" fill=\"#ff7f0e\">\n";
  for (std::size_t i = 0; i < xs.size(); ++i)
    s << "<rect x=\"" << detail::fmt(f.px(xs[i]) - 3) << "\" y=\""
      << detail::fmt(f.py(yout[i]) - 3) << "\" width=\"6\" height=\"6\"/>\n";
  s << "</g>\n";
  line(in_row, "in-set", "#1f77b4");
  line(out_row, "out-of-set", "#ff7f0e");

  const double lx = x1 - 110;
  s << "<g class=\"legend\">\n"
    << "<circle cx=\"" << lx << "\" cy=\"" << y1 + 6 << "\" r=\"3.5\" fill=\"#1f77b4\"/>\n"
    << "<text x=\"" << lx + 8 << "\" y=\"" << y1 + 10 << "\">in-set</text>\n"
    << "<rect x=\"" << lx - 3 << "\" y=\"" << y1 + 17 << "\" width=\"6\" height=\"6\" fill=\"#ff7f0e\"/>\n"
    << "<text x=\"" << lx + 8 << "\" y=\"" << y1 + 24 << "\">out-of-set</text>\n"
    << "</g>\n</svg>\n";
  return s.str();
}

inline void emit_plots(const std::vector<ExperimentResult>& results,
                       const std::vector<stats::StatsRow>& rows,
                       const std::filesystem::path& out_dir) {
  if (results.empty()) throw Error("no results to plot");
  std::filesystem::create_directories(out_dir);
  for (auto kind : kAllGroupKinds) {
    const stats::StatsRow* in_row = nullptr;
    const stats::StatsRow* out_row = nullptr;
    for (const auto& r : rows) {
      if (r.property != kind) continue;
      (r.in_set ? in_row : out_row) = &r;
    }
    const auto path = out_dir / (std::string("fig_") + to_string(kind) + ".svg");
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path.string());
    out << render_group(kind, results, in_row, out_row);
  }
}

} // namespace attnboost::plot
