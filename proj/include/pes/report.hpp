#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pes/config.hpp"
#include "pes/metrics.hpp"

namespace pes {

inline std::vector<std::string> default_class_names(int num_classes) {
  std::vector<std::string> names;
  names.reserve(static_cast<std::size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c)
    names.push_back("class_" + std::to_string(c));
  return names;
}

inline void write_text_file(const std::filesystem::path& path,
                            const std::string& content) {
  std::ofstream out(path);
  check_runtime(out.good(), "cannot write " + path.string());
  out << content;
  check_runtime(out.good(), "short write to " + path.string());
}

// Machine-diffable evaluation record.  Key order is fixed so two reports from
// the same pipeline can be compared textually.
inline nlohmann::ordered_json build_report_json(
    const std::string& dataset_path, const std::string& checkpoint_path,
    int num_classes, double fps, std::int64_t param_count,
    const EvalConfig& eval, const EvalReport& rep,
    const std::map<std::string, std::vector<int>>& ranges_frames,
    std::size_t num_predictions) {
  nlohmann::ordered_json j;
  j["dataset"] = dataset_path;
  j["checkpoint"] = checkpoint_path;
  j["num_classes"] = num_classes;
  j["fps"] = fps;
  j["param_count"] = param_count;
  j["select_delta"] = eval.select_delta;
  j["deltas"] = rep.deltas;
  nlohmann::ordered_json maps;
  for (int d : rep.deltas) maps[std::to_string(d)] = rep.map_at.at(d);
  j["map"] = std::move(maps);
  nlohmann::ordered_json cap;
  for (int d : rep.deltas) {
    nlohmann::ordered_json per_class;
    for (const auto& [c, ap] : rep.class_ap.at(d))
      per_class[std::to_string(c)] = ap;
    cap[std::to_string(d)] = std::move(per_class);
  }
  j["class_ap"] = std::move(cap);
  nlohmann::ordered_json ranges;
  for (const auto& [name, frames] : ranges_frames) {
    nlohmann::ordered_json r;
    r["deltas"] = frames;
    r["map"] = rep.range_maps.at(name);
    ranges[name] = std::move(r);
  }
  j["ranges"] = std::move(ranges);
  j["truth_counts"] = rep.truth_counts;
  j["pred_counts"] = rep.pred_counts;
  j["num_predictions"] = num_predictions;
  return j;
}

// One row per class: instance counts plus AP at every evaluated tolerance.
// Classes without ground truth print "-" since their AP is undefined.
inline std::string per_class_ap_tsv(const EvalReport& rep, int num_classes) {
  std::ostringstream out;
  out << std::setprecision(10);
  out << "class\ttruths\tpreds";
  for (int d : rep.deltas) out << "\tap@" << d;
  out << "\n";
  for (int c = 0; c < num_classes; ++c) {
    out << "class_" << c << '\t'
        << rep.truth_counts[static_cast<std::size_t>(c)] << '\t'
        << rep.pred_counts[static_cast<std::size_t>(c)];
    for (int d : rep.deltas) {
      const auto& per_class = rep.class_ap.at(d);
      auto it = per_class.find(c);
      if (it == per_class.end())
        out << "\t-";
      else
        out << '\t' << it->second;
    }
    out << "\n";
  }
  return out.str();
}

struct BarSeries {
  std::string label;
  std::vector<double> values;  // one per class, -1 marks "no value"
};

// Grouped per-class bar chart, one group per class and one bar per series.
// Static hand-written SVG so reports render without any plotting dependency.
inline std::string class_ap_bar_svg(const std::vector<std::string>& classes,
                                    const std::vector<BarSeries>& series,
                                    const std::string& title) {
  static const char* kColors[] = {"#4477aa", "#ee6677", "#228833",
                                  "#ccbb44", "#66ccee", "#aa3377",
                                  "#bbbbbb", "#222222"};
  const int ncolors = 8;
  const int ns = static_cast<int>(series.size());
  const int nc = static_cast<int>(classes.size());
  const int bar_w = 18, bar_gap = 2, group_gap = 26;
  const int group_w = ns * (bar_w + bar_gap) + group_gap;
  const int left = 52, top = 34, plot_h = 200;
  const int legend_h = 18 * ns;
  const int width = left + nc * group_w + 30;
  const int height = top + plot_h + 46 + legend_h;

  std::ostringstream s;
  s << std::setprecision(6);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
    << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
    << height << "\">\n";
  s << "<rect width=\"" << width << "\" height=\"" << height
    << "\" fill=\"white\"/>\n";
  s << "<text x=\"" << left << "\" y=\"20\" font-family=\"sans-serif\" "
       "font-size=\"14\">"
    << title << "</text>\n";

  for (int g = 0; g <= 4; ++g) {
    double v = 0.25 * g;
    double y = top + plot_h * (1.0 - v);
    s << "<line x1=\"" << left << "\" y1=\"" << y << "\" x2=\""
      << (width - 20) << "\" y2=\"" << y
      << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    s << "<text x=\"" << (left - 8) << "\" y=\"" << (y + 4)
      << "\" font-family=\"sans-serif\" font-size=\"11\" "
         "text-anchor=\"end\">"
      << v << "</text>\n";
  }

  for (int c = 0; c < nc; ++c) {
    int gx = left + c * group_w + group_gap / 2;
    for (int i = 0; i < ns; ++i) {
      double v = series[static_cast<std::size_t>(i)]
                     .values[static_cast<std::size_t>(c)];
      int x = gx + i * (bar_w + bar_gap);
      if (v < 0.0) {
        s << "<text x=\"" << (x + bar_w / 2) << "\" y=\""
          << (top + plot_h - 4)
          << "\" font-family=\"sans-serif\" font-size=\"11\" "
             "text-anchor=\"middle\" fill=\"#999999\">-</text>\n";
        continue;
      }
      double h = plot_h * std::min(1.0, std::max(0.0, v));
      s << "<rect x=\"" << x << "\" y=\"" << (top + plot_h - h)
        << "\" width=\"" << bar_w << "\" height=\"" << h << "\" fill=\""
        << kColors[i % ncolors] << "\"/>\n";
    }
    s << "<text x=\"" << (gx + (ns * (bar_w + bar_gap)) / 2) << "\" y=\""
      << (top + plot_h + 16)
      << "\" font-family=\"sans-serif\" font-size=\"12\" "
         "text-anchor=\"middle\">"
      << classes[static_cast<std::size_t>(c)] << "</text>\n";
  }

  s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left
    << "\" y2=\"" << (top + plot_h)
    << "\" stroke=\"#333333\" stroke-width=\"1\"/>\n";
  s << "<line x1=\"" << left << "\" y1=\"" << (top + plot_h) << "\" x2=\""
    << (width - 20) << "\" y2=\"" << (top + plot_h)
    << "\" stroke=\"#333333\" stroke-width=\"1\"/>\n";

  for (int i = 0; i < ns; ++i) {
    int y = top + plot_h + 34 + i * 18;
    s << "<rect x=\"" << left << "\" y=\"" << (y - 10)
      << "\" width=\"12\" height=\"12\" fill=\"" << kColors[i % ncolors]
      << "\"/>\n";
    s << "<text x=\"" << (left + 18) << "\" y=\"" << y
      << "\" font-family=\"sans-serif\" font-size=\"12\">"
      << series[static_cast<std::size_t>(i)].label << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

// Everything cmd_report needs from one finished evaluation directory.
struct LoadedRun {
  std::string name;
  nlohmann::json report;
};

inline LoadedRun load_run(const std::filesystem::path& dir) {
  std::filesystem::path file = dir / "report.json";
  std::ifstream in(file);
  check_config(in.good(), "cannot open " + file.string());
  LoadedRun run;
  run.name = dir.filename().string();
  if (run.name.empty())
    run.name = dir.parent_path().filename().string();
  try {
    in >> run.report;
  } catch (const nlohmann::json::exception& e) {
    throw RuntimeFailure(file.string() + " is not valid JSON: " + e.what());
  }
  return run;
}

inline void check_runs_comparable(const std::vector<LoadedRun>& runs) {
  check_config(!runs.empty(), "need at least one run directory");
  const nlohmann::json& ref = runs.front().report;
  for (const LoadedRun& r : runs) {
    try {
      bool same = r.report.at("num_classes") == ref.at("num_classes") &&
                  r.report.at("select_delta") == ref.at("select_delta") &&
                  r.report.at("deltas") == ref.at("deltas") &&
                  r.report.at("ranges").size() == ref.at("ranges").size();
      if (same)
        for (const auto& item : ref.at("ranges").items())
          same = same && r.report.at("ranges").contains(item.key()) &&
                 r.report.at("ranges").at(item.key()).at("deltas") ==
                     item.value().at("deltas");
      check_config(same, "run " + r.name +
                             " was evaluated with a different eval spec than " +
                             runs.front().name);
    } catch (const nlohmann::json::exception& e) {
      throw RuntimeFailure("report.json in run " + r.name +
                           " is missing fields: " + e.what());
    }
  }
}

}  // namespace pes
