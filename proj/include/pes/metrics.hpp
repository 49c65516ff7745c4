#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "pes/common.hpp"
#include "pes/dataset.hpp"
#include "pes/spotting.hpp"

namespace pes {

// Tolerance-based average precision for one class.  Predictions are ranked
// by (score desc, video_id, frame asc); each one greedily claims the nearest
// unmatched truth within delta frames of it in the same video, preferring
// the earlier truth on distance ties.  The result integrates the raw
// precision-recall staircase without interpolation.
inline double average_precision(
    std::vector<EventPrediction> preds,
    const std::map<std::string, std::vector<int>>& truths_by_video,
    int delta) {
  check_config(delta >= 0, "delta must be >= 0");
  std::size_t num_truths = 0;
  std::map<std::string, std::vector<char>> used;
  for (const auto& [vid, frames] : truths_by_video) {
    num_truths += frames.size();
    used[vid].assign(frames.size(), 0);
  }
  if (num_truths == 0) return 0.0;

  std::sort(preds.begin(), preds.end(),
            [](const EventPrediction& a, const EventPrediction& b) {
              if (a.score != b.score) return a.score > b.score;
              if (a.video_id != b.video_id) return a.video_id < b.video_id;
              return a.frame < b.frame;
            });

  double ap = 0.0;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const EventPrediction& p = preds[i];
    auto it = truths_by_video.find(p.video_id);
    int best = -1;
    if (it != truths_by_video.end()) {
      const std::vector<int>& frames = it->second;
      std::vector<char>& flags = used[p.video_id];
      int best_dist = delta + 1;
      for (std::size_t j = 0; j < frames.size(); ++j) {
        if (flags[j]) continue;
        int dist = std::abs(frames[j] - p.frame);
        if (dist > delta) continue;
        if (dist < best_dist ||
            (dist == best_dist && best >= 0 &&
             frames[j] < frames[static_cast<std::size_t>(best)])) {
          best_dist = dist;
          best = static_cast<int>(j);
        }
      }
      if (best >= 0) flags[static_cast<std::size_t>(best)] = 1;
    }
    if (best >= 0) {
      ++tp;
      ap += static_cast<double>(tp) / static_cast<double>(i + 1);
    }
  }
  return ap / static_cast<double>(num_truths);
}

inline double mean_ap(const std::vector<double>& included_aps) {
  check_runtime(!included_aps.empty(),
                "mean AP needs at least one class with ground truth");
  double s = 0.0;
  for (double v : included_aps) s += v;
  return s / static_cast<double>(included_aps.size());
}

inline double range_map(const std::map<int, double>& per_delta,
                        const std::vector<int>& delta_set) {
  check_runtime(!delta_set.empty(), "delta range is empty");
  double s = 0.0;
  for (int d : delta_set) {
    auto it = per_delta.find(d);
    check_runtime(it != per_delta.end(),
                  "delta " + std::to_string(d) + " was not evaluated");
    s += it->second;
  }
  return s / static_cast<double>(delta_set.size());
}

struct EvalReport {
  std::vector<int> deltas;
  // delta -> class -> AP; only classes with ground truth appear
  std::map<int, std::map<int, double>> class_ap;
  std::map<int, double> map_at;
  std::map<std::string, double> range_maps;
  std::vector<int> truth_counts;
  std::vector<int> pred_counts;
};

// Scores every prediction set against the ground-truth events at each
// tolerance.  Classes that never occur in the ground truth are reported with
// counts but excluded from every mean.
inline EvalReport evaluate_predictions(
    const std::vector<EventPrediction>& preds,
    const std::vector<VideoRecord>& videos, int num_classes,
    const std::vector<int>& deltas,
    const std::map<std::string, std::vector<int>>& named_ranges) {
  check_config(!deltas.empty(), "need at least one delta tolerance");
  for (int d : deltas) check_config(d >= 0, "delta must be >= 0");

  EvalReport rep;
  rep.deltas = deltas;
  rep.truth_counts.assign(static_cast<std::size_t>(num_classes), 0);
  rep.pred_counts.assign(static_cast<std::size_t>(num_classes), 0);

  std::vector<std::map<std::string, std::vector<int>>> truths(
      static_cast<std::size_t>(num_classes));
  for (const VideoRecord& v : videos) {
    for (const Event& e : v.events) {
      truths[static_cast<std::size_t>(e.class_id)][v.video_id].push_back(
          e.frame);
      rep.truth_counts[static_cast<std::size_t>(e.class_id)]++;
    }
  }
  std::vector<std::vector<EventPrediction>> by_class(
      static_cast<std::size_t>(num_classes));
  for (const EventPrediction& p : preds) {
    check_runtime(p.class_id >= 0 && p.class_id < num_classes,
                  "prediction class out of range");
    by_class[static_cast<std::size_t>(p.class_id)].push_back(p);
    rep.pred_counts[static_cast<std::size_t>(p.class_id)]++;
  }

  for (int d : deltas) {
    std::vector<double> included;
    for (int c = 0; c < num_classes; ++c) {
      if (rep.truth_counts[static_cast<std::size_t>(c)] == 0) continue;
      double ap = average_precision(by_class[static_cast<std::size_t>(c)],
                                    truths[static_cast<std::size_t>(c)], d);
      rep.class_ap[d][c] = ap;
      included.push_back(ap);
    }
    rep.map_at[d] = mean_ap(included);
  }
  for (const auto& [name, set] : named_ranges)
    rep.range_maps[name] = range_map(rep.map_at, set);
  return rep;
}

}  // namespace pes
