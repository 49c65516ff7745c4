#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "pes/common.hpp"
#include "pes/tensor.hpp"

namespace pes {

// Per-frame class scores for one whole video, averaged across the sliding
// windows that covered each frame.
struct FrameScoreTrack {
  std::string video_id;
  Tensor<float> scores;       // [N, K]
  std::vector<int> coverage;  // windows contributing to each frame
};

struct EventPrediction {
  std::string video_id;
  int frame = 0;
  int class_id = 0;
  float score = 0.0f;
};

struct WindowScores {
  int start = 0;
  Tensor<float> scores;  // [T_s, K]
  int valid_len = 0;     // trailing padded rows are excluded
};

inline FrameScoreTrack aggregate_windows(const std::string& video_id,
                                         int num_frames, int num_classes,
                                         const std::vector<WindowScores>& wins) {
  FrameScoreTrack track;
  track.video_id = video_id;
  track.scores = Tensor<float>({num_frames, num_classes});
  track.coverage.assign(static_cast<std::size_t>(num_frames), 0);
  for (const WindowScores& w : wins) {
    check_runtime(w.scores.dim(1) == num_classes,
                  "window score width mismatch in " + video_id);
    for (int r = 0; r < w.valid_len; ++r) {
      int f = w.start + r;
      check_runtime(f >= 0 && f < num_frames,
                    "window row outside video in " + video_id);
      track.coverage[static_cast<std::size_t>(f)]++;
      for (int c = 0; c < num_classes; ++c)
        track.scores.at2(f, c) += w.scores.at2(r, c);
    }
  }
  for (int f = 0; f < num_frames; ++f) {
    int cov = track.coverage[static_cast<std::size_t>(f)];
    check_runtime(cov >= 1, "frame " + std::to_string(f) +
                                " of " + video_id + " covered by no window");
    for (int c = 0; c < num_classes; ++c)
      track.scores.at2(f, c) /= static_cast<float>(cov);
  }
  return track;
}

// Iterative peak picking with linear in-window suppression.  `window` is the
// full suppression diameter: a selected peak at t* rescales every frame with
// |t - t*| < window/2 by |t - t*| / (window/2), which removes t* itself.
// Emitted predictions carry the frame's original aggregated score; the
// decayed values only steer selection order and the stopping rule, so
// re-running on a track rebuilt from the survivors reproduces them exactly.
inline std::vector<EventPrediction> soft_nms(const FrameScoreTrack& track,
                                             int window,
                                             double score_threshold) {
  check_config(window >= 1, "suppression window must be >= 1");
  const int n = track.scores.dim(0), k = track.scores.dim(1);
  const double radius = static_cast<double>(window) / 2.0;
  std::vector<EventPrediction> out;
  std::vector<float> work(static_cast<std::size_t>(n));
  for (int c = 0; c < k; ++c) {
    for (int f = 0; f < n; ++f)
      work[static_cast<std::size_t>(f)] = track.scores.at2(f, c);
    for (;;) {
      int best = -1;
      float best_score = 0.0f;
      for (int f = 0; f < n; ++f) {
        if (work[static_cast<std::size_t>(f)] > best_score) {
          best_score = work[static_cast<std::size_t>(f)];
          best = f;
        }
      }
      if (best < 0 || static_cast<double>(best_score) < score_threshold) break;
      out.push_back({track.video_id, best, c, track.scores.at2(best, c)});
      int lo = std::max(0, best - (window - 1) / 2 - 1);
      int hi = std::min(n - 1, best + (window - 1) / 2 + 1);
      for (int f = lo; f <= hi; ++f) {
        double d = std::abs(f - best);
        if (d < radius)
          work[static_cast<std::size_t>(f)] = static_cast<float>(
              work[static_cast<std::size_t>(f)] * (d / radius));
      }
    }
  }
  std::sort(out.begin(), out.end(),
            [](const EventPrediction& a, const EventPrediction& b) {
              if (a.score != b.score) return a.score > b.score;
              if (a.class_id != b.class_id) return a.class_id < b.class_id;
              return a.frame < b.frame;
            });
  return out;
}

// One tab-separated record per prediction, ordered by (video_id, class name,
// score descending, frame); scores print with enough digits to round-trip.
inline void write_predictions(const std::filesystem::path& path,
                              std::vector<EventPrediction> preds,
                              const std::vector<std::string>& class_names) {
  for (const EventPrediction& p : preds)
    check_runtime(p.class_id >= 0 &&
                      p.class_id < static_cast<int>(class_names.size()),
                  "prediction class id out of range");
  std::sort(preds.begin(), preds.end(),
            [&](const EventPrediction& a, const EventPrediction& b) {
              if (a.video_id != b.video_id) return a.video_id < b.video_id;
              const std::string& ca = class_names[static_cast<std::size_t>(a.class_id)];
              const std::string& cb = class_names[static_cast<std::size_t>(b.class_id)];
              if (ca != cb) return ca < cb;
              if (a.score != b.score) return a.score > b.score;
              return a.frame < b.frame;
            });
  std::ofstream out(path);
  check_runtime(out.good(), "cannot write " + path.string());
  out << "video_id\tframe\tclass\tscore\n";
  char buf[64];
  for (const EventPrediction& p : preds) {
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(p.score));
    out << p.video_id << '\t' << p.frame << '\t'
        << class_names[static_cast<std::size_t>(p.class_id)] << '\t' << buf
        << '\n';
  }
  check_runtime(out.good(), "short write to " + path.string());
}

inline std::vector<EventPrediction> read_predictions(
    const std::filesystem::path& path,
    const std::vector<std::string>& class_names) {
  std::ifstream in(path);
  check_runtime(in.good(), "cannot open " + path.string());
  std::string line;
  std::getline(in, line);  // header
  std::vector<EventPrediction> preds;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      std::size_t tab = line.find('\t', pos);
      if (tab == std::string::npos) {
        cols.push_back(line.substr(pos));
        break;
      }
      cols.push_back(line.substr(pos, tab - pos));
      pos = tab + 1;
    }
    check_runtime(cols.size() == 4, "bad prediction record: " + line);
    EventPrediction p;
    p.video_id = cols[0];
    p.frame = std::stoi(cols[1]);
    auto it = std::find(class_names.begin(), class_names.end(), cols[2]);
    check_runtime(it != class_names.end(), "unknown class name: " + cols[2]);
    p.class_id = static_cast<int>(it - class_names.begin());
    p.score = std::stof(cols[3]);
    preds.push_back(std::move(p));
  }
  return preds;
}

}  // namespace pes
