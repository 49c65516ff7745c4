#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pes/common.hpp"
#include "pes/rng.hpp"
#include "pes/tensor.hpp"

namespace pes {

struct SyntheticDatasetSpec {
  int num_videos = 40;
  int frames_per_video = 256;
  int height = 16;
  int width = 16;
  int num_classes = 3;
  std::vector<double> class_rates = {10.0, 3.0, 1.0};  // expected events/video
  int min_event_gap = 8;
  double noise_std = 0.05;
  double fps = 25.0;
  std::uint64_t seed = 1;

  void validate() const {
    check_config(num_videos >= 1, "num_videos must be >= 1");
    check_config(frames_per_video >= 1, "frames_per_video must be >= 1");
    check_config(height >= 1 && width >= 1, "height and width must be >= 1");
    check_config(num_classes >= 1, "num_classes must be >= 1");
    check_config(static_cast<int>(class_rates.size()) == num_classes,
                 "class_rates must have one entry per class");
    bool any_positive = false;
    for (double r : class_rates) {
      check_config(r >= 0.0, "class_rates entries must be >= 0");
      if (r > 0.0) any_positive = true;
    }
    check_config(any_positive, "class_rates must contain a positive entry");
    check_config(min_event_gap >= 1, "min_event_gap must be >= 1");
    check_config(noise_std >= 0.0, "noise_std must be >= 0");
    check_config(fps > 0.0, "fps must be > 0");
  }
};

struct Event {
  int frame = 0;
  int class_id = 0;
};

struct VideoRecord {
  std::string video_id;
  Tensor<float> frames;  // [3, N, H, W], values in [0,1]
  std::vector<Event> events;

  int num_frames() const { return frames.dim(1); }
};

// A fixed-length training/evaluation chunk.  valid_len counts the unpadded
// leading frames; rows at or past valid_len are zero-filled and must be
// masked out of losses and score aggregation.
struct VideoClip {
  std::string video_id;
  int start_frame = 0;
  Tensor<float> frames;  // [3, T_s, H, W]
  Tensor<float> labels;  // [T_s, K], entries in [0,1]
  int valid_len = 0;
};

namespace detail {

inline constexpr double kPi = 3.14159265358979323846;

// Each class renders as a sinusoidal grating at its own orientation, written
// into channel (class_id % 3) and faded in/out with a Gaussian envelope of
// one-frame sigma, truncated at +/-3 frames.  The peak lands exactly on the
// event frame, so the event time is recoverable from pixels.
inline void render_event(Tensor<float>& frames, int event_frame, int class_id,
                         int num_classes) {
  const int n = frames.dim(1), h = frames.dim(2), w = frames.dim(3);
  const int ch = class_id % 3;
  const double theta =
      kPi * static_cast<double>(class_id) / static_cast<double>(num_classes);
  const double cx = std::cos(theta), sx = std::sin(theta);
  const double freq = 2.0 * kPi * 3.0 / static_cast<double>(std::max(h, w));
  for (int dt = -3; dt <= 3; ++dt) {
    int t = event_frame + dt;
    if (t < 0 || t >= n) continue;
    double a = std::exp(-0.5 * static_cast<double>(dt) * dt);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double g = 0.5 + 0.5 * std::sin(freq * (cx * x + sx * y));
        float& px = frames.at4(ch, t, y, x);
        double v = (1.0 - 0.9 * a) * px + 0.9 * a * g;
        px = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
}

inline void render_background(Tensor<float>& frames, Rng& rng,
                              double noise_std) {
  const int n = frames.dim(1), h = frames.dim(2), w = frames.dim(3);
  const double phase = rng.uniform(0.0, 2.0 * kPi);
  const double drift = rng.uniform(0.02, 0.08);
  const double angle = rng.uniform(0.0, 2.0 * kPi);
  const double gx = std::cos(angle), gy = std::sin(angle);
  for (int c = 0; c < 3; ++c) {
    for (int t = 0; t < n; ++t) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          double u = (gx * x + gy * y) / static_cast<double>(std::max(h, w));
          double base =
              0.5 + 0.25 * std::sin(2.0 * kPi * u + phase + drift * t);
          double v = base + noise_std * rng.normal();
          frames.at4(c, t, y, x) =
              static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    }
  }
}

}  // namespace detail

// Deterministic synthetic corpus.  Event frames keep min_event_gap distance
// from every other event regardless of class, and stay >= 3 frames from the
// video edges so the full temporal envelope is rendered.
inline std::vector<VideoRecord> generate_dataset(
    const SyntheticDatasetSpec& spec) {
  spec.validate();
  std::vector<VideoRecord> out(static_cast<std::size_t>(spec.num_videos));
  parallel_for(spec.num_videos, [&](int v) {
    Rng rng(spec.seed, "video", static_cast<std::uint64_t>(v));
    VideoRecord rec;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "video_%04d", v);
    rec.video_id = buf;
    rec.frames = Tensor<float>(
        {3, spec.frames_per_video, spec.height, spec.width});
    detail::render_background(rec.frames, rng, spec.noise_std);

    const int lo = 3, hi = spec.frames_per_video - 4;
    for (int c = 0; c < spec.num_classes; ++c) {
      int want = rng.poisson(spec.class_rates[static_cast<std::size_t>(c)]);
      int placed = 0, attempts = 0;
      while (placed < want && attempts < 200 * (want + 1) && lo <= hi) {
        ++attempts;
        int f = static_cast<int>(rng.uniform_int(lo, hi));
        bool clear = true;
        for (const Event& e : rec.events) {
          if (std::abs(e.frame - f) < spec.min_event_gap) {
            clear = false;
            break;
          }
        }
        if (!clear) continue;
        rec.events.push_back({f, c});
        ++placed;
      }
    }
    std::sort(rec.events.begin(), rec.events.end(),
              [](const Event& a, const Event& b) {
                return a.frame != b.frame ? a.frame < b.frame
                                          : a.class_id < b.class_id;
              });
    for (const Event& e : rec.events)
      detail::render_event(rec.frames, e.frame, e.class_id, spec.num_classes);
    out[static_cast<std::size_t>(v)] = std::move(rec);
  });
  return out;
}

// Copies record frames [start, start+T_s) into a zero-padded clip and marks
// label rows at (possibly dilated) event positions.
inline VideoClip cut_clip(const VideoRecord& rec, int start, int clip_len,
                          int num_classes, int dilation) {
  const int n = rec.num_frames(), h = rec.frames.dim(2), w = rec.frames.dim(3);
  VideoClip clip;
  clip.video_id = rec.video_id;
  clip.start_frame = start;
  clip.frames = Tensor<float>({3, clip_len, h, w});
  clip.labels = Tensor<float>({clip_len, num_classes});
  clip.valid_len = std::min(clip_len, n - start);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < 3; ++c) {
    const float* src = rec.frames.data() +
                       (static_cast<std::size_t>(c) * n + start) * plane;
    float* dst =
        clip.frames.data() + static_cast<std::size_t>(c) * clip_len * plane;
    std::copy(src, src + static_cast<std::size_t>(clip.valid_len) * plane, dst);
  }
  for (const Event& e : rec.events) {
    for (int d = -dilation; d <= dilation; ++d) {
      int row = e.frame + d - start;
      if (row >= 0 && row < clip.valid_len)
        clip.labels.at2(row, e.class_id) = 1.0f;
    }
  }
  return clip;
}

// Uniform-random training clips; clips may overlap.  Videos shorter than the
// clip length produce a single zero-padded clip with valid_len < clip_len.
inline std::vector<VideoClip> sample_training_clips(const VideoRecord& rec,
                                                    int clips_per_video,
                                                    int clip_len,
                                                    int num_classes,
                                                    int dilation, Rng& rng) {
  check_config(clip_len >= 1, "clip length must be >= 1");
  check_config(dilation >= 0, "label dilation must be >= 0");
  std::vector<VideoClip> clips;
  clips.reserve(static_cast<std::size_t>(clips_per_video));
  const int max_start = std::max(0, rec.num_frames() - clip_len);
  for (int i = 0; i < clips_per_video; ++i) {
    int start = static_cast<int>(rng.uniform_int(0, max_start));
    clips.push_back(
        cut_clip(rec, start, clip_len, num_classes, dilation));
  }
  return clips;
}

// Half-overlapping sliding windows covering every frame of the record.  The
// final window is zero-padded; padded rows carry valid_len < clip_len.
inline std::vector<VideoClip> evaluation_windows(const VideoRecord& rec,
                                                 int clip_len, int num_classes,
                                                 int dilation = 0) {
  check_config(clip_len >= 2 && clip_len % 2 == 0,
               "evaluation clip length must be even and >= 2");
  std::vector<VideoClip> windows;
  const int n = rec.num_frames();
  int start = 0;
  while (start + clip_len < n) {
    windows.push_back(
        cut_clip(rec, start, clip_len, num_classes, dilation));
    start += clip_len / 2;
  }
  windows.push_back(
      cut_clip(rec, start, clip_len, num_classes, dilation));
  return windows;
}

// ---------------------------------------------------------------------------
// On-disk layout: <root>/manifest.json plus one directory per video holding
// frames.bin (raw little-endian float32, [3,N,H,W] order) and
// annotations.json with the event list and metadata.

inline void save_dataset(const std::filesystem::path& root,
                         const SyntheticDatasetSpec& spec,
                         const std::vector<VideoRecord>& videos) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(root, ec);
  check_runtime(!ec, "cannot create dataset directory " + root.string());

  nlohmann::json manifest;
  manifest["num_classes"] = spec.num_classes;
  manifest["height"] = spec.height;
  manifest["width"] = spec.width;
  manifest["fps"] = spec.fps;
  manifest["seed"] = spec.seed;
  manifest["videos"] = nlohmann::json::array();

  for (const VideoRecord& rec : videos) {
    fs::path dir = root / rec.video_id;
    fs::create_directories(dir, ec);
    check_runtime(!ec, "cannot create video directory " + dir.string());

    std::ofstream bin(dir / "frames.bin", std::ios::binary);
    check_runtime(bin.good(), "cannot write " + (dir / "frames.bin").string());
    bin.write(reinterpret_cast<const char*>(rec.frames.data()),
              static_cast<std::streamsize>(rec.frames.numel() * sizeof(float)));
    check_runtime(bin.good(), "short write to " + (dir / "frames.bin").string());
    bin.close();

    nlohmann::json ann;
    ann["video_id"] = rec.video_id;
    ann["num_frames"] = rec.num_frames();
    ann["height"] = rec.frames.dim(2);
    ann["width"] = rec.frames.dim(3);
    ann["fps"] = spec.fps;
    ann["num_classes"] = spec.num_classes;
    nlohmann::json names = nlohmann::json::array();
    for (int c = 0; c < spec.num_classes; ++c)
      names.push_back("class_" + std::to_string(c));
    ann["class_names"] = names;
    nlohmann::json evs = nlohmann::json::array();
    for (const Event& e : rec.events)
      evs.push_back({{"frame", e.frame}, {"class", e.class_id}});
    ann["events"] = evs;
    std::ofstream af(dir / "annotations.json");
    check_runtime(af.good(),
                  "cannot write " + (dir / "annotations.json").string());
    af << ann.dump(2) << "\n";

    manifest["videos"].push_back(rec.video_id);
  }

  std::ofstream mf(root / "manifest.json");
  check_runtime(mf.good(), "cannot write " + (root / "manifest.json").string());
  mf << manifest.dump(2) << "\n";
}

struct LoadedDataset {
  int num_classes = 0;
  int height = 0;
  int width = 0;
  double fps = 25.0;
  std::vector<VideoRecord> videos;
};

inline LoadedDataset load_dataset(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  std::ifstream mf(root / "manifest.json");
  check_runtime(mf.good(), "cannot open " + (root / "manifest.json").string());
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw RuntimeFailure("bad manifest.json: " + std::string(e.what()));
  }

  LoadedDataset ds;
  ds.num_classes = manifest.at("num_classes").get<int>();
  ds.height = manifest.at("height").get<int>();
  ds.width = manifest.at("width").get<int>();
  ds.fps = manifest.at("fps").get<double>();
  check_runtime(ds.num_classes >= 1 && ds.height >= 1 && ds.width >= 1,
                "manifest.json has invalid dimensions");

  for (const auto& vid : manifest.at("videos")) {
    fs::path dir = root / vid.get<std::string>();
    std::ifstream af(dir / "annotations.json");
    check_runtime(af.good(),
                  "cannot open " + (dir / "annotations.json").string());
    nlohmann::json ann;
    try {
      af >> ann;
    } catch (const nlohmann::json::exception& e) {
      throw RuntimeFailure("bad annotations.json in " + dir.string() + ": " +
                           e.what());
    }
    VideoRecord rec;
    rec.video_id = ann.at("video_id").get<std::string>();
    int n = ann.at("num_frames").get<int>();
    check_runtime(n >= 1, "annotations.json: num_frames must be >= 1");
    rec.frames = Tensor<float>({3, n, ds.height, ds.width});
    std::ifstream bin(dir / "frames.bin", std::ios::binary);
    check_runtime(bin.good(), "cannot open " + (dir / "frames.bin").string());
    bin.read(reinterpret_cast<char*>(rec.frames.data()),
             static_cast<std::streamsize>(rec.frames.numel() * sizeof(float)));
    check_runtime(bin.gcount() == static_cast<std::streamsize>(
                                      rec.frames.numel() * sizeof(float)),
                  "frames.bin truncated in " + dir.string());
    for (const auto& e : ann.at("events")) {
      Event ev{e.at("frame").get<int>(), e.at("class").get<int>()};
      check_runtime(ev.frame >= 0 && ev.frame < n,
                    "event frame out of range in " + dir.string());
      check_runtime(ev.class_id >= 0 && ev.class_id < ds.num_classes,
                    "event class out of range in " + dir.string());
      rec.events.push_back(ev);
    }
    ds.videos.push_back(std::move(rec));
  }
  return ds;
}

}  // namespace pes
