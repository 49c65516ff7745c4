#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pes/common.hpp"
#include "pes/dataset.hpp"
#include "pes/losses.hpp"
#include "pes/network.hpp"
#include "pes/optim.hpp"

namespace pes {

namespace detail {

// Read-through view over one JSON object that remembers which keys were
// consumed.  finish() turns leftovers into errors, so typos in a config file
// fail loudly instead of silently keeping a default.
class StrictView {
 public:
  StrictView(const nlohmann::json& j, std::string path)
      : j_(j), path_(std::move(path)) {
    check_config(j_.is_object(), path_ + " must be a JSON object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!j_.contains(key)) return fallback;
    seen_.insert(key);
    return read<T>(key);
  }

  template <typename T>
  T require(const std::string& key) {
    check_config(j_.contains(key), path_ + "." + key + " is required");
    seen_.insert(key);
    return read<T>(key);
  }

  const nlohmann::json* section(const std::string& key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    const nlohmann::json& s = j_.at(key);
    check_config(s.is_object(), path_ + "." + key + " must be a JSON object");
    return &s;
  }

  void finish() {
    for (const auto& item : j_.items())
      check_config(seen_.count(item.key()) != 0,
                   path_ + "." + item.key() + " is not a recognized key");
  }

  const std::string& path() const { return path_; }

 private:
  template <typename T>
  T read(const std::string& key) {
    try {
      return j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(path_ + "." + key + " has the wrong type");
    }
  }

  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

// Post-processing and scoring parameters for the evaluation pipeline.
struct EvalConfig {
  int nms_window = 8;
  double score_threshold = 0.3;
  int select_delta = 1;                // tolerance used for model selection
  std::vector<int> deltas{1, 2, 3, 4};
  std::map<std::string, std::vector<double>> range_seconds;

  void validate() const {
    check_config(nms_window >= 1, "eval.nms_window must be >= 1");
    check_config(score_threshold >= 0.0 && score_threshold <= 1.0,
                 "eval.score_threshold must lie in [0, 1]");
    check_config(select_delta >= 0, "eval.select_delta must be >= 0");
    check_config(!deltas.empty(), "eval.deltas must not be empty");
    for (int d : deltas) check_config(d >= 0, "eval.deltas entries must be >= 0");
    for (const auto& [name, secs] : range_seconds) {
      check_config(!name.empty(), "eval.ranges names must not be empty");
      check_config(!secs.empty(),
                   "eval.ranges." + name + " must list at least one tolerance");
      for (double s : secs)
        check_config(s >= 0.0, "eval.ranges." + name + " entries must be >= 0");
    }
  }

  // Named second-based ranges become frame tolerances at the dataset's rate.
  std::map<std::string, std::vector<int>> ranges_in_frames(double fps) const {
    std::map<std::string, std::vector<int>> out;
    for (const auto& [name, secs] : range_seconds) {
      std::set<int> frames;
      for (double s : secs)
        frames.insert(static_cast<int>(std::lround(s * fps)));
      out[name] = std::vector<int>(frames.begin(), frames.end());
    }
    return out;
  }

  // Every tolerance the report must cover: the configured list, the selection
  // tolerance, and all frames any named range needs.
  std::vector<int> all_deltas(double fps) const {
    std::set<int> all(deltas.begin(), deltas.end());
    all.insert(select_delta);
    for (const auto& [name, frames] : ranges_in_frames(fps))
      all.insert(frames.begin(), frames.end());
    return std::vector<int>(all.begin(), all.end());
  }
};

struct TrainConfig {
  SyntheticDatasetSpec dataset;
  BackboneSpec backbone;
  TemporalKind temporal_kind = TemporalKind::bigru;
  int temporal_hidden = 0;
  int embed_dim = 128;
  LossConfig loss;
  std::string contrastive_mode = "softic";  // softic | ic | none
  int bank_capacity = 256;
  int sic_warmup_epochs = 1;
  OptimConfig optim;
  std::string sam_mode = "asam";  // asam | sam | none
  int clip_len = 128;
  int clips_per_video = 4;
  int batch_size = 2;
  int epochs = 30;
  int label_dilation = 1;
  double val_fraction = 0.2;
  std::uint64_t seed = 1;
  EvalConfig eval;

  void validate() const {
    dataset.validate();
    check_config(!backbone.widths.empty(), "backbone.widths must not be empty");
    check_config(backbone.widths.size() == backbone.blocks.size() &&
                     backbone.widths.size() == backbone.strides.size(),
                 "backbone.widths, blocks and strides must be equally long");
    for (int w : backbone.widths)
      check_config(w >= 1, "backbone.widths entries must be >= 1");
    for (int b : backbone.blocks)
      check_config(b >= 1, "backbone.blocks entries must be >= 1");
    for (int s : backbone.strides)
      check_config(s >= 1, "backbone.strides entries must be >= 1");
    check_config(backbone.bottleneck_ratio >= 1,
                 "backbone.bottleneck_ratio must be >= 1");
    check_config(backbone.astrm_kernel_t >= 1 && backbone.astrm_kernel_t % 2 == 1,
                 "backbone.astrm_kernel_t must be odd and >= 1");
    check_config(backbone.astrm_ratio_t >= 1, "backbone.astrm_ratio_t must be >= 1");
    check_config(backbone.astrm_ratio_g >= 1, "backbone.astrm_ratio_g must be >= 1");
    check_config(temporal_hidden >= 0, "temporal.hidden must be >= 0");
    check_config(embed_dim >= 1, "temporal.embed_dim must be >= 1");
    loss.validate();
    check_config(contrastive_mode == "softic" || contrastive_mode == "ic" ||
                     contrastive_mode == "none",
                 "loss.mode must be one of softic, ic, none");
    check_config(bank_capacity >= dataset.num_classes,
                 "loss.bank_capacity must be >= the class count");
    check_config(sic_warmup_epochs >= 0,
                 "loss.sic_warmup_epochs must be >= 0");
    check_config(clip_len >= 2 && clip_len % 2 == 0,
                 "train.clip_len must be even and >= 2");
    check_config(backbone.astrm_kernel_t <= clip_len,
                 "backbone.astrm_kernel_t must not exceed train.clip_len");
    check_config(clips_per_video >= 1, "train.clips_per_video must be >= 1");
    check_config(batch_size >= 1, "train.batch_size must be >= 1");
    check_config(epochs >= 1, "train.epochs must be >= 1");
    check_config(label_dilation >= 0, "train.label_dilation must be >= 0");
    check_config(val_fraction >= 0.0 && val_fraction < 1.0,
                 "train.val_fraction must lie in [0, 1)");
    optim.validate();
    check_config(sam_mode == "asam" || sam_mode == "sam" || sam_mode == "none",
                 "optim.sam must be one of asam, sam, none");
    check_config(optim.total_epochs == epochs,
                 "optim.total_epochs must equal train.epochs");
    eval.validate();
  }

  ModelSpec model_spec(int num_classes) const {
    ModelSpec ms;
    ms.backbone = backbone;
    ms.temporal = temporal_kind;
    ms.temporal_hidden = temporal_hidden;
    ms.num_classes = num_classes;
    ms.clip_len = clip_len;
    ms.embed_dim = embed_dim;
    return ms;
  }
};

inline TemporalKind parse_temporal_kind(const std::string& s) {
  if (s == "bigru") return TemporalKind::bigru;
  if (s == "bilstm") return TemporalKind::bilstm;
  if (s == "identity") return TemporalKind::identity;
  throw ConfigError("temporal.kind must be one of bigru, bilstm, identity");
}

inline TrainConfig parse_train_config(const nlohmann::json& j) {
  TrainConfig cfg;
  detail::StrictView root(j, "config");

  if (const nlohmann::json* s = root.section("dataset")) {
    detail::StrictView v(*s, "dataset");
    cfg.dataset.num_videos = v.get("num_videos", cfg.dataset.num_videos);
    cfg.dataset.frames_per_video =
        v.get("frames_per_video", cfg.dataset.frames_per_video);
    cfg.dataset.height = v.get("height", cfg.dataset.height);
    cfg.dataset.width = v.get("width", cfg.dataset.width);
    cfg.dataset.num_classes = v.get("num_classes", cfg.dataset.num_classes);
    cfg.dataset.class_rates = v.get("class_rates", cfg.dataset.class_rates);
    cfg.dataset.min_event_gap = v.get("min_event_gap", cfg.dataset.min_event_gap);
    cfg.dataset.noise_std = v.get("noise_std", cfg.dataset.noise_std);
    cfg.dataset.fps = v.get("fps", cfg.dataset.fps);
    cfg.dataset.seed = v.get("seed", cfg.dataset.seed);
    v.finish();
  }

  if (const nlohmann::json* s = root.section("backbone")) {
    detail::StrictView v(*s, "backbone");
    cfg.backbone.widths = v.get("widths", cfg.backbone.widths);
    cfg.backbone.blocks = v.get("blocks", cfg.backbone.blocks);
    cfg.backbone.strides = v.get("strides", cfg.backbone.strides);
    cfg.backbone.bottleneck_ratio =
        v.get("bottleneck_ratio", cfg.backbone.bottleneck_ratio);
    cfg.backbone.use_astrm = v.get("astrm", cfg.backbone.use_astrm);
    cfg.backbone.astrm_kernel_t =
        v.get("astrm_kernel_t", cfg.backbone.astrm_kernel_t);
    cfg.backbone.astrm_ratio_t =
        v.get("astrm_ratio_t", cfg.backbone.astrm_ratio_t);
    cfg.backbone.astrm_ratio_g =
        v.get("astrm_ratio_g", cfg.backbone.astrm_ratio_g);
    v.finish();
  }

  if (const nlohmann::json* s = root.section("temporal")) {
    detail::StrictView v(*s, "temporal");
    cfg.temporal_kind =
        parse_temporal_kind(v.get<std::string>("kind", "bigru"));
    cfg.temporal_hidden = v.get("hidden", cfg.temporal_hidden);
    cfg.embed_dim = v.get("embed_dim", cfg.embed_dim);
    v.finish();
  }

  if (const nlohmann::json* s = root.section("loss")) {
    detail::StrictView v(*s, "loss");
    cfg.loss.tau = v.get("tau", cfg.loss.tau);
    cfg.loss.lambda_sic = v.get("lambda_sic", cfg.loss.lambda_sic);
    cfg.loss.mixup_alpha = v.get("mixup_alpha", cfg.loss.mixup_alpha);
    cfg.loss.mixup_enabled = v.get("mixup", cfg.loss.mixup_enabled);
    cfg.contrastive_mode = v.get<std::string>("mode", cfg.contrastive_mode);
    cfg.bank_capacity = v.get("bank_capacity", cfg.bank_capacity);
    cfg.sic_warmup_epochs = v.get("sic_warmup_epochs", cfg.sic_warmup_epochs);
    v.finish();
  }

  if (const nlohmann::json* s = root.section("optim")) {
    detail::StrictView v(*s, "optim");
    cfg.optim.base_lr = v.get("base_lr", cfg.optim.base_lr);
    cfg.optim.warmup_lr = v.get("warmup_lr", cfg.optim.warmup_lr);
    cfg.optim.weight_decay = v.get("weight_decay", cfg.optim.weight_decay);
    cfg.optim.beta1 = v.get("beta1", cfg.optim.beta1);
    cfg.optim.beta2 = v.get("beta2", cfg.optim.beta2);
    cfg.optim.eps = v.get("eps", cfg.optim.eps);
    cfg.sam_mode = v.get<std::string>("sam", cfg.sam_mode);
    cfg.optim.rho = v.get("rho", cfg.optim.rho);
    cfg.optim.eta_asam = v.get("eta_asam", cfg.optim.eta_asam);
    cfg.optim.warmup_epochs = v.get("warmup_epochs", cfg.optim.warmup_epochs);
    v.finish();
  }

  if (const nlohmann::json* s = root.section("train")) {
    detail::StrictView v(*s, "train");
    cfg.clip_len = v.get("clip_len", cfg.clip_len);
    cfg.clips_per_video = v.get("clips_per_video", cfg.clips_per_video);
    cfg.batch_size = v.get("batch_size", cfg.batch_size);
    cfg.epochs = v.get("epochs", cfg.epochs);
    cfg.label_dilation = v.get("label_dilation", cfg.label_dilation);
    cfg.val_fraction = v.get("val_fraction", cfg.val_fraction);
    cfg.seed = v.get("seed", cfg.seed);
    v.finish();
  }

  if (const nlohmann::json* s = root.section("eval")) {
    detail::StrictView v(*s, "eval");
    cfg.eval.nms_window = v.get("nms_window", cfg.eval.nms_window);
    cfg.eval.score_threshold =
        v.get("score_threshold", cfg.eval.score_threshold);
    cfg.eval.select_delta = v.get("select_delta", cfg.eval.select_delta);
    cfg.eval.deltas = v.get("deltas", cfg.eval.deltas);
    if (const nlohmann::json* r = v.section("ranges")) {
      for (const auto& item : r->items()) {
        check_config(item.value().is_array(),
                     "eval.ranges." + item.key() + " must be an array");
        try {
          cfg.eval.range_seconds[item.key()] =
              item.value().get<std::vector<double>>();
        } catch (const nlohmann::json::exception&) {
          throw ConfigError("eval.ranges." + item.key() +
                            " must list numbers of seconds");
        }
      }
    }
    v.finish();
  }

  root.finish();

  cfg.optim.sam_enabled = cfg.sam_mode != "none";
  cfg.optim.adaptive = cfg.sam_mode == "asam";
  cfg.optim.total_epochs = cfg.epochs;

  cfg.validate();
  return cfg;
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  check_config(in.good(), "cannot open config file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + path.string() +
                      " is not valid JSON: " + e.what());
  }
  return parse_train_config(j);
}

}  // namespace pes
