#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "pes/checkpoint.hpp"
#include "pes/config.hpp"
#include "pes/dataset.hpp"
#include "pes/losses.hpp"
#include "pes/metrics.hpp"
#include "pes/network.hpp"
#include "pes/optim.hpp"
#include "pes/spotting.hpp"
#include "pes/tape.hpp"

namespace pes {

// FNV-1a over the video id.  Validation membership depends only on the id,
// so the split survives reordering or regenerating the corpus.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

struct TrainValSplit {
  std::vector<int> train, val;  // indices into the video list, ascending
};

inline TrainValSplit split_train_val(const std::vector<VideoRecord>& videos,
                                     double val_fraction) {
  check_config(val_fraction >= 0.0 && val_fraction < 1.0,
               "train.val_fraction must lie in [0, 1)");
  const int n = static_cast<int>(videos.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    std::uint64_t ha = fnv1a(videos[static_cast<std::size_t>(a)].video_id);
    std::uint64_t hb = fnv1a(videos[static_cast<std::size_t>(b)].video_id);
    if (ha != hb) return ha < hb;
    return videos[static_cast<std::size_t>(a)].video_id <
           videos[static_cast<std::size_t>(b)].video_id;
  });
  int n_val = static_cast<int>(
      std::ceil(val_fraction * static_cast<double>(n)));
  n_val = std::min(n_val, n - 1);  // always keep something to train on
  TrainValSplit split;
  split.val.assign(order.begin(), order.begin() + n_val);
  split.train.assign(order.begin() + n_val, order.end());
  std::sort(split.val.begin(), split.val.end());
  std::sort(split.train.begin(), split.train.end());
  return split;
}

// Sliding-window inference for one video: forward every half-overlapping
// window in eval mode, average the per-frame scores, then pick peaks.
inline std::vector<EventPrediction> score_video(Model<float>& model,
                                                const VideoRecord& rec,
                                                const EvalConfig& eval) {
  std::vector<VideoClip> wins = evaluation_windows(
      rec, model.spec.clip_len, model.spec.num_classes, 0);
  std::vector<WindowScores> scored;
  scored.reserve(wins.size());
  for (const VideoClip& w : wins) {
    Tape<float> t;
    ModelOutput<float> out = model.forward(t, w.frames, false, nullptr);
    scored.push_back({w.start_frame, t.val(out.scores), w.valid_len});
  }
  FrameScoreTrack track = aggregate_windows(
      rec.video_id, rec.num_frames(), model.spec.num_classes, scored);
  return soft_nms(track, eval.nms_window, eval.score_threshold);
}

// Videos are independent at inference time (forward passes never write to
// the model), so they are scored in parallel and concatenated in input order.
inline std::vector<EventPrediction> score_videos(
    Model<float>& model, const std::vector<VideoRecord>& videos,
    const std::vector<int>& indices, const EvalConfig& eval) {
  std::vector<std::vector<EventPrediction>> per_video(indices.size());
  parallel_for(static_cast<int>(indices.size()), [&](int i) {
    per_video[static_cast<std::size_t>(i)] = score_video(
        model, videos[static_cast<std::size_t>(indices[static_cast<std::size_t>(i)])],
        eval);
  });
  std::vector<EventPrediction> all;
  for (const std::vector<EventPrediction>& p : per_video)
    all.insert(all.end(), p.begin(), p.end());
  return all;
}

// Ground truth carriers for the metrics layer; frames stay behind.
inline std::vector<VideoRecord> truth_records(
    const std::vector<VideoRecord>& videos, const std::vector<int>& indices) {
  std::vector<VideoRecord> out;
  out.reserve(indices.size());
  for (int vi : indices) {
    VideoRecord r;
    r.video_id = videos[static_cast<std::size_t>(vi)].video_id;
    r.events = videos[static_cast<std::size_t>(vi)].events;
    out.push_back(std::move(r));
  }
  return out;
}

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double bce = 0.0;
  double sic = 0.0;
  double total = 0.0;
  int skipped = 0;      // cumulative skipped optimizer steps
  double val_map = -1;  // -1 when there is no validation split
};

struct TrainOutcome {
  CheckpointMeta meta;
  std::vector<EpochStats> epochs;  // epochs run by this call
  std::filesystem::path last_path, best_path;
};

// Full training loop: per-epoch clip sampling, mixup, the combined objective
// against the current memory bank, sharpness-aware steps, per-epoch
// validation mAP at the selection tolerance, and last/best checkpoints.
// Resuming from last.ckpt continues the identical trajectory because every
// random draw is keyed by (seed, epoch) and the checkpoint restores the
// optimizer moments, the bank contents and the progress counters.
// max_epochs_this_run caps how many epochs one invocation advances (-1 for
// no cap); schedules still span cfg.epochs, so a capped run followed by a
// resume retraces the uninterrupted trajectory.
inline TrainOutcome train_model(const TrainConfig& cfg,
                                const std::vector<VideoRecord>& videos,
                                int num_classes,
                                const std::filesystem::path& out_dir,
                                const std::filesystem::path& resume_path = {},
                                std::ostream* log = nullptr,
                                int max_epochs_this_run = -1) {
  check_config(num_classes >= 1, "dataset must declare >= 1 class");
  check_config(cfg.bank_capacity >= num_classes,
               "loss.bank_capacity must be >= the dataset's class count");
  check_config(!videos.empty(), "dataset has no videos");

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  check_runtime(!ec, "cannot create output directory " + out_dir.string());

  ModelSpec mspec = cfg.model_spec(num_classes);
  OptimConfig ocfg = cfg.optim;
  ocfg.sam_enabled = cfg.sam_mode != "none";
  ocfg.adaptive = cfg.sam_mode == "asam";
  ocfg.total_epochs = cfg.epochs;

  std::optional<LoadedCheckpoint> lc;
  if (!resume_path.empty()) {
    lc = load_checkpoint(resume_path);
    check_config(detail::model_spec_to_json(lc->model.spec) ==
                     detail::model_spec_to_json(mspec),
                 "checkpoint model does not match the configuration");
  }
  Model<float> model =
      lc ? std::move(lc->model) : Model<float>(mspec, cfg.seed);
  SamOptimizer<float> opt(ocfg, model.parameters());
  MemoryBank<float> bank(num_classes, cfg.bank_capacity);
  CheckpointMeta meta;
  if (lc) {
    meta = lc->meta;
    if (lc->has_adam) opt.base().slots() = std::move(lc->adam_slots);
    opt.base().set_step_count(meta.step_count);
    opt.set_skipped_steps(meta.skipped_steps);
    if (lc->has_bank) {
      check_config(lc->bank_capacity == cfg.bank_capacity,
                   "checkpoint bank capacity does not match the configuration");
      bank = std::move(lc->bank);
    }
  }

  TrainValSplit split = split_train_val(videos, cfg.val_fraction);

  LossConfig lcfg = cfg.loss;
  const bool collect_embeddings = cfg.contrastive_mode != "none";
  if (!collect_embeddings || lcfg.lambda_sic <= 0.0) lcfg.lambda_sic = 0.0;
  const bool soft_weights = cfg.contrastive_mode == "softic";

  TrainOutcome outcome;
  outcome.last_path = out_dir / "last.ckpt";
  outcome.best_path = out_dir / "best.ckpt";

  std::filesystem::path tsv_path = out_dir / "train_log.tsv";
  const bool fresh_log =
      meta.epoch_next == 0 || !std::filesystem::exists(tsv_path);
  std::ofstream tsv(tsv_path, fresh_log ? std::ios::trunc : std::ios::app);
  check_runtime(tsv.good(), "cannot write " + tsv_path.string());
  tsv << std::setprecision(10);
  if (fresh_log) tsv << "epoch\tlr\tbce\tsic\ttotal\tskipped\tval_map\n";

  const int bs = cfg.batch_size;
  struct BankPush {
    std::vector<float> z;
    int class_id = 0;
    float w = 1.0f;
  };

  int stop_epoch = cfg.epochs;
  if (max_epochs_this_run >= 0)
    stop_epoch = std::min(cfg.epochs, meta.epoch_next + max_epochs_this_run);

  for (int e = meta.epoch_next; e < stop_epoch; ++e) {
    Rng rng(cfg.seed, "epoch", static_cast<std::uint64_t>(e));

    // The bank fills during warm-up epochs but the contrastive term stays off.
    LossConfig elcfg = lcfg;
    if (e < cfg.sic_warmup_epochs) elcfg.lambda_sic = 0.0;

    std::vector<VideoClip> pool;
    pool.reserve(split.train.size() *
                 static_cast<std::size_t>(cfg.clips_per_video));
    for (int vi : split.train) {
      std::vector<VideoClip> clips = sample_training_clips(
          videos[static_cast<std::size_t>(vi)], cfg.clips_per_video,
          cfg.clip_len, num_classes, cfg.label_dilation, rng);
      for (VideoClip& c : clips) pool.push_back(std::move(c));
    }
    rng.shuffle(pool);

    const int pool_size = static_cast<int>(pool.size());
    const int num_batches = (pool_size + bs - 1) / bs;
    double ep_bce = 0.0, ep_sic = 0.0, ep_total = 0.0;
    const double lr_first =
        lr_at(static_cast<double>(e) / cfg.epochs, ocfg);

    for (int b = 0; b < num_batches; ++b) {
      const int lo = b * bs;
      const int hi = std::min(pool_size, lo + bs);
      const int nb = hi - lo;

      std::vector<VideoClip> batch;
      batch.reserve(static_cast<std::size_t>(nb));
      for (int i = lo; i < hi; ++i) {
        if (lcfg.mixup_enabled) {
          float lambda = static_cast<float>(
              draw_mixup_lambda(rng, lcfg.mixup_alpha));
          int partner = static_cast<int>(rng.uniform_int(0, pool_size - 1));
          batch.push_back(mixup(pool[static_cast<std::size_t>(i)],
                                pool[static_cast<std::size_t>(partner)],
                                lambda));
        } else {
          batch.push_back(pool[static_cast<std::size_t>(i)]);
        }
      }

      const double f =
          (static_cast<double>(e) + static_cast<double>(b) / num_batches) /
          cfg.epochs;
      const double lr = lr_at(f, ocfg);

      double bce_sum = 0.0, sic_sum = 0.0;
      std::vector<BankPush> pushes;

      auto loss_fn = [&](bool first) -> double {
        if (first) {
          bce_sum = sic_sum = 0.0;
          pushes.clear();
        }
        BnUpdateList<float> updates;
        double total = 0.0;
        for (const VideoClip& clip : batch) {
          Tape<float> t;
          ModelOutput<float> out =
              model.forward(t, clip.frames, true, &updates);
          auto targets = std::make_shared<const Tensor<float>>(clip.labels);
          auto mask = std::make_shared<std::vector<char>>(
              static_cast<std::size_t>(cfg.clip_len), char(0));
          std::fill(mask->begin(),
                    mask->begin() + clip.valid_len, char(1));
          std::vector<ContrastiveSample> samples;
          if (collect_embeddings) {
            samples = collect_contrastive_samples(clip.labels, clip.valid_len);
            if (!soft_weights)
              for (ContrastiveSample& s : samples) s.weight = 1.0f;
          }
          CombinedLossParts parts;
          int loss = combined_loss<float>(
              t, out.logits, std::move(targets),
              std::shared_ptr<const std::vector<char>>(std::move(mask)),
              out.embeddings, samples, bank, elcfg, &parts);
          const double lval = static_cast<double>(t.val(loss)[0]);
          if (!std::isfinite(lval))
            throw RuntimeFailure(
                "non-finite loss at epoch " + std::to_string(e) + " batch " +
                std::to_string(b) + " (clip " + clip.video_id + " @ " +
                std::to_string(clip.start_frame) + ")");
          t.backward(loss);
          t.accumulate_param_grads(1.0f / static_cast<float>(nb));
          total += lval / nb;
          if (first) {
            bce_sum += static_cast<double>(t.val(parts.bce)[0]) / nb;
            if (parts.sic >= 0)
              sic_sum += static_cast<double>(t.val(parts.sic)[0]) / nb;
            if (collect_embeddings) {
              const Tensor<float>& Z = t.val(out.embeddings);
              const int dim = Z.dim(1);
              for (const ContrastiveSample& s : samples) {
                const float* row =
                    Z.data() + static_cast<std::size_t>(s.row) * dim;
                pushes.push_back({std::vector<float>(row, row + dim),
                                  s.class_id,
                                  soft_weights ? s.weight : 1.0f});
              }
            }
          }
        }
        if (first) apply_bn_updates(updates);
        return total;
      };

      SamOptimizer<float>::StepResult res = opt.step(loss_fn, lr);
      if (!res.skipped)
        for (BankPush& p : pushes)
          bank.push(std::move(p.z), p.class_id, p.w);

      ep_bce += bce_sum;
      ep_sic += sic_sum;
      ep_total += res.loss;
    }

    EpochStats st;
    st.epoch = e;
    st.lr = lr_first;
    st.bce = ep_bce / num_batches;
    st.sic = ep_sic / num_batches;
    st.total = ep_total / num_batches;
    st.skipped = opt.skipped_steps();

    if (!split.val.empty()) {
      std::vector<EventPrediction> preds =
          score_videos(model, videos, split.val, cfg.eval);
      EvalReport rep = evaluate_predictions(
          preds, truth_records(videos, split.val), num_classes,
          {cfg.eval.select_delta}, {});
      st.val_map = rep.map_at.at(cfg.eval.select_delta);
    }

    meta.epoch_next = e + 1;
    meta.step_count = opt.base().step_count();
    meta.skipped_steps = opt.skipped_steps();

    const bool improved =
        split.val.empty() || st.val_map > meta.best_val;
    if (improved) {
      meta.best_val = st.val_map;
      meta.best_epoch = e;
    }
    save_checkpoint(outcome.last_path, model, &opt.base(), &bank,
                    cfg.bank_capacity, meta);
    if (improved)
      save_checkpoint(outcome.best_path, model, &opt.base(), &bank,
                      cfg.bank_capacity, meta);

    tsv << st.epoch << '\t' << st.lr << '\t' << st.bce << '\t' << st.sic
        << '\t' << st.total << '\t' << st.skipped << '\t' << st.val_map
        << '\n';
    tsv.flush();
    if (log)
      (*log) << "epoch " << (e + 1) << "/" << cfg.epochs << "  lr "
             << std::setprecision(4) << st.lr << "  loss "
             << std::setprecision(6) << st.total << " (bce " << st.bce
             << ", sic " << st.sic << ")  val mAP " << st.val_map
             << "  skipped " << st.skipped << std::endl;

    outcome.epochs.push_back(st);
  }

  outcome.meta = meta;
  return outcome;
}

}  // namespace pes
