// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure.  Criteria 6-8 share the desk-scale training runs, so the heavy
// work happens once and the verdicts read from a small run cache.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "pes/checkpoint.hpp"
#include "pes/common.hpp"
#include "pes/config.hpp"
#include "pes/trainer.hpp"
#include "support/grad_check.hpp"
#include "support/oracles.hpp"

namespace {

using namespace pes;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Check {
  bool ok = true;
  std::ostringstream why;

  void expect(bool cond, const std::string& msg) {
    if (!cond) {
      if (!ok) why << "; ";
      ok = false;
      why << msg;
    }
  }
};

std::string fmt(double v, int prec = 4) {
  std::ostringstream s;
  s << std::setprecision(prec) << v;
  return s.str();
}

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[1];
}

// ---------------------------------------------------------------------------
// Desk-run cache shared by criteria 6, 7 and 8.

struct RunResult {
  double map1 = 0.0;      // test mAP at the selection tolerance
  double rare_ap = 0.0;   // test AP of the rarest class at that tolerance
  double train_s = 0.0;
  std::int64_t params = 0;
};

struct Context {
  std::filesystem::path configs;
  std::filesystem::path work;
  TrainConfig desk;
  std::vector<VideoRecord> train_videos;
  std::vector<VideoRecord> test_videos;
  std::map<std::string, RunResult> runs;

  const std::vector<VideoRecord>& train_set() {
    if (train_videos.empty()) train_videos = generate_dataset(desk.dataset);
    return train_videos;
  }

  const std::vector<VideoRecord>& test_set() {
    if (test_videos.empty()) {
      SyntheticDatasetSpec spec = desk.dataset;
      spec.seed = 1001;
      spec.num_videos = 10;
      test_videos = generate_dataset(spec);
    }
    return test_videos;
  }

  // arm: "default" (desk config as shipped), "bce" (no contrastive loss, no
  // mixup) or "noastrm" (refinement module removed).
  const RunResult& desk_run(const std::string& arm, std::uint64_t seed) {
    std::string key = arm + "_s" + std::to_string(seed);
    auto it = runs.find(key);
    if (it != runs.end()) return it->second;

    TrainConfig cfg = desk;
    cfg.seed = seed;
    if (arm == "bce") {
      cfg.contrastive_mode = "none";
      cfg.loss.mixup_enabled = false;
    } else if (arm == "noastrm") {
      cfg.backbone.use_astrm = false;
    }

    std::filesystem::path out = work / key;
    Clock::time_point t0 = Clock::now();
    train_model(cfg, train_set(), cfg.dataset.num_classes, out);
    RunResult r;
    r.train_s = seconds_since(t0);

    LoadedCheckpoint lc = load_checkpoint(out / "best.ckpt");
    r.params = lc.model.count_parameters();

    const std::vector<VideoRecord>& test = test_set();
    std::vector<int> idx(test.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::vector<EventPrediction> preds =
        score_videos(lc.model, test, idx, cfg.eval);
    const int k = cfg.dataset.num_classes;
    EvalReport rep =
        evaluate_predictions(preds, test, k, {cfg.eval.select_delta}, {});
    r.map1 = rep.map_at.at(cfg.eval.select_delta);
    r.rare_ap = rep.class_ap.at(cfg.eval.select_delta).at(k - 1);

    std::cerr << "    [" << key << "] test mAP@" << cfg.eval.select_delta
              << " " << fmt(r.map1) << ", rare-class AP " << fmt(r.rare_ap)
              << ", " << fmt(r.train_s, 3) << "s\n";
    return runs.emplace(key, r).first->second;
  }
};

// ---------------------------------------------------------------------------
// Criterion 1: scale statement.

Check criterion1(Context&) {
  Check c;
  std::cerr << "    full-corpus results (tight 73.74 / loose 79.11 and the "
               "ablation table) need the original dataset,\n"
               "    multi-GPU budget and 100+ epochs; they are out of reach "
               "on a desk machine, so acceptance rests on\n"
               "    the oracle, reduction, equivalence and desk-scale "
               "convergence checks below.\n";
  return c;
}

// ---------------------------------------------------------------------------
// Criterion 2: finite-difference gradient suite.

Check criterion2(Context&) {
  Check c;
  Clock::time_point t0 = Clock::now();

  {  // refinement module: all parameters and the input
    AstrmConfig cfg{4, 8, 3, 2, 2};
    Rng prng(31);
    Astrm<double> m(cfg, prng, "astrm");
    Rng rng(37);
    Tensor<double> x({4, 8, 6, 6});
    for (std::size_t i = 0; i < x.numel(); ++i) x[i] = rng.uniform(0.0, 1.0);
    Tensor<double> wts({4, 8, 6, 6});
    for (std::size_t i = 0; i < wts.numel(); ++i) wts[i] = rng.uniform(-1.0, 1.0);

    auto eval = [&] {
      Tape<double> t;
      int y = m.forward(t, t.constant(x), true, nullptr);
      int loss = tp::sum_all(t, tp::mul(t, y, t.constant(wts)));
      return t.val(loss)[0];
    };
    Tape<double> t;
    int xid = t.constant(x);
    int y = m.forward(t, xid, true, nullptr);
    int loss = tp::sum_all(t, tp::mul(t, y, t.constant(wts)));
    t.backward(loss);
    for (auto* p : m.parameters()) p->zero_grad();
    t.accumulate_param_grads();

    std::vector<Tensor<double>*> targets{&x};
    std::vector<const Tensor<double>*> analytic{&t.grad(xid)};
    for (auto* p : m.parameters()) {
      targets.push_back(&p->value);
      analytic.push_back(&p->grad);
    }
    auto res = pes_test::check_gradients(targets, eval, analytic, 1e-4, 3);
    c.expect(res.max_rel_err < 1e-3,
             "refinement-module gradient error " + fmt(res.max_rel_err));
  }

  {  // tiny end-to-end model
    ModelSpec sp;
    sp.backbone.widths = {4, 8};
    sp.backbone.blocks = {1, 1};
    sp.backbone.strides = {2, 2};
    sp.temporal = TemporalKind::bigru;
    sp.temporal_hidden = 8;
    sp.num_classes = 2;
    sp.clip_len = 8;
    sp.embed_dim = 16;
    Model<double> m(sp, 77);
    Rng rng(78);
    Tensor<double> clip({3, 8, 8, 8});
    for (std::size_t i = 0; i < clip.numel(); ++i)
      clip[i] = rng.uniform(0.0, 1.0);
    Tensor<double> targets({8, 2});
    for (std::size_t i = 0; i < targets.numel(); ++i)
      targets[i] = rng.uniform() < 0.25 ? 1.0 : 0.0;
    auto tgt = std::make_shared<const Tensor<double>>(targets);

    auto eval = [&] {
      Tape<double> t;
      auto out = m.forward(t, clip, true, nullptr);
      int loss = tp::bce_with_logits(t, out.logits, tgt,
                                     std::shared_ptr<const std::vector<char>>{});
      return t.val(loss)[0];
    };
    Tape<double> t;
    auto out = m.forward(t, clip, true, nullptr);
    int loss = tp::bce_with_logits(t, out.logits, tgt,
                                   std::shared_ptr<const std::vector<char>>{});
    t.backward(loss);
    for (auto* p : m.parameters()) p->zero_grad();
    t.accumulate_param_grads();

    std::vector<Tensor<double>*> wiggle;
    std::vector<const Tensor<double>*> analytic;
    for (auto* p : m.parameters()) {
      wiggle.push_back(&p->value);
      analytic.push_back(&p->grad);
    }
    auto res = pes_test::check_gradients(wiggle, eval, analytic, 1e-4, 11);
    c.expect(res.max_rel_err < 1e-3,
             "end-to-end model gradient error " + fmt(res.max_rel_err));
  }

  {  // weighted contrastive loss through row normalization
    Rng rng(25);
    auto random_unit = [&](int dim) {
      std::vector<double> z(static_cast<std::size_t>(dim));
      double n = 0.0;
      for (double& v : z) {
        v = rng.normal();
        n += v * v;
      }
      n = std::sqrt(n);
      for (double& v : z) v /= n;
      return z;
    };
    MemoryBank<double> bank(3, 6);
    for (int cl = 0; cl < 3; ++cl)
      for (int i = 0; i < 2; ++i)
        bank.push(random_unit(8), cl, rng.uniform(0.2, 1.0));
    std::vector<ContrastiveSample> samples{
        {0, 0, 1.0f}, {1, 1, 0.6f}, {2, 2, 0.3f}, {3, 0, 0.9f}, {0, 1, 0.5f}};
    Tensor<double> emb({4, 8});
    for (std::size_t i = 0; i < emb.numel(); ++i) emb[i] = rng.normal(0.0, 0.5);

    Tensor<double> grad;
    auto eval = [&] {
      Tape<double> t;
      int raw = t.constant(emb);
      int unit = tp::l2_normalize_rows(t, raw);
      int loss = soft_ic(t, unit, samples, bank, 0.5);
      return t.val(loss)[0];
    };
    {
      Tape<double> t;
      int raw = t.constant(emb);
      int unit = tp::l2_normalize_rows(t, raw);
      int loss = soft_ic(t, unit, samples, bank, 0.5);
      t.backward(loss);
      grad = t.grad(raw);
    }
    auto res = pes_test::check_gradients({&emb}, eval, {&grad});
    c.expect(res.max_rel_err < 1e-3,
             "contrastive loss gradient error " + fmt(res.max_rel_err));
  }

  double dt = seconds_since(t0);
  c.expect(dt < 120.0, "gradient suite took " + fmt(dt, 3) + "s (budget 120s)");
  c.why << (c.ok ? "max rel err < 1e-3 in " + fmt(dt, 3) + "s" : "");
  return c;
}

// ---------------------------------------------------------------------------
// Criterion 3: analytic reductions.

Check criterion3(Context&) {
  Check c;
  Rng rng(301);
  auto random_unit = [&](int dim) {
    std::vector<double> z(static_cast<std::size_t>(dim));
    double n = 0.0;
    for (double& v : z) {
      v = rng.normal();
      n += v * v;
    }
    n = std::sqrt(n);
    for (double& v : z) v /= n;
    return z;
  };

  {  // unit-weight contrastive loss equals the hard-label one
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      const int dim = 8;
      MemoryBank<double> bank(3, 9);
      for (int cl = 0; cl < 3; ++cl)
        for (int i = 0; i < 3; ++i) bank.push(random_unit(dim), cl, 1.0);
      Tensor<double> emb({4, dim});
      std::vector<ContrastiveSample> samples;
      std::vector<std::pair<std::vector<double>, int>> batch;
      for (int r = 0; r < 4; ++r) {
        auto z = random_unit(dim);
        for (int d = 0; d < dim; ++d) emb.at2(r, d) = z[static_cast<std::size_t>(d)];
        int cl = static_cast<int>(rng.uniform_int(0, 2));
        samples.push_back({r, cl, 1.0f});
        batch.push_back({z, cl});
      }
      Tape<double> t;
      int loss = soft_ic(t, t.constant(emb), samples, bank, 0.07);
      double ic = ic_loss<double>(batch, bank, 0.07);
      worst = std::max(worst, std::abs(t.val(loss)[0] - ic));
    }
    c.expect(worst <= 1e-12,
             "unit-weight reduction differs by " + fmt(worst, 3));
  }

  {  // identity mixup is bit-exact
    VideoClip a, b;
    a.video_id = "a";
    b.video_id = "b";
    a.frames = Tensor<float>({3, 4, 2, 2});
    b.frames = Tensor<float>({3, 4, 2, 2});
    a.labels = Tensor<float>({4, 2});
    b.labels = Tensor<float>({4, 2});
    a.valid_len = b.valid_len = 4;
    for (std::size_t i = 0; i < a.frames.numel(); ++i) {
      a.frames[i] = static_cast<float>(rng.uniform(0.0, 1.0));
      b.frames[i] = static_cast<float>(rng.uniform(0.0, 1.0));
    }
    for (std::size_t i = 0; i < a.labels.numel(); ++i) {
      a.labels[i] = rng.uniform() < 0.3f ? 1.0f : 0.0f;
      b.labels[i] = rng.uniform() < 0.3f ? 1.0f : 0.0f;
    }
    VideoClip m = mixup(a, b, 1.0f);
    bool same = true;
    for (std::size_t i = 0; i < a.frames.numel(); ++i)
      same = same && m.frames[i] == a.frames[i];
    for (std::size_t i = 0; i < a.labels.numel(); ++i)
      same = same && m.labels[i] == a.labels[i];
    c.expect(same, "identity mixup is not bit-exact");
  }

  {  // zero contrastive weight reduces the combined objective to plain BCE
    bool exact = true;
    for (int trial = 0; trial < 20; ++trial) {
      const int rows = 6, k = 3, dim = 8;
      Tensor<float> logits_v({rows, k}), targets_v({rows, k}), emb_v({rows, dim});
      for (std::size_t i = 0; i < logits_v.numel(); ++i) {
        logits_v[i] = static_cast<float>(rng.normal());
        targets_v[i] = rng.uniform() < 0.3f ? 1.0f : 0.0f;
      }
      for (int r = 0; r < rows; ++r) {
        auto z = random_unit(dim);
        for (int d = 0; d < dim; ++d)
          emb_v.at2(r, d) = static_cast<float>(z[static_cast<std::size_t>(d)]);
      }
      MemoryBank<float> bank(k, 6);
      for (int cl = 0; cl < k; ++cl) {
        auto z = random_unit(dim);
        std::vector<float> zf(z.begin(), z.end());
        bank.push(zf, cl, 0.7f);
      }
      std::vector<ContrastiveSample> samples{{0, 0, 0.5f}, {2, 1, 1.0f}};
      auto tgt = std::make_shared<const Tensor<float>>(targets_v);
      auto mask = std::make_shared<const std::vector<char>>(
          std::vector<char>(rows, char(1)));

      LossConfig lcfg;
      lcfg.lambda_sic = 0.0;
      lcfg.tau = 0.07;

      Tape<float> t;
      int logits = t.constant(logits_v);
      int emb = t.constant(emb_v);
      int combined = combined_loss<float>(t, logits, tgt, mask, emb, samples,
                                          bank, lcfg, nullptr);
      Tape<float> t2;
      int logits2 = t2.constant(logits_v);
      int bce = tp::bce_with_logits(t2, logits2, tgt, mask);
      exact = exact && t.val(combined)[0] == t2.val(bce)[0];
    }
    c.expect(exact, "zero-weight combined loss is not bit-equal to BCE");
  }

  {  // zero-radius sharpness wrapper matches the bare optimizer
    OptimConfig ocfg;
    ocfg.sam_enabled = true;
    ocfg.adaptive = false;
    ocfg.rho = 0.0;
    ocfg.weight_decay = 0.01;

    Tensor<float> center({5});
    for (std::size_t i = 0; i < center.numel(); ++i)
      center[i] = static_cast<float>(rng.uniform(-2.0, 2.0));

    Parameter<float> pa("w", Tensor<float>({5}));
    Parameter<float> pb("w", Tensor<float>({5}));
    for (std::size_t i = 0; i < 5; ++i) pa.value[i] = pb.value[i] = 1.0f;

    SamOptimizer<float> sam(ocfg, {&pa});
    AdamW<float> bare(ocfg, {&pb});

    auto bowl = [&](Parameter<float>& p) {
      double l = 0.0;
      for (std::size_t i = 0; i < 5; ++i) {
        double d = static_cast<double>(p.value[i]) - center[i];
        l += 0.5 * d * d;
        p.grad[i] = static_cast<float>(d);
      }
      return l;
    };

    double worst = 0.0;
    for (int step = 0; step < 10; ++step) {
      sam.step([&](bool) { return bowl(pa); }, 0.05);
      for (std::size_t i = 0; i < 5; ++i) pb.grad[i] = 0.0f;
      bowl(pb);
      bare.step(0.05);
      for (std::size_t i = 0; i < 5; ++i)
        worst = std::max(worst, std::abs(static_cast<double>(pa.value[i]) -
                                         static_cast<double>(pb.value[i])));
    }
    c.expect(worst <= 1e-12,
             "zero-radius wrapper deviates from the bare optimizer by " +
                 fmt(worst, 3));
  }

  c.why << (c.ok ? "all four reductions hold" : "");
  return c;
}

// ---------------------------------------------------------------------------
// Criterion 4: matching oracle and tolerance monotonicity.

Check criterion4(Context&) {
  Check c;
  Rng rng(60);
  int mismatches = 0, monotone_breaks = 0;
  for (int trial = 0; trial < 200; ++trial) {
    pes_test::ApInstance inst = pes_test::random_ap_instance(rng);
    int delta = static_cast<int>(rng.uniform_int(0, 5));
    double got = average_precision(inst.preds, inst.truths_by_video, delta);
    double want = pes_test::oracle_ap(inst.preds, inst.flat_truths, delta);
    if (got != want) ++mismatches;

    double prev = -1.0;
    for (int d = 0; d <= 6; ++d) {
      double ap = average_precision(inst.preds, inst.truths_by_video, d);
      if (ap < prev) ++monotone_breaks;
      prev = ap;
    }
  }
  c.expect(mismatches == 0,
           std::to_string(mismatches) + "/200 instances differ from the oracle");
  c.expect(monotone_breaks == 0,
           std::to_string(monotone_breaks) + " tolerance-monotonicity breaks");
  c.why << (c.ok ? "200 instances exact, monotone in the tolerance" : "");
  return c;
}

// ---------------------------------------------------------------------------
// Criterion 5: pipeline equivalence and NMS golden traces.

Check criterion5(Context&) {
  Check c;

  {  // a video exactly one window long scores identically through both paths
    ModelSpec sp;
    sp.backbone.widths = {4, 8};
    sp.backbone.blocks = {1, 1};
    sp.backbone.strides = {2, 2};
    sp.temporal = TemporalKind::bigru;
    sp.temporal_hidden = 8;
    sp.num_classes = 3;
    sp.clip_len = 16;
    sp.embed_dim = 8;
    Model<float> m(sp, 5);

    Rng rng(6);
    VideoRecord rec;
    rec.video_id = "v";
    rec.frames = Tensor<float>({3, 16, 8, 8});
    for (std::size_t i = 0; i < rec.frames.numel(); ++i)
      rec.frames[i] = static_cast<float>(rng.uniform(0.0, 1.0));

    std::vector<VideoClip> wins = evaluation_windows(rec, 16, 3, 0);
    c.expect(wins.size() == 1, "expected a single evaluation window");
    std::vector<WindowScores> scored;
    for (const VideoClip& w : wins) {
      Tape<float> t;
      ModelOutput<float> out = m.forward(t, w.frames, false, nullptr);
      scored.push_back({w.start_frame, t.val(out.scores), w.valid_len});
    }
    FrameScoreTrack track = aggregate_windows("v", 16, 3, scored);

    Tape<float> t;
    ModelOutput<float> out = m.forward(t, rec.frames, false, nullptr);
    const Tensor<float>& direct = t.val(out.scores);
    bool same = track.scores.numel() == direct.numel();
    for (std::size_t i = 0; same && i < direct.numel(); ++i)
      same = track.scores[i] == direct[i];
    c.expect(same, "window pipeline is not bit-equal to the single forward");
  }

  {  // golden trace 1: lone peak above threshold
    FrameScoreTrack track;
    track.video_id = "v";
    track.scores = Tensor<float>({100, 1});
    for (int f = 0; f < 100; ++f) track.scores.at2(f, 0) = 0.05f;
    track.scores.at2(50, 0) = 0.9f;
    auto preds = soft_nms(track, 20, 0.5);
    c.expect(preds.size() == 1 && preds[0].frame == 50 &&
                 preds[0].score == 0.9f,
             "lone-peak trace");
  }

  {  // golden trace 2: equal peaks outside the suppression radius
    FrameScoreTrack track;
    track.video_id = "v";
    track.scores = Tensor<float>({100, 1});
    track.scores.at2(30, 0) = 0.8f;
    track.scores.at2(60, 0) = 0.8f;
    auto preds = soft_nms(track, 20, 0.5);
    bool ok = preds.size() == 2;
    if (ok) {
      std::set<int> frames{preds[0].frame, preds[1].frame};
      ok = frames == std::set<int>{30, 60} && preds[0].score == 0.8f &&
           preds[1].score == 0.8f;
    }
    c.expect(ok, "distant-equal-peaks trace");
  }

  {  // golden trace 3: neighbor decays to 0.8*(5/10) = 0.4 and drops out
    FrameScoreTrack track;
    track.video_id = "v";
    track.scores = Tensor<float>({100, 1});
    track.scores.at2(50, 0) = 0.9f;
    track.scores.at2(55, 0) = 0.8f;
    auto preds = soft_nms(track, 20, 0.5);
    c.expect(preds.size() == 1 && preds[0].frame == 50 &&
                 preds[0].score == 0.9f,
             "decay trace");
  }

  c.why << (c.ok ? "single-window scores bit-equal, three golden traces hold"
                 : "");
  return c;
}

// ---------------------------------------------------------------------------
// Criterion 6: desk-scale convergence.

Check criterion6(Context& ctx) {
  Check c;
  const RunResult& r = ctx.desk_run("default", ctx.desk.seed);
  c.expect(r.params <= 1000000,
           "model has " + std::to_string(r.params) + " parameters (cap 1e6)");
  c.expect(r.map1 >= 0.85, "test mAP " + fmt(r.map1) + " < 0.85");
  c.expect(r.train_s <= 1200.0,
           "training took " + fmt(r.train_s, 3) + "s (budget 1200s)");
  c.why << (c.ok ? "test mAP@1 " + fmt(r.map1) + ", " +
                       std::to_string(r.params) + " params, " +
                       fmt(r.train_s, 3) + "s"
                 : "");
  return c;
}

// ---------------------------------------------------------------------------
// Criterion 7: rare-class direction of the contrastive + mixup objective.

Check criterion7(Context& ctx) {
  Check c;
  std::vector<double> with, without;
  int strictly = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    double a = ctx.desk_run("default", seed).rare_ap;
    double b = ctx.desk_run("bce", seed).rare_ap;
    with.push_back(a);
    without.push_back(b);
    if (a > b) ++strictly;
  }
  double med_with = median3(with), med_without = median3(without);
  c.expect(med_with >= med_without,
           "median rare-class AP " + fmt(med_with) + " < " + fmt(med_without));
  c.expect(strictly >= 2, "strictly greater in only " +
                              std::to_string(strictly) + "/3 seeds");
  c.why << (c.ok ? "rare-class AP medians " + fmt(med_with) + " vs " +
                       fmt(med_without) + ", strictly greater in " +
                       std::to_string(strictly) + "/3 seeds"
                 : "");
  return c;
}

// ---------------------------------------------------------------------------
// Criterion 8: refinement-module direction.

Check criterion8(Context& ctx) {
  Check c;
  std::vector<double> with, without;
  for (std::uint64_t seed : {1, 2, 3}) {
    with.push_back(ctx.desk_run("default", seed).map1);
    without.push_back(ctx.desk_run("noastrm", seed).map1);
  }
  double med_with = median3(with), med_without = median3(without);
  c.expect(med_with >= med_without,
           "median test mAP " + fmt(med_with) + " (on) < " + fmt(med_without) +
               " (off)");
  c.why << (c.ok ? "median test mAP " + fmt(med_with) + " (on) vs " +
                       fmt(med_without) + " (off)"
                 : "");
  return c;
}

// ---------------------------------------------------------------------------
// Criterion 9: fast property sweep.

Check criterion9(Context& ctx) {
  Check c;
  Clock::time_point t0 = Clock::now();

  {  // both gates stay strictly inside (0, 1)
    AstrmConfig cfg{4, 8, 3, 2, 2};
    Rng prng(91);
    Astrm<double> m(cfg, prng, "astrm");
    Rng rng(92);
    bool in_range = true;
    for (int trial = 0; trial < 5; ++trial) {
      Tensor<double> x({4, 8, 6, 6});
      for (std::size_t i = 0; i < x.numel(); ++i)
        x[i] = rng.uniform(-3.0, 3.0);
      Tape<double> t;
      int fs = m.spatial_gate(t, t.constant(x));
      int ft = m.temporal_gate(t, t.constant(x), true, nullptr);
      for (std::size_t i = 0; i < t.val(fs).numel(); ++i)
        in_range = in_range && t.val(fs)[i] > 0.0 && t.val(fs)[i] < 1.0;
      for (std::size_t i = 0; i < t.val(ft).numel(); ++i)
        in_range = in_range && t.val(ft)[i] > 0.0 && t.val(ft)[i] < 1.0;
    }
    c.expect(in_range, "gate values left (0, 1)");
  }

  {  // bank keeps FIFO order and per-class capacity
    MemoryBank<float> bank(2, 6);  // 3 per class
    auto unit = [](float sign, int at) {
      std::vector<float> z(4, 0.0f);
      z[static_cast<std::size_t>(at)] = sign;
      return z;
    };
    for (int i = 0; i < 7; ++i)
      bank.push(unit(1.0f, i % 4), 0, 1.0f - 0.1f * static_cast<float>(i));
    bool ok = bank.size(0) == 3 && bank.size(1) == 0;
    // pushes 4, 5, 6 survive, oldest first
    if (ok) {
      int expect_at[3] = {0, 1, 2};
      int slot = 0;
      for (const auto& e : bank.entries(0)) {
        ok = ok && e.z[static_cast<std::size_t>(expect_at[slot])] == 1.0f;
        ++slot;
      }
    }
    c.expect(ok, "bank FIFO eviction broke");
  }

  {  // sliding windows cover every frame and step by half a window
    bool ok = true;
    for (int n : {16, 17, 24, 31, 32, 100}) {
      VideoRecord rec;
      rec.video_id = "v";
      rec.frames = Tensor<float>({3, n, 4, 4});
      std::vector<VideoClip> wins = evaluation_windows(rec, 16, 2, 0);
      std::vector<int> cover(static_cast<std::size_t>(n), 0);
      for (std::size_t wi = 0; wi < wins.size(); ++wi) {
        const VideoClip& w = wins[wi];
        if (wi + 1 < wins.size())
          ok = ok && wins[wi + 1].start_frame - w.start_frame == 8;
        for (int r = 0; r < w.valid_len; ++r)
          ++cover[static_cast<std::size_t>(w.start_frame + r)];
      }
      for (int f = 0; f < n; ++f) ok = ok && cover[static_cast<std::size_t>(f)] >= 1;
    }
    c.expect(ok, "window coverage property broke");
  }

  {  // raising the threshold never adds predictions
    Rng rng(93);
    bool ok = true;
    for (int trial = 0; trial < 10; ++trial) {
      FrameScoreTrack track;
      track.video_id = "v";
      track.scores = Tensor<float>({80, 2});
      for (std::size_t i = 0; i < track.scores.numel(); ++i)
        track.scores[i] = static_cast<float>(rng.uniform(0.0, 1.0));
      auto key = [](const EventPrediction& p) {
        return std::pair<int, int>(p.class_id, p.frame);
      };
      auto lo = soft_nms(track, 10, 0.2);
      auto hi = soft_nms(track, 10, 0.6);
      std::set<std::pair<int, int>> lo_set, hi_set;
      for (const auto& p : lo) lo_set.insert(key(p));
      for (const auto& p : hi) hi_set.insert(key(p));
      ok = ok && hi.size() <= lo.size() &&
           std::includes(lo_set.begin(), lo_set.end(), hi_set.begin(),
                         hi_set.end());
    }
    c.expect(ok, "threshold monotonicity broke");
  }

  {  // tiny-config determinism and resume
    TrainConfig cfg;
    cfg.dataset.num_videos = 4;
    cfg.dataset.frames_per_video = 48;
    cfg.dataset.height = 8;
    cfg.dataset.width = 8;
    cfg.dataset.num_classes = 2;
    cfg.dataset.class_rates = {4.0, 2.0};
    cfg.dataset.min_event_gap = 6;
    cfg.dataset.seed = 15;
    cfg.backbone.widths = {4, 8};
    cfg.backbone.blocks = {1, 1};
    cfg.backbone.strides = {2, 2};
    cfg.temporal_hidden = 8;
    cfg.embed_dim = 8;
    cfg.bank_capacity = 16;
    cfg.clip_len = 16;
    cfg.clips_per_video = 2;
    cfg.batch_size = 2;
    cfg.epochs = 3;
    cfg.optim.total_epochs = 3;
    cfg.optim.warmup_epochs = 1;
    cfg.eval.deltas = {1};
    cfg.validate();

    std::vector<VideoRecord> vids = generate_dataset(cfg.dataset);
    std::filesystem::path da = ctx.work / "prop_da";
    std::filesystem::path db = ctx.work / "prop_db";
    std::filesystem::remove_all(da);
    std::filesystem::remove_all(db);

    TrainOutcome full = train_model(cfg, vids, 2, da);
    train_model(cfg, vids, 2, db, {}, nullptr, 1);
    TrainOutcome rest = train_model(cfg, vids, 2, db, db / "last.ckpt");

    bool ok = full.epochs.size() == 3 && rest.epochs.size() == 2;
    for (std::size_t i = 0; ok && i < 2; ++i) {
      ok = full.epochs[1 + i].total == rest.epochs[i].total &&
           full.epochs[1 + i].val_map == rest.epochs[i].val_map;
    }
    auto slurp = [](const std::filesystem::path& p) {
      std::ifstream in(p, std::ios::binary);
      std::ostringstream ss;
      ss << in.rdbuf();
      return ss.str();
    };
    ok = ok && slurp(da / "last.ckpt") == slurp(db / "last.ckpt");
    c.expect(ok, "determinism/resume property broke");
  }

  double dt = seconds_since(t0);
  c.expect(dt < 300.0, "property sweep took " + fmt(dt, 3) + "s (budget 300s)");
  c.why << (c.ok ? "gates, bank, windows, NMS, resume all hold in " +
                       fmt(dt, 3) + "s"
                 : "");
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance suite"};
  std::string configs = "configs";
  std::string work;
  std::vector<int> only;
  app.add_option("--configs", configs, "directory holding desk_default.json");
  app.add_option("--work", work, "scratch directory for runs and datasets");
  app.add_option("--only", only, "run only these criteria numbers");

  CLI11_PARSE(app, argc, argv);

  try {
    check_device();

    Context ctx;
    ctx.configs = configs;
    ctx.work = work.empty()
                   ? std::filesystem::temp_directory_path() / "pes_acceptance"
                   : std::filesystem::path(work);
    std::filesystem::create_directories(ctx.work);
    ctx.desk = load_train_config(ctx.configs / "desk_default.json");

    struct Named {
      int id;
      std::string blurb;
      std::function<Check(Context&)> fn;
    };
    std::vector<Named> criteria{
        {1, "full-scale numbers are a non-goal; desk-scale checks carry acceptance", criterion1},
        {2, "finite-difference gradient suite", criterion2},
        {3, "analytic reductions", criterion3},
        {4, "matching oracle and tolerance monotonicity", criterion4},
        {5, "pipeline equivalence and golden NMS traces", criterion5},
        {6, "desk-scale convergence", criterion6},
        {7, "rare-class direction of the soft contrastive objective", criterion7},
        {8, "refinement-module direction", criterion8},
        {9, "property sweep", criterion9},
    };

    std::set<int> wanted(only.begin(), only.end());
    bool all_ok = true;
    for (Named& n : criteria) {
      if (!wanted.empty() && wanted.count(n.id) == 0) continue;
      Check res = n.fn(ctx);
      std::string detail = res.why.str();
      std::cout << (res.ok ? "[PASS]" : "[FAIL]") << " criterion " << n.id
                << ": " << n.blurb << (detail.empty() ? "" : " (" + detail + ")")
                << std::endl;
      all_ok = all_ok && res.ok;
    }
    return all_ok ? 0 : 1;
  } catch (const pes::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
