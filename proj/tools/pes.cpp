#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pes/checkpoint.hpp"
#include "pes/config.hpp"
#include "pes/dataset.hpp"
#include "pes/report.hpp"
#include "pes/spotting.hpp"
#include "pes/trainer.hpp"

namespace {

namespace fs = std::filesystem;

int cmd_generate(const std::string& config_path, const std::string& out_dir,
                 std::optional<std::uint64_t> seed,
                 std::optional<int> num_videos) {
  pes::check_device();
  pes::TrainConfig cfg = pes::load_train_config(config_path);
  pes::SyntheticDatasetSpec spec = cfg.dataset;
  if (seed) spec.seed = *seed;
  if (num_videos) spec.num_videos = *num_videos;
  spec.validate();
  std::vector<pes::VideoRecord> videos = pes::generate_dataset(spec);
  pes::save_dataset(out_dir, spec, videos);
  std::size_t events = 0;
  for (const pes::VideoRecord& v : videos) events += v.events.size();
  std::cout << "wrote " << videos.size() << " videos, " << events
            << " events, " << spec.num_classes << " classes to " << out_dir
            << std::endl;
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& dataset_dir,
              const std::string& out_dir, const std::string& resume) {
  pes::check_device();
  pes::TrainConfig cfg = pes::load_train_config(config_path);
  pes::LoadedDataset ds = pes::load_dataset(dataset_dir);
  pes::TrainOutcome outcome =
      pes::train_model(cfg, ds.videos, ds.num_classes, out_dir,
                       resume.empty() ? fs::path() : fs::path(resume),
                       &std::cout);
  if (outcome.meta.best_val >= 0.0)
    std::cout << "best val mAP@" << cfg.eval.select_delta << " "
              << outcome.meta.best_val << " at epoch "
              << (outcome.meta.best_epoch + 1) << std::endl;
  std::cout << "checkpoints: " << outcome.last_path.string() << ", "
            << outcome.best_path.string() << std::endl;
  return 0;
}

int cmd_eval(const std::string& checkpoint_path,
             const std::string& dataset_dir, const std::string& config_path,
             const std::string& out_dir) {
  pes::check_device();
  pes::TrainConfig cfg = pes::load_train_config(config_path);
  pes::LoadedDataset ds = pes::load_dataset(dataset_dir);
  pes::LoadedCheckpoint lc = pes::load_checkpoint(checkpoint_path);
  pes::check_config(lc.model.spec.num_classes == ds.num_classes,
                    "checkpoint was trained for " +
                        std::to_string(lc.model.spec.num_classes) +
                        " classes but the dataset has " +
                        std::to_string(ds.num_classes));

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  pes::check_runtime(!ec, "cannot create output directory " + out_dir);

  std::vector<int> indices(ds.videos.size());
  std::iota(indices.begin(), indices.end(), 0);
  std::vector<pes::EventPrediction> preds =
      pes::score_videos(lc.model, ds.videos, indices, cfg.eval);

  std::vector<int> deltas = cfg.eval.all_deltas(ds.fps);
  std::map<std::string, std::vector<int>> ranges =
      cfg.eval.ranges_in_frames(ds.fps);
  pes::EvalReport rep = pes::evaluate_predictions(preds, ds.videos,
                                                  ds.num_classes, deltas,
                                                  ranges);

  std::vector<std::string> names = pes::default_class_names(ds.num_classes);
  pes::write_predictions(fs::path(out_dir) / "predictions.tsv", preds, names);
  nlohmann::ordered_json rj = pes::build_report_json(
      dataset_dir, checkpoint_path, ds.num_classes, ds.fps,
      lc.model.count_parameters(), cfg.eval, rep, ranges, preds.size());
  pes::write_text_file(fs::path(out_dir) / "report.json", rj.dump(2) + "\n");
  pes::write_text_file(fs::path(out_dir) / "per_class_ap.tsv",
                       pes::per_class_ap_tsv(rep, ds.num_classes));

  pes::BarSeries series;
  series.label = "AP@" + std::to_string(cfg.eval.select_delta);
  const auto& sel_ap = rep.class_ap.at(cfg.eval.select_delta);
  for (int c = 0; c < ds.num_classes; ++c) {
    auto it = sel_ap.find(c);
    series.values.push_back(it == sel_ap.end() ? -1.0 : it->second);
  }
  pes::write_text_file(
      fs::path(out_dir) / "per_class_ap.svg",
      pes::class_ap_bar_svg(names, {series},
                            "per-class AP@" +
                                std::to_string(cfg.eval.select_delta)));

  std::cout << std::setprecision(6);
  std::cout << "mAP@" << cfg.eval.select_delta << " "
            << rep.map_at.at(cfg.eval.select_delta) << std::endl;
  for (const auto& [name, v] : rep.range_maps)
    std::cout << "range " << name << " mAP " << v << std::endl;
  std::cout << "predictions " << preds.size() << ", parameters "
            << lc.model.count_parameters() << std::endl;
  std::cout << "report: " << (fs::path(out_dir) / "report.json").string()
            << std::endl;
  return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs,
               const std::string& out_dir) {
  pes::check_device();
  std::vector<pes::LoadedRun> runs;
  runs.reserve(run_dirs.size());
  for (const std::string& d : run_dirs) runs.push_back(pes::load_run(d));
  pes::check_runs_comparable(runs);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  pes::check_runtime(!ec, "cannot create output directory " + out_dir);

  const nlohmann::json& ref = runs.front().report;
  const int num_classes = ref.at("num_classes").get<int>();
  const int sel = ref.at("select_delta").get<int>();
  const std::string sel_key = std::to_string(sel);
  std::vector<std::string> range_names;
  for (const auto& item : ref.at("ranges").items())
    range_names.push_back(item.key());

  std::ostringstream tsv;
  tsv << std::setprecision(10);
  tsv << "run\tparams\tmap@" << sel;
  for (const std::string& r : range_names) tsv << '\t' << r;
  for (int c = 0; c < num_classes; ++c) tsv << "\tclass_" << c << "@" << sel;
  tsv << "\n";

  std::vector<pes::BarSeries> series;
  for (const pes::LoadedRun& run : runs) {
    tsv << run.name << '\t' << run.report.at("param_count").get<std::int64_t>()
        << '\t' << run.report.at("map").at(sel_key).get<double>();
    for (const std::string& r : range_names)
      tsv << '\t' << run.report.at("ranges").at(r).at("map").get<double>();
    pes::BarSeries s;
    s.label = run.name;
    const nlohmann::json& cap = run.report.at("class_ap").at(sel_key);
    for (int c = 0; c < num_classes; ++c) {
      std::string key = std::to_string(c);
      if (cap.contains(key)) {
        double v = cap.at(key).get<double>();
        tsv << '\t' << v;
        s.values.push_back(v);
      } else {
        tsv << "\t-";
        s.values.push_back(-1.0);
      }
    }
    tsv << "\n";
    series.push_back(std::move(s));
  }
  pes::write_text_file(fs::path(out_dir) / "comparison.tsv", tsv.str());
  pes::write_text_file(
      fs::path(out_dir) / "per_class_bars.svg",
      pes::class_ap_bar_svg(pes::default_class_names(num_classes), series,
                            "per-class AP@" + sel_key + " by run"));

  std::cout << std::setprecision(4) << std::left;
  std::cout << std::setw(18) << "run" << std::right << std::setw(10)
            << "params" << std::setw(10) << ("map@" + sel_key);
  for (const std::string& r : range_names)
    std::cout << std::setw(10) << r;
  for (int c = 0; c < num_classes; ++c)
    std::cout << std::setw(10) << ("cls" + std::to_string(c));
  std::cout << "\n";
  for (const pes::LoadedRun& run : runs) {
    std::cout << std::left << std::setw(18) << run.name << std::right
              << std::setw(10)
              << run.report.at("param_count").get<std::int64_t>()
              << std::setw(10) << run.report.at("map").at(sel_key).get<double>();
    for (const std::string& r : range_names)
      std::cout << std::setw(10)
                << run.report.at("ranges").at(r).at("map").get<double>();
    const nlohmann::json& cap = run.report.at("class_ap").at(sel_key);
    for (int c = 0; c < num_classes; ++c) {
      std::string key = std::to_string(c);
      if (cap.contains(key))
        std::cout << std::setw(10) << cap.at(key).get<double>();
      else
        std::cout << std::setw(10) << "-";
    }
    std::cout << "\n";
  }
  std::cout << "comparison: "
            << (fs::path(out_dir) / "comparison.tsv").string() << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"event spotting workbench: synthetic data, training, "
               "evaluation and run comparison"};
  app.require_subcommand(1);

  std::string config, out, dataset, checkpoint, resume;
  std::optional<std::uint64_t> seed_override;
  std::optional<int> num_videos_override;
  std::vector<std::string> run_dirs;

  CLI::App* gen =
      app.add_subcommand("generate", "render a synthetic dataset to disk");
  gen->add_option("--config", config, "config JSON file")->required();
  gen->add_option("--out", out, "output dataset directory")->required();
  gen->add_option("--seed", seed_override,
                  "override the dataset seed from the config");
  gen->add_option("--num-videos", num_videos_override,
                  "override the video count from the config");

  CLI::App* tr = app.add_subcommand("train", "train a model on a dataset");
  tr->add_option("--config", config, "config JSON file")->required();
  tr->add_option("--dataset", dataset, "dataset directory")->required();
  tr->add_option("--out", out, "run output directory")->required();
  tr->add_option("--resume", resume, "checkpoint to resume from");

  CLI::App* ev =
      app.add_subcommand("eval", "run sliding-window evaluation");
  ev->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  ev->add_option("--dataset", dataset, "dataset directory")->required();
  ev->add_option("--config", config, "config JSON file")->required();
  ev->add_option("--out", out, "evaluation output directory")->required();

  CLI::App* rp =
      app.add_subcommand("report", "compare finished evaluation runs");
  rp->add_option("dirs", run_dirs, "evaluation output directories")
      ->required()
      ->expected(-1);
  rp->add_option("--out", out, "comparison output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed())
      return cmd_generate(config, out, seed_override, num_videos_override);
    if (tr->parsed()) return cmd_train(config, dataset, out, resume);
    if (ev->parsed()) return cmd_eval(checkpoint, dataset, config, out);
    if (rp->parsed()) return cmd_report(run_dirs, out);
  } catch (const pes::ConfigError& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return 2;
  } catch (const pes::RuntimeFailure& e) {
    std::cerr << "runtime failure: " << e.what() << std::endl;
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 3;
  }
  return 0;
}
