// seqrec: experiment front door for the sequential-recommendation lab.
// Verbs: run, sweep, compare, export-curve, preprocess.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "seqrec/experiment.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"sequential recommendation experiments (sasrec / bsarec)"};
  app.require_subcommand(1);

  std::string config_path, out_override, seed_csv;
  bool force = false;
  int workers = 1;

  auto add_common = [&](CLI::App* cmd, bool with_seeds) {
    cmd->add_option("--config", config_path, "experiment config file")
        ->required();
    cmd->add_option("--out", out_override, "output directory override");
    cmd->add_flag("--force", force, "overwrite existing outputs");
    cmd->add_option("--workers", workers, "worker threads for sweeps/eval");
    if (with_seeds)
      cmd->add_option("--seed", seed_csv,
                      "comma-separated seed list override");
  };

  CLI::App* run_cmd = app.add_subcommand("run", "train + evaluate one config");
  add_common(run_cmd, true);

  CLI::App* sweep_cmd =
      app.add_subcommand("sweep", "grid sweep, select by validation ndcg@10");
  add_common(sweep_cmd, false);

  CLI::App* compare_cmd =
      app.add_subcommand("compare", "tabulate finished runs with gains");
  std::vector<std::string> compare_dirs;
  std::string compare_out;
  compare_cmd->add_option("dirs", compare_dirs, "run directories")
      ->required()
      ->expected(-1);
  compare_cmd->add_option("--out", compare_out, "also write table/CSV here");

  CLI::App* curve_cmd =
      app.add_subcommand("export-curve", "plot-ready per-epoch ndcg@10 CSV");
  std::string curve_dir, curve_out;
  curve_cmd->add_option("dir", curve_dir, "run directory")->required();
  curve_cmd->add_option("--out", curve_out, "output file (default stdout)");

  CLI::App* prep_cmd = app.add_subcommand(
      "preprocess", "parse a raw dataset into the canonical sequence file");
  std::string prep_out;
  prep_cmd->add_option("--config", config_path, "experiment config file")
      ->required();
  prep_cmd->add_option("--out", prep_out, "output sequence file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) {
      seqrec::ExperimentConfig cfg =
          seqrec::load_experiment_config(config_path);
      if (!out_override.empty()) cfg.out_dir = out_override;
      if (!seed_csv.empty()) {
        cfg.seeds.clear();
        std::istringstream ss(seed_csv);
        std::string tok;
        while (std::getline(ss, tok, ','))
          cfg.seeds.push_back(std::stoull(tok));
      }
      if (workers > 1) cfg.eval_workers = workers;
      for (std::uint64_t seed : cfg.seeds) {
        const std::string dir =
            cfg.seeds.size() == 1
                ? cfg.out_dir
                : (fs::path(cfg.out_dir) / ("seed-" + std::to_string(seed)))
                      .string();
        const seqrec::RunResult rr =
            seqrec::run_experiment(cfg, seed, dir, force);
        std::cout << "run " << dir << ": best epoch " << rr.best_epoch
                  << ", valid ndcg@10 "
                  << seqrec::expdetail::fmt_real(rr.valid.ndcg10)
                  << ", test ndcg@10 "
                  << seqrec::expdetail::fmt_real(rr.test.ndcg10) << "\n";
      }
    } else if (sweep_cmd->parsed()) {
      seqrec::ExperimentConfig cfg =
          seqrec::load_experiment_config(config_path);
      if (!out_override.empty()) cfg.out_dir = out_override;
      const seqrec::SweepResult sr =
          seqrec::sweep_experiment(cfg, cfg.out_dir, force, workers);
      std::cout << sr.table_text;
    } else if (compare_cmd->parsed()) {
      const seqrec::ComparisonReport rep = seqrec::compare_runs(compare_dirs);
      std::cout << rep.table_text;
      if (!compare_out.empty()) {
        seqrec::expdetail::write_text_file(compare_out + ".txt",
                                           rep.table_text);
        seqrec::expdetail::write_text_file(compare_out + ".csv", rep.csv);
      }
    } else if (curve_cmd->parsed()) {
      const std::string text = seqrec::export_curve_text(curve_dir);
      if (curve_out.empty()) {
        std::cout << text;
      } else {
        seqrec::expdetail::write_text_file(curve_out, text);
      }
    } else if (prep_cmd->parsed()) {
      seqrec::ExperimentConfig cfg =
          seqrec::load_experiment_config(config_path);
      seqrec::preprocess_dataset(cfg, prep_out);
      std::cout << "wrote " << prep_out << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
