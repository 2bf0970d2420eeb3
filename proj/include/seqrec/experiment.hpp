#pragma once

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "seqrec/checkpoint.hpp"
#include "seqrec/common.hpp"
#include "seqrec/config.hpp"
#include "seqrec/data.hpp"
#include "seqrec/eval.hpp"
#include "seqrec/models.hpp"
#include "seqrec/train.hpp"

namespace seqrec {

constexpr const char* kDataRootEnv = "SEQREC_DATA_ROOT";

namespace expdetail {

inline std::string fmt_real(real v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", static_cast<double>(v));
  return buf;
}

inline std::string fmt_fixed(real v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, static_cast<double>(v));
  return buf;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open " + path + " for writing");
  os << text;
  if (!os) throw io_error("write failed for " + path);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

}  // namespace expdetail

// Resolves a dataset path against SEQREC_DATA_ROOT when it is relative and
// the environment variable is set.
inline std::string resolve_dataset_path(const std::string& path) {
  const char* root = std::getenv(kDataRootEnv);
  if (root && *root && !path.empty() &&
      !std::filesystem::path(path).is_absolute()) {
    return (std::filesystem::path(root) / path).string();
  }
  return path;
}

inline SequenceDataset load_dataset(const ExperimentConfig& cfg) {
  if (cfg.dataset_kind == "synthetic")
    return make_dataset(make_synthetic_periodic(cfg.synth), cfg.tag());
  const std::string path = resolve_dataset_path(cfg.dataset_path);
  if (cfg.dataset_kind == "sequences")
    return make_dataset(read_sequences(path), cfg.tag());
  InteractionLog log = cfg.dataset_kind == "ml1m"
                           ? parse_ml1m(path)
                           : parse_foursquare_nyc(path);
  return make_dataset(build_sequences(log, cfg.min_user, cfg.min_item),
                      cfg.tag());
}

inline std::string metrics_csv_header() {
  return "model,dataset,phase,users,ndcg_at_5,ndcg_at_10,ndcg_at_20,"
         "precision_at_10,recall_at_10,fingerprint\n";
}

inline std::string metrics_csv_row(const EvalReport& r) {
  using expdetail::fmt_real;
  std::ostringstream os;
  os << r.model << ',' << r.dataset << ',' << r.phase << ',' << r.users << ','
     << fmt_real(r.ndcg5) << ',' << fmt_real(r.ndcg10) << ','
     << fmt_real(r.ndcg20) << ',' << fmt_real(r.precision10) << ','
     << fmt_real(r.recall10) << ',' << r.fingerprint << '\n';
  return os.str();
}

inline EvalReport parse_metrics_row(const std::string& line) {
  const auto f = expdetail::split_csv(line);
  if (f.size() != 10) throw data_error("metrics row: expected 10 fields");
  EvalReport r;
  r.model = f[0];
  r.dataset = f[1];
  r.phase = f[2];
  r.users = static_cast<std::size_t>(std::stoull(f[3]));
  r.ndcg5 = static_cast<real>(std::stod(f[4]));
  r.ndcg10 = static_cast<real>(std::stod(f[5]));
  r.ndcg20 = static_cast<real>(std::stod(f[6]));
  r.precision10 = static_cast<real>(std::stod(f[7]));
  r.recall10 = static_cast<real>(std::stod(f[8]));
  r.fingerprint = f[9];
  return r;
}

struct RunResult {
  std::string dir;
  std::string fingerprint;
  EvalReport valid;
  EvalReport test;  // users == 0 when test metrics were not produced
  int best_epoch = 0;
  real best_ndcg10 = 0;
  std::size_t curve_len = 0;
};

// Executes one fully-specified experiment into run_dir: trains with the
// given seed, writes resolved.cfg, checkpoint.bin, curve.csv and
// metrics.csv. Refuses to touch an existing non-empty directory unless
// force is set. with_test controls whether test-phase metrics are
// produced (sweeps defer them until a config is selected).
inline RunResult run_experiment(const ExperimentConfig& cfg,
                                std::uint64_t seed,
                                const std::string& run_dir, bool force,
                                bool with_test = true) {
  namespace fs = std::filesystem;
  cfg.validate();
  if (fs::exists(run_dir) && !fs::is_empty(run_dir) && !force)
    throw io_error("run directory " + run_dir +
                   " already has contents; pass --force to overwrite");
  set_finite_checks(cfg.finite_checks);

  SequenceDataset data = load_dataset(cfg);
  ModelConfig mcfg = cfg.model_cfg;
  mcfg.num_items = data.num_items;
  if (cfg.model == ModelKind::sasrec) mcfg.spectral.reset();
  else if (!mcfg.spectral) mcfg.spectral = SpectralConfig{};
  mcfg.validate(cfg.model);
  TrainConfig tcfg = cfg.train_cfg;
  tcfg.seed = seed;
  EvalOptions eopts;
  eopts.exclude_seen = cfg.exclude_seen;
  eopts.workers = cfg.eval_workers;

  const std::string resolved = resolved_config_text(cfg, seed);
  const std::string fingerprint = config_fingerprint(resolved);

  FitResult fitres = fit(cfg.model, data, mcfg, tcfg, eopts);

  RunResult rr;
  rr.dir = run_dir;
  rr.fingerprint = fingerprint;
  rr.best_epoch = fitres.best_epoch;
  rr.best_ndcg10 = fitres.best_ndcg10;
  rr.curve_len = fitres.curve.size();
  rr.valid = evaluate(fitres.best_state, mcfg, data, EvalPhase::valid, eopts);
  rr.valid.fingerprint = fingerprint;
  if (with_test) {
    rr.test = evaluate(fitres.best_state, mcfg, data, EvalPhase::test, eopts);
    rr.test.fingerprint = fingerprint;
  }

  fs::create_directories(run_dir);
  expdetail::write_text_file((fs::path(run_dir) / "resolved.cfg").string(),
                             resolved);
  save_checkpoint((fs::path(run_dir) / "checkpoint.bin").string(),
                  fitres.best_state, mcfg);
  {
    std::ostringstream os;
    os << "epoch,ndcg_at_10,loss\n";
    for (const auto& p : fitres.curve)
      os << p.epoch << ',' << expdetail::fmt_real(p.ndcg10) << ','
         << expdetail::fmt_real(p.loss) << '\n';
    expdetail::write_text_file((fs::path(run_dir) / "curve.csv").string(),
                               os.str());
  }
  {
    std::ostringstream os;
    os << metrics_csv_header() << metrics_csv_row(rr.valid);
    if (with_test) os << metrics_csv_row(rr.test);
    expdetail::write_text_file((fs::path(run_dir) / "metrics.csv").string(),
                               os.str());
  }
  return rr;
}

// ---------------------------------------------------------------------------
// Sweep: Cartesian product over the declared tunables (alpha, c, dropout for
// bsarec; dropout for sasrec), selection by validation NDCG@10 only. Test
// metrics are computed solely for the selected member afterwards.
// ---------------------------------------------------------------------------

struct SweepEntry {
  real alpha = 0;
  int c = 0;
  real dropout = 0;
  std::string dir;
  real val_ndcg10 = 0;
  bool selected = false;
};

struct SweepResult {
  std::vector<SweepEntry> entries;
  std::size_t best_index = 0;
  EvalReport best_valid;
  EvalReport best_test;
  std::string table_text;
};

inline std::vector<ExperimentConfig> enumerate_sweep(
    const ExperimentConfig& base) {
  const bool bsa = base.model == ModelKind::bsarec;
  std::vector<real> alphas = bsa && !base.alpha_grid.empty()
                                 ? base.alpha_grid
                                 : std::vector<real>{base.model_cfg.alpha};
  std::vector<int> cs =
      bsa && !base.c_grid.empty()
          ? base.c_grid
          : std::vector<int>{base.model_cfg.spectral
                                 ? base.model_cfg.spectral->cutoff
                                 : 1};
  std::vector<real> drops = !base.dropout_grid.empty()
                                ? base.dropout_grid
                                : std::vector<real>{base.model_cfg.dropout_p};
  std::vector<ExperimentConfig> out;
  for (real a : alphas)
    for (int c : cs)
      for (real p : drops) {
        ExperimentConfig cfg = base;
        cfg.model_cfg.alpha = a;
        if (bsa) {
          if (!cfg.model_cfg.spectral) cfg.model_cfg.spectral = SpectralConfig{};
          cfg.model_cfg.spectral->cutoff = c;
        }
        cfg.model_cfg.dropout_p = p;
        cfg.alpha_grid.clear();
        cfg.c_grid.clear();
        cfg.dropout_grid.clear();
        out.push_back(std::move(cfg));
      }
  return out;
}

inline SweepResult sweep_experiment(const ExperimentConfig& base,
                                    const std::string& out_dir, bool force,
                                    int workers) {
  namespace fs = std::filesystem;
  base.validate();
  const std::uint64_t seed = base.seeds.front();
  std::vector<ExperimentConfig> members = enumerate_sweep(base);
  SweepResult res;
  res.entries.resize(members.size());
  std::vector<RunResult> runs(members.size());

  std::atomic<std::size_t> next{0};
  auto work = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= members.size()) break;
      const ExperimentConfig& m = members[i];
      std::ostringstream dir;
      dir << out_dir << "/g" << i << "-a" << expdetail::fmt_fixed(m.model_cfg.alpha, 3)
          << "-c" << (m.model_cfg.spectral ? m.model_cfg.spectral->cutoff : 0)
          << "-p" << expdetail::fmt_fixed(m.model_cfg.dropout_p, 4);
      runs[i] = run_experiment(m, seed, dir.str(), force, /*with_test=*/false);
    }
  };
  const int nw = std::max(1, std::min<int>(workers,
                                           static_cast<int>(members.size())));
  if (nw == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < nw; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  std::size_t best = 0;
  for (std::size_t i = 0; i < members.size(); ++i) {
    auto& e = res.entries[i];
    e.alpha = members[i].model_cfg.alpha;
    e.c = members[i].model_cfg.spectral ? members[i].model_cfg.spectral->cutoff
                                        : 0;
    e.dropout = members[i].model_cfg.dropout_p;
    e.dir = runs[i].dir;
    e.val_ndcg10 = runs[i].valid.ndcg10;
    if (e.val_ndcg10 > res.entries[best].val_ndcg10) best = i;
  }
  res.best_index = best;
  res.entries[best].selected = true;
  res.best_valid = runs[best].valid;

  // test metrics only for the winner, appended to its run directory
  {
    ExperimentConfig w = members[best];
    SequenceDataset data = load_dataset(w);
    ModelConfig mcfg = w.model_cfg;
    mcfg.num_items = data.num_items;
    if (w.model == ModelKind::sasrec) mcfg.spectral.reset();
    mcfg.validate(w.model);
    Checkpoint ck = load_checkpoint(
        (fs::path(runs[best].dir) / "checkpoint.bin").string());
    EvalOptions eopts;
    eopts.exclude_seen = w.exclude_seen;
    eopts.workers = w.eval_workers;
    res.best_test = evaluate(ck.state, mcfg, data, EvalPhase::test, eopts);
    res.best_test.fingerprint = runs[best].fingerprint;
    std::ostringstream os;
    os << metrics_csv_header() << metrics_csv_row(runs[best].valid)
       << metrics_csv_row(res.best_test);
    expdetail::write_text_file(
        (fs::path(runs[best].dir) / "metrics.csv").string(), os.str());
  }

  // grid table + footer
  {
    std::ostringstream os;
    os << "alpha,c,dropout,val_ndcg_at_10,selected,dir\n";
    for (const auto& e : res.entries)
      os << expdetail::fmt_real(e.alpha) << ',' << e.c << ','
         << expdetail::fmt_real(e.dropout) << ','
         << expdetail::fmt_real(e.val_ndcg10) << ','
         << (e.selected ? 1 : 0) << ',' << e.dir << '\n';
    expdetail::write_text_file((fs::path(out_dir) / "sweep_grid.csv").string(),
                               os.str());

    std::ostringstream txt;
    txt << "sweep over " << members.size() << " configs ("
        << to_string(base.model) << ", dataset " << base.tag() << ")\n";
    txt << "selected: alpha=" << expdetail::fmt_real(res.entries[best].alpha)
        << " c=" << res.entries[best].c
        << " dropout=" << expdetail::fmt_real(res.entries[best].dropout)
        << " (validation ndcg@10 = "
        << expdetail::fmt_real(res.entries[best].val_ndcg10) << ")\n";
    txt << "test metrics (selected config only): ndcg@5="
        << expdetail::fmt_real(res.best_test.ndcg5)
        << " ndcg@10=" << expdetail::fmt_real(res.best_test.ndcg10)
        << " ndcg@20=" << expdetail::fmt_real(res.best_test.ndcg20)
        << " p@10=" << expdetail::fmt_real(res.best_test.precision10)
        << " r@10=" << expdetail::fmt_real(res.best_test.recall10) << "\n";
    auto grid_line = [&](const char* name, auto getter) {
      std::ostringstream g;
      bool edge = false;
      std::vector<real> seen;
      for (const auto& e : res.entries) {
        const real v = getter(e);
        bool dup = false;
        for (real s : seen) dup = dup || s == v;
        if (!dup) seen.push_back(v);
      }
      std::sort(seen.begin(), seen.end());
      g << name << " grid = [";
      for (std::size_t i = 0; i < seen.size(); ++i)
        g << (i ? ", " : "") << expdetail::fmt_real(seen[i]);
      g << "]";
      if (seen.size() > 1) {
        const real sel = getter(res.entries[best]);
        edge = sel == seen.front() || sel == seen.back();
      }
      if (edge) g << "  [selected value on grid edge; consider widening]";
      return g.str() + "\n";
    };
    txt << grid_line("alpha", [](const SweepEntry& e) { return e.alpha; });
    txt << grid_line("c", [](const SweepEntry& e) { return real(e.c); });
    txt << grid_line("dropout",
                     [](const SweepEntry& e) { return e.dropout; });
    res.table_text = txt.str();
    expdetail::write_text_file(
        (fs::path(out_dir) / "sweep_report.txt").string(), res.table_text);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Comparison report over finished run directories: aligned table with the
// best value per metric per dataset marked, and percent gains of bsarec
// over sasrec appended when a dataset has both kinds.
// ---------------------------------------------------------------------------

struct ComparisonReport {
  std::vector<EvalReport> rows;
  std::string table_text;
  std::string csv;
};

inline ComparisonReport compare_runs(const std::vector<std::string>& run_dirs) {
  namespace fs = std::filesystem;
  ComparisonReport rep;
  for (const auto& dir : run_dirs) {
    const std::string text =
        expdetail::read_text_file((fs::path(dir) / "metrics.csv").string());
    std::istringstream is(text);
    std::string line;
    std::getline(is, line);  // header
    EvalReport chosen;
    bool have = false;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      EvalReport r = parse_metrics_row(line);
      if (!have || r.phase == "test") {
        chosen = r;
        have = true;
      }
    }
    if (!have) throw data_error("compare: no metric rows in " + dir);
    rep.rows.push_back(chosen);
  }

  static const char* metric_names[5] = {"NDCG@5", "NDCG@10", "NDCG@20",
                                        "Precision@10", "Recall@10"};
  auto metric_of = [](const EvalReport& r, int i) -> real {
    switch (i) {
      case 0: return r.ndcg5;
      case 1: return r.ndcg10;
      case 2: return r.ndcg20;
      case 3: return r.precision10;
      default: return r.recall10;
    }
  };

  std::vector<std::string> datasets;
  for (const auto& r : rep.rows) {
    bool found = false;
    for (const auto& d : datasets) found = found || d == r.dataset;
    if (!found) datasets.push_back(r.dataset);
  }

  std::ostringstream txt, csv;
  csv << "model,dataset,phase,ndcg_at_5,ndcg_at_10,ndcg_at_20,precision_at_10,"
         "recall_at_10,best_ndcg_at_5,best_ndcg_at_10,best_ndcg_at_20,"
         "best_precision_at_10,best_recall_at_10\n";
  txt << "Model     Dataset              Phase   NDCG@5     NDCG@10    "
         "NDCG@20    Precision@10  Recall@10\n";
  for (const auto& ds : datasets) {
    real best[5] = {real(-1), real(-1), real(-1), real(-1), real(-1)};
    for (const auto& r : rep.rows)
      if (r.dataset == ds)
        for (int i = 0; i < 5; ++i)
          best[i] = std::max(best[i], metric_of(r, i));
    for (const auto& r : rep.rows) {
      if (r.dataset != ds) continue;
      char row[256];
      std::snprintf(row, sizeof(row),
                    "%-9s %-20s %-7s %s%-9.5f %s%-9.5f %s%-9.5f %s%-12.5f "
                    "%s%-9.5f\n",
                    r.model.c_str(), r.dataset.c_str(), r.phase.c_str(),
                    metric_of(r, 0) == best[0] ? "*" : " ",
                    static_cast<double>(r.ndcg5),
                    metric_of(r, 1) == best[1] ? "*" : " ",
                    static_cast<double>(r.ndcg10),
                    metric_of(r, 2) == best[2] ? "*" : " ",
                    static_cast<double>(r.ndcg20),
                    metric_of(r, 3) == best[3] ? "*" : " ",
                    static_cast<double>(r.precision10),
                    metric_of(r, 4) == best[4] ? "*" : " ",
                    static_cast<double>(r.recall10));
      txt << row;
      csv << r.model << ',' << r.dataset << ',' << r.phase;
      for (int i = 0; i < 5; ++i)
        csv << ',' << expdetail::fmt_real(metric_of(r, i));
      for (int i = 0; i < 5; ++i)
        csv << ',' << (metric_of(r, i) == best[i] ? 1 : 0);
      csv << '\n';
    }
  }

  // percent gains, bsarec over sasrec, per dataset with both kinds present
  for (const auto& ds : datasets) {
    const EvalReport* b = nullptr;
    const EvalReport* s = nullptr;
    for (const auto& r : rep.rows) {
      if (r.dataset != ds) continue;
      if (r.model == "bsarec" && !b) b = &r;
      if (r.model == "sasrec" && !s) s = &r;
    }
    if (!b || !s) continue;
    txt << "\nGains (bsarec over sasrec, %), dataset " << ds << ":\n";
    for (int i = 0; i < 5; ++i) {
      const real sv = metric_of(*s, i), bv = metric_of(*b, i);
      txt << "  " << metric_names[i] << ": ";
      if (sv == real(0))
        txt << "n/a (sasrec value is 0)";
      else
        txt << expdetail::fmt_fixed(real(100) * (bv - sv) / sv, 1);
      txt << "\n";
    }
  }
  rep.table_text = txt.str();
  rep.csv = csv.str();
  return rep;
}

inline real percent_gain(real bsarec_value, real sasrec_value) {
  if (sasrec_value == real(0))
    throw data_error("percent_gain: undefined for sasrec value 0");
  return real(100) * (bsarec_value - sasrec_value) / sasrec_value;
}

// Plot-ready copy of a run's validation curve: metadata header then
// epoch,ndcg_at_10 rows.
inline std::string export_curve_text(const std::string& run_dir) {
  namespace fs = std::filesystem;
  const std::string curve =
      expdetail::read_text_file((fs::path(run_dir) / "curve.csv").string());
  const std::string metrics =
      expdetail::read_text_file((fs::path(run_dir) / "metrics.csv").string());
  std::istringstream ms(metrics);
  std::string line;
  std::getline(ms, line);
  if (!std::getline(ms, line) || line.empty())
    throw data_error("export_curve: no metric rows in " + run_dir);
  const EvalReport r = parse_metrics_row(line);
  std::ostringstream os;
  os << "# model=" << r.model << " dataset=" << r.dataset
     << " fingerprint=" << r.fingerprint << "\n";
  os << "epoch,ndcg_at_10\n";
  std::istringstream cs(curve);
  std::getline(cs, line);  // header
  while (std::getline(cs, line)) {
    if (line.empty()) continue;
    const auto f = expdetail::split_csv(line);
    if (f.size() < 2)
      throw data_error("export_curve: malformed curve row '" + line + "'");
    os << f[0] << ',' << f[1] << '\n';
  }
  return os.str();
}

// Parses a raw dataset per the config and writes the canonical sequence
// file, so later runs can use dataset.kind=sequences.
inline void preprocess_dataset(const ExperimentConfig& cfg,
                               const std::string& out_path) {
  if (cfg.dataset_kind == "sequences")
    throw config_error("preprocess: dataset is already in canonical form");
  UserSequences seqs;
  if (cfg.dataset_kind == "synthetic") {
    seqs = make_synthetic_periodic(cfg.synth);
  } else {
    const std::string path = resolve_dataset_path(cfg.dataset_path);
    InteractionLog log = cfg.dataset_kind == "ml1m"
                             ? parse_ml1m(path)
                             : parse_foursquare_nyc(path);
    seqs = build_sequences(log, cfg.min_user, cfg.min_item);
  }
  write_sequences(out_path, seqs);
}

}  // namespace seqrec
