#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "seqrec/common.hpp"
#include "seqrec/data.hpp"
#include "seqrec/models.hpp"
#include "seqrec/train.hpp"

namespace seqrec {

// Declarative experiment description. Loaded from a flat key/value file
// with optional [section] headers; see docs in the README. Every field has
// a default, and load_experiment_config reports unknown or ill-typed keys
// by name.
struct ExperimentConfig {
  // dataset
  std::string dataset_kind = "synthetic";  // ml1m | foursquare | sequences | synthetic
  std::string dataset_path;
  std::string dataset_tag;  // report label; defaults to the kind
  int min_user = 5;
  int min_item = 5;
  SyntheticSpec synth;

  // model + training
  ModelKind model = ModelKind::bsarec;
  ModelConfig model_cfg;
  TrainConfig train_cfg;

  // evaluation
  bool exclude_seen = true;
  int eval_workers = 1;

  // sweep grids; empty = singleton of the base value
  std::vector<real> alpha_grid;
  std::vector<int> c_grid;
  std::vector<real> dropout_grid;

  // run
  std::string out_dir = "runs/exp";
  std::vector<std::uint64_t> seeds{1};
  bool finite_checks = true;

  std::string tag() const {
    return dataset_tag.empty() ? dataset_kind : dataset_tag;
  }

  void validate() const {
    if (dataset_kind != "ml1m" && dataset_kind != "foursquare" &&
        dataset_kind != "sequences" && dataset_kind != "synthetic")
      throw config_error("dataset.kind: expected ml1m, foursquare, sequences "
                         "or synthetic, got '" +
                         dataset_kind + "'");
    if (dataset_kind != "synthetic" && dataset_path.empty())
      throw config_error("dataset.path: required for dataset.kind=" +
                         dataset_kind);
    if (min_user < 1 || min_item < 1)
      throw config_error("dataset.min_user/min_item: must be >= 1");
    train_cfg.validate();
    if (seeds.empty()) throw config_error("run.seeds: at least one seed");
    if (eval_workers < 1) throw config_error("eval.workers: must be >= 1");
    if (model == ModelKind::sasrec && (!alpha_grid.empty() || !c_grid.empty()))
      throw config_error("sweep.alpha/sweep.c: not tunable for sasrec");
    // model_cfg is validated after the dataset fixes num_items
  }
};

namespace configdetail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline real parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<real>(d);
  } catch (const std::exception&) {
    throw config_error(key + ": expected a number, got '" + v + "'");
  }
}

inline long parse_long(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const long d = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw config_error(key + ": expected an integer, got '" + v + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw config_error(key + ": expected on/off, got '" + v + "'");
}

inline std::vector<std::string> split_ws(const std::string& v) {
  std::vector<std::string> out;
  std::istringstream is(v);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

}  // namespace configdetail

inline void apply_config_entry(ExperimentConfig& cfg, const std::string& key,
                               const std::string& value) {
  using namespace configdetail;
  if (key == "dataset.kind") cfg.dataset_kind = value;
  else if (key == "dataset.path") cfg.dataset_path = value;
  else if (key == "dataset.tag") cfg.dataset_tag = value;
  else if (key == "dataset.min_user")
    cfg.min_user = static_cast<int>(parse_long(key, value));
  else if (key == "dataset.min_item")
    cfg.min_item = static_cast<int>(parse_long(key, value));
  else if (key == "dataset.users")
    cfg.synth.users = static_cast<int>(parse_long(key, value));
  else if (key == "dataset.items")
    cfg.synth.items = static_cast<int>(parse_long(key, value));
  else if (key == "dataset.seq_len")
    cfg.synth.seq_len = static_cast<int>(parse_long(key, value));
  else if (key == "dataset.noise") cfg.synth.noise = parse_real(key, value);
  else if (key == "dataset.seed")
    cfg.synth.seed = static_cast<std::uint64_t>(parse_long(key, value));
  else if (key == "model.kind") cfg.model = model_kind_from_string(value);
  else if (key == "model.d")
    cfg.model_cfg.d = static_cast<int>(parse_long(key, value));
  else if (key == "model.max_len")
    cfg.model_cfg.max_len = static_cast<int>(parse_long(key, value));
  else if (key == "model.blocks")
    cfg.model_cfg.blocks = static_cast<int>(parse_long(key, value));
  else if (key == "model.heads")
    cfg.model_cfg.heads = static_cast<int>(parse_long(key, value));
  else if (key == "model.dropout")
    cfg.model_cfg.dropout_p = parse_real(key, value);
  else if (key == "model.alpha") cfg.model_cfg.alpha = parse_real(key, value);
  else if (key == "model.c") {
    if (!cfg.model_cfg.spectral) cfg.model_cfg.spectral = SpectralConfig{};
    cfg.model_cfg.spectral->cutoff = static_cast<int>(parse_long(key, value));
  } else if (key == "model.beta_init") {
    if (!cfg.model_cfg.spectral) cfg.model_cfg.spectral = SpectralConfig{};
    cfg.model_cfg.spectral->beta_init = parse_real(key, value);
  } else if (key == "model.beta_per_dim") {
    if (!cfg.model_cfg.spectral) cfg.model_cfg.spectral = SpectralConfig{};
    cfg.model_cfg.spectral->beta_per_dim = parse_bool(key, value);
  } else if (key == "model.norm_first")
    cfg.model_cfg.norm_first = parse_bool(key, value);
  else if (key == "model.eps") cfg.model_cfg.eps = parse_real(key, value);
  else if (key == "train.lr") cfg.train_cfg.lr = parse_real(key, value);
  else if (key == "train.beta1") cfg.train_cfg.beta1 = parse_real(key, value);
  else if (key == "train.beta2") cfg.train_cfg.beta2 = parse_real(key, value);
  else if (key == "train.weight_decay")
    cfg.train_cfg.weight_decay = parse_real(key, value);
  else if (key == "train.batch")
    cfg.train_cfg.batch = static_cast<int>(parse_long(key, value));
  else if (key == "train.epochs")
    cfg.train_cfg.epochs = static_cast<int>(parse_long(key, value));
  else if (key == "train.patience")
    cfg.train_cfg.patience = static_cast<int>(parse_long(key, value));
  else if (key == "train.loss")
    cfg.train_cfg.loss = loss_kind_from_string(value);
  else if (key == "train.negatives")
    cfg.train_cfg.negatives = static_cast<int>(parse_long(key, value));
  else if (key == "eval.exclude_seen")
    cfg.exclude_seen = parse_bool(key, value);
  else if (key == "eval.workers")
    cfg.eval_workers = static_cast<int>(parse_long(key, value));
  else if (key == "sweep.alpha") {
    cfg.alpha_grid.clear();
    for (const auto& t : split_ws(value))
      cfg.alpha_grid.push_back(parse_real(key, t));
  } else if (key == "sweep.c") {
    cfg.c_grid.clear();
    for (const auto& t : split_ws(value))
      cfg.c_grid.push_back(static_cast<int>(parse_long(key, t)));
  } else if (key == "sweep.dropout") {
    cfg.dropout_grid.clear();
    for (const auto& t : split_ws(value))
      cfg.dropout_grid.push_back(parse_real(key, t));
  } else if (key == "run.out")
    cfg.out_dir = value;
  else if (key == "run.seeds") {
    cfg.seeds.clear();
    for (const auto& t : split_ws(value))
      cfg.seeds.push_back(static_cast<std::uint64_t>(parse_long(key, t)));
  } else if (key == "run.finite_checks")
    cfg.finite_checks = parse_bool(key, value);
  else
    throw config_error("unknown config key '" + key + "'");
}

// Grammar: blank lines and #-comments ignored; [section] prefixes the keys
// that follow; `key = value` elsewhere. Dotted keys work with or without a
// section header.
inline ExperimentConfig parse_experiment_config(std::istream& in,
                                                const std::string& origin) {
  ExperimentConfig cfg;
  std::string line, section;
  std::size_t lineno = 0;
  bool patience_given = false;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t comment = line.find('#');
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = configdetail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      section = configdetail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw config_error(origin + ":" + std::to_string(lineno) +
                         ": expected key = value");
    std::string key = configdetail::trim(line.substr(0, eq));
    const std::string value = configdetail::trim(line.substr(eq + 1));
    if (!section.empty() && key.find('.') == std::string::npos)
      key = section + "." + key;
    patience_given = patience_given || key == "train.patience";
    apply_config_entry(cfg, key, value);
  }
  // the default patience tracks short epoch budgets instead of fighting
  // the patience <= epochs invariant
  if (!patience_given)
    cfg.train_cfg.patience =
        std::min(cfg.train_cfg.patience, cfg.train_cfg.epochs);
  return cfg;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("config: cannot open " + path);
  ExperimentConfig cfg = parse_experiment_config(in, path);
  cfg.validate();
  return cfg;
}

// Canonical serialization with every default materialized. Running from
// this snapshot reproduces the run bit-exactly, so it is written beside
// each run's outputs.
inline std::string resolved_config_text(const ExperimentConfig& cfg,
                                        std::uint64_t seed) {
  std::ostringstream os;
  os.setf(std::ios::fmtflags(0), std::ios::floatfield);
  os.precision(17);
  os << "[dataset]\n";
  os << "kind = " << cfg.dataset_kind << "\n";
  if (!cfg.dataset_path.empty()) os << "path = " << cfg.dataset_path << "\n";
  os << "tag = " << cfg.tag() << "\n";
  os << "min_user = " << cfg.min_user << "\n";
  os << "min_item = " << cfg.min_item << "\n";
  if (cfg.dataset_kind == "synthetic") {
    os << "users = " << cfg.synth.users << "\n";
    os << "items = " << cfg.synth.items << "\n";
    os << "seq_len = " << cfg.synth.seq_len << "\n";
    os << "noise = " << cfg.synth.noise << "\n";
    os << "seed = " << cfg.synth.seed << "\n";
  }
  os << "\n[model]\n";
  os << "kind = " << to_string(cfg.model) << "\n";
  os << "d = " << cfg.model_cfg.d << "\n";
  os << "max_len = " << cfg.model_cfg.max_len << "\n";
  os << "blocks = " << cfg.model_cfg.blocks << "\n";
  os << "heads = " << cfg.model_cfg.heads << "\n";
  os << "dropout = " << cfg.model_cfg.dropout_p << "\n";
  os << "alpha = " << cfg.model_cfg.alpha << "\n";
  if (cfg.model_cfg.spectral) {
    os << "c = " << cfg.model_cfg.spectral->cutoff << "\n";
    os << "beta_init = " << cfg.model_cfg.spectral->beta_init << "\n";
    os << "beta_per_dim = " << (cfg.model_cfg.spectral->beta_per_dim ? "on" : "off")
       << "\n";
  }
  os << "norm_first = " << (cfg.model_cfg.norm_first ? "on" : "off") << "\n";
  os << "eps = " << cfg.model_cfg.eps << "\n";
  os << "\n[train]\n";
  os << "lr = " << cfg.train_cfg.lr << "\n";
  os << "beta1 = " << cfg.train_cfg.beta1 << "\n";
  os << "beta2 = " << cfg.train_cfg.beta2 << "\n";
  os << "weight_decay = " << cfg.train_cfg.weight_decay << "\n";
  os << "batch = " << cfg.train_cfg.batch << "\n";
  os << "epochs = " << cfg.train_cfg.epochs << "\n";
  os << "patience = " << cfg.train_cfg.patience << "\n";
  os << "loss = " << to_string(cfg.train_cfg.loss) << "\n";
  os << "negatives = " << cfg.train_cfg.negatives << "\n";
  os << "\n[eval]\n";
  os << "exclude_seen = " << (cfg.exclude_seen ? "on" : "off") << "\n";
  os << "workers = " << cfg.eval_workers << "\n";
  os << "\n[run]\n";
  os << "seeds = " << seed << "\n";
  os << "finite_checks = " << (cfg.finite_checks ? "on" : "off") << "\n";
  return os.str();
}

// FNV-1a 64 over the resolved text; stamped into reports so a metrics row
// can be traced to the exact configuration that produced it.
inline std::string config_fingerprint(const std::string& resolved) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : resolved) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

}  // namespace seqrec
