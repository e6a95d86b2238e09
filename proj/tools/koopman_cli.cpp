// koopman: batch experiment driver.
//
//   koopman <verb> [-c run.ini] [--set section.key=value]... [--seed N] [--output DIR]
//
// Verbs: generate, train, forecast, backward, upsample, assimilate, evaluate, plot.
// Exit codes: 0 success, 2 configuration or usage error, 3 numerical failure.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "koopman/koopman.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace koopman;

namespace {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Configuration

struct KeySpec {
  const char* section;
  const char* key;
  const char* fallback;
  const char* help;
};

// Every accepted key with its default. Anything else in a config file is rejected.
const std::vector<KeySpec>& schema() {
  static const std::vector<KeySpec> keys = {
      {"global", "seed", "0", "root seed; data, init, mask and train seeds derive from it"},
      {"global", "output", "out", "output directory"},
      {"global", "threads", "1", "worker threads (computations are single-threaded)"},

      {"data", "kind", "fluid", "fluid | rotation | pseudo_periodic"},
      {"data", "dir", "", "dataset directory (default: <output>/data)"},
      {"data", "trajectories", "100", "fluid / rotation trajectory count"},
      {"data", "duration", "10", "fluid trajectory duration"},
      {"data", "dt", "0.02", "fluid integration step"},
      {"data", "mu", "0.1", "fluid growth rate"},
      {"data", "steps", "100", "rotation steps per trajectory"},
      {"data", "theta", "0.1", "rotation angle per step"},
      {"data", "height", "10", "grid rows"},
      {"data", "width", "10", "grid columns"},
      {"data", "channels", "4", "grid channels"},
      {"data", "n_steps", "200", "grid time steps"},
      {"data", "period", "36.5", "grid seasonal period in steps"},
      {"data", "harmonics", "3", "grid harmonics"},
      {"data", "noise", "0.01", "grid observation noise (std)"},
      {"data", "correlation_length", "2.5", "grid spatial correlation in pixels"},
      {"data", "amplitude_jitter", "0.25", "grid per-pixel gain spread"},
      {"data", "phase_jitter", "0.4", "grid per-pixel phase spread"},
      {"data", "frequency", "0", "training sampling frequency (0 = as stored)"},
      {"data", "train_fraction", "1", "leading fraction of each series used for training"},
      {"data", "keep_fraction", "1", "fraction of rows kept by the random training mask"},
      {"data", "augment", "false", "stack states with their discrete derivative"},

      {"model", "latent_dim", "16", "latent dimension"},
      {"model", "hidden", "256,128", "encoder hidden widths (decoder mirrors)"},
      {"model", "activation", "silu", "silu | tanh"},

      {"train", "epochs", "100", ""},
      {"train", "batch_size", "16", ""},
      {"train", "window", "50", "rows per training window"},
      {"train", "stride", "0", "window stride (0 = window / 2)"},
      {"train", "learning_rate", "1e-3", ""},
      {"train", "lr_decay", "0.3", "plateau decay factor"},
      {"train", "plateau_patience", "10", ""},
      {"train", "min_learning_rate", "1e-7", ""},
      {"train", "formulation", "discrete", "discrete | continuous"},
      {"train", "validation_fraction", "0.1", ""},
      {"train", "curriculum_start", "0", "initial window length (0 = off)"},
      {"train", "curriculum_epochs", "0", ""},
      {"train", "w_pred", "1", ""},
      {"train", "w_ae", "1", ""},
      {"train", "w_lin", "1", ""},
      {"train", "w_orth", "0.01", ""},
      {"train", "resume", "", "checkpoint to continue from"},

      {"evaluate", "checkpoint", "", "model checkpoint (default: <output>/checkpoint.json)"},
      {"evaluate", "test_dir", "", "held-out series directory (default: data.dir)"},
      {"evaluate", "horizon", "0", "steps to predict (0 = series length - 1)"},
      {"evaluate", "target_frequency", "0", "upsample target frequency"},

      {"assimilate", "mode", "constrained", "weak | constrained | joint"},
      {"assimilate", "alpha", "0", "dynamical prior weight (weak mode)"},
      {"assimilate", "beta", "0", "spatial prior weight"},
      {"assimilate", "temporal_weight", "0", "temporal prior weight"},
      {"assimilate", "iterations", "500", ""},
      {"assimilate", "z_learning_rate", "1e-2", ""},
      {"assimilate", "param_learning_rate", "1e-4", "joint mode only"},
      {"assimilate", "cressman_radius", "1.5", "gap-filling radius in steps"},
      {"assimilate", "truth_dir", "", "grid used for scoring (default: data.dir)"},
      {"assimilate", "history_fraction", "1", "leading fraction of frames offered as observations"},
      {"assimilate", "keep_fraction", "1", "fraction of history frames kept by each random mask"},
      {"assimilate", "mask_seeds", "1", "number of random masks"},
      {"assimilate", "baseline", "none", "none | periodic"},
      {"assimilate", "period", "0", "baseline period in steps (0 = round(data.period))"},
      {"assimilate", "baseline_alpha", "0", "baseline smoothness weight"},

      {"plot", "series", "", "comma-separated series files"},
      {"plot", "labels", "", "comma-separated legend labels (default: file stems)"},
      {"plot", "channels", "", "comma-separated channel indices (default: all)"},
  };
  return keys;
}

class Config {
 public:
  Config() {
    for (const auto& k : schema()) values_[id(k.section, k.key)] = k.fallback;
  }

  void load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    CLI::ConfigINI ini;
    for (const auto& item : ini.from_config(in)) {
      if (item.name == "++" || item.name == "--") continue;
      if (item.parents.size() > 1) throw ConfigError("nested section in " + path.string());
      const std::string section = item.parents.empty() || item.parents.front() == "default" ? "global" : item.parents.front();
      std::string value;
      for (std::size_t i = 0; i < item.inputs.size(); ++i) value += (i ? "," : "") + item.inputs[i];
      set(section + "." + item.name, value);
    }
  }

  void set(const std::string& key, const std::string& value) {
    if (!values_.count(key)) throw ConfigError("unknown config key '" + key + "'");
    values_[key] = value;
  }

  void set_assignment(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + assignment + "'");
    set(assignment.substr(0, eq), assignment.substr(eq + 1));
  }

  const std::string& str(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("internal: undeclared key " + key);
    return it->second;
  }

  double num(const std::string& key) const {
    const std::string& v = str(key);
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
  }

  int integer(const std::string& key) const {
    const double d = num(key);
    if (d != std::floor(d) || std::abs(d) > 2e9) throw ConfigError(key + ": expected an integer, got '" + str(key) + "'");
    return static_cast<int>(d);
  }

  std::uint64_t seed() const {
    const std::string& v = str("global.seed");
    try {
      std::size_t used = 0;
      const auto s = std::stoull(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return s;
    } catch (const std::exception&) {
      throw ConfigError("global.seed: expected a non-negative integer, got '" + v + "'");
    }
  }

  bool flag(const std::string& key) const {
    const std::string& v = str(key);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(key + ": expected a boolean, got '" + v + "'");
  }

  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> out;
    std::stringstream ss(str(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item.erase(0, item.find_first_not_of(" \t"));
      item.erase(item.find_last_not_of(" \t") + 1);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  std::vector<int> int_list(const std::string& key) const {
    std::vector<int> out;
    for (const auto& s : list(key)) {
      try {
        std::size_t used = 0;
        out.push_back(std::stoi(s, &used));
        if (used != s.size()) throw std::invalid_argument(s);
      } catch (const std::exception&) {
        throw ConfigError(key + ": expected integers, got '" + str(key) + "'");
      }
    }
    return out;
  }

  fs::path output() const { return str("global.output"); }
  fs::path data_dir() const { return str("data.dir").empty() ? output() / "data" : fs::path(str("data.dir")); }

  /// Writes every key, defaults included, so the run can be repeated from this file alone.
  void write_resolved(const fs::path& path) const {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot write " + path.string());
    std::string section;
    for (const auto& k : schema()) {
      if (section != k.section) {
        section = k.section;
        os << (os.tellp() > 0 ? "\n" : "") << '[' << section << "]\n";
      }
      os << k.key << " = " << str(id(k.section, k.key)) << '\n';
    }
  }

 private:
  static std::string id(const char* section, const char* key) { return std::string(section) + "." + key; }
  std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------
// Helpers

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NonFinite:
    case ErrorKind::NonDiagonalizable:
    case ErrorKind::NegativeRealEigenvalue:
    case ErrorKind::IllConditioned:
    case ErrorKind::Diverged:
      return 3;
    default:
      return 2;
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write " + path.string());
  os << text;
}

std::string series_filename(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "series_%04zu.csv", i);
  return buf;
}

std::vector<fs::path> csv_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError(dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".csv") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ConfigError(dir.string() + " holds no .csv series");
  return files;
}

bool is_grid(const Config& cfg) {
  const std::string& kind = cfg.str("data.kind");
  if (kind != "fluid" && kind != "rotation" && kind != "pseudo_periodic") {
    throw ConfigError("data.kind must be fluid, rotation or pseudo_periodic");
  }
  return kind == "pseudo_periodic";
}

std::vector<TimeSeries> read_series_dir(const Config& cfg, const fs::path& dir) {
  if (is_grid(cfg)) return read_grid(dir).pixels;
  std::vector<TimeSeries> out;
  for (const auto& f : csv_files(dir)) out.push_back(read_series_csv(f));
  return out;
}

double sampling_frequency(const TimeSeries& s) {
  if (s.length() < 2) fail(ErrorKind::EmptySeries, "series needs at least two rows");
  return 1.0 / (s.times[1] - s.times[0]);
}

PseudoPeriodicParams grid_params(const Config& cfg, std::uint64_t seed) {
  PseudoPeriodicParams p;
  p.height = cfg.integer("data.height");
  p.width = cfg.integer("data.width");
  p.channels = cfg.integer("data.channels");
  p.n_steps = cfg.integer("data.n_steps");
  p.period = cfg.num("data.period");
  p.harmonics = cfg.integer("data.harmonics");
  p.noise = cfg.num("data.noise");
  p.correlation_length = cfg.num("data.correlation_length");
  p.amplitude_jitter = cfg.num("data.amplitude_jitter");
  p.phase_jitter = cfg.num("data.phase_jitter");
  p.seed = seed;
  return p;
}

TrainConfig train_config(const Config& cfg) {
  TrainConfig tc;
  tc.weights.pred = cfg.num("train.w_pred");
  tc.weights.ae = cfg.num("train.w_ae");
  tc.weights.lin = cfg.num("train.w_lin");
  tc.weights.orth = cfg.num("train.w_orth");
  tc.learning_rate = cfg.num("train.learning_rate");
  tc.lr_decay = cfg.num("train.lr_decay");
  tc.plateau_patience = cfg.integer("train.plateau_patience");
  tc.min_learning_rate = cfg.num("train.min_learning_rate");
  tc.epochs = cfg.integer("train.epochs");
  tc.batch_size = cfg.integer("train.batch_size");
  tc.window = cfg.integer("train.window");
  tc.stride = cfg.integer("train.stride");
  tc.seed = sub_seed(cfg.seed(), "train");
  tc.formulation = parse_formulation(cfg.str("train.formulation"));
  tc.validation_fraction = cfg.num("train.validation_fraction");
  tc.curriculum_start = cfg.integer("train.curriculum_start");
  tc.curriculum_epochs = cfg.integer("train.curriculum_epochs");
  tc.validate();
  return tc;
}

fs::path checkpoint_path(const Config& cfg) {
  return cfg.str("evaluate.checkpoint").empty() ? cfg.output() / "checkpoint.json" : fs::path(cfg.str("evaluate.checkpoint"));
}

fs::path test_dir(const Config& cfg) {
  return cfg.str("evaluate.test_dir").empty() ? cfg.data_dir() : fs::path(cfg.str("evaluate.test_dir"));
}

// ---------------------------------------------------------------------------
// generate

int cmd_generate(const Config& cfg) {
  const std::uint64_t seed = sub_seed(cfg.seed(), "data");
  const fs::path dir = cfg.data_dir();
  fs::create_directories(dir);
  const std::string& kind = cfg.str("data.kind");
  std::size_t files = 0;
  if (is_grid(cfg)) {
    const PixelGrid g = synth_pseudo_periodic(grid_params(cfg, seed));
    write_grid(dir, g);
    files = g.pixels.size();
  } else {
    std::vector<TimeSeries> series;
    if (kind == "fluid") {
      FluidFlowDataset d;
      d.trajectories = cfg.integer("data.trajectories");
      d.duration = cfg.num("data.duration");
      d.dt = cfg.num("data.dt");
      d.params.mu = cfg.num("data.mu");
      d.seed = seed;
      series = generate_fluid_flow(d);
    } else {
      RotationDataset d;
      d.trajectories = cfg.integer("data.trajectories");
      d.steps = cfg.integer("data.steps");
      d.theta = cfg.num("data.theta");
      d.seed = seed;
      series = generate_rotation(d);
    }
    for (std::size_t i = 0; i < series.size(); ++i) write_series_csv(dir / series_filename(i), series[i]);
    files = series.size();
  }
  std::cout << "generated " << files << " " << kind << " series in " << dir.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

std::vector<TimeSeries> training_series(const Config& cfg, double& native_frequency) {
  const bool grid = is_grid(cfg);
  std::vector<TimeSeries> series = read_series_dir(cfg, cfg.data_dir());

  const double fraction = cfg.num("data.train_fraction");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("data.train_fraction must lie in (0, 1]");
  for (auto& s : series) {
    const auto rows = std::max<Eigen::Index>(2, static_cast<Eigen::Index>(std::floor(fraction * static_cast<double>(s.length()))));
    if (rows < s.length()) {
      s.values.conservativeResize(rows, Eigen::NoChange);
      s.times.resize(static_cast<std::size_t>(rows));
      s.mask.resize(static_cast<std::size_t>(rows));
    }
  }

  const double frequency = cfg.num("data.frequency");
  if (frequency > 0.0) {
    for (auto& s : series) s = subsample(s, frequency);
  }
  native_frequency = sampling_frequency(series.front());

  const double keep = cfg.num("data.keep_fraction");
  if (keep < 1.0) {
    const std::uint64_t mask_seed = sub_seed(cfg.seed(), "mask");
    const auto shared = random_keep_mask(series.front().mask, keep, mask_seed);
    for (std::size_t i = 0; i < series.size(); ++i) {
      // Grid pixels share one acquisition mask; independent trajectories get their own.
      series[i].mask = grid ? shared : random_keep_mask(series[i].mask, keep, sub_seed(mask_seed, std::to_string(i)));
      for (Eigen::Index t = 0; t < series[i].length(); ++t) {
        if (!series[i].mask[static_cast<std::size_t>(t)]) series[i].values.row(t).setZero();
      }
    }
  }

  if (cfg.flag("data.augment")) {
    for (auto& s : series) s = augment_state(s).as_series();
  }
  return series;
}

void write_history_csv(const fs::path& path, const TrainHistory& h) {
  std::ostringstream os;
  os << "epoch,pred,ae,lin,orth,total,validation,learning_rate,window\n";
  for (const auto& e : h.epochs) {
    os << e.epoch << ',' << format_double(e.pred) << ',' << format_double(e.ae) << ',' << format_double(e.lin) << ','
       << format_double(e.orth) << ',' << format_double(e.total) << ',' << format_double(e.validation) << ','
       << format_double(e.learning_rate) << ',' << e.window << '\n';
  }
  write_text(path, os.str());
}

int cmd_train(const Config& cfg) {
  double native_frequency = 1.0;
  const std::vector<TimeSeries> series = training_series(cfg, native_frequency);
  const TrainConfig tc = train_config(cfg);

  ModelConfig mc;
  mc.input_dim = static_cast<int>(series.front().channels());
  mc.latent_dim = cfg.integer("model.latent_dim");
  mc.hidden = cfg.int_list("model.hidden");
  mc.activation = parse_activation(cfg.str("model.activation"));
  mc.augmented = cfg.flag("data.augment");
  mc.native_frequency = native_frequency;
  if (mc.latent_dim < 1) throw ConfigError("model.latent_dim must be positive");

  Trainer trainer(series, make_model(mc, sub_seed(cfg.seed(), "init")), tc);
  if (!cfg.str("train.resume").empty()) {
    const Checkpoint cp = load_checkpoint(cfg.str("train.resume"));
    if (!cp.trainer_state) throw ConfigError("checkpoint " + cfg.str("train.resume") + " has no trainer state");
    if (cp.model.input_dim() != mc.input_dim || cp.model.latent_dim() != mc.latent_dim) {
      throw ConfigError("checkpoint model does not match the configured model");
    }
    trainer.resume(cp.model, cp.history, *cp.trainer_state);
  }
  trainer.run();

  Checkpoint cp{trainer.model(), tc, trainer.history(), cfg.seed(), trainer.state()};
  save_checkpoint(cfg.output() / "checkpoint.json", cp);
  write_history_csv(cfg.output() / "history.csv", trainer.history());

  if (trainer.history().epochs.empty()) {
    std::cout << "no epochs run\n";
  } else {
    const EpochRecord& e = trainer.history().epochs.back();
    std::cout << "epoch " << e.epoch << " pred " << format_double(e.pred) << " ae " << format_double(e.ae) << " lin "
              << format_double(e.lin) << " orth " << format_double(e.orth) << " total " << format_double(e.total)
              << " validation " << format_double(e.validation) << "\n";
  }
  return 0;
}

// ---------------------------------------------------------------------------
// forecast / backward / upsample

enum class Prediction { Forward, Backward };

/// Model input rows and the matching physical truth for one test series.
struct Aligned {
  TimeSeries inputs;  // what the model consumes
  TimeSeries truth;   // physical states at the same rows
};

Aligned align(const KoopmanModel& m, const TimeSeries& s) {
  if (!s.fully_observed()) fail(ErrorKind::IrregularInput, "test series must be fully observed");
  if (!m.augmented) return {s, s};
  Aligned a;
  a.inputs = augment_state(s).as_series();
  a.truth = a.inputs;
  a.truth.values = a.inputs.values.leftCols(m.state_channels());
  return a;
}

int run_prediction(const Config& cfg, const std::string& verb, Prediction direction, double target_frequency) {
  const Checkpoint cp = load_checkpoint(checkpoint_path(cfg));
  std::vector<TimeSeries> tests = read_series_dir(cfg, test_dir(cfg));
  const double data_frequency = sampling_frequency(tests.front());
  const double frequency = target_frequency > 0.0 ? target_frequency : data_frequency;
  if (frequency > data_frequency * (1.0 + 1e-9)) {
    throw ConfigError("test data at " + std::to_string(data_frequency) + " Hz cannot score a " +
                      std::to_string(frequency) + " Hz prediction");
  }
  if (frequency < data_frequency * (1.0 - 1e-9)) {
    for (auto& s : tests) s = subsample(s, frequency);
  }
  const KoopmanModel model = retarget_frequency(cp.model, frequency);

  const fs::path dir = cfg.output() / verb;
  fs::create_directories(dir);
  const int configured = cfg.integer("evaluate.horizon");
  std::vector<double> per_step;
  std::vector<double> per_series;
  double total = 0.0;
  double count = 0.0;
  for (std::size_t i = 0; i < tests.size(); ++i) {
    const Aligned a = align(model, tests[i]);
    const auto rows = static_cast<int>(a.inputs.length());
    const int horizon = configured > 0 ? configured : rows - 1;
    if (horizon < 1 || horizon > rows - 1) throw ConfigError("evaluate.horizon must lie in [1, " + std::to_string(rows - 1) + "]");
    TimeSeries pred;
    Eigen::Index first = 0;
    if (direction == Prediction::Forward) {
      pred = forecast_discrete(model, a.inputs.row(0), horizon);
    } else {
      first = rows - 1 - horizon;
      pred = backward_predict(model, a.inputs.row(rows - 1), horizon);
    }
    for (std::size_t t = 0; t < pred.times.size(); ++t) pred.times[t] = a.truth.times[static_cast<std::size_t>(first) + t];
    write_series_csv(dir / ("pred_" + series_filename(i).substr(7)), pred);

    per_step.resize(static_cast<std::size_t>(horizon) + 1, 0.0);
    double series_total = 0.0;
    for (int t = 0; t <= horizon; ++t) {
      const double sq = (pred.values.row(t) - a.truth.values.row(first + t)).squaredNorm();
      per_step[static_cast<std::size_t>(t)] += sq / static_cast<double>(pred.values.cols() * tests.size());
      series_total += sq;
    }
    per_series.push_back(series_total / static_cast<double>(pred.values.size()));
    total += series_total;
    count += static_cast<double>(pred.values.size());
  }

  std::ostringstream os;
  os << "step,mse\n";
  for (std::size_t t = 0; t < per_step.size(); ++t) os << t << ',' << format_double(per_step[t]) << '\n';
  write_text(dir / "mse_per_step.csv", os.str());
  const double mse = total / count;
  json metrics = {{"verb", verb}, {"frequency", frequency}, {"series", tests.size()}, {"mse", mse}, {"per_series_mse", per_series}};
  write_text(dir / "metrics.json", metrics.dump(1) + "\n");
  std::cout << verb << " mse " << format_double(mse) << " over " << tests.size() << " series at " << frequency << " Hz\n";
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate

int cmd_evaluate(const Config& cfg) {
  const Checkpoint cp = load_checkpoint(checkpoint_path(cfg));
  const std::vector<TimeSeries> tests = read_series_dir(cfg, test_dir(cfg));
  const KoopmanModel model = retarget_frequency(cp.model, sampling_frequency(tests.front()));
  std::vector<TimeSeries> inputs;
  std::vector<TimeSeries> truths;
  for (const auto& s : tests) {
    Aligned a = align(model, s);
    inputs.push_back(std::move(a.inputs));
    truths.push_back(std::move(a.truth));
  }
  const auto rows = static_cast<int>(inputs.front().length());
  double fwd = 0.0;
  double bwd = 0.0;
  double count = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].length() != rows) throw ConfigError("evaluate needs test series of equal length");
    fwd += (forecast_discrete(model, inputs[i].row(0), rows - 1).values - truths[i].values).squaredNorm();
    bwd += (backward_predict(model, inputs[i].row(rows - 1), rows - 1).values - truths[i].values).squaredNorm();
    count += static_cast<double>(truths[i].values.size());
  }
  const LossValues losses = detail::evaluate_losses(model, inputs, Formulation::Discrete);
  const auto eig = eig_complex(model.k);
  std::vector<double> moduli;
  for (Eigen::Index i = 0; i < eig.values.size(); ++i) moduli.push_back(std::abs(eig.values(i)));
  std::sort(moduli.rbegin(), moduli.rend());
  json metrics = {{"forward_mse", fwd / count},
                  {"backward_mse", bwd / count},
                  {"loss_pred", losses.pred},
                  {"loss_ae", losses.ae},
                  {"loss_lin", losses.lin},
                  {"orthogonality_defect", losses.orth},
                  {"eigenvalue_moduli", moduli}};
  write_text(cfg.output() / "evaluate" / "metrics.json", metrics.dump(1) + "\n");
  std::cout << "forward mse " << format_double(fwd / count) << " backward mse " << format_double(bwd / count)
            << " orthogonality defect " << format_double(losses.orth) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// assimilate

struct SplitErrors {
  double observed = std::numeric_limits<double>::quiet_NaN();
  double hidden = std::numeric_limits<double>::quiet_NaN();
  double future = std::numeric_limits<double>::quiet_NaN();
};

SplitErrors split_errors(const std::vector<Matrix>& recon, const std::vector<Matrix>& truth, const std::vector<bool>& mask,
                         Eigen::Index history) {
  std::vector<bool> observed(truth.size(), false);
  std::vector<bool> hidden(truth.size(), false);
  std::vector<bool> future(truth.size(), false);
  for (std::size_t t = 0; t < truth.size(); ++t) {
    if (static_cast<Eigen::Index>(t) >= history) {
      future[t] = true;
    } else {
      (mask[t] ? observed : hidden)[t] = true;
    }
  }
  const auto score = [&](const std::vector<bool>& m) {
    return std::count(m.begin(), m.end(), true) ? masked_mse(recon, truth, m) : std::numeric_limits<double>::quiet_NaN();
  };
  return {score(observed), score(hidden), score(future)};
}

PixelGrid frames_to_grid(const std::vector<Matrix>& frames, const PixelGrid& like) {
  PixelGrid g = like;
  for (int p = 0; p < g.num_pixels(); ++p) {
    TimeSeries& s = g.pixels[static_cast<std::size_t>(p)];
    for (std::size_t t = 0; t < frames.size(); ++t) s.values.row(static_cast<Eigen::Index>(t)) = frames[t].col(p).transpose();
    s.mask.assign(frames.size(), true);
  }
  return g;
}

json real(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

int cmd_assimilate(const Config& cfg) {
  if (!is_grid(cfg)) throw ConfigError("assimilate works on pseudo_periodic grids (data.kind)");
  const Checkpoint cp = load_checkpoint(checkpoint_path(cfg));
  const PixelGrid observed_grid = read_grid(cfg.data_dir());
  const PixelGrid truth_grid = cfg.str("assimilate.truth_dir").empty() ? observed_grid : read_grid(cfg.str("assimilate.truth_dir"));
  if (truth_grid.length() != observed_grid.length() || truth_grid.num_pixels() != observed_grid.num_pixels()) {
    throw ConfigError("truth grid does not match the observed grid");
  }
  const Observations all = Observations::from_grid(observed_grid);
  const std::vector<Matrix> truth = truth_grid.frames();
  const Eigen::Index frames = all.length();

  const double history_fraction = cfg.num("assimilate.history_fraction");
  if (!(history_fraction > 0.0 && history_fraction <= 1.0)) throw ConfigError("assimilate.history_fraction must lie in (0, 1]");
  const auto history = std::max<Eigen::Index>(2, static_cast<Eigen::Index>(std::floor(history_fraction * static_cast<double>(frames))));
  const double keep = cfg.num("assimilate.keep_fraction");
  const int mask_seeds = cfg.integer("assimilate.mask_seeds");
  if (mask_seeds < 1) throw ConfigError("assimilate.mask_seeds must be positive");
  const std::string baseline = cfg.str("assimilate.baseline");
  if (baseline != "none" && baseline != "periodic") throw ConfigError("assimilate.baseline must be none or periodic");
  int period = cfg.integer("assimilate.period");
  if (period == 0) period = static_cast<int>(std::lround(cfg.num("data.period")));

  AssimilationProblem problem;
  problem.model = retarget_frequency(cp.model, sampling_frequency(observed_grid.pixels.front()));
  problem.mode = parse_assimilation_mode(cfg.str("assimilate.mode"));
  problem.alpha = cfg.num("assimilate.alpha");
  problem.beta = cfg.num("assimilate.beta");
  problem.temporal_weight = cfg.num("assimilate.temporal_weight");
  problem.iterations = cfg.integer("assimilate.iterations");
  problem.z_learning_rate = cfg.num("assimilate.z_learning_rate");
  problem.param_learning_rate = cfg.num("assimilate.param_learning_rate");
  problem.cressman_radius = cfg.num("assimilate.cressman_radius");
  problem.horizon = static_cast<int>(frames);

  const fs::path dir = cfg.output() / "assimilate";
  fs::create_directories(dir);
  const std::uint64_t mask_root = sub_seed(cfg.seed(), "mask");
  std::ostringstream table;
  table << "mask_seed,observed_mse,masked_mse,future_mse,initial_cost,final_cost";
  if (baseline == "periodic") table << ",periodic_observed_mse,periodic_masked_mse,periodic_future_mse";
  table << '\n';
  std::vector<double> hidden_scores;
  std::vector<double> future_scores;
  std::vector<double> baseline_hidden;
  std::vector<double> baseline_future;
  json runs = json::array();
  for (int i = 0; i < mask_seeds; ++i) {
    const std::uint64_t seed = sub_seed(mask_root, std::to_string(i));
    std::vector<bool> mask(static_cast<std::size_t>(frames), false);
    const std::vector<bool> kept = keep < 1.0 ? random_frame_mask(history, keep, seed) : std::vector<bool>(static_cast<std::size_t>(history), true);
    std::copy(kept.begin(), kept.end(), mask.begin());
    problem.observations = all.with_mask(mask);
    const AssimilationResult r = assimilate(problem);
    const SplitErrors e = split_errors(r.trajectory, truth, mask, history);
    if (i == 0) write_grid(dir / "reconstruction", frames_to_grid(r.trajectory, observed_grid));
    table << seed << ',' << format_double(e.observed) << ',' << format_double(e.hidden) << ',' << format_double(e.future) << ','
          << format_double(r.initial_cost()) << ',' << format_double(r.final_cost());
    json run = {{"mask_seed", seed}, {"observed_mse", real(e.observed)}, {"masked_mse", real(e.hidden)},
                {"future_mse", real(e.future)}, {"initial_cost", r.initial_cost()}, {"final_cost", r.final_cost()}};
    hidden_scores.push_back(e.hidden);
    future_scores.push_back(e.future);
    if (baseline == "periodic") {
      const auto b = periodic_baseline(problem.observations, period, cfg.num("assimilate.baseline_alpha"), frames);
      const SplitErrors be = split_errors(b, truth, mask, history);
      table << ',' << format_double(be.observed) << ',' << format_double(be.hidden) << ',' << format_double(be.future);
      run["periodic"] = {{"observed_mse", real(be.observed)}, {"masked_mse", real(be.hidden)}, {"future_mse", real(be.future)}};
      baseline_hidden.push_back(be.hidden);
      baseline_future.push_back(be.future);
    }
    table << '\n';
    runs.push_back(run);
  }

  const auto summary = [](const std::vector<double>& v) -> std::pair<json, json> {
    std::vector<double> finite;
    for (double x : v) {
      if (std::isfinite(x)) finite.push_back(x);
    }
    if (finite.empty()) return {nullptr, nullptr};
    const MeanStd ms = mean_std(finite);
    return {ms.mean, ms.std};
  };
  const auto [hidden_mean, hidden_std] = summary(hidden_scores);
  const auto [future_mean, future_std] = summary(future_scores);
  const auto cell = [](const json& j) { return j.is_null() ? std::string("nan") : format_double(j.get<double>()); };
  table << "mean,," << cell(hidden_mean) << ',' << cell(future_mean) << ",,";
  json manifest_baseline = nullptr;
  if (baseline == "periodic") {
    const auto [bh_mean, bh_std] = summary(baseline_hidden);
    const auto [bf_mean, bf_std] = summary(baseline_future);
    table << ",," << cell(bh_mean) << ',' << cell(bf_mean);
    table << "\nstd,," << cell(hidden_std) << ',' << cell(future_std) << ",,,," << cell(bh_std) << ',' << cell(bf_std) << '\n';
    manifest_baseline = {{"kind", "periodic"}, {"period", period}, {"alpha", cfg.num("assimilate.baseline_alpha")},
                         {"masked_mse_mean", bh_mean}, {"masked_mse_std", bh_std}, {"future_mse_mean", bf_mean},
                         {"future_mse_std", bf_std}};
  } else {
    table << "\nstd,," << cell(hidden_std) << ',' << cell(future_std) << ",,\n";
  }
  write_text(dir / "metrics.csv", table.str());

  json manifest = {{"mode", to_string(problem.mode)},
                   {"weights", {{"alpha", problem.alpha}, {"beta", problem.beta}, {"temporal", problem.temporal_weight}}},
                   {"iterations", problem.iterations},
                   {"z_learning_rate", problem.z_learning_rate},
                   {"param_learning_rate", problem.param_learning_rate},
                   {"root_seed", cfg.seed()},
                   {"history_frames", history},
                   {"frames", frames},
                   {"keep_fraction", keep},
                   {"runs", runs},
                   {"masked_mse_mean", hidden_mean},
                   {"masked_mse_std", hidden_std},
                   {"future_mse_mean", future_mean},
                   {"future_mse_std", future_std},
                   {"baseline", manifest_baseline}};
  write_text(dir / "manifest.json", manifest.dump(1) + "\n");
  std::cout << to_string(problem.mode) << " assimilation over " << mask_seeds << " mask(s): masked mse " << cell(hidden_mean)
            << " future mse " << cell(future_mean) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// plot

std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string line_chart(const std::vector<TimeSeries>& series, const std::vector<std::string>& labels, Eigen::Index channel) {
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
  const double w = 640, h = 360, left = 50, right = 150, top = 20, bottom = 30;
  double t0 = std::numeric_limits<double>::infinity(), t1 = -t0, v0 = t0, v1 = -t0;
  for (const auto& s : series) {
    for (Eigen::Index t = 0; t < s.length(); ++t) {
      if (!s.mask[static_cast<std::size_t>(t)]) continue;
      t0 = std::min(t0, s.times[static_cast<std::size_t>(t)]);
      t1 = std::max(t1, s.times[static_cast<std::size_t>(t)]);
      v0 = std::min(v0, s.values(t, channel));
      v1 = std::max(v1, s.values(t, channel));
    }
  }
  if (t1 <= t0) t1 = t0 + 1.0;
  if (v1 <= v0) {
    v0 -= 0.5;
    v1 += 0.5;
  }
  const auto x = [&](double t) { return left + (t - t0) / (t1 - t0) * (w - left - right); };
  const auto y = [&](double v) { return top + (v1 - v) / (v1 - v0) * (h - top - bottom); };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << w - left - right << "\" height=\"" << h - top - bottom
     << "\" fill=\"none\" stroke=\"#888\"/>\n";
  os << "<text x=\"" << left << "\" y=\"" << h - 8 << "\" font-size=\"11\">t " << format_double(t0) << " to "
     << format_double(t1) << "</text>\n";
  os << "<text x=\"4\" y=\"" << top + 10 << "\" font-size=\"11\">" << format_double(v1) << "</text>\n";
  os << "<text x=\"4\" y=\"" << h - bottom << "\" font-size=\"11\">" << format_double(v0) << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = colors[i % std::size(colors)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    for (Eigen::Index t = 0; t < series[i].length(); ++t) {
      if (!series[i].mask[static_cast<std::size_t>(t)]) continue;
      os << x(series[i].times[static_cast<std::size_t>(t)]) << ',' << y(series[i].values(t, channel)) << ' ';
    }
    os << "\"/>\n";
    const double ly = top + 14.0 * static_cast<double>(i + 1);
    os << "<line x1=\"" << w - right + 10 << "\" y1=\"" << ly - 4 << "\" x2=\"" << w - right + 30 << "\" y2=\"" << ly - 4
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << w - right + 35 << "\" y=\"" << ly << "\" font-size=\"11\">" << svg_escape(labels[i]) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

int cmd_plot(const Config& cfg) {
  const auto files = cfg.list("plot.series");
  if (files.empty()) throw ConfigError("plot.series lists no files");
  std::vector<TimeSeries> series;
  for (const auto& f : files) {
    if (!fs::exists(f)) throw ConfigError("missing series file " + f);
    series.push_back(read_series_csv(fs::path(f)));
  }
  std::vector<std::string> labels = cfg.list("plot.labels");
  if (labels.empty()) {
    for (const auto& f : files) labels.push_back(fs::path(f).stem().string());
  }
  if (labels.size() != series.size()) throw ConfigError("plot.labels needs one label per series");
  const Eigen::Index channels = series.front().channels();
  for (const auto& s : series) {
    if (s.channels() != channels) throw ConfigError("plotted series must share a channel count");
  }
  std::vector<int> selected = cfg.int_list("plot.channels");
  if (selected.empty()) {
    for (int c = 0; c < channels; ++c) selected.push_back(c);
  }
  const fs::path dir = cfg.output() / "plot";
  fs::create_directories(dir);
  for (int c : selected) {
    if (c < 0 || c >= channels) throw ConfigError("plot.channels: channel " + std::to_string(c) + " out of range");
    std::ostringstream csv;
    csv << "label,t,value\n";
    for (std::size_t i = 0; i < series.size(); ++i) {
      for (Eigen::Index t = 0; t < series[i].length(); ++t) {
        if (!series[i].mask[static_cast<std::size_t>(t)]) continue;
        csv << labels[i] << ',' << format_double(series[i].times[static_cast<std::size_t>(t)]) << ','
            << format_double(series[i].values(t, c)) << '\n';
      }
    }
    const std::string stem = "channel_" + std::to_string(c);
    write_text(dir / (stem + ".csv"), csv.str());
    write_text(dir / (stem + ".svg"), line_chart(series, labels, c));
  }
  std::cout << "wrote " << selected.size() << " channel plot(s) to " << dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Koopman autoencoder experiments"};
  app.require_subcommand(1, 1);
  std::string config_file;
  std::vector<std::string> overrides;
  std::string seed_flag;
  std::string output_flag;
  int threads = 1;
  app.add_option("-c,--config", config_file, "sectioned key = value run configuration");
  app.add_option("--set", overrides, "override one key, e.g. --set train.epochs=20")->take_all();
  app.add_option("--seed", seed_flag, "root seed (overrides global.seed)");
  app.add_option("-o,--output", output_flag, "output directory (overrides global.output)");
  app.add_option("--threads", threads, "worker threads; 1 is the deterministic reference mode")->check(CLI::PositiveNumber);
  app.fallthrough();

  const std::vector<std::pair<std::string, std::string>> verbs = {
      {"generate", "write a synthetic dataset"},
      {"train", "train a model and write a checkpoint"},
      {"forecast", "forecast test series from their first state"},
      {"backward", "predict test series backward from their last state"},
      {"upsample", "forecast at evaluate.target_frequency"},
      {"assimilate", "variational assimilation on a pixel grid"},
      {"evaluate", "forward, backward and loss metrics of a checkpoint"},
      {"plot", "per-channel plot data and line charts"},
  };
  for (const auto& [name, help] : verbs) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  const std::string verb = app.get_subcommands().front()->get_name();

  try {
    Config cfg;
    if (!config_file.empty()) cfg.load(config_file);
    for (const auto& o : overrides) cfg.set_assignment(o);
    if (!seed_flag.empty()) cfg.set("global.seed", seed_flag);
    if (!output_flag.empty()) cfg.set("global.output", output_flag);
    cfg.set("global.threads", std::to_string(threads));
    cfg.seed();

    fs::create_directories(cfg.output());
    cfg.write_resolved(cfg.output() / ("resolved_" + verb + ".ini"));

    if (verb == "generate") return cmd_generate(cfg);
    if (verb == "train") return cmd_train(cfg);
    if (verb == "forecast") return run_prediction(cfg, verb, Prediction::Forward, 0.0);
    if (verb == "backward") return run_prediction(cfg, verb, Prediction::Backward, 0.0);
    if (verb == "upsample") {
      const double target = cfg.num("evaluate.target_frequency");
      if (!(target > 0.0)) throw ConfigError("upsample needs evaluate.target_frequency > 0");
      return run_prediction(cfg, verb, Prediction::Forward, target);
    }
    if (verb == "assimilate") return cmd_assimilate(cfg);
    if (verb == "evaluate") return cmd_evaluate(cfg);
    if (verb == "plot") return cmd_plot(cfg);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "file error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 3;
  }
  return 2;
}
