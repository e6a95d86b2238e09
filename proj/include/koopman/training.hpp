#pragma once

// Loss terms (prediction, auto-encoding, linearity, orthogonality), their
// masked / continuous-time variants for irregular data, and the training loop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "koopman/autodiff.hpp"
#include "koopman/dynamics.hpp"
#include "koopman/error.hpp"
#include "koopman/matfun.hpp"
#include "koopman/mlp.hpp"
#include "koopman/model.hpp"
#include "koopman/optim.hpp"

namespace koopman {

enum class Formulation { Discrete, Continuous };

inline std::string_view to_string(Formulation f) { return f == Formulation::Discrete ? "discrete" : "continuous"; }

inline Formulation parse_formulation(std::string_view s) {
  if (s == "discrete") return Formulation::Discrete;
  if (s == "continuous") return Formulation::Continuous;
  fail(ErrorKind::InvalidArgument, "unknown formulation '" + std::string(s) + "'");
}

struct LossWeights {
  double pred = 1.0;
  double ae = 1.0;
  double lin = 1.0;
  double orth = 0.01;

  void validate() const {
    if (pred < 0 || ae < 0 || lin < 0 || orth < 0) fail(ErrorKind::InvalidArgument, "loss weights must be >= 0");
    if (pred + ae + lin + orth <= 0) fail(ErrorKind::InvalidArgument, "at least one loss weight must be positive");
  }
};

/// Name under which the evolution matrix is trained: K (discrete) or its generator L.
inline const std::string kEvolutionK = "K";
inline const std::string kEvolutionL = "L";

// ---------------------------------------------------------------------------
// Batches

/// Equal-length windows laid out for vectorized evaluation. Unobserved and
/// padded entries hold zeros and a zero mask.
struct SeriesBatch {
  Eigen::Index rows = 0;      // time indices per window (T + 1)
  Eigen::Index channels = 0;
  Eigen::Index size = 0;      // number of windows
  std::vector<Matrix> frames;  // per time index: channels x size
  Matrix mask;                 // rows x size, 1 = observed
  Matrix steps;                // rows x size, elapsed model steps since row 0
  bool fully_observed = true;
};

/// Packs series into a batch. Times are converted to model steps through
/// `native_frequency`; the first row of every series must be observed.
inline SeriesBatch make_batch(std::span<const TimeSeries> series, double native_frequency) {
  if (series.empty()) fail(ErrorKind::EmptyDataset, "empty batch");
  SeriesBatch b;
  b.size = static_cast<Eigen::Index>(series.size());
  b.channels = series.front().channels();
  for (const auto& s : series) {
    s.validate();
    if (s.channels() != b.channels) fail(ErrorKind::ShapeMismatch, "batch: channel count differs");
    if (!s.mask.front()) fail(ErrorKind::DegenerateMask, "batch: the first row of each series must be observed");
    b.rows = std::max(b.rows, s.length());
  }
  b.frames.assign(static_cast<std::size_t>(b.rows), Matrix::Zero(b.channels, b.size));
  b.mask = Matrix::Zero(b.rows, b.size);
  b.steps = Matrix::Zero(b.rows, b.size);
  for (Eigen::Index i = 0; i < b.size; ++i) {
    const TimeSeries& s = series[static_cast<std::size_t>(i)];
    for (Eigen::Index t = 0; t < s.length(); ++t) {
      const auto ti = static_cast<std::size_t>(t);
      b.steps(t, i) = (s.times[ti] - s.times.front()) * native_frequency;
      if (!s.mask[ti]) continue;
      b.mask(t, i) = 1.0;
      b.frames[ti].col(i) = s.values.row(t).transpose();
    }
  }
  b.fully_observed = (b.mask.array() == 1.0).all();
  return b;
}

// ---------------------------------------------------------------------------
// Loss graph

struct LossGraph {
  ad::Var pred;
  ad::Var ae;
  ad::Var lin;
  ad::Var orth;
};

namespace detail {

/// Per-column mask (rows x B*T laid out time-major) broadcast to `height` rows.
inline Matrix expand_mask(const Matrix& mask, Eigen::Index first_row, Eigen::Index count, Eigen::Index height) {
  const Eigen::Index b = mask.cols();
  Matrix out(height, b * count);
  for (Eigen::Index t = 0; t < count; ++t) {
    for (Eigen::Index i = 0; i < b; ++i) out.col(t * b + i).setConstant(mask(first_row + t, i));
  }
  return out;
}

inline ad::Var masked(const ad::Var& v, const SeriesBatch& batch, Eigen::Index first_row) {
  if (batch.fully_observed) return v;
  const Eigen::Index count = v.cols() / batch.size;
  return ad::hadamard_const(v, expand_mask(batch.mask, first_row, count, v.rows()));
}

/// Latent predictions for rows 1..T of every window: d x (B*T), time-major.
inline ad::Var latent_predictions(const ad::Var& z0, const ad::Var& evolution, Formulation formulation,
                                  const SeriesBatch& batch) {
  const Eigen::Index horizon = batch.rows - 1;
  std::vector<ad::Var> blocks;
  blocks.reserve(static_cast<std::size_t>(horizon));
  if (formulation == Formulation::Discrete) {
    ad::Var z = z0;
    for (Eigen::Index t = 1; t <= horizon; ++t) {
      z = ad::matmul(evolution, z);
      blocks.push_back(z);
    }
    return ad::hconcat(blocks);
  }

  // Continuous time: K^s = exp(s L), one exponential per distinct elapsed time.
  std::map<double, ad::Var> propagated;  // s -> exp(s L) Z0
  auto propagate = [&](double s) -> const ad::Var& {
    auto it = propagated.find(s);
    if (it == propagated.end()) {
      const ad::Var ks = ad::expm_series(ad::scale(evolution, s));
      it = propagated.emplace(s, ad::matmul(ks, z0)).first;
    }
    return it->second;
  };
  for (Eigen::Index t = 1; t <= horizon; ++t) {
    std::vector<ad::Var> columns;
    columns.reserve(static_cast<std::size_t>(batch.size));
    for (Eigen::Index i = 0; i < batch.size; ++i) {
      // Unobserved entries are masked out later; reuse z0 for them.
      const ad::Var& source = batch.mask(t, i) != 0.0 ? propagate(batch.steps(t, i)) : z0;
      columns.push_back(ad::cols(source, i, 1));
    }
    blocks.push_back(ad::hconcat(columns));
  }
  return ad::hconcat(blocks);
}

}  // namespace detail

/// Records the four loss terms (as raw sums) on `tape`. `evolution` is K for
/// the discrete formulation and L for the continuous one.
inline LossGraph build_losses(ad::Tape& tape, const KoopmanModel& model, const BoundParameters& params,
                              const ad::Var& evolution, Formulation formulation, const SeriesBatch& batch) {
  if (batch.channels != model.input_dim()) {
    fail(ErrorKind::ShapeMismatch, "series have " + std::to_string(batch.channels) + " channels, model expects " +
                                       std::to_string(model.input_dim()));
  }
  const Eigen::Index b = batch.size;
  const Eigen::Index horizon = batch.rows - 1;

  Matrix all(batch.channels, b * batch.rows);
  for (Eigen::Index t = 0; t < batch.rows; ++t) all.middleCols(t * b, b) = batch.frames[static_cast<std::size_t>(t)];
  const ad::Var x_all = tape.constant(std::move(all));

  const ad::Var encoded = mlp_forward(model.encoder_spec, params, kEncoder, x_all);
  const ad::Var reconstructed = mlp_forward(model.decoder_spec, params, kDecoder, encoded);

  LossGraph g;
  g.ae = ad::sum_squares(detail::masked(ad::sub(x_all, reconstructed), batch, 0));

  const Eigen::Index d = model.latent_dim();
  const ad::Var k_matrix = formulation == Formulation::Discrete ? evolution : ad::expm_series(evolution);
  const ad::Var kkt = ad::matmul(k_matrix, ad::transpose(k_matrix));
  g.orth = ad::sum_squares(ad::sub(kkt, tape.constant(Matrix::Identity(d, d))));

  if (horizon < 1) {
    g.pred = tape.constant(Matrix::Zero(1, 1));
    g.lin = tape.constant(Matrix::Zero(1, 1));
    return g;
  }
  if (formulation == Formulation::Discrete) {
    for (Eigen::Index t = 0; t < batch.rows; ++t) {
      for (Eigen::Index i = 0; i < b; ++i) {
        if (batch.mask(t, i) != 0.0 && std::abs(batch.steps(t, i) - static_cast<double>(t)) > 1e-6 * std::max<double>(1, t)) {
          fail(ErrorKind::IrregularInput, "discrete formulation needs one row per model step (mask gaps instead of dropping rows)");
        }
      }
    }
  }
  const ad::Var z0 = ad::cols(encoded, 0, b);
  const ad::Var predicted_latent = detail::latent_predictions(z0, evolution, formulation, batch);
  const ad::Var encoded_rest = ad::cols(encoded, b, b * horizon);
  g.lin = ad::sum_squares(detail::masked(ad::sub(encoded_rest, predicted_latent), batch, 1));

  const ad::Var decoded = mlp_forward(model.decoder_spec, params, kDecoder, predicted_latent);
  const ad::Var x_rest = ad::cols(x_all, b, b * horizon);
  g.pred = ad::sum_squares(detail::masked(ad::sub(x_rest, decoded), batch, 1));
  return g;
}

struct LossValues {
  double pred = 0.0;
  double ae = 0.0;
  double lin = 0.0;
  double orth = 0.0;
};

namespace detail {

inline LossValues evaluate_losses(const KoopmanModel& m, std::span<const TimeSeries> series, Formulation formulation) {
  m.validate();
  std::vector<TimeSeries> gridded;
  if (formulation == Formulation::Discrete) {
    for (const auto& s : series) gridded.push_back(regularize(s, m.native_frequency));
    series = gridded;
  }
  const SeriesBatch batch = make_batch(series, m.native_frequency);
  ad::Tape tape;
  const BoundParameters params(tape, m.params, [](const std::string&) { return false; });
  const Matrix evolution = formulation == Formulation::Discrete ? m.k : matrix_log_principal(m.k).entries;
  const LossGraph g = build_losses(tape, m, params, tape.constant(evolution), formulation, batch);
  return {g.pred.scalar(), g.ae.scalar(), g.lin.scalar(), g.orth.scalar()};
}

inline void require_regular(std::span<const TimeSeries> series) {
  if (series.empty()) fail(ErrorKind::EmptyDataset, "no series");
  for (const auto& s : series) {
    if (!s.fully_observed()) fail(ErrorKind::IrregularInput, "regular losses need fully observed series");
    if (s.length() != series.front().length()) fail(ErrorKind::ShapeMismatch, "regular losses need a common length");
  }
}

}  // namespace detail

/// sum_i sum_{tau=1..T} ||x_{i,tau} - psi(K^tau phi(x_{i,0}))||^2
inline double loss_pred(const KoopmanModel& m, std::span<const TimeSeries> series) {
  detail::require_regular(series);
  return detail::evaluate_losses(m, series, Formulation::Discrete).pred;
}

/// sum_i sum_{t=0..T} ||x_{i,t} - psi(phi(x_{i,t}))||^2
inline double loss_ae(const KoopmanModel& m, std::span<const TimeSeries> series) {
  detail::require_regular(series);
  return detail::evaluate_losses(m, series, Formulation::Discrete).ae;
}

/// sum_i sum_{tau=1..T} ||phi(x_{i,tau}) - K^tau phi(x_{i,0})||^2
inline double loss_lin(const KoopmanModel& m, std::span<const TimeSeries> series) {
  detail::require_regular(series);
  return detail::evaluate_losses(m, series, Formulation::Discrete).lin;
}

inline double loss_orth(const Matrix& k) { return orthogonality_defect(k); }

/// Irregular variants. Discrete: terms at unobserved rows are multiplied by 0.
/// Continuous: K^t = exp(t L) with L the principal log of K and t the elapsed
/// time in model steps; only observed rows contribute.
inline double loss_pred_irregular(const KoopmanModel& m, std::span<const TimeSeries> series, Formulation f) {
  return detail::evaluate_losses(m, series, f).pred;
}
inline double loss_ae_irregular(const KoopmanModel& m, std::span<const TimeSeries> series, Formulation f) {
  return detail::evaluate_losses(m, series, f).ae;
}
inline double loss_lin_irregular(const KoopmanModel& m, std::span<const TimeSeries> series, Formulation f) {
  return detail::evaluate_losses(m, series, f).lin;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  LossWeights weights;
  double learning_rate = 1e-3;
  double lr_decay = 0.3;
  int plateau_patience = 10;
  double min_learning_rate = 1e-7;
  int epochs = 100;
  int batch_size = 16;
  int window = 50;  // rows per training window
  int stride = 0;   // 0 selects window / 2
  std::uint64_t seed = 0;
  Formulation formulation = Formulation::Discrete;
  double validation_fraction = 0.1;
  int curriculum_start = 0;   // optional short initial window (0 = off)
  int curriculum_epochs = 0;  // epochs over which the window grows to `window`

  int effective_stride() const { return stride > 0 ? stride : std::max(1, window / 2); }

  void validate() const {
    weights.validate();
    if (window < 2) fail(ErrorKind::InvalidArgument, "window length must be >= 2");
    if (!(learning_rate > 0.0)) fail(ErrorKind::InvalidArgument, "learning rate must be positive");
    if (epochs < 0 || batch_size < 1) fail(ErrorKind::InvalidArgument, "epochs >= 0 and batch size >= 1 required");
    if (validation_fraction < 0.0 || validation_fraction >= 1.0) {
      fail(ErrorKind::InvalidArgument, "validation fraction must lie in [0, 1)");
    }
    if (curriculum_start != 0 && (curriculum_start < 2 || curriculum_start > window)) {
      fail(ErrorKind::InvalidArgument, "curriculum start must lie in [2, window]");
    }
  }
};

struct EpochRecord {
  int epoch = 0;
  double pred = 0.0;  // per-window means over the epoch
  double ae = 0.0;
  double lin = 0.0;
  double orth = 0.0;
  double total = 0.0;
  double validation = 0.0;
  double learning_rate = 0.0;
  int window = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
};

/// Cuts `window`-row windows with the given stride. Windows start on an
/// observed row; their times are re-based to start at 0.
inline std::vector<TimeSeries> make_windows(const TimeSeries& s, int window, int stride) {
  std::vector<TimeSeries> out;
  const auto n = static_cast<int>(s.length());
  int last_start = -1;
  for (int nominal = 0; nominal + window <= n; nominal += stride) {
    int start = nominal;
    while (start < n && !s.mask[static_cast<std::size_t>(start)]) ++start;
    if (start + window > n || start == last_start) continue;
    last_start = start;
    TimeSeries w;
    w.values = s.values.middleRows(start, window);
    for (int t = start; t < start + window; ++t) {
      w.times.push_back(s.times[static_cast<std::size_t>(t)] - s.times[static_cast<std::size_t>(start)]);
      w.mask.push_back(s.mask[static_cast<std::size_t>(t)]);
    }
    for (Eigen::Index t = 0; t < w.length(); ++t) {
      if (!w.mask[static_cast<std::size_t>(t)]) w.values.row(t).setZero();
    }
    out.push_back(std::move(w));
  }
  return out;
}

/// Optimizer and schedule state, enough to resume a run exactly.
struct TrainerState {
  int epoch = 0;
  double learning_rate = 0.0;
  double best_validation = std::numeric_limits<double>::infinity();
  int stale_epochs = 0;
  Adam::State optimizer;
};

class Trainer {
 public:
  Trainer(std::vector<TimeSeries> dataset, KoopmanModel init, TrainConfig config)
      : config_(std::move(config)), model_(std::move(init)), optimizer_(config_.learning_rate) {
    config_.validate();
    model_.validate();
    if (dataset.empty()) fail(ErrorKind::EmptyDataset, "training dataset is empty");
    for (auto& s : dataset) {
      s.validate();
      // The discrete formulation advances one step per row, so gaps become masked rows.
      if (config_.formulation == Formulation::Discrete) s = regularize(s, model_.native_frequency);
      if (s.length() < config_.window) {
        fail(ErrorKind::InvalidArgument, "window length " + std::to_string(config_.window) +
                                             " exceeds a series of length " + std::to_string(s.length()));
      }
      if (s.channels() != model_.input_dim()) fail(ErrorKind::ShapeMismatch, "dataset channels vs model input");
    }
    split(std::move(dataset));
    state_.learning_rate = config_.learning_rate;
    trainable_ = model_.params;
    if (config_.formulation == Formulation::Discrete) {
      trainable_.set(kEvolutionK, model_.k);
    } else {
      trainable_.set(kEvolutionL, matrix_log_principal(model_.k).entries);
    }
  }

  const TrainConfig& config() const { return config_; }
  const TrainHistory& history() const { return history_; }
  const TrainerState& state() const { return state_; }
  int epochs_done() const { return state_.epoch; }

  /// Restores a previous run (model, history and optimizer state).
  void resume(const KoopmanModel& model, const TrainHistory& history, const TrainerState& state) {
    model_ = model;
    trainable_ = model_.params;
    if (config_.formulation == Formulation::Discrete) {
      trainable_.set(kEvolutionK, model_.k);
    } else {
      trainable_.set(kEvolutionL, matrix_log_principal(model_.k).entries);
    }
    history_ = history;
    state_ = state;
    optimizer_.restore(state_.optimizer);
    optimizer_.set_learning_rate(state_.learning_rate);
  }

  /// Current model with the evolution matrix synchronized from the trained tensor.
  KoopmanModel model() const {
    KoopmanModel out = model_;
    for (const auto& [name, m] : trainable_) {
      if (name != kEvolutionK && name != kEvolutionL) out.params.set(name, m);
    }
    out.k = config_.formulation == Formulation::Discrete ? trainable_.at(kEvolutionK)
                                                          : matrix_exp(trainable_.at(kEvolutionL));
    return out;
  }

  /// Weighted objective on one batch; fills `grad` when requested.
  double objective(const ParameterStore& trainable, const SeriesBatch& batch, ParameterStore* grad,
                   LossValues* terms = nullptr) const {
    ad::Tape tape;
    const BoundParameters params(tape, trainable, [grad](const std::string&) { return grad != nullptr; });
    const std::string& evo = config_.formulation == Formulation::Discrete ? kEvolutionK : kEvolutionL;
    const LossGraph g = build_losses(tape, model_, params, params.at(evo), config_.formulation, batch);
    const LossWeights& w = config_.weights;
    const double inv_b = 1.0 / static_cast<double>(batch.size);
    ad::Var total = ad::scale(g.orth, w.orth);
    total = ad::add(total, ad::scale(g.pred, w.pred * inv_b));
    total = ad::add(total, ad::scale(g.ae, w.ae * inv_b));
    total = ad::add(total, ad::scale(g.lin, w.lin * inv_b));
    if (terms != nullptr) *terms = {g.pred.scalar(), g.ae.scalar(), g.lin.scalar(), g.orth.scalar()};
    if (grad != nullptr) {
      tape.backward(total);
      *grad = params.gradients(tape);
    }
    return total.scalar();
  }

  /// Runs `epochs` more epochs (all remaining configured epochs by default).
  void run(std::optional<int> epochs = std::nullopt) {
    const int target = epochs ? state_.epoch + *epochs : config_.epochs;
    while (state_.epoch < target) run_epoch();
  }

  /// Mean weighted objective per window over the validation windows.
  double validation_loss(int window) const {
    const auto windows = cut(validation_, window);
    if (windows.empty()) return std::numeric_limits<double>::quiet_NaN();
    double total = 0.0;
    for (std::size_t start = 0; start < windows.size(); start += static_cast<std::size_t>(config_.batch_size)) {
      const std::size_t end = std::min(windows.size(), start + static_cast<std::size_t>(config_.batch_size));
      const SeriesBatch batch = make_batch(std::span(windows).subspan(start, end - start), model_.native_frequency);
      total += objective(trainable_, batch, nullptr) * static_cast<double>(batch.size);
    }
    return total / static_cast<double>(windows.size());
  }

  int current_window() const {
    if (config_.curriculum_start == 0 || config_.curriculum_epochs <= 0) return config_.window;
    if (state_.epoch >= config_.curriculum_epochs) return config_.window;
    const double frac = static_cast<double>(state_.epoch) / config_.curriculum_epochs;
    return std::max(2, static_cast<int>(std::lround(config_.curriculum_start + frac * (config_.window - config_.curriculum_start))));
  }

 private:
  void split(std::vector<TimeSeries> dataset) {
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(config_.seed ^ 0x5eed5a11ULL);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t n_val = static_cast<std::size_t>(std::floor(config_.validation_fraction * dataset.size()));
    if (config_.validation_fraction > 0.0 && n_val == 0 && dataset.size() >= 2) n_val = 1;
    for (std::size_t i = 0; i < order.size(); ++i) {
      (i < n_val ? validation_ : training_).push_back(std::move(dataset[order[i]]));
    }
    if (validation_.empty()) validation_ = training_;
  }

  std::vector<TimeSeries> cut(const std::vector<TimeSeries>& series, int window) const {
    std::vector<TimeSeries> out;
    const int stride = window == config_.window ? config_.effective_stride() : std::max(1, window / 2);
    for (const auto& s : series) {
      auto w = make_windows(s, window, stride);
      std::move(w.begin(), w.end(), std::back_inserter(out));
    }
    return out;
  }

  void run_epoch() {
    const int window = current_window();
    auto windows = cut(training_, window);
    if (windows.empty()) fail(ErrorKind::EmptyDataset, "no training windows (check masks and window length)");
    std::mt19937_64 rng(config_.seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(state_.epoch + 1));
    std::shuffle(windows.begin(), windows.end(), rng);

    EpochRecord rec;
    rec.epoch = state_.epoch + 1;
    rec.window = window;
    rec.learning_rate = state_.learning_rate;
    for (std::size_t start = 0; start < windows.size(); start += static_cast<std::size_t>(config_.batch_size)) {
      const std::size_t end = std::min(windows.size(), start + static_cast<std::size_t>(config_.batch_size));
      const SeriesBatch batch = make_batch(std::span(windows).subspan(start, end - start), model_.native_frequency);
      ParameterStore grad;
      LossValues terms;
      double total = 0.0;
      try {
        total = objective(trainable_, batch, &grad, &terms);
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::NonFinite) fail(ErrorKind::Diverged, std::string("training diverged: ") + e.what());
        throw;
      }
      if (!std::isfinite(total)) fail(ErrorKind::Diverged, "training loss is not finite");
      optimizer_.step(trainable_, grad);
      rec.pred += terms.pred;
      rec.ae += terms.ae;
      rec.lin += terms.lin;
      rec.orth += terms.orth * static_cast<double>(batch.size);
      rec.total += total * static_cast<double>(batch.size);
    }
    const auto n = static_cast<double>(windows.size());
    rec.pred /= n;
    rec.ae /= n;
    rec.lin /= n;
    rec.orth /= n;
    rec.total /= n;
    if (!trainable_.all_finite()) fail(ErrorKind::Diverged, "parameters became non-finite");

    rec.validation = validation_loss(window);
    // Losses over windows of different lengths are not comparable.
    if (!history_.epochs.empty() && history_.epochs.back().window != window) {
      state_.best_validation = std::numeric_limits<double>::infinity();
      state_.stale_epochs = 0;
    }
    if (rec.validation < state_.best_validation * (1.0 - 1e-4)) {
      state_.best_validation = rec.validation;
      state_.stale_epochs = 0;
    } else if (++state_.stale_epochs >= config_.plateau_patience) {
      state_.learning_rate = std::max(config_.min_learning_rate, state_.learning_rate * config_.lr_decay);
      optimizer_.set_learning_rate(state_.learning_rate);
      state_.stale_epochs = 0;
    }
    history_.epochs.push_back(rec);
    ++state_.epoch;
    state_.optimizer = optimizer_.state();
  }

  TrainConfig config_;
  KoopmanModel model_;
  ParameterStore trainable_;
  Adam optimizer_;
  TrainerState state_;
  TrainHistory history_;
  std::vector<TimeSeries> training_;
  std::vector<TimeSeries> validation_;
};

struct TrainResult {
  KoopmanModel model;
  TrainHistory history;
  TrainerState state;
};

inline TrainResult train(const std::vector<TimeSeries>& dataset, const KoopmanModel& init, const TrainConfig& config) {
  Trainer trainer(dataset, init, config);
  trainer.run();
  return {trainer.model(), trainer.history(), trainer.state()};
}

}  // namespace koopman
