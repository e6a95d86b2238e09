#pragma once

// Variational assimilation with a trained model as dynamical prior.
//
// A trajectory over T+1 frames of an image with N pixels and C channels is
// held as one C x (N (T+1)) matrix, frame t occupying columns [tN, (t+1)N).
// The model acts on every column independently.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Sparse>

#include "koopman/autodiff.hpp"
#include "koopman/dynamics.hpp"
#include "koopman/error.hpp"
#include "koopman/matfun.hpp"
#include "koopman/mlp.hpp"
#include "koopman/model.hpp"
#include "koopman/optim.hpp"

namespace koopman {

enum class AssimilationMode { Weak, Constrained, Joint };

inline std::string_view to_string(AssimilationMode m) {
  switch (m) {
    case AssimilationMode::Weak: return "weak";
    case AssimilationMode::Constrained: return "constrained";
    case AssimilationMode::Joint: return "joint";
  }
  return "?";
}

inline AssimilationMode parse_assimilation_mode(std::string_view s) {
  if (s == "weak") return AssimilationMode::Weak;
  if (s == "constrained") return AssimilationMode::Constrained;
  if (s == "joint") return AssimilationMode::Joint;
  fail(ErrorKind::InvalidArgument, "unknown assimilation mode '" + std::string(s) + "'");
}

/// Observed image sequence. `frames[t]` is C x N; rows with mask false are ignored.
struct Observations {
  int height = 1;
  int width = 1;
  std::vector<Matrix> frames;
  std::vector<bool> mask;

  Eigen::Index length() const { return static_cast<Eigen::Index>(frames.size()); }
  Eigen::Index channels() const { return frames.empty() ? 0 : frames.front().rows(); }
  Eigen::Index pixels() const { return static_cast<Eigen::Index>(height) * width; }

  Eigen::Index observed_count() const { return std::count(mask.begin(), mask.end(), true); }
  Eigen::Index last_observed() const {
    for (auto t = static_cast<Eigen::Index>(mask.size()); t-- > 0;) {
      if (mask[static_cast<std::size_t>(t)]) return t;
    }
    return -1;
  }

  void validate() const {
    if (height < 1 || width < 1) fail(ErrorKind::InvalidArgument, "observation grid dimensions");
    if (frames.size() != mask.size()) fail(ErrorKind::ShapeMismatch, "observations: frames vs mask length");
    for (std::size_t t = 0; t < frames.size(); ++t) {
      if (frames[t].rows() != channels() || frames[t].cols() != pixels()) {
        fail(ErrorKind::ShapeMismatch, "observations: frame shape");
      }
      if (mask[t] && !frames[t].allFinite()) fail(ErrorKind::NonFinite, "observations: non-finite observed frame");
    }
  }

  static Observations from_grid(const PixelGrid& g) {
    g.validate();
    Observations o;
    o.height = g.height;
    o.width = g.width;
    o.frames = g.frames();
    o.mask = g.mask();
    return o;
  }

  static Observations from_series(const TimeSeries& s) {
    s.validate();
    Observations o;
    for (Eigen::Index t = 0; t < s.length(); ++t) o.frames.push_back(s.values.row(t).transpose());
    o.mask = s.mask;
    return o;
  }

  /// Same observations with a replacement mask (values at newly hidden rows are kept but unused).
  Observations with_mask(std::vector<bool> m) const {
    Observations o = *this;
    o.mask = std::move(m);
    return o;
  }
};

/// Packs frames into the C x (N T) trajectory layout.
inline Matrix stack_frames(const std::vector<Matrix>& frames) {
  if (frames.empty()) return Matrix();
  const Eigen::Index n = frames.front().cols();
  Matrix out(frames.front().rows(), n * static_cast<Eigen::Index>(frames.size()));
  for (std::size_t t = 0; t < frames.size(); ++t) out.middleCols(static_cast<Eigen::Index>(t) * n, n) = frames[t];
  return out;
}

inline std::vector<Matrix> unstack_frames(const Matrix& stacked, Eigen::Index pixels) {
  std::vector<Matrix> out;
  for (Eigen::Index c = 0; c + pixels <= stacked.cols(); c += pixels) out.push_back(stacked.middleCols(c, pixels));
  return out;
}

// ---------------------------------------------------------------------------
// Priors and metrics

/// First-order differences between 4-neighbours: column e of the N x E
/// operator D holds +1 / -1 at the two pixels of edge e, so (X D) lists the
/// differences of every channel.
inline ad::SparseMatrix spatial_difference_operator(int height, int width, Eigen::Index frames = 1) {
  const Eigen::Index n = static_cast<Eigen::Index>(height) * width;
  const Eigen::Index edges = static_cast<Eigen::Index>(height) * (width - 1) + static_cast<Eigen::Index>(height - 1) * width;
  std::vector<Eigen::Triplet<double>> entries;
  entries.reserve(static_cast<std::size_t>(2 * edges * frames));
  Eigen::Index e = 0;
  for (Eigen::Index f = 0; f < frames; ++f) {
    const Eigen::Index base = f * n;
    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) {
        const Eigen::Index p = base + static_cast<Eigen::Index>(r) * width + c;
        if (c + 1 < width) {
          entries.emplace_back(p + 1, e, 1.0);
          entries.emplace_back(p, e, -1.0);
          ++e;
        }
        if (r + 1 < height) {
          entries.emplace_back(p + width, e, 1.0);
          entries.emplace_back(p, e, -1.0);
          ++e;
        }
      }
    }
  }
  ad::SparseMatrix d(n * frames, e);
  d.setFromTriplets(entries.begin(), entries.end());
  return d;
}

/// Sum over 4-neighbour pixel pairs and channels of squared differences of a
/// C x N snapshot laid out row-major on a height x width grid.
inline double tikhonov_spatial(const Matrix& frame, int height, int width) {
  if (frame.cols() != static_cast<Eigen::Index>(height) * width) fail(ErrorKind::ShapeMismatch, "tikhonov_spatial");
  return (frame * spatial_difference_operator(height, width)).squaredNorm();
}

/// sum_t ||x_{t+1} - x_t||^2 over the rows of a series.
inline double tikhonov_temporal(const Matrix& values) {
  if (values.rows() < 2) return 0.0;
  return (values.bottomRows(values.rows() - 1) - values.topRows(values.rows() - 1)).squaredNorm();
}
inline double tikhonov_temporal(const TimeSeries& s) { return tikhonov_temporal(s.values); }

/// Mean squared error over entries where `mask` is true.
inline double masked_mse(const Matrix& predicted, const Matrix& truth, const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& mask) {
  if (predicted.rows() != truth.rows() || predicted.cols() != truth.cols() || mask.rows() != truth.rows() ||
      mask.cols() != truth.cols()) {
    fail(ErrorKind::ShapeMismatch, "masked_mse: shapes differ");
  }
  double total = 0.0;
  Eigen::Index n = 0;
  for (Eigen::Index j = 0; j < truth.cols(); ++j) {
    for (Eigen::Index i = 0; i < truth.rows(); ++i) {
      if (!mask(i, j)) continue;
      const double d = predicted(i, j) - truth(i, j);
      total += d * d;
      ++n;
    }
  }
  if (n == 0) fail(ErrorKind::DegenerateMask, "masked_mse: empty evaluation mask");
  return total / static_cast<double>(n);
}

/// Mean over every channel and pixel of the frames whose time index is selected.
inline double masked_mse(const std::vector<Matrix>& predicted, const std::vector<Matrix>& truth,
                         const std::vector<bool>& times) {
  if (predicted.size() < times.size() || truth.size() < times.size()) fail(ErrorKind::ShapeMismatch, "masked_mse: length");
  double total = 0.0;
  Eigen::Index n = 0;
  for (std::size_t t = 0; t < times.size(); ++t) {
    if (!times[t]) continue;
    if (predicted[t].rows() != truth[t].rows() || predicted[t].cols() != truth[t].cols()) {
      fail(ErrorKind::ShapeMismatch, "masked_mse: frame shapes differ");
    }
    total += (predicted[t] - truth[t]).squaredNorm();
    n += truth[t].size();
  }
  if (n == 0) fail(ErrorKind::DegenerateMask, "masked_mse: empty evaluation mask");
  return total / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Problem definition

struct AssimilationProblem {
  Observations observations;
  KoopmanModel model;
  AssimilationMode mode = AssimilationMode::Constrained;
  double alpha = 0.0;            // dynamical prior (weak mode)
  double beta = 0.0;             // spatial prior
  double temporal_weight = 0.0;  // temporal smoothness prior
  int iterations = 500;
  double z_learning_rate = 1e-2;  // trajectory or z0 step size
  double param_learning_rate = 1e-4;
  int horizon = 0;               // frames to reconstruct; 0 = number of observation frames
  double cressman_radius = 1.5;  // weak-mode initialization, in time units

  Eigen::Index frames() const { return horizon > 0 ? horizon : observations.length(); }

  void validate() const {
    observations.validate();
    model.validate();
    if (model.augmented && mode == AssimilationMode::Weak) {
      fail(ErrorKind::InvalidArgument, "weak-constraint assimilation needs a non-augmented model");
    }
    if (observations.channels() != model.state_channels()) fail(ErrorKind::ShapeMismatch, "observations channels vs model");
    if (model.augmented && frames() < 2) fail(ErrorKind::InvalidArgument, "augmented models need at least two frames");
    if (observations.observed_count() == 0) fail(ErrorKind::NoObservations, "no observed frames");
    if (frames() < observations.last_observed() + 1) fail(ErrorKind::InvalidArgument, "horizon ends before the last observation");
    if (alpha < 0 || beta < 0 || temporal_weight < 0) fail(ErrorKind::InvalidArgument, "prior weights must be >= 0");
    if (iterations < 0) fail(ErrorKind::InvalidArgument, "iterations must be >= 0");
    if (!(z_learning_rate > 0.0)) fail(ErrorKind::InvalidArgument, "z learning rate must be positive");
    if (mode == AssimilationMode::Joint && !(param_learning_rate >= 0.0 && param_learning_rate <= 0.1 * z_learning_rate)) {
      fail(ErrorKind::InvalidArgument, "joint mode needs 0 <= parameter learning rate <= 0.1 x z learning rate");
    }
  }
};

struct AssimilationResult {
  std::vector<Matrix> trajectory;  // frames(), each C x N
  std::optional<Matrix> z0;        // d x N (constrained / joint)
  std::optional<KoopmanModel> fine_tuned_model;
  std::vector<double> cost_history;  // cost before each update, then the final cost

  double initial_cost() const { return cost_history.front(); }
  double final_cost() const { return cost_history.back(); }
};

namespace detail {

/// Observation matrix (zeros where unobserved) and matching 0/1 weight matrix
/// over the first `frames` time indices.
inline std::pair<Matrix, Matrix> observation_operator(const Observations& o, Eigen::Index frames) {
  const Eigen::Index n = o.pixels();
  Matrix values = Matrix::Zero(o.channels(), n * frames);
  Matrix weight = Matrix::Zero(o.channels(), n * frames);
  for (Eigen::Index t = 0; t < std::min(frames, o.length()); ++t) {
    if (!o.mask[static_cast<std::size_t>(t)]) continue;
    values.middleCols(t * n, n) = o.frames[static_cast<std::size_t>(t)];
    weight.middleCols(t * n, n).setOnes();
  }
  return {std::move(values), std::move(weight)};
}

/// Data fidelity plus the spatial and temporal priors of a stacked trajectory.
inline ad::Var fidelity_and_priors(ad::Tape& tape, const ad::Var& traj, const AssimilationProblem& p) {
  const Eigen::Index frames = p.frames();
  const Eigen::Index n = p.observations.pixels();
  auto [values, weight] = observation_operator(p.observations, frames);
  ad::Var cost = ad::sum_squares(ad::hadamard_const(ad::sub(traj, tape.constant(std::move(values))), weight));
  if (p.beta > 0.0) {
    const auto d = spatial_difference_operator(p.observations.height, p.observations.width, frames);
    cost = ad::add(cost, ad::scale(ad::sum_squares(ad::matmul_sparse(traj, d)), p.beta));
  }
  if (p.temporal_weight > 0.0 && frames > 1) {
    const ad::Var diff = ad::sub(ad::cols(traj, n, n * (frames - 1)), ad::cols(traj, 0, n * (frames - 1)));
    cost = ad::add(cost, ad::scale(ad::sum_squares(diff), p.temporal_weight));
  }
  return cost;
}

/// Decoded trajectory x_t(z0), t = 0..frames-1, from a d x N latent state:
/// psi(K^t z0), or for augmented models (psi(z0)_top - psi(z0)_bottom,
/// psi(K^{t-1} z0)_top) since the latent encodes (x_{t+1}, x_{t+1} - x_t).
inline ad::Var latent_trajectory(const KoopmanModel& m, const BoundParameters& params, const ad::Var& k,
                                 const ad::Var& z0, Eigen::Index frames) {
  const Eigen::Index steps = m.augmented ? frames - 1 : frames;
  std::vector<ad::Var> latents;
  latents.reserve(static_cast<std::size_t>(steps));
  latents.push_back(z0);
  for (Eigen::Index t = 1; t < steps; ++t) latents.push_back(ad::matmul(k, latents.back()));
  const ad::Var decoded = mlp_forward(m.decoder_spec, params, kDecoder, ad::hconcat(latents));
  if (!m.augmented) return decoded;
  const Eigen::Index c = m.state_channels();
  const Eigen::Index n = z0.cols();
  const ad::Var top = ad::rows(decoded, 0, c);
  const ad::Var first = ad::sub(ad::cols(top, 0, n), ad::cols(ad::rows(decoded, c, c), 0, n));
  const std::vector<ad::Var> parts = {first, top};
  return ad::hconcat(parts);
}

/// Plain-value counterpart of latent_trajectory, frames as C x N blocks.
inline std::vector<Matrix> decode_trajectory(const KoopmanModel& m, const Matrix& z0, Eigen::Index frames) {
  const Eigen::Index steps = m.augmented ? frames - 1 : frames;
  const Matrix decoded = decode(m, stack_frames(rollout_latent(m.k, z0, static_cast<int>(steps - 1))));
  if (!m.augmented) return unstack_frames(decoded, z0.cols());
  const Eigen::Index c = m.state_channels();
  const Eigen::Index n = z0.cols();
  std::vector<Matrix> out;
  out.push_back(decoded.topLeftCorner(c, n) - decoded.block(c, 0, c, n));
  for (const Matrix& f : unstack_frames(decoded.topRows(c), n)) out.push_back(f);
  return out;
}

/// Latent initial guess phi(x_0), or phi(x_1, x_1 - x_0) for augmented
/// models. Unobserved frames among the first two are Cressman-filled.
inline Matrix initial_latent(const KoopmanModel& m, const Observations& o, double radius);

inline ParameterStore model_store(const KoopmanModel& m) {
  ParameterStore s = m.params;
  s.set("K", m.k);
  return s;
}

}  // namespace detail

/// Weak-constraint cost for a stacked trajectory `x` (C x N frames):
/// sum_{t in H} ||x_t - obs_t||^2 + alpha sum_t ||x_{t+1} - psi(K phi(x_t))||^2 + priors.
inline ad::Var weak_cost(ad::Tape& tape, const ad::Var& x, const AssimilationProblem& p) {
  const BoundParameters params(tape, detail::model_store(p.model), [](const std::string&) { return false; });
  ad::Var cost = detail::fidelity_and_priors(tape, x, p);
  const Eigen::Index frames = p.frames();
  const Eigen::Index n = p.observations.pixels();
  if (p.alpha > 0.0 && frames > 1) {
    const ad::Var head = ad::cols(x, 0, n * (frames - 1));
    const ad::Var z = mlp_forward(p.model.encoder_spec, params, kEncoder, head);
    const ad::Var step = mlp_forward(p.model.decoder_spec, params, kDecoder, ad::matmul(params.at("K"), z));
    const ad::Var mismatch = ad::sub(ad::cols(x, n, n * (frames - 1)), step);
    cost = ad::add(cost, ad::scale(ad::sum_squares(mismatch), p.alpha));
  }
  return cost;
}

/// Constrained / joint cost for a latent initial state z0 (d x N):
/// sum_{t in H} ||obs_t - psi(K^t z0)||^2 + priors. `params` must hold the
/// decoder tensors and "K".
inline ad::Var constrained_cost(ad::Tape& tape, const ad::Var& z0, const BoundParameters& params,
                                const AssimilationProblem& p) {
  const ad::Var traj = detail::latent_trajectory(p.model, params, params.at("K"), z0, p.frames());
  return detail::fidelity_and_priors(tape, traj, p);
}

/// Initial trajectory for weak mode: observed frames, Cressman fill elsewhere.
inline std::vector<Matrix> cressman_fill(const Observations& o, Eigen::Index frames, double radius) {
  const Eigen::Index c = o.channels();
  const Eigen::Index n = o.pixels();
  TimeSeries s;
  s.values = Matrix::Zero(frames, c * n);
  for (Eigen::Index t = 0; t < frames; ++t) {
    s.times.push_back(static_cast<double>(t));
    const bool seen = t < o.length() && o.mask[static_cast<std::size_t>(t)];
    s.mask.push_back(seen);
    if (seen) s.values.row(t) = o.frames[static_cast<std::size_t>(t)].reshaped().transpose();
  }
  const TimeSeries filled = cressman_interpolate(s, radius);
  std::vector<Matrix> out;
  for (Eigen::Index t = 0; t < frames; ++t) out.push_back(filled.values.row(t).transpose().reshaped(c, n));
  return out;
}

namespace detail {

inline Matrix initial_latent(const KoopmanModel& m, const Observations& o, double radius) {
  const bool need_fill = !o.mask[0] || (m.augmented && (o.length() < 2 || !o.mask[1]));
  const std::vector<Matrix> head =
      need_fill ? cressman_fill(o, std::max<Eigen::Index>(o.length(), 2), radius)
                : std::vector<Matrix>(o.frames.begin(), o.frames.begin() + std::min<Eigen::Index>(2, o.length()));
  if (!m.augmented) return encode(m, head[0]);
  Matrix y(2 * head[0].rows(), head[0].cols());
  y << head[1], head[1] - head[0];
  return encode(m, y);
}

}  // namespace detail

inline AssimilationResult assimilate_weak(const AssimilationProblem& p) {
  p.validate();
  if (p.mode != AssimilationMode::Weak) fail(ErrorKind::InvalidArgument, "assimilate_weak: mode must be weak");
  const Eigen::Index frames = p.frames();
  ParameterStore state;
  state.set("x", stack_frames(cressman_fill(p.observations, frames, p.cressman_radius)));
  Adam opt(p.z_learning_rate);
  AssimilationResult r;
  for (int it = 0; it <= p.iterations; ++it) {
    ad::Tape tape;
    const ad::Var x = tape.variable(state.at("x"));
    const ad::Var cost = weak_cost(tape, x, p);
    r.cost_history.push_back(cost.scalar());
    if (it == p.iterations) break;
    tape.backward(cost);
    ParameterStore g;
    g.set("x", tape.grad(x));
    opt.step(state, g);
  }
  r.trajectory = unstack_frames(state.at("x"), p.observations.pixels());
  return r;
}

namespace detail {

inline AssimilationResult assimilate_latent(const AssimilationProblem& p, bool update_model) {
  const Eigen::Index frames = p.frames();
  ParameterStore z;
  z.set("z0", initial_latent(p.model, p.observations, p.cressman_radius));
  ParameterStore model = model_store(p.model);
  auto trainable = [](const std::string& name) { return name == "K" || name.rfind(kDecoder + ".", 0) == 0; };

  Adam z_opt(p.z_learning_rate);
  Adam param_opt(p.param_learning_rate);
  AssimilationResult r;
  for (int it = 0; it <= p.iterations; ++it) {
    ad::Tape tape;
    const ad::Var z0 = tape.variable(z.at("z0"));
    const BoundParameters params(tape, model,
                                 [&](const std::string& name) { return update_model && trainable(name); });
    const ad::Var cost = constrained_cost(tape, z0, params, p);
    r.cost_history.push_back(cost.scalar());
    if (it == p.iterations) break;
    tape.backward(cost);
    ParameterStore gz;
    gz.set("z0", tape.grad(z0));
    z_opt.step(z, gz);
    if (update_model) {
      ParameterStore gp;
      for (const auto& [name, v] : params.vars()) {
        if (trainable(name)) gp.set(name, tape.grad(v));
      }
      param_opt.step(model, gp);
    }
  }

  KoopmanModel fitted = p.model;
  for (const auto& [name, m] : model) {
    if (name == "K") {
      fitted.k = m;
    } else {
      fitted.params.set(name, m);
    }
  }
  r.trajectory = decode_trajectory(fitted, z.at("z0"), frames);
  r.z0 = z.at("z0");
  if (update_model) r.fine_tuned_model = std::move(fitted);
  return r;
}

}  // namespace detail

inline AssimilationResult assimilate_constrained(const AssimilationProblem& p) {
  p.validate();
  if (p.mode != AssimilationMode::Constrained) {
    fail(ErrorKind::InvalidArgument, "assimilate_constrained: mode must be constrained");
  }
  return detail::assimilate_latent(p, false);
}

inline AssimilationResult assimilate_joint(const AssimilationProblem& p) {
  p.validate();
  if (p.mode != AssimilationMode::Joint) fail(ErrorKind::InvalidArgument, "assimilate_joint: mode must be joint");
  return detail::assimilate_latent(p, true);
}

inline AssimilationResult assimilate(const AssimilationProblem& p) {
  switch (p.mode) {
    case AssimilationMode::Weak: return assimilate_weak(p);
    case AssimilationMode::Constrained: return assimilate_constrained(p);
    case AssimilationMode::Joint: return assimilate_joint(p);
  }
  fail(ErrorKind::InvalidArgument, "unknown assimilation mode");
}

// ---------------------------------------------------------------------------
// Periodic-interpolation baseline

/// sum_{t in H} ||obs_t - P_{t mod p}||^2 + alpha sum_r ||P_{r+1} - P_r||^2,
/// the smoothness sum wrapping from the last slot of the period to the first.
/// `pattern` stacks the p slots as C x (N p).
inline ad::Var periodic_cost(ad::Tape& tape, const ad::Var& pattern, const Observations& o, int period,
                             double alpha) {
  const Eigen::Index n = o.pixels();
  std::vector<ad::Var> tiled;
  std::vector<Matrix> observed;
  for (Eigen::Index t = 0; t < o.length(); ++t) {
    if (!o.mask[static_cast<std::size_t>(t)]) continue;
    tiled.push_back(ad::cols(pattern, (t % period) * n, n));
    observed.push_back(o.frames[static_cast<std::size_t>(t)]);
  }
  ad::Var cost = ad::sum_squares(ad::sub(ad::hconcat(tiled), tape.constant(stack_frames(observed))));
  if (alpha > 0.0) {
    std::vector<ad::Var> shifted = {ad::cols(pattern, n, n * (period - 1)), ad::cols(pattern, 0, n)};
    const ad::Var diff = ad::sub(ad::hconcat(shifted), pattern);
    cost = ad::add(cost, ad::scale(ad::sum_squares(diff), alpha));
  }
  return cost;
}

/// Least-squares single-period pattern tiled over `horizon` frames (0 = the
/// observation length). alpha = 0: per-residue means, classes without
/// observations linearly interpolated around the cycle. alpha > 0: exact
/// solution of (diag(counts) + alpha L) P = sums with L the cyclic Laplacian.
inline std::vector<Matrix> periodic_baseline(const Observations& o, int period, double alpha, Eigen::Index horizon = 0) {
  o.validate();
  if (period < 2) fail(ErrorKind::DegeneratePeriod, "period must be >= 2");
  if (alpha < 0) fail(ErrorKind::InvalidArgument, "temporal weight must be >= 0");
  if (o.observed_count() == 0) fail(ErrorKind::NoObservations, "periodic_baseline: no observations");
  if (horizon <= 0) horizon = o.length();

  const Eigen::Index width = o.channels() * o.pixels();
  Matrix sums = Matrix::Zero(period, width);
  Vector counts = Vector::Zero(period);
  for (Eigen::Index t = 0; t < o.length(); ++t) {
    if (!o.mask[static_cast<std::size_t>(t)]) continue;
    sums.row(t % period) += o.frames[static_cast<std::size_t>(t)].reshaped().transpose();
    counts(t % period) += 1.0;
  }

  Matrix pattern(period, width);
  if (alpha > 0.0) {
    Matrix a = counts.asDiagonal();
    for (int r = 0; r < period; ++r) {
      const int next = (r + 1) % period;
      a(r, r) += alpha;
      a(next, next) += alpha;
      a(r, next) -= alpha;
      a(next, r) -= alpha;
    }
    pattern = a.ldlt().solve(sums);
  } else {
    std::vector<int> filled;
    for (int r = 0; r < period; ++r) {
      if (counts(r) > 0) {
        pattern.row(r) = sums.row(r) / counts(r);
        filled.push_back(r);
      }
    }
    for (int r = 0; r < period; ++r) {
      if (counts(r) > 0) continue;
      // Nearest filled slots before and after r around the cycle.
      auto after = std::upper_bound(filled.begin(), filled.end(), r);
      const int hi = after == filled.end() ? filled.front() + period : *after;
      const int lo = after == filled.begin() ? filled.back() - period : *std::prev(after);
      const double w = static_cast<double>(r - lo) / static_cast<double>(hi - lo);
      pattern.row(r) = (1.0 - w) * pattern.row((lo % period + period) % period) + w * pattern.row(hi % period);
    }
  }

  std::vector<Matrix> out;
  for (Eigen::Index t = 0; t < horizon; ++t) out.push_back(pattern.row(t % period).transpose().reshaped(o.channels(), o.pixels()));
  return out;
}

}  // namespace koopman
