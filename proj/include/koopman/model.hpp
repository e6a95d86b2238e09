#pragma once

// Koopman autoencoder: encoder phi, decoder psi and a latent evolution
// matrix K with psi(K^tau phi(x_t)) ~ x_{t+tau}.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "koopman/dynamics.hpp"
#include "koopman/error.hpp"
#include "koopman/matfun.hpp"
#include "koopman/mlp.hpp"

namespace koopman {

inline const std::string kEncoder = "encoder";
inline const std::string kDecoder = "decoder";

/// Forecast values beyond this magnitude count as divergence.
inline constexpr double kDivergenceThreshold = 1e12;

struct KoopmanModel {
  MLPSpec encoder_spec;
  MLPSpec decoder_spec;
  ParameterStore params;  // "encoder.*" and "decoder.*"
  Matrix k;
  bool augmented = false;
  double native_frequency = 1.0;  // samples per time unit

  int latent_dim() const { return static_cast<int>(k.rows()); }
  int input_dim() const { return encoder_spec.input_size(); }
  /// Channels of the physical state; half the input when augmented.
  int state_channels() const { return augmented ? input_dim() / 2 : input_dim(); }

  void validate() const {
    encoder_spec.validate();
    decoder_spec.validate();
    if (k.rows() != k.cols()) fail(ErrorKind::ShapeMismatch, "Koopman matrix must be square");
    if (encoder_spec.output_size() != latent_dim() || decoder_spec.input_size() != latent_dim()) {
      fail(ErrorKind::ShapeMismatch, "encoder output / decoder input must equal the latent dimension");
    }
    if (decoder_spec.output_size() != encoder_spec.input_size()) {
      fail(ErrorKind::ShapeMismatch, "decoder output must equal encoder input");
    }
    if (augmented && input_dim() % 2 != 0) fail(ErrorKind::ShapeMismatch, "augmented input must be even");
    if (!(native_frequency > 0.0)) fail(ErrorKind::InvalidArgument, "native frequency must be positive");
    if (!k.allFinite() || !params.all_finite()) fail(ErrorKind::NonFinite, "model parameters");
  }
};

struct ModelConfig {
  int input_dim = 3;
  int latent_dim = 16;
  std::vector<int> hidden = {256, 128};  // encoder side; the decoder mirrors it
  Activation activation = Activation::SmoothRectifier;
  bool augmented = false;
  double native_frequency = 1.0;
};

/// Random MLP weights, K initialized to the identity.
inline KoopmanModel make_model(const ModelConfig& cfg, std::uint64_t seed) {
  KoopmanModel m;
  m.encoder_spec.layer_sizes.push_back(cfg.input_dim);
  for (int h : cfg.hidden) m.encoder_spec.layer_sizes.push_back(h);
  m.encoder_spec.layer_sizes.push_back(cfg.latent_dim);
  m.decoder_spec.layer_sizes.assign(m.encoder_spec.layer_sizes.rbegin(), m.encoder_spec.layer_sizes.rend());
  m.encoder_spec.activation = cfg.activation;
  m.decoder_spec.activation = cfg.activation;
  m.augmented = cfg.augmented;
  m.native_frequency = cfg.native_frequency;
  std::mt19937_64 rng(seed);
  init_mlp(m.encoder_spec, kEncoder, m.params, rng);
  init_mlp(m.decoder_spec, kDecoder, m.params, rng);
  m.k = Matrix::Identity(cfg.latent_dim, cfg.latent_dim);
  m.validate();
  return m;
}

/// phi applied to each column.
inline Matrix encode(const KoopmanModel& m, const Matrix& x) { return mlp_forward(m.encoder_spec, m.params, kEncoder, x); }
inline Vector encode(const KoopmanModel& m, const Vector& x) { return mlp_forward(m.encoder_spec, m.params, kEncoder, x); }

/// psi applied to each column.
inline Matrix decode(const KoopmanModel& m, const Matrix& z) {
  if (z.rows() != m.latent_dim()) fail(ErrorKind::ShapeMismatch, "decode: latent size");
  return mlp_forward(m.decoder_spec, m.params, kDecoder, z);
}
inline Vector decode(const KoopmanModel& m, const Vector& z) { return decode(m, Matrix(z)).col(0); }

namespace detail {

inline void guard_divergence(const Matrix& v, const char* where) {
  if (!v.allFinite() || (v.size() > 0 && v.cwiseAbs().maxCoeff() > kDivergenceThreshold)) {
    fail(ErrorKind::NonFinite, std::string(where) + ": forecast diverged past 1e12");
  }
}

/// Decoded latent states (one per column) reduced to the physical channels.
inline Matrix decode_states(const KoopmanModel& m, const Matrix& latents) {
  Matrix out = decode(m, latents);
  if (m.augmented) out.conservativeResize(m.state_channels(), Eigen::NoChange);
  return out;
}

inline TimeSeries series_from_columns(const Matrix& states, const std::vector<double>& times) {
  TimeSeries s;
  s.values = states.transpose();
  s.times = times;
  s.mask.assign(times.size(), true);
  return s;
}

inline void require_input(const KoopmanModel& m, const Vector& x, const char* where) {
  if (x.size() != m.input_dim()) {
    fail(ErrorKind::ShapeMismatch, std::string(where) + ": input length " + std::to_string(x.size()) + ", expected " +
                                       std::to_string(m.input_dim()));
  }
}

}  // namespace detail

/// Latent trajectories K^tau Z0 for tau = 0..horizon, computed recursively.
/// Returns one (d x N) block per step.
inline std::vector<Matrix> rollout_latent(const Matrix& k, const Matrix& z0, int horizon) {
  std::vector<Matrix> out;
  out.reserve(static_cast<std::size_t>(horizon) + 1);
  out.push_back(z0);
  for (int tau = 1; tau <= horizon; ++tau) {
    out.push_back(k * out.back());
    detail::guard_divergence(out.back(), "rollout_latent");
  }
  return out;
}

/// Discrete forecasts for N initial conditions (columns of x0). Element tau
/// of the result is the (state_channels x N) prediction at step tau.
inline std::vector<Matrix> forecast_discrete_batch(const KoopmanModel& m, const Matrix& x0, int horizon) {
  if (horizon < 0) fail(ErrorKind::InvalidArgument, "forecast horizon must be non-negative");
  const auto latents = rollout_latent(m.k, encode(m, x0), horizon);
  Matrix stacked(m.latent_dim(), x0.cols() * (horizon + 1));
  for (int tau = 0; tau <= horizon; ++tau) stacked.middleCols(tau * x0.cols(), x0.cols()) = latents[static_cast<std::size_t>(tau)];
  const Matrix decoded = detail::decode_states(m, stacked);
  detail::guard_divergence(decoded, "forecast_discrete");
  std::vector<Matrix> out;
  for (int tau = 0; tau <= horizon; ++tau) out.push_back(decoded.middleCols(tau * x0.cols(), x0.cols()));
  return out;
}

/// psi(K^tau phi(x0)) for tau = 0..horizon at times tau / native_frequency.
inline TimeSeries forecast_discrete(const KoopmanModel& m, const Vector& x0, int horizon) {
  detail::require_input(m, x0, "forecast_discrete");
  if (horizon < 1) fail(ErrorKind::InvalidArgument, "forecast horizon must be positive");
  const auto latents = rollout_latent(m.k, encode(m, x0), horizon);
  Matrix stacked(m.latent_dim(), horizon + 1);
  std::vector<double> times;
  for (int tau = 0; tau <= horizon; ++tau) {
    stacked.col(tau) = latents[static_cast<std::size_t>(tau)];
    times.push_back(tau / m.native_frequency);
  }
  const Matrix states = detail::decode_states(m, stacked);
  detail::guard_divergence(states, "forecast_discrete");
  return detail::series_from_columns(states, times);
}

/// psi(exp(t * native_frequency * L) phi(x0)) at arbitrary query times.
inline TimeSeries forecast_continuous(const KoopmanModel& m, const Vector& x0, const std::vector<double>& query_times) {
  detail::require_input(m, x0, "forecast_continuous");
  if (query_times.empty()) fail(ErrorKind::InvalidArgument, "forecast_continuous: no query times");
  const GeneratorMatrix l = matrix_log_principal(m.k);
  const Vector z0 = encode(m, x0);
  Matrix stacked(m.latent_dim(), static_cast<Eigen::Index>(query_times.size()));
  for (std::size_t i = 0; i < query_times.size(); ++i) {
    const double steps = query_times[i] * m.native_frequency;
    stacked.col(static_cast<Eigen::Index>(i)) = matrix_exp(Matrix(steps * l.entries)) * z0;
  }
  detail::guard_divergence(stacked, "forecast_continuous");
  const Matrix states = detail::decode_states(m, stacked);
  detail::guard_divergence(states, "forecast_continuous");
  TimeSeries s;
  s.values = states.transpose();
  s.times = query_times;
  s.mask.assign(query_times.size(), true);
  return s;
}

/// Condition number above which K is not inverted.
inline constexpr double kMaxInversionCondition = 1e8;

/// Backward prediction by inverting K. Row i (time i / native_frequency) holds
/// psi(K^{-(horizon - i)} phi(x_end)), so the series is in chronological order
/// and its last row reconstructs x_end.
inline TimeSeries backward_predict(const KoopmanModel& m, const Vector& x_end, int horizon) {
  detail::require_input(m, x_end, "backward_predict");
  if (horizon < 1) fail(ErrorKind::InvalidArgument, "backward horizon must be positive");
  Eigen::JacobiSVD<Matrix> svd(m.k);
  const auto& sv = svd.singularValues();
  const double cond = sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1) : std::numeric_limits<double>::infinity();
  if (!(cond < kMaxInversionCondition)) {
    fail(ErrorKind::IllConditioned, "backward_predict: K condition number " + std::to_string(cond));
  }
  const Matrix k_inv = m.k.partialPivLu().inverse();
  const auto latents = rollout_latent(k_inv, encode(m, x_end), horizon);
  Matrix stacked(m.latent_dim(), horizon + 1);
  std::vector<double> times;
  for (int i = 0; i <= horizon; ++i) {
    stacked.col(i) = latents[static_cast<std::size_t>(horizon - i)];
    times.push_back(i / m.native_frequency);
  }
  const Matrix states = detail::decode_states(m, stacked);
  detail::guard_divergence(states, "backward_predict");
  return detail::series_from_columns(states, times);
}

/// Same encoder/decoder with K replaced by exp((native / target) L).
inline KoopmanModel retarget_frequency(const KoopmanModel& m, double target_frequency) {
  if (!(target_frequency > 0.0)) fail(ErrorKind::InvalidArgument, "target frequency must be positive");
  KoopmanModel out = m;
  if (target_frequency == m.native_frequency) return out;
  const GeneratorMatrix l = matrix_log_principal(m.k);
  out.k = matrix_exp(Matrix((m.native_frequency / target_frequency) * l.entries));
  out.native_frequency = target_frequency;
  return out;
}

}  // namespace koopman
