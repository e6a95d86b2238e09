#pragma once

// Shared fixtures for the unit tests: tiny models and loop-based oracles that
// do not go through the library's vectorized code paths.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "koopman/koopman.hpp"

namespace koopman::testing {

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

/// Small model with random weights and a random near-orthogonal K.
inline KoopmanModel tiny_model(int input = 2, int latent = 3, std::vector<int> hidden = {4},
                               Activation act = Activation::SmoothRectifier, std::uint64_t seed = 7) {
  ModelConfig mc;
  mc.input_dim = input;
  mc.latent_dim = latent;
  mc.hidden = std::move(hidden);
  mc.activation = act;
  KoopmanModel m = make_model(mc, seed);
  const Matrix skew = random_matrix(latent, latent, seed + 1, 0.2);
  m.k = 0.97 * matrix_exp(Matrix(skew - skew.transpose()));
  for (const auto& [name, t] : m.params) {
    if (name.find("bias") != std::string::npos) m.params.set(name, random_matrix(t.rows(), t.cols(), seed + name.size(), 0.1));
  }
  return m;
}

/// Model whose encoder and decoder are the identity, so forecasts are K^t x0.
inline KoopmanModel identity_model(const Matrix& k, double frequency = 1.0) {
  KoopmanModel m;
  const auto d = static_cast<int>(k.rows());
  m.encoder_spec.layer_sizes = {d, d};
  m.decoder_spec.layer_sizes = {d, d};
  m.params.set("encoder.0.weight", Matrix::Identity(d, d));
  m.params.set("encoder.0.bias", Matrix::Zero(d, 1));
  m.params.set("decoder.0.weight", Matrix::Identity(d, d));
  m.params.set("decoder.0.bias", Matrix::Zero(d, 1));
  m.k = k;
  m.native_frequency = frequency;
  return m;
}

/// Scalar-loop MLP on one input vector.
inline std::vector<double> loop_mlp(const MLPSpec& spec, const ParameterStore& p, const std::string& prefix,
                                    std::vector<double> x) {
  for (int l = 0; l < spec.num_layers(); ++l) {
    const Matrix& w = p.at(prefix + "." + std::to_string(l) + ".weight");
    const Matrix& b = p.at(prefix + "." + std::to_string(l) + ".bias");
    std::vector<double> y(static_cast<std::size_t>(w.rows()));
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      double acc = b(i, 0);
      for (Eigen::Index j = 0; j < w.cols(); ++j) acc += w(i, j) * x[static_cast<std::size_t>(j)];
      if (l + 1 < spec.num_layers()) {
        acc = spec.activation == Activation::SmoothRectifier ? acc / (1.0 + std::exp(-acc)) : std::tanh(acc);
      }
      y[static_cast<std::size_t>(i)] = acc;
    }
    x = std::move(y);
  }
  return x;
}

inline std::vector<double> to_vec(const Vector& v) { return {v.data(), v.data() + v.size()}; }

inline Vector from_vec(const std::vector<double>& v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) out(static_cast<Eigen::Index>(i)) = v[i];
  return out;
}

/// Plain matrix power by repeated multiplication.
inline Matrix loop_power(const Matrix& k, int n) {
  Matrix out = Matrix::Identity(k.rows(), k.cols());
  for (int i = 0; i < n; ++i) out = k * out;
  return out;
}

/// Taylor series of exp(A) in long double with scaling and squaring.
inline Matrix series_exp(const Matrix& a) {
  using LMatrix = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  int squarings = 0;
  double norm = a.cwiseAbs().rowwise().sum().maxCoeff();
  while (norm > 0.25) {
    norm /= 2.0;
    ++squarings;
  }
  const LMatrix scaled = a.cast<long double>() / std::ldexp(1.0L, squarings);
  LMatrix term = LMatrix::Identity(a.rows(), a.cols());
  LMatrix sum = term;
  for (int k = 1; k < 40; ++k) {
    term = term * scaled / static_cast<long double>(k);
    sum += term;
  }
  for (int i = 0; i < squarings; ++i) sum = sum * sum;
  return sum.cast<double>();
}

inline TimeSeries rotation_series(double theta, const Vector& z0, int steps, double dt = 1.0) {
  Matrix v(steps + 1, 2);
  Vector z = z0;
  for (int t = 0; t <= steps; ++t) {
    v.row(t) = z.transpose();
    z = rotation2(theta) * z;
  }
  return TimeSeries::regular(std::move(v), dt);
}

}  // namespace koopman::testing
