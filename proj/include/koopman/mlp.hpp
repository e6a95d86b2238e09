#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "koopman/autodiff.hpp"
#include "koopman/error.hpp"
#include "koopman/matfun.hpp"

namespace koopman {

enum class Activation { SmoothRectifier, HyperbolicTangent };

inline std::string_view to_string(Activation a) {
  return a == Activation::SmoothRectifier ? "smooth-rectifier" : "hyperbolic-tangent";
}

inline Activation parse_activation(std::string_view name) {
  if (name == "smooth-rectifier" || name == "silu") return Activation::SmoothRectifier;
  if (name == "hyperbolic-tangent" || name == "tanh") return Activation::HyperbolicTangent;
  fail(ErrorKind::UnsupportedPrimitive, "unknown activation '" + std::string(name) + "'");
}

/// Fully connected network; the activation applies after every layer but the last.
struct MLPSpec {
  std::vector<int> layer_sizes;
  Activation activation = Activation::SmoothRectifier;

  int input_size() const { return layer_sizes.front(); }
  int output_size() const { return layer_sizes.back(); }
  int num_layers() const { return static_cast<int>(layer_sizes.size()) - 1; }

  void validate() const {
    if (layer_sizes.size() < 2) fail(ErrorKind::InvalidArgument, "MLPSpec needs at least two layer sizes");
    for (int s : layer_sizes) {
      if (s < 1) fail(ErrorKind::InvalidArgument, "MLPSpec layer sizes must be positive");
    }
  }
};

/// Named parameter tensors, ordered by name so iteration is deterministic.
class ParameterStore {
 public:
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }

  const Matrix& at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) fail(ErrorKind::InvalidArgument, "missing parameter '" + name + "'");
    return it->second;
  }
  Matrix& at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) fail(ErrorKind::InvalidArgument, "missing parameter '" + name + "'");
    return it->second;
  }

  void set(const std::string& name, Matrix value) { tensors_[name] = std::move(value); }
  void erase(const std::string& name) { tensors_.erase(name); }

  const std::map<std::string, Matrix>& tensors() const { return tensors_; }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  Eigen::Index total_size() const {
    Eigen::Index n = 0;
    for (const auto& [name, m] : tensors_) n += m.size();
    return n;
  }

  bool all_finite() const {
    for (const auto& [name, m] : tensors_) {
      if (!m.allFinite()) return false;
    }
    return true;
  }

  /// Concatenates every tensor (column-major) in name order.
  Vector flatten() const {
    Vector out(total_size());
    Eigen::Index offset = 0;
    for (const auto& [name, m] : tensors_) {
      out.segment(offset, m.size()) = m.reshaped();
      offset += m.size();
    }
    return out;
  }

  void unflatten(const Vector& flat) {
    if (flat.size() != total_size()) fail(ErrorKind::ShapeMismatch, "unflatten: size mismatch");
    Eigen::Index offset = 0;
    for (auto& [name, m] : tensors_) {
      m.reshaped() = flat.segment(offset, m.size());
      offset += m.size();
    }
  }

 private:
  std::map<std::string, Matrix> tensors_;
};

inline std::string weight_name(const std::string& prefix, int layer) {
  return prefix + "." + std::to_string(layer) + ".weight";
}
inline std::string bias_name(const std::string& prefix, int layer) {
  return prefix + "." + std::to_string(layer) + ".bias";
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
inline void init_mlp(const MLPSpec& spec, const std::string& prefix, ParameterStore& store, std::mt19937_64& rng) {
  spec.validate();
  for (int l = 0; l < spec.num_layers(); ++l) {
    const int fan_in = spec.layer_sizes[static_cast<std::size_t>(l)];
    const int fan_out = spec.layer_sizes[static_cast<std::size_t>(l) + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix w(fan_out, fan_in);
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = dist(rng);
    }
    Matrix b(fan_out, 1);
    for (Eigen::Index i = 0; i < b.rows(); ++i) b(i, 0) = dist(rng);
    store.set(weight_name(prefix, l), std::move(w));
    store.set(bias_name(prefix, l), std::move(b));
  }
}

inline void zero_mlp(const MLPSpec& spec, const std::string& prefix, ParameterStore& store) {
  spec.validate();
  for (int l = 0; l < spec.num_layers(); ++l) {
    const int fan_in = spec.layer_sizes[static_cast<std::size_t>(l)];
    const int fan_out = spec.layer_sizes[static_cast<std::size_t>(l) + 1];
    store.set(weight_name(prefix, l), Matrix::Zero(fan_out, fan_in));
    store.set(bias_name(prefix, l), Matrix::Zero(fan_out, 1));
  }
}

namespace detail {

inline void apply_activation(Matrix& m, Activation a) {
  if (a == Activation::SmoothRectifier) {
    m = m.unaryExpr([](double x) { return x * ad::detail::sigmoid(x); });
  } else {
    m = m.array().tanh().matrix();
  }
}

}  // namespace detail

/// Batched evaluation: `input` holds one sample per column.
inline Matrix mlp_forward(const MLPSpec& spec, const ParameterStore& params, const std::string& prefix,
                          const Matrix& input) {
  if (input.rows() != spec.input_size()) {
    fail(ErrorKind::ShapeMismatch, "mlp_forward: input has " + std::to_string(input.rows()) + " rows, expected " +
                                       std::to_string(spec.input_size()));
  }
  Matrix h = input;
  for (int l = 0; l < spec.num_layers(); ++l) {
    const Matrix& w = params.at(weight_name(prefix, l));
    const Matrix& b = params.at(bias_name(prefix, l));
    if (w.cols() != h.rows()) fail(ErrorKind::ShapeMismatch, "mlp_forward: weight shape of layer " + std::to_string(l));
    Matrix next = w * h;
    next.colwise() += b.col(0);
    if (l + 1 < spec.num_layers()) detail::apply_activation(next, spec.activation);
    h = std::move(next);
  }
  if (!h.allFinite()) fail(ErrorKind::NonFinite, "mlp_forward: non-finite output");
  return h;
}

inline Vector mlp_forward(const MLPSpec& spec, const ParameterStore& params, const std::string& prefix,
                          const Vector& input) {
  return mlp_forward(spec, params, prefix, Matrix(input)).col(0);
}

/// Parameters mirrored onto a tape, either as trainable leaves or constants.
class BoundParameters {
 public:
  BoundParameters() = default;

  /// `trainable(name)` decides which tensors become gradient leaves.
  template <typename Pred>
  BoundParameters(ad::Tape& tape, const ParameterStore& store, Pred trainable) {
    for (const auto& [name, m] : store) {
      vars_.emplace(name, trainable(name) ? tape.variable(m) : tape.constant(m));
    }
  }

  const ad::Var& at(const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) fail(ErrorKind::InvalidArgument, "unbound parameter '" + name + "'");
    return it->second;
  }

  void set(const std::string& name, ad::Var v) { vars_[name] = v; }
  const std::map<std::string, ad::Var>& vars() const { return vars_; }

  /// Collects gradients into a store shaped like the bound parameters.
  ParameterStore gradients(const ad::Tape& tape) const {
    ParameterStore out;
    for (const auto& [name, v] : vars_) out.set(name, tape.grad(v));
    return out;
  }

 private:
  std::map<std::string, ad::Var> vars_;
};

inline ad::Var mlp_forward(const MLPSpec& spec, const BoundParameters& params, const std::string& prefix,
                           const ad::Var& input) {
  if (input.rows() != spec.input_size()) fail(ErrorKind::ShapeMismatch, "mlp_forward: input rows");
  ad::Var h = input;
  for (int l = 0; l < spec.num_layers(); ++l) {
    h = ad::add_bias(ad::matmul(params.at(weight_name(prefix, l)), h), params.at(bias_name(prefix, l)));
    if (l + 1 < spec.num_layers()) {
      h = spec.activation == Activation::SmoothRectifier ? ad::silu(h) : ad::tanh(h);
    }
  }
  return h;
}

}  // namespace koopman
