#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "koopman/mlp.hpp"

namespace koopman {

/// Adaptive-moment first-order optimizer. Only tensors present in the
/// gradient store are updated.
class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  long steps() const { return t_; }

  /// Moment estimates and step count, enough to continue a run exactly.
  struct State {
    long steps = 0;
    std::map<std::string, Matrix> first_moment;
    std::map<std::string, Matrix> second_moment;
  };

  State state() const { return {t_, m_, v_}; }
  void restore(const State& s) {
    t_ = s.steps;
    m_ = s.first_moment;
    v_ = s.second_moment;
  }

  void step(ParameterStore& params, const ParameterStore& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const auto& [name, g] : grads) {
      Matrix& p = params.at(name);
      auto [it_m, new_m] = m_.try_emplace(name, Matrix::Zero(g.rows(), g.cols()));
      auto [it_v, new_v] = v_.try_emplace(name, Matrix::Zero(g.rows(), g.cols()));
      Matrix& m = it_m->second;
      Matrix& v = it_v->second;
      m = beta1_ * m + (1.0 - beta1_) * g;
      v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
      if (lr_ == 0.0) continue;
      p.array() -= lr_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
    }
  }

 private:
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  long t_ = 0;
  std::map<std::string, Matrix> m_;
  std::map<std::string, Matrix> v_;
};

/// Loss value plus (when `grad` is non-null) its gradient for every tensor of `params`.
using LossWithGradient = std::function<double(const ParameterStore& params, ParameterStore* grad)>;

struct GradientReport {
  struct Coordinate {
    std::string parameter;
    Eigen::Index index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double relative_error = 0.0;
  };

  double step = 0.0;
  double max_relative_error = 0.0;
  std::map<std::string, double> per_parameter;  // max relative error per tensor
  std::vector<Coordinate> flagged;              // coordinates above the flag tolerance
  std::size_t checked = 0;

  bool passed(double tolerance) const { return max_relative_error <= tolerance; }
};

/// Central-difference comparison of analytic gradients. Stores with more than
/// `max_coordinates` scalars are subsampled deterministically from `seed`.
/// The relative error of a coordinate is |a - n| / max(|a|, |n|, floor), with
/// floor = 1e-6 * max(1, |loss|, max|grad|) absorbing round-off on vanishing
/// components.
inline GradientReport gradient_check(const LossWithGradient& loss, const ParameterStore& params, double step,
                                     std::uint64_t seed = 0, std::size_t max_coordinates = 500,
                                     double flag_tolerance = 1e-4) {
  if (!(step > 0.0)) fail(ErrorKind::InvalidArgument, "gradient_check: step must be positive");
  GradientReport report;
  report.step = step;

  ParameterStore analytic;
  const double base = loss(params, &analytic);

  struct Slot {
    std::string name;
    Eigen::Index index;
  };
  std::vector<Slot> slots;
  double max_grad = 0.0;
  for (const auto& [name, m] : params) {
    const Matrix& g = analytic.at(name);
    if (g.rows() != m.rows() || g.cols() != m.cols()) fail(ErrorKind::ShapeMismatch, "gradient shape for " + name);
    max_grad = std::max(max_grad, g.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < m.size(); ++i) slots.push_back({name, i});
    report.per_parameter[name] = 0.0;
  }
  if (slots.size() > max_coordinates) {
    std::mt19937_64 rng(seed);
    std::shuffle(slots.begin(), slots.end(), rng);
    slots.resize(max_coordinates);
  }
  const double floor = 1e-6 * std::max({1.0, std::abs(base), max_grad});

  ParameterStore probe = params;
  for (const Slot& s : slots) {
    double& x = probe.at(s.name).data()[s.index];
    const double saved = x;
    x = saved + step;
    const double up = loss(probe, nullptr);
    x = saved - step;
    const double down = loss(probe, nullptr);
    x = saved;

    const double numeric = (up - down) / (2.0 * step);
    const double a = analytic.at(s.name).data()[s.index];
    const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    report.max_relative_error = std::max(report.max_relative_error, err);
    report.per_parameter[s.name] = std::max(report.per_parameter[s.name], err);
    if (err > flag_tolerance) report.flagged.push_back({s.name, s.index, a, numeric, err});
    ++report.checked;
  }
  return report;
}

}  // namespace koopman
