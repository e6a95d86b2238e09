#pragma once

// Trajectory data: the time-series containers, the fluid-flow ODE with an
// RK4 integrator, state augmentation with discrete derivatives, Cressman gap
// filling, subsampling/masking and a synthetic pseudo-periodic pixel grid.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "koopman/error.hpp"
#include "koopman/matfun.hpp"

namespace koopman {

/// Timestamped multichannel observations. Rows of `values` are time steps.
/// Unobserved rows keep whatever value they hold (often NaN) and must not be read.
struct TimeSeries {
  std::vector<double> times;
  Matrix values;  // (T+1) x C
  std::vector<bool> mask;

  Eigen::Index length() const { return values.rows(); }
  Eigen::Index channels() const { return values.cols(); }

  std::size_t observed_count() const { return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true)); }
  bool fully_observed() const { return observed_count() == mask.size(); }

  Vector row(Eigen::Index t) const { return values.row(t).transpose(); }

  /// Fully observed series on the grid 0, dt, 2 dt, ...
  static TimeSeries regular(Matrix values, double dt) {
    TimeSeries s;
    s.times.resize(static_cast<std::size_t>(values.rows()));
    for (std::size_t i = 0; i < s.times.size(); ++i) s.times[i] = static_cast<double>(i) * dt;
    s.mask.assign(s.times.size(), true);
    s.values = std::move(values);
    return s;
  }

  void validate() const {
    if (values.rows() < 1) fail(ErrorKind::EmptySeries, "time series has no rows");
    if (times.size() != static_cast<std::size_t>(values.rows()) || mask.size() != times.size()) {
      fail(ErrorKind::ShapeMismatch, "time series: times/values/mask lengths differ");
    }
    if (times.front() != 0.0) fail(ErrorKind::InvalidArgument, "time series must start at t = 0");
    for (std::size_t i = 1; i < times.size(); ++i) {
      if (!(times[i] > times[i - 1])) fail(ErrorKind::UnsortedTimes, "time series times must strictly increase");
    }
    for (Eigen::Index t = 0; t < values.rows(); ++t) {
      if (mask[static_cast<std::size_t>(t)] && !values.row(t).allFinite()) {
        fail(ErrorKind::NonFinite, "observed row " + std::to_string(t) + " is not finite");
      }
    }
  }
};

/// Image time series: one TimeSeries per pixel (row-major), all sharing the
/// same time axis and mask.
struct PixelGrid {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<TimeSeries> pixels;

  int num_pixels() const { return height * width; }
  Eigen::Index length() const { return pixels.empty() ? 0 : pixels.front().length(); }
  const std::vector<double>& times() const { return pixels.front().times; }
  const std::vector<bool>& mask() const { return pixels.front().mask; }

  const TimeSeries& at(int row, int col) const { return pixels[static_cast<std::size_t>(row * width + col)]; }

  /// Channels x pixels snapshot at time index t.
  Matrix frame(Eigen::Index t) const {
    Matrix f(channels, num_pixels());
    for (int p = 0; p < num_pixels(); ++p) f.col(p) = pixels[static_cast<std::size_t>(p)].values.row(t).transpose();
    return f;
  }

  std::vector<Matrix> frames() const {
    std::vector<Matrix> out;
    out.reserve(static_cast<std::size_t>(length()));
    for (Eigen::Index t = 0; t < length(); ++t) out.push_back(frame(t));
    return out;
  }

  void set_mask(const std::vector<bool>& mask) {
    for (auto& p : pixels) p.mask = mask;
  }

  void validate() const {
    if (height < 1 || width < 1 || channels < 1) fail(ErrorKind::InvalidArgument, "pixel grid dimensions");
    if (pixels.size() != static_cast<std::size_t>(num_pixels())) fail(ErrorKind::ShapeMismatch, "pixel count");
    for (const auto& p : pixels) {
      p.validate();
      if (p.channels() != channels || p.times != times() || p.mask != mask()) {
        fail(ErrorKind::ShapeMismatch, "pixel series do not share a common axis");
      }
    }
  }
};

struct FluidFlowParams {
  double mu = 0.1;
};

/// (mu x - y - x z, mu y + x - y z, -y + x^2 + y^2)
inline Vector fluid_flow_rhs(const Vector& state, const FluidFlowParams& p) {
  if (state.size() != 3) fail(ErrorKind::ShapeMismatch, "fluid_flow_rhs expects a 3-vector");
  const double x = state(0);
  const double y = state(1);
  const double z = state(2);
  Vector d(3);
  d << p.mu * x - y - x * z, p.mu * y + x - y * z, -y + x * x + y * y;
  return d;
}

using RightHandSide = std::function<Vector(const Vector&)>;

/// Classical fourth-order Runge-Kutta on a fixed step.
inline TimeSeries integrate_rk4(const RightHandSide& rhs, const Vector& x0, double dt, int steps) {
  if (!(dt > 0.0)) fail(ErrorKind::InvalidArgument, "integrate_rk4: dt must be positive");
  if (steps < 1) fail(ErrorKind::InvalidArgument, "integrate_rk4: steps must be positive");
  if (!x0.allFinite()) fail(ErrorKind::NonFinite, "integrate_rk4: initial state");
  Matrix values(steps + 1, x0.size());
  Vector x = x0;
  values.row(0) = x.transpose();
  for (int i = 1; i <= steps; ++i) {
    const Vector k1 = rhs(x);
    const Vector k2 = rhs(x + 0.5 * dt * k1);
    const Vector k3 = rhs(x + 0.5 * dt * k2);
    const Vector k4 = rhs(x + dt * k3);
    x += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!x.allFinite() || x.cwiseAbs().maxCoeff() > 1e12) {
      fail(ErrorKind::NonFinite, "integrate_rk4: trajectory blew up at step " + std::to_string(i));
    }
    values.row(i) = x.transpose();
  }
  return TimeSeries::regular(std::move(values), dt);
}

struct FluidFlowDataset {
  int trajectories = 100;
  double duration = 10.0;
  double dt = 0.02;
  FluidFlowParams params;
  std::uint64_t seed = 0;
};

/// Trajectories from initial states drawn uniformly in |x|, |y| <= 1.1, z in [0, 1.2].
inline std::vector<TimeSeries> generate_fluid_flow(const FluidFlowDataset& d) {
  if (d.trajectories < 1) fail(ErrorKind::InvalidArgument, "trajectory count must be positive");
  const double steps_real = d.duration / d.dt;
  const auto steps = static_cast<int>(std::lround(steps_real));
  if (steps < 1 || std::abs(steps_real - steps) > 1e-9 * steps_real) {
    fail(ErrorKind::InvalidArgument, "duration must be a whole number of steps");
  }
  std::mt19937_64 rng(d.seed);
  std::uniform_real_distribution<double> xy(-1.1, 1.1);
  std::uniform_real_distribution<double> zdist(0.0, 1.2);
  const RightHandSide rhs = [p = d.params](const Vector& s) { return fluid_flow_rhs(s, p); };
  std::vector<TimeSeries> out;
  for (int i = 0; i < d.trajectories; ++i) {
    Vector x0(3);
    x0(0) = xy(rng);
    x0(1) = xy(rng);
    x0(2) = zdist(rng);
    out.push_back(integrate_rk4(rhs, x0, d.dt, steps));
  }
  return out;
}

struct RotationDataset {
  int trajectories = 40;
  int steps = 100;
  double theta = 0.1;  // radians per step
  std::uint64_t seed = 0;
};

/// z_{t+1} = rotation(theta) z_t from z_0 uniform in [-1, 1]^2, unit time step.
inline std::vector<TimeSeries> generate_rotation(const RotationDataset& d) {
  if (d.trajectories < 1 || d.steps < 1) fail(ErrorKind::InvalidArgument, "rotation dataset: counts must be positive");
  std::mt19937_64 rng(d.seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix r(2, 2);
  r << std::cos(d.theta), -std::sin(d.theta), std::sin(d.theta), std::cos(d.theta);
  std::vector<TimeSeries> out;
  for (int i = 0; i < d.trajectories; ++i) {
    Matrix v(d.steps + 1, 2);
    Vector z(2);
    z(0) = u(rng);
    z(1) = u(rng);
    for (int t = 0; t <= d.steps; ++t) {
      v.row(t) = z.transpose();
      z = r * z;
    }
    out.push_back(TimeSeries::regular(std::move(v), 1.0));
  }
  return out;
}

/// State stacked with its discrete derivative: row t holds
/// (x_{t+1}, x_{t+1} - x_t). `times` are the source times shifted by one step.
struct AugmentedSeries {
  std::vector<double> times;
  Matrix values;  // T x 2C
  Eigen::Index source_channels = 0;

  /// The augmented rows as a regular series re-based to start at t = 0.
  TimeSeries as_series() const {
    TimeSeries s;
    s.values = values;
    s.times.resize(times.size());
    for (std::size_t i = 0; i < times.size(); ++i) s.times[i] = times[i] - times.front();
    s.mask.assign(times.size(), true);
    return s;
  }
};

inline bool has_regular_spacing(const std::vector<double>& times, double rel_tol = 1e-9) {
  if (times.size() < 3) return true;
  const double dt = times[1] - times[0];
  for (std::size_t i = 2; i < times.size(); ++i) {
    if (std::abs((times[i] - times[i - 1]) - dt) > rel_tol * std::max(1.0, std::abs(dt)) * times.size()) {
      return false;
    }
  }
  return true;
}

inline AugmentedSeries augment_state(const TimeSeries& s) {
  if (s.length() < 2) fail(ErrorKind::EmptySeries, "augment_state needs at least two rows");
  if (!s.fully_observed() || !has_regular_spacing(s.times)) {
    fail(ErrorKind::IrregularInput, "augmentation needs a fully observed, regularly sampled series");
  }
  const Eigen::Index rows = s.length() - 1;
  const Eigen::Index c = s.channels();
  AugmentedSeries out;
  out.source_channels = c;
  out.values.resize(rows, 2 * c);
  out.values.leftCols(c) = s.values.bottomRows(rows);
  out.values.rightCols(c) = s.values.bottomRows(rows) - s.values.topRows(rows);
  out.times.assign(s.times.begin() + 1, s.times.end());
  return out;
}

/// Fills unobserved rows with Gaussian-weighted averages of the observed rows,
/// w_k = exp(-(t - t_k)^2 / (2 r^2)). Observed rows are copied unchanged.
inline TimeSeries cressman_interpolate(const TimeSeries& s, double radius) {
  if (!(radius > 0.0)) fail(ErrorKind::InvalidArgument, "cressman_interpolate: radius must be positive");
  std::vector<Eigen::Index> observed;
  for (Eigen::Index t = 0; t < s.length(); ++t) {
    if (s.mask[static_cast<std::size_t>(t)]) observed.push_back(t);
  }
  if (observed.empty()) fail(ErrorKind::EmptySeries, "cressman_interpolate: no observed rows");

  TimeSeries out = s;
  const double inv_two_r2 = 1.0 / (2.0 * radius * radius);
  std::vector<double> logw(observed.size());
  for (Eigen::Index t = 0; t < s.length(); ++t) {
    if (s.mask[static_cast<std::size_t>(t)]) continue;
    double min_exponent = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < observed.size(); ++k) {
      const double dt = s.times[static_cast<std::size_t>(t)] - s.times[static_cast<std::size_t>(observed[k])];
      logw[k] = dt * dt * inv_two_r2;
      min_exponent = std::min(min_exponent, logw[k]);
    }
    // Shifting every exponent by the smallest one leaves the normalized
    // weights unchanged and keeps at least one weight equal to 1.
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(s.channels());
    double total = 0.0;
    for (std::size_t k = 0; k < observed.size(); ++k) {
      const double w = std::exp(-(logw[k] - min_exponent));
      acc += w * s.values.row(observed[k]);
      total += w;
    }
    out.values.row(t) = acc / total;
  }
  std::fill(out.mask.begin(), out.mask.end(), true);
  return out;
}

/// Keeps the rows flagged in `keep`; dropped rows disappear from the series.
inline TimeSeries subsample(const TimeSeries& s, const std::vector<bool>& keep) {
  if (keep.size() != static_cast<std::size_t>(s.length())) fail(ErrorKind::ShapeMismatch, "subsample: mask length");
  const auto kept = static_cast<Eigen::Index>(std::count(keep.begin(), keep.end(), true));
  if (kept < 2 || !keep.front()) fail(ErrorKind::DegenerateMask, "subsample must keep t = 0 and at least two rows");
  TimeSeries out;
  out.values.resize(kept, s.channels());
  Eigen::Index r = 0;
  for (Eigen::Index t = 0; t < s.length(); ++t) {
    if (!keep[static_cast<std::size_t>(t)]) continue;
    out.values.row(r++) = s.values.row(t);
    out.times.push_back(s.times[static_cast<std::size_t>(t)]);
    out.mask.push_back(s.mask[static_cast<std::size_t>(t)]);
  }
  return out;
}

/// Places the rows of `s` on the regular grid of spacing 1 / frequency starting
/// at t = 0; grid points without a row are unobserved (zero values). Every
/// time must sit on the grid.
inline TimeSeries regularize(const TimeSeries& s, double frequency) {
  s.validate();
  if (!(frequency > 0.0)) fail(ErrorKind::InvalidArgument, "regularize: frequency must be positive");
  std::vector<long long> index(s.times.size());
  for (std::size_t i = 0; i < s.times.size(); ++i) {
    const double steps = s.times[i] * frequency;
    index[i] = std::llround(steps);
    if (std::abs(steps - static_cast<double>(index[i])) > 1e-6 * std::max(1.0, std::abs(steps))) {
      fail(ErrorKind::IrregularInput, "time " + std::to_string(s.times[i]) + " is not on the model time grid");
    }
  }
  const auto rows = static_cast<Eigen::Index>(index.back() + 1);
  if (rows == s.length()) return s;
  TimeSeries out;
  out.values = Matrix::Zero(rows, s.channels());
  out.mask.assign(static_cast<std::size_t>(rows), false);
  out.times.resize(static_cast<std::size_t>(rows));
  for (Eigen::Index t = 0; t < rows; ++t) out.times[static_cast<std::size_t>(t)] = static_cast<double>(t) / frequency;
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto ti = static_cast<std::size_t>(index[i]);
    out.times[ti] = s.times[i];
    if (!s.mask[i]) continue;
    out.mask[ti] = true;
    out.values.row(static_cast<Eigen::Index>(ti)) = s.values.row(static_cast<Eigen::Index>(i));
  }
  return out;
}

/// Lowers a regular series to `target_frequency` (samples per time unit) by
/// keeping every k-th row; k must be an integer.
inline TimeSeries subsample(const TimeSeries& s, double target_frequency) {
  if (s.length() < 2) fail(ErrorKind::DegenerateMask, "subsample: series too short");
  const double dt = s.times[1] - s.times[0];
  const double ratio = 1.0 / (dt * target_frequency);
  const double stride = std::round(ratio);
  if (!(target_frequency > 0.0) || stride < 1.0 || std::abs(ratio - stride) > 1e-6 * ratio) {
    fail(ErrorKind::DegenerateMask, "subsample: target frequency must divide the native frequency");
  }
  std::vector<bool> keep(static_cast<std::size_t>(s.length()), false);
  for (std::size_t i = 0; i < keep.size(); i += static_cast<std::size_t>(stride)) keep[i] = true;
  return subsample(s, keep);
}

/// Observation mask keeping round(fraction * n) of the currently observed
/// rows, chosen uniformly at random. Row 0 is always kept.
inline std::vector<bool> random_keep_mask(const std::vector<bool>& observed, double keep_fraction, std::uint64_t seed) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) fail(ErrorKind::InvalidArgument, "keep fraction in (0, 1]");
  if (observed.empty() || !observed.front()) fail(ErrorKind::DegenerateMask, "row 0 must be observed");
  std::vector<std::size_t> candidates;
  for (std::size_t i = 1; i < observed.size(); ++i) {
    if (observed[i]) candidates.push_back(i);
  }
  const auto total = static_cast<double>(candidates.size() + 1);
  const auto target = static_cast<std::size_t>(std::llround(keep_fraction * total));
  if (target < 2) fail(ErrorKind::DegenerateMask, "random mask would keep fewer than two rows");
  std::mt19937_64 rng(seed);
  std::shuffle(candidates.begin(), candidates.end(), rng);
  std::vector<bool> mask(observed.size(), false);
  mask[0] = true;
  for (std::size_t i = 0; i + 1 < target && i < candidates.size(); ++i) mask[candidates[i]] = true;
  return mask;
}

/// Same rows, with a random subset of the observed ones masked out.
inline TimeSeries subsample(const TimeSeries& s, double keep_fraction, std::uint64_t seed) {
  TimeSeries out = s;
  out.mask = random_keep_mask(s.mask, keep_fraction, seed);
  return out;
}

struct PseudoPeriodicParams {
  int height = 10;
  int width = 10;
  int channels = 4;
  int n_steps = 200;  // rows = n_steps + 1
  double period = 36.5;
  int harmonics = 3;
  double noise = 0.01;
  double correlation_length = 2.5;  // pixels
  double amplitude_jitter = 0.25;    // relative spread of the per-pixel gain
  double phase_jitter = 0.4;         // spread of the per-pixel seasonal shift, radians of the fundamental
  std::uint64_t seed = 0;
};

namespace detail {

/// Unit-variance Gaussian random field from blurred white noise.
inline Matrix smooth_field(int height, int width, double correlation_length, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix white(height, width);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) white(r, c) = normal(rng);
  }
  if (correlation_length <= 0.0) return white;
  const int reach = static_cast<int>(std::ceil(3.0 * correlation_length));
  Matrix field = Matrix::Zero(height, width);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      double acc = 0.0;
      for (int dr = -reach; dr <= reach; ++dr) {
        for (int dc = -reach; dc <= reach; ++dc) {
          const int rr = r + dr;
          const int cc = c + dc;
          if (rr < 0 || rr >= height || cc < 0 || cc >= width) continue;
          acc += std::exp(-(dr * dr + dc * dc) / (2.0 * correlation_length * correlation_length)) * white(rr, cc);
        }
      }
      field(r, c) = acc;
    }
  }
  const double mean = field.mean();
  const double sd = std::sqrt((field.array() - mean).square().mean());
  return sd > 0.0 ? Matrix((field.array() - mean) / sd) : field;
}

}  // namespace detail

/// Pixel grid whose channels are sums of harmonics of 2 pi / period plus
/// white observation noise. Each pixel has its own offsets, a gain and a
/// seasonal shift common to its channels, all spatially smooth.
inline PixelGrid synth_pseudo_periodic(const PseudoPeriodicParams& p) {
  if (!(p.period > 0.0)) fail(ErrorKind::InvalidArgument, "synth_pseudo_periodic: period must be positive");
  if (p.height < 1 || p.width < 1 || p.channels < 1 || p.n_steps < 1 || p.harmonics < 1) {
    fail(ErrorKind::InvalidArgument, "synth_pseudo_periodic: dimensions must be positive");
  }
  std::mt19937_64 rng(p.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double two_pi = 2.0 * std::numbers::pi;

  struct Component {
    double amplitude;
    double phase;
  };
  std::vector<std::vector<Component>> components(static_cast<std::size_t>(p.channels));
  std::vector<Matrix> offset_fields;
  std::vector<double> base_offsets;
  for (int c = 0; c < p.channels; ++c) {
    base_offsets.push_back(0.2 + 0.3 * unit(rng));
    offset_fields.push_back(detail::smooth_field(p.height, p.width, p.correlation_length, rng));
    for (int h = 1; h <= p.harmonics; ++h) {
      components[static_cast<std::size_t>(c)].push_back({(0.05 + 0.1 * unit(rng)) / h, two_pi * unit(rng)});
    }
  }
  // Per-pixel seasonal timing and vigour, shared by every channel.
  const Matrix shift_field = detail::smooth_field(p.height, p.width, p.correlation_length, rng);
  const Matrix gain_field = detail::smooth_field(p.height, p.width, p.correlation_length, rng);

  PixelGrid grid;
  grid.height = p.height;
  grid.width = p.width;
  grid.channels = p.channels;
  std::normal_distribution<double> noise(0.0, p.noise > 0.0 ? p.noise : 1.0);
  const int rows = p.n_steps + 1;
  for (int r = 0; r < p.height; ++r) {
    for (int col = 0; col < p.width; ++col) {
      Matrix values(rows, p.channels);
      for (int c = 0; c < p.channels; ++c) {
        const double offset = base_offsets[static_cast<std::size_t>(c)] * (1.0 + 0.1 * offset_fields[static_cast<std::size_t>(c)](r, col));
        const double gain = 1.0 + p.amplitude_jitter * gain_field(r, col);
        const double shift = p.phase_jitter * shift_field(r, col);
        for (int t = 0; t < rows; ++t) {
          double v = offset;
          for (int h = 1; h <= p.harmonics; ++h) {
            const Component& comp = components[static_cast<std::size_t>(c)][static_cast<std::size_t>(h - 1)];
            v += gain * comp.amplitude * std::cos(two_pi * h * t / p.period + comp.phase + h * shift);
          }
          values(t, c) = v;
        }
      }
      if (p.noise > 0.0) {
        for (int t = 0; t < rows; ++t) {
          for (int c = 0; c < p.channels; ++c) values(t, c) += noise(rng);
        }
      }
      grid.pixels.push_back(TimeSeries::regular(std::move(values), 1.0));
    }
  }
  return grid;
}

}  // namespace koopman
