#pragma once

// Evaluation protocols shared by the command-line driver and the acceptance
// suite: forecast / backward errors on test series, linear-interpolation
// upsampling baseline, grid dataset preparation and the masked interpolation
// protocol.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string_view>
#include <vector>

#include "koopman/assimilation.hpp"
#include "koopman/dynamics.hpp"
#include "koopman/error.hpp"
#include "koopman/model.hpp"

namespace koopman {

/// Named sub-seeds derived from one root seed.
inline std::uint64_t sub_seed(std::uint64_t root, std::string_view name) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(root), static_cast<std::uint32_t>(root >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

inline MeanStd mean_std(const std::vector<double>& v) {
  if (v.empty()) fail(ErrorKind::InvalidArgument, "mean_std: empty sample");
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(v.size()))};
}

/// Series whose rows are kept every `stride` indices (stride 1 keeps all).
inline TimeSeries decimate(const TimeSeries& s, int stride) {
  if (stride < 1) fail(ErrorKind::InvalidArgument, "decimate: stride must be positive");
  std::vector<bool> keep(static_cast<std::size_t>(s.length()), false);
  for (Eigen::Index t = 0; t < s.length(); t += stride) keep[static_cast<std::size_t>(t)] = true;
  return subsample(s, keep);
}

/// Piecewise-linear interpolation of the observed rows of `s` at `times`;
/// queries outside the observed range take the nearest end value.
inline Matrix interpolate_linear(const TimeSeries& s, const std::vector<double>& times) {
  std::vector<Eigen::Index> rows;
  for (Eigen::Index t = 0; t < s.length(); ++t) {
    if (s.mask[static_cast<std::size_t>(t)]) rows.push_back(t);
  }
  if (rows.empty()) fail(ErrorKind::EmptySeries, "interpolate_linear: no observed rows");
  Matrix out(static_cast<Eigen::Index>(times.size()), s.channels());
  std::size_t k = 0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double q = times[i];
    const auto time_of = [&](std::size_t j) { return s.times[static_cast<std::size_t>(rows[j])]; };
    if (q <= time_of(0)) {
      out.row(static_cast<Eigen::Index>(i)) = s.values.row(rows.front());
      continue;
    }
    if (q >= time_of(rows.size() - 1)) {
      out.row(static_cast<Eigen::Index>(i)) = s.values.row(rows.back());
      continue;
    }
    if (k > 0 && time_of(k) > q) k = 0;
    while (time_of(k + 1) < q) ++k;
    const double w = (q - time_of(k)) / (time_of(k + 1) - time_of(k));
    out.row(static_cast<Eigen::Index>(i)) = (1.0 - w) * s.values.row(rows[k]) + w * s.values.row(rows[k + 1]);
  }
  return out;
}

/// Mean squared error over every entry of the rows of `test` series.
struct SeriesErrors {
  double mse = 0.0;
  std::vector<double> per_step;  // averaged over series and channels
};

namespace detail {

inline SeriesErrors accumulate_errors(const std::vector<TimeSeries>& test,
                                      const std::function<Matrix(const TimeSeries&)>& predict) {
  if (test.empty()) fail(ErrorKind::EmptyDataset, "no test series");
  const Eigen::Index rows = test.front().length();
  SeriesErrors e;
  e.per_step.assign(static_cast<std::size_t>(rows), 0.0);
  double total = 0.0;
  double count = 0.0;
  for (const auto& s : test) {
    if (s.length() != rows) fail(ErrorKind::ShapeMismatch, "test series must share a length");
    const Matrix p = predict(s);
    for (Eigen::Index t = 0; t < rows; ++t) {
      const double sq = (p.row(t) - s.values.row(t)).squaredNorm();
      e.per_step[static_cast<std::size_t>(t)] += sq / static_cast<double>(s.channels() * test.size());
      total += sq;
    }
    count += static_cast<double>(s.values.size());
  }
  e.mse = total / count;
  return e;
}

}  // namespace detail

/// Forecasts every test series from its first state at the series' own
/// sampling rate, after converting the model to that frequency.
inline SeriesErrors forecast_errors(const KoopmanModel& m, const std::vector<TimeSeries>& test) {
  const TimeSeries& first = test.front();
  const double frequency = 1.0 / (first.times.at(1) - first.times.at(0));
  const KoopmanModel hf = retarget_frequency(m, frequency);
  return detail::accumulate_errors(test, [&](const TimeSeries& s) {
    return forecast_discrete(hf, s.values.row(0).transpose(), static_cast<int>(s.length() - 1)).values;
  });
}

/// Backward predictions from the last state of every test series.
inline SeriesErrors backward_errors(const KoopmanModel& m, const std::vector<TimeSeries>& test) {
  const TimeSeries& first = test.front();
  const double frequency = 1.0 / (first.times.at(1) - first.times.at(0));
  const KoopmanModel hf = retarget_frequency(m, frequency);
  return detail::accumulate_errors(test, [&](const TimeSeries& s) {
    return backward_predict(hf, s.values.row(s.length() - 1).transpose(), static_cast<int>(s.length() - 1)).values;
  });
}

/// Error of linearly interpolating every `stride`-th sample of the test series.
inline SeriesErrors linear_upsampling_errors(const std::vector<TimeSeries>& test, int stride) {
  return detail::accumulate_errors(test, [&](const TimeSeries& s) { return interpolate_linear(decimate(s, stride), s.times); });
}

// ---------------------------------------------------------------------------
// Pixel grids

/// Rows [start, start + count) of every pixel, times re-based to 0.
inline PixelGrid slice_grid(const PixelGrid& g, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 1 || start + count > g.length()) fail(ErrorKind::InvalidArgument, "slice_grid: range");
  PixelGrid out = g;
  for (auto& p : out.pixels) {
    TimeSeries s;
    s.values = p.values.middleRows(start, count);
    for (Eigen::Index t = start; t < start + count; ++t) {
      s.times.push_back(p.times[static_cast<std::size_t>(t)] - p.times[static_cast<std::size_t>(start)]);
      s.mask.push_back(p.mask[static_cast<std::size_t>(t)]);
    }
    p = std::move(s);
  }
  return out;
}

/// Observation frames of a grid and the same frames seen through `mask`.
inline Observations grid_observations(const PixelGrid& g, const std::vector<bool>& mask) {
  Observations o = Observations::from_grid(g);
  if (mask.size() != static_cast<std::size_t>(g.length())) fail(ErrorKind::ShapeMismatch, "grid_observations: mask");
  o.mask = mask;
  return o;
}

/// Half (or `keep_fraction`) of the frames kept uniformly at random; frame 0 is always kept.
inline std::vector<bool> random_frame_mask(Eigen::Index frames, double keep_fraction, std::uint64_t seed) {
  return random_keep_mask(std::vector<bool>(static_cast<std::size_t>(frames), true), keep_fraction, seed);
}

inline std::vector<bool> complement(const std::vector<bool>& m) {
  std::vector<bool> out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = !m[i];
  return out;
}

/// Interpolation protocol: for each seed, keep a random fraction of the frames,
/// reconstruct all frames with `method` and score the hidden frames.
using InterpolationMethod = std::function<std::vector<Matrix>(const Observations& observed)>;

struct InterpolationReport {
  std::vector<double> per_seed;
  MeanStd summary;
};

inline InterpolationReport interpolation_protocol(const Observations& truth, const InterpolationMethod& method,
                                                  const std::vector<std::uint64_t>& seeds, double keep_fraction = 0.5) {
  InterpolationReport r;
  for (std::uint64_t seed : seeds) {
    const std::vector<bool> keep = random_frame_mask(truth.length(), keep_fraction, seed);
    const std::vector<Matrix> recon = method(truth.with_mask(keep));
    r.per_seed.push_back(masked_mse(recon, truth.frames, complement(keep)));
  }
  r.summary = mean_std(r.per_seed);
  return r;
}

}  // namespace koopman
