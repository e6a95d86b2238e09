#include <gtest/gtest.h>

#include "support.hpp"

using namespace koopman;
using koopman::testing::from_vec;
using koopman::testing::loop_mlp;
using koopman::testing::random_matrix;
using koopman::testing::series_exp;
using koopman::testing::tiny_model;
using koopman::testing::to_vec;

namespace {

struct OracleLosses {
  double pred = 0.0;
  double ae = 0.0;
  double lin = 0.0;
};

/// Per-sample loop over every series and row. `propagator(s)` is K^s for s
/// elapsed model steps.
template <typename Propagator>
OracleLosses oracle_losses(const KoopmanModel& m, const std::vector<TimeSeries>& data, Propagator propagator) {
  OracleLosses out;
  for (const auto& s : data) {
    const Vector z0 = from_vec(loop_mlp(m.encoder_spec, m.params, kEncoder, to_vec(s.row(0))));
    for (Eigen::Index t = 0; t < s.length(); ++t) {
      if (!s.mask[static_cast<std::size_t>(t)]) continue;
      const Vector x = s.row(t);
      const Vector z = from_vec(loop_mlp(m.encoder_spec, m.params, kEncoder, to_vec(x)));
      out.ae += (x - from_vec(loop_mlp(m.decoder_spec, m.params, kDecoder, to_vec(z)))).squaredNorm();
      if (t == 0) continue;
      const Vector zt = propagator(s.times[static_cast<std::size_t>(t)] * m.native_frequency) * z0;
      out.lin += (z - zt).squaredNorm();
      out.pred += (x - from_vec(loop_mlp(m.decoder_spec, m.params, kDecoder, to_vec(zt)))).squaredNorm();
    }
  }
  return out;
}

std::vector<TimeSeries> random_series(int count, int rows, int channels, std::uint64_t seed) {
  std::vector<TimeSeries> out;
  for (int i = 0; i < count; ++i) out.push_back(TimeSeries::regular(random_matrix(rows, channels, seed + i, 0.5), 1.0));
  return out;
}

std::vector<TimeSeries> rotation_data(int count, int steps, std::uint64_t seed) {
  RotationDataset d;
  d.trajectories = count;
  d.steps = steps;
  d.seed = seed;
  return generate_rotation(d);
}

TrainConfig small_config() {
  TrainConfig c;
  c.learning_rate = 3e-3;
  c.epochs = 5;
  c.batch_size = 4;
  c.window = 8;
  c.seed = 3;
  c.validation_fraction = 0.25;
  return c;
}

}  // namespace

TEST(Losses, DiscreteMatchesLoopOracle) {
  const KoopmanModel m = tiny_model();
  const auto data = random_series(3, 6, 2, 20);
  const OracleLosses o = oracle_losses(m, data, [&](double s) {
    return koopman::testing::loop_power(m.k, static_cast<int>(std::lround(s)));
  });
  EXPECT_NEAR(loss_pred(m, data), o.pred, 1e-12 * o.pred);
  EXPECT_NEAR(loss_ae(m, data), o.ae, 1e-12 * o.ae);
  EXPECT_NEAR(loss_lin(m, data), o.lin, 1e-12 * o.lin);
  EXPECT_DOUBLE_EQ(loss_orth(2.0 * Matrix::Identity(3, 3)), 27.0);
}

TEST(Losses, FullMaskIrregularEqualsRegular) {
  const KoopmanModel m = tiny_model();
  const auto data = random_series(2, 7, 2, 30);
  EXPECT_EQ(loss_pred_irregular(m, data, Formulation::Discrete), loss_pred(m, data));
  EXPECT_EQ(loss_ae_irregular(m, data, Formulation::Discrete), loss_ae(m, data));
  EXPECT_EQ(loss_lin_irregular(m, data, Formulation::Discrete), loss_lin(m, data));
  // exp(t L) at integer t reproduces K^t.
  EXPECT_NEAR(loss_pred_irregular(m, data, Formulation::Continuous), loss_pred(m, data), 1e-10);
}

TEST(Losses, MaskedRowsAreSkipped) {
  const KoopmanModel m = tiny_model();
  auto data = random_series(2, 8, 2, 40);
  data[0].mask[3] = data[0].mask[4] = false;
  data[1].mask[7] = false;
  data[0].values.row(3).setConstant(1e3);  // must not leak into any term
  const OracleLosses o = oracle_losses(m, data, [&](double s) {
    return koopman::testing::loop_power(m.k, static_cast<int>(std::lround(s)));
  });
  EXPECT_NEAR(loss_pred_irregular(m, data, Formulation::Discrete), o.pred, 1e-12 * o.pred);
  EXPECT_NEAR(loss_ae_irregular(m, data, Formulation::Discrete), o.ae, 1e-12 * o.ae);
  EXPECT_NEAR(loss_lin_irregular(m, data, Formulation::Discrete), o.lin, 1e-12 * o.lin);
  EXPECT_THROW(loss_pred(m, data), Error);
}

TEST(Losses, DroppedRowsEqualMaskedRowsInDiscreteForm) {
  const KoopmanModel m = tiny_model();
  const auto full = random_series(1, 9, 2, 50);
  std::vector<bool> keep(9, true);
  keep[2] = keep[5] = keep[6] = false;
  TimeSeries masked = full[0];
  masked.mask = keep;
  for (Eigen::Index t = 0; t < 9; ++t) {
    if (!keep[static_cast<std::size_t>(t)]) masked.values.row(t).setZero();
  }
  const std::vector<TimeSeries> a = {masked};
  const std::vector<TimeSeries> b = {subsample(full[0], keep)};
  EXPECT_EQ(loss_pred_irregular(m, a, Formulation::Discrete), loss_pred_irregular(m, b, Formulation::Discrete));
  EXPECT_EQ(loss_lin_irregular(m, a, Formulation::Discrete), loss_lin_irregular(m, b, Formulation::Discrete));
}

TEST(Losses, ContinuousIrregularMatchesExponentialOracle) {
  KoopmanModel m = tiny_model(2, 3);
  const Matrix l0 = random_matrix(3, 3, 60, 0.2);
  m.k = series_exp(l0);
  m.native_frequency = 2.0;
  TimeSeries s;
  s.times = {0.0, 0.15, 0.6, 0.65, 1.4};
  s.values = random_matrix(5, 2, 61, 0.5);
  s.mask.assign(5, true);
  const std::vector<TimeSeries> data = {s};
  const OracleLosses o = oracle_losses(m, data, [&](double steps) { return series_exp(Matrix(steps * l0)); });
  EXPECT_NEAR(loss_pred_irregular(m, data, Formulation::Continuous), o.pred, 1e-10 * o.pred);
  EXPECT_NEAR(loss_lin_irregular(m, data, Formulation::Continuous), o.lin, 1e-10 * o.lin);
  EXPECT_NEAR(loss_ae_irregular(m, data, Formulation::Continuous), o.ae, 1e-12 * o.ae);
  try {
    loss_pred_irregular(m, data, Formulation::Discrete);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::IrregularInput);
  }
}

TEST(Objective, WeightedCombinationOfTerms) {
  const KoopmanModel m = tiny_model();
  const auto data = random_series(4, 10, 2, 70);
  TrainConfig c = small_config();
  c.weights = {0.7, 1.3, 2.0, 0.05};
  const Trainer trainer(data, m, c);
  const auto windows = make_windows(data[0], 8, 4);
  const SeriesBatch batch = make_batch(windows, 1.0);
  ParameterStore trainable = m.params;
  trainable.set(kEvolutionK, m.k);
  LossValues terms;
  const double total = trainer.objective(trainable, batch, nullptr, &terms);
  const double b = static_cast<double>(batch.size);
  EXPECT_NEAR(total, (0.7 * terms.pred + 1.3 * terms.ae + 2.0 * terms.lin) / b + 0.05 * terms.orth, 1e-13 * total);
  EXPECT_NEAR(terms.orth, orthogonality_defect(m.k), 1e-14);
}

TEST(Objective, GradientsMatchFiniteDifferences) {
  for (Formulation f : {Formulation::Discrete, Formulation::Continuous}) {
    const KoopmanModel m = tiny_model(2, 3, {4}, Activation::HyperbolicTangent);
    auto data = random_series(3, 6, 2, 80);
    data[1].mask[2] = false;
    TrainConfig c = small_config();
    c.window = 6;
    c.formulation = f;
    const Trainer trainer(data, m, c);
    const SeriesBatch batch = make_batch(data, 1.0);
    ParameterStore trainable = m.params;
    if (f == Formulation::Discrete) {
      trainable.set(kEvolutionK, m.k);
    } else {
      trainable.set(kEvolutionL, matrix_log_principal(m.k).entries);
    }
    const LossWithGradient loss = [&](const ParameterStore& p, ParameterStore* g) {
      return trainer.objective(p, batch, g);
    };
    const GradientReport r = gradient_check(loss, trainable, 1e-6);
    EXPECT_LE(r.max_relative_error, 1e-5) << to_string(f);
  }
}

TEST(Windows, StrideAndObservedStart) {
  TimeSeries s = TimeSeries::regular(random_matrix(10, 1, 5), 0.5);
  const auto w = make_windows(s, 4, 2);
  ASSERT_EQ(w.size(), 4u);  // starts 0, 2, 4, 6
  EXPECT_EQ(w[1].values, s.values.middleRows(2, 4));
  EXPECT_EQ(w[1].times, (std::vector<double>{0.0, 0.5, 1.0, 1.5}));
  s.mask[2] = false;
  const auto shifted = make_windows(s, 4, 2);
  ASSERT_EQ(shifted.size(), 4u);
  EXPECT_EQ(shifted[1].values, s.values.middleRows(3, 4));
}

TEST(Trainer, ReducesLossOnRotation) {
  const auto data = rotation_data(12, 30, 1);
  ModelConfig mc;
  mc.input_dim = 2;
  mc.latent_dim = 2;
  mc.hidden = {16};
  const KoopmanModel init = make_model(mc, 4);
  TrainConfig c = small_config();
  c.epochs = 40;
  c.window = 10;
  const TrainResult r = train(data, init, c);
  ASSERT_EQ(r.history.epochs.size(), 40u);
  EXPECT_LT(r.history.epochs.back().validation, 0.2 * r.history.epochs.front().validation);
}

TEST(Trainer, DeterministicAndResumable) {
  const auto data = rotation_data(8, 20, 2);
  const KoopmanModel init = tiny_model(2, 3);
  TrainConfig c = small_config();
  c.epochs = 4;
  const TrainResult a = train(data, init, c);
  const TrainResult b = train(data, init, c);
  EXPECT_EQ(a.model.params.flatten(), b.model.params.flatten());
  EXPECT_EQ(a.model.k, b.model.k);

  Trainer first(data, init, c);
  first.run(2);
  Trainer second(data, init, c);
  second.resume(first.model(), first.history(), first.state());
  second.run();
  EXPECT_EQ(second.epochs_done(), 4);
  EXPECT_EQ(second.model().params.flatten(), a.model.params.flatten());
  EXPECT_EQ(second.model().k, a.model.k);
}

TEST(Trainer, DroppedRowsTrainLikeMaskedRows) {
  const auto full = rotation_data(6, 24, 3);
  std::vector<TimeSeries> dropped;
  std::vector<TimeSeries> masked;
  for (std::size_t i = 0; i < full.size(); ++i) {
    std::vector<bool> keep = random_keep_mask(full[i].mask, 0.6, 90 + i);
    keep.back() = true;  // rows after the last kept one cannot be recovered from a dropped series
    dropped.push_back(subsample(full[i], keep));
    TimeSeries m = full[i];
    m.mask = keep;
    for (Eigen::Index t = 0; t < m.length(); ++t) {
      if (!keep[static_cast<std::size_t>(t)]) m.values.row(t).setZero();
    }
    masked.push_back(m);
  }
  TrainConfig c = small_config();
  c.epochs = 3;
  const KoopmanModel init = tiny_model(2, 3);
  const TrainResult a = train(dropped, init, c);
  const TrainResult b = train(masked, init, c);
  EXPECT_EQ(a.model.params.flatten(), b.model.params.flatten());
  EXPECT_EQ(a.model.k, b.model.k);
}

TEST(Trainer, PlateauDecaysLearningRate) {
  const auto data = rotation_data(6, 20, 4);
  TrainConfig c = small_config();
  c.learning_rate = 1e-14;  // too small to improve validation by the relative threshold
  c.min_learning_rate = 0.0;
  c.plateau_patience = 2;
  c.epochs = 4;
  const TrainResult r = train(data, tiny_model(2, 3), c);
  EXPECT_EQ(r.history.epochs[0].learning_rate, 1e-14);
  EXPECT_EQ(r.history.epochs[2].learning_rate, 1e-14);
  EXPECT_DOUBLE_EQ(r.history.epochs[3].learning_rate, 0.3e-14);
}

TEST(Trainer, CurriculumGrowsWindow) {
  const auto data = rotation_data(6, 30, 5);
  TrainConfig c = small_config();
  c.window = 20;
  c.curriculum_start = 4;
  c.curriculum_epochs = 4;
  c.epochs = 6;
  const TrainResult r = train(data, tiny_model(2, 3), c);
  std::vector<int> windows;
  for (const auto& e : r.history.epochs) windows.push_back(e.window);
  EXPECT_EQ(windows, (std::vector<int>{4, 8, 12, 16, 20, 20}));
}

TEST(Trainer, ConfigurationErrors) {
  const auto data = rotation_data(4, 10, 6);
  TrainConfig c = small_config();
  c.window = 12;  // longer than the 11-row series
  try {
    Trainer t(data, tiny_model(2, 3), c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidArgument);
  }
  c.window = 1;
  EXPECT_THROW(Trainer(data, tiny_model(2, 3), c), Error);
  EXPECT_THROW(Trainer({}, tiny_model(2, 3), small_config()), Error);
  EXPECT_THROW(Trainer(data, tiny_model(3, 3), small_config()), Error);
}
