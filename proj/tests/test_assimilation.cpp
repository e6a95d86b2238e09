#include <gtest/gtest.h>

#include "support.hpp"

using namespace koopman;
using koopman::testing::identity_model;
using koopman::testing::random_matrix;
using koopman::testing::tiny_model;

namespace {

Observations random_observations(int height, int width, int channels, int frames, std::uint64_t seed) {
  Observations o;
  o.height = height;
  o.width = width;
  for (int t = 0; t < frames; ++t) o.frames.push_back(random_matrix(channels, height * width, seed + t, 0.5));
  o.mask.assign(static_cast<std::size_t>(frames), true);
  return o;
}

/// Rotating 2-channel field: pixel j starts at its own point and every pixel turns by theta per frame.
Observations rotating_field(int pixels, int frames, double theta) {
  Observations o;
  o.width = pixels;
  Matrix x = random_matrix(2, pixels, 5);
  for (int t = 0; t < frames; ++t) {
    o.frames.push_back(x);
    x = rotation2(theta) * x;
  }
  o.mask.assign(static_cast<std::size_t>(frames), true);
  return o;
}

double loop_spatial(const Matrix& frame, int height, int width) {
  double total = 0.0;
  for (Eigen::Index c = 0; c < frame.rows(); ++c) {
    for (int r = 0; r < height; ++r) {
      for (int col = 0; col < width; ++col) {
        const double v = frame(c, r * width + col);
        if (col + 1 < width) total += std::pow(frame(c, r * width + col + 1) - v, 2);
        if (r + 1 < height) total += std::pow(frame(c, (r + 1) * width + col) - v, 2);
      }
    }
  }
  return total;
}

GradientReport check_latent_cost(const AssimilationProblem& p, const Matrix& z0) {
  ParameterStore store = p.model.params;
  store.set("K", p.model.k);
  store.set("z0", z0);
  const LossWithGradient loss = [&](const ParameterStore& s, ParameterStore* grad) {
    ad::Tape tape;
    const BoundParameters b(tape, s, [](const std::string&) { return true; });
    const ad::Var c = constrained_cost(tape, b.at("z0"), b, p);
    if (grad) {
      tape.backward(c);
      *grad = b.gradients(tape);
      // The encoder does not enter the latent cost.
      for (const auto& [name, m] : s) {
        if (name.rfind(kEncoder, 0) == 0) grad->set(name, Matrix::Zero(m.rows(), m.cols()));
      }
    }
    return c.scalar();
  };
  return gradient_check(loss, store, 1e-6);
}

}  // namespace

TEST(Priors, SpatialOperatorMatchesLoop) {
  const auto d = spatial_difference_operator(3, 4);
  EXPECT_EQ(d.rows(), 12);
  EXPECT_EQ(d.cols(), 3 * 3 + 2 * 4);
  const Matrix f = random_matrix(2, 12, 1);
  EXPECT_NEAR(tikhonov_spatial(f, 3, 4), loop_spatial(f, 3, 4), 1e-12);
  EXPECT_EQ(tikhonov_spatial(Matrix::Constant(2, 12, 0.7), 3, 4), 0.0);
  EXPECT_THROW(tikhonov_spatial(f, 3, 3), Error);
}

TEST(Priors, TemporalDifferences) {
  Matrix v(3, 2);
  v << 0, 0, 1, 2, 1, 5;
  EXPECT_DOUBLE_EQ(tikhonov_temporal(v), 1 + 4 + 0 + 9);
  EXPECT_EQ(tikhonov_temporal(Matrix(Matrix::Ones(1, 4))), 0.0);
}

TEST(Metrics, MaskedMse) {
  Matrix p(2, 2);
  p << 1, 2, 3, 4;
  Matrix t = Matrix::Zero(2, 2);
  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> m(2, 2);
  m << true, false, false, true;
  EXPECT_DOUBLE_EQ(masked_mse(p, t, m), (1.0 + 16.0) / 2.0);
  m.setConstant(false);
  try {
    masked_mse(p, t, m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DegenerateMask);
  }
  const std::vector<Matrix> pred = {p, p, Matrix::Zero(2, 2)};
  const std::vector<Matrix> truth = {t, t, t};
  EXPECT_DOUBLE_EQ(masked_mse(pred, truth, {false, true, true}), 30.0 / 8.0);
}

TEST(Periodic, AlphaZeroGivesClassMeans) {
  Observations o = random_observations(1, 2, 1, 7, 10);
  const std::vector<Matrix> p = periodic_baseline(o, 3, 0.0, 9);
  ASSERT_EQ(p.size(), 9u);
  EXPECT_LE((p[0] - (o.frames[0] + o.frames[3] + o.frames[6]) / 3.0).norm(), 1e-15);
  EXPECT_LE((p[1] - (o.frames[1] + o.frames[4]) / 2.0).norm(), 1e-15);
  EXPECT_EQ(p[7], p[1]);

  // Residue 1 never observed: linear interpolation between residues 0 and 2.
  o.mask = {true, false, true, true, false, true, false};
  const std::vector<Matrix> q = periodic_baseline(o, 3, 0.0);
  EXPECT_LE((q[1] - 0.5 * (q[0] + q[2])).norm(), 1e-15);
}

TEST(Periodic, SmoothedSolutionIsStationary) {
  Observations o = random_observations(2, 2, 2, 11, 20);
  o.mask[4] = false;
  const int period = 4;
  const double alpha = 0.7;
  const std::vector<Matrix> p = periodic_baseline(o, period, alpha);
  const std::vector<Matrix> slots(p.begin(), p.begin() + period);
  ad::Tape tape;
  const ad::Var pattern = tape.variable(stack_frames(slots));
  const ad::Var cost = periodic_cost(tape, pattern, o, period, alpha);
  tape.backward(cost);
  EXPECT_LE(tape.grad(pattern).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Periodic, CostGradient) {
  const Observations o = random_observations(1, 3, 2, 8, 30);
  ParameterStore s;
  s.set("p", random_matrix(2, 3 * 5, 31));
  const LossWithGradient loss = [&](const ParameterStore& q, ParameterStore* grad) {
    ad::Tape tape;
    const BoundParameters b(tape, q, [](const std::string&) { return true; });
    const ad::Var c = periodic_cost(tape, b.at("p"), o, 5, 0.4);
    if (grad) {
      tape.backward(c);
      *grad = b.gradients(tape);
    }
    return c.scalar();
  };
  EXPECT_LE(gradient_check(loss, s, 1e-6).max_relative_error, 1e-6);
}

TEST(Periodic, Errors) {
  Observations o = random_observations(1, 1, 1, 4, 40);
  EXPECT_THROW(periodic_baseline(o, 1, 0.0), Error);
  o.mask.assign(4, false);
  try {
    periodic_baseline(o, 2, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NoObservations);
  }
}

TEST(WeakCost, GradientMatchesFiniteDifferences) {
  AssimilationProblem p;
  p.observations = random_observations(2, 2, 2, 5, 50);
  p.observations.mask[2] = false;
  p.model = tiny_model(2, 3, {4}, Activation::HyperbolicTangent);
  p.mode = AssimilationMode::Weak;
  p.alpha = 0.5;
  p.beta = 0.3;
  p.temporal_weight = 0.2;
  ParameterStore s;
  s.set("x", random_matrix(2, 4 * 5, 51, 0.5));
  const LossWithGradient loss = [&](const ParameterStore& q, ParameterStore* grad) {
    ad::Tape tape;
    const ad::Var x = tape.variable(q.at("x"));
    const ad::Var c = weak_cost(tape, x, p);
    if (grad) {
      tape.backward(c);
      grad->set("x", tape.grad(x));
    }
    return c.scalar();
  };
  EXPECT_LE(gradient_check(loss, s, 1e-6).max_relative_error, 1e-6);
}

TEST(LatentCost, GradientMatchesFiniteDifferences) {
  for (bool augmented : {false, true}) {
    AssimilationProblem p;
    p.observations = random_observations(1, 3, 2, 6, 60);
    p.observations.mask[1] = false;
    p.model = tiny_model(augmented ? 4 : 2, 3, {5}, Activation::SmoothRectifier, 61);
    p.model.augmented = augmented;
    p.beta = 0.2;
    p.temporal_weight = 0.1;
    EXPECT_LE(check_latent_cost(p, random_matrix(3, 3, 62, 0.5)).max_relative_error, 1e-6) << augmented;
  }
}

TEST(Constrained, RecoversLinearTrajectory) {
  AssimilationProblem p;
  const Observations truth = rotating_field(3, 12, 0.3);
  p.observations = truth.with_mask({false, true, false, true, true, false, false, true, false, false, true, false});
  p.model = identity_model(rotation2(0.3));
  p.iterations = 800;
  p.z_learning_rate = 2e-2;
  const AssimilationResult r = assimilate(p);
  ASSERT_EQ(r.cost_history.size(), 801u);
  EXPECT_LT(r.final_cost(), 1e-8 * r.initial_cost());
  std::vector<bool> all(12, true);
  EXPECT_LT(masked_mse(r.trajectory, truth.frames, all), 1e-8);
  EXPECT_FALSE(r.fine_tuned_model.has_value());
}

TEST(Constrained, AugmentedModelDecodesFirstFrameFromDifference) {
  // Latent (x_{t+1}, x_{t+1} - x_t) evolves with [[A, 0], [A - I, 0]].
  const Matrix a = rotation2(0.25);
  Matrix k = Matrix::Zero(4, 4);
  k.topLeftCorner(2, 2) = a;
  k.bottomLeftCorner(2, 2) = a - Matrix::Identity(2, 2);
  KoopmanModel m = identity_model(k);
  m.augmented = true;
  const Observations truth = rotating_field(2, 8, 0.25);
  Matrix z0(4, 2);
  z0 << truth.frames[1], truth.frames[1] - truth.frames[0];
  const std::vector<Matrix> decoded = detail::decode_trajectory(m, z0, 8);
  ASSERT_EQ(decoded.size(), 8u);
  for (int t = 0; t < 8; ++t) EXPECT_LE((decoded[static_cast<std::size_t>(t)] - truth.frames[static_cast<std::size_t>(t)]).norm(), 1e-14);

  AssimilationProblem p;
  p.observations = truth.with_mask({true, false, true, false, false, true, false, true});
  p.model = m;
  p.iterations = 800;
  p.z_learning_rate = 2e-2;
  const AssimilationResult r = assimilate(p);
  EXPECT_LT(masked_mse(r.trajectory, truth.frames, std::vector<bool>(8, true)), 1e-8);
}

TEST(Joint, ZeroParameterRateEqualsConstrained) {
  AssimilationProblem p;
  p.observations = random_observations(2, 2, 2, 6, 70);
  p.observations.mask[3] = false;
  p.model = tiny_model(2, 3);
  p.iterations = 30;
  const AssimilationResult c = assimilate(p);
  p.mode = AssimilationMode::Joint;
  p.param_learning_rate = 0.0;
  const AssimilationResult j = assimilate(p);
  ASSERT_TRUE(j.fine_tuned_model.has_value());
  EXPECT_EQ(j.fine_tuned_model->k, p.model.k);
  EXPECT_EQ(j.cost_history, c.cost_history);
  for (std::size_t t = 0; t < c.trajectory.size(); ++t) EXPECT_EQ(j.trajectory[t], c.trajectory[t]);

  p.param_learning_rate = 1e-3;
  const AssimilationResult tuned = assimilate(p);
  EXPECT_NE(tuned.fine_tuned_model->k, p.model.k);
  EXPECT_EQ(tuned.fine_tuned_model->params.at("encoder.0.weight"), p.model.params.at("encoder.0.weight"));
  EXPECT_LT(tuned.final_cost(), tuned.initial_cost());
}

TEST(Weak, PureFidelityKeepsCressmanFillOnGaps) {
  AssimilationProblem p;
  p.observations = random_observations(1, 2, 2, 5, 80);
  p.observations.mask[2] = false;
  p.model = tiny_model();
  p.mode = AssimilationMode::Weak;
  p.iterations = 20;
  const AssimilationResult r = assimilate(p);
  const std::vector<Matrix> fill = cressman_fill(p.observations, 5, p.cressman_radius);
  EXPECT_EQ(r.trajectory[2], fill[2]);
  EXPECT_LE((r.trajectory[0] - p.observations.frames[0]).norm(), 1e-15);
  EXPECT_EQ(r.final_cost(), 0.0);
}

TEST(Weak, DynamicalPriorReducesCost) {
  AssimilationProblem p;
  p.observations = random_observations(2, 2, 2, 6, 90);
  p.observations.mask[1] = p.observations.mask[4] = false;
  p.model = tiny_model();
  p.mode = AssimilationMode::Weak;
  p.alpha = 1.0;
  p.beta = 0.1;
  p.iterations = 200;
  const AssimilationResult r = assimilate(p);
  EXPECT_LT(r.final_cost(), 0.5 * r.initial_cost());
}

TEST(Problem, ValidationErrors) {
  AssimilationProblem p;
  p.observations = random_observations(1, 2, 2, 4, 100);
  p.model = tiny_model(4, 3);
  p.model.augmented = true;
  p.mode = AssimilationMode::Weak;
  EXPECT_THROW(assimilate(p), Error);

  p.model = tiny_model();
  p.mode = AssimilationMode::Constrained;
  p.observations.mask.assign(4, false);
  try {
    assimilate(p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NoObservations);
  }

  p.observations.mask.assign(4, true);
  p.mode = AssimilationMode::Joint;
  p.param_learning_rate = 0.5 * p.z_learning_rate;
  EXPECT_THROW(assimilate(p), Error);

  p.mode = AssimilationMode::Constrained;
  p.horizon = 2;  // ends before the last observation
  EXPECT_THROW(assimilate(p), Error);
  EXPECT_THROW(parse_assimilation_mode("strong"), Error);
}
