#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "support.hpp"

using namespace koopman;
using koopman::testing::tiny_model;

namespace {

Checkpoint trained_checkpoint() {
  RotationDataset d;
  d.trajectories = 6;
  d.steps = 20;
  TrainConfig c;
  c.epochs = 3;
  c.batch_size = 4;
  c.window = 8;
  c.seed = 9;
  const KoopmanModel init = tiny_model(2, 3);
  Trainer t(generate_rotation(d), init, c);
  t.run();
  Checkpoint cp;
  cp.model = t.model();
  cp.model.native_frequency = 5.0;
  cp.config = c;
  cp.history = t.history();
  cp.seed = 123456789012345ULL;
  cp.trainer_state = t.state();
  return cp;
}

ErrorKind kind_of(const std::string& text) {
  try {
    checkpoint_from_string(text);
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::InvalidArgument;  // unreachable when the load fails as expected
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  const Checkpoint cp = trained_checkpoint();
  const std::string text = checkpoint_to_string(cp);
  const Checkpoint back = checkpoint_from_string(text);
  EXPECT_EQ(back.model.params.flatten(), cp.model.params.flatten());
  EXPECT_EQ(back.model.k, cp.model.k);
  EXPECT_EQ(back.model.encoder_spec.layer_sizes, cp.model.encoder_spec.layer_sizes);
  EXPECT_EQ(back.model.native_frequency, 5.0);
  EXPECT_EQ(back.seed, cp.seed);
  EXPECT_EQ(back.config.window, 8);
  ASSERT_EQ(back.history.epochs.size(), 3u);
  EXPECT_EQ(back.history.epochs[2].validation, cp.history.epochs[2].validation);
  ASSERT_TRUE(back.trainer_state.has_value());
  EXPECT_EQ(back.trainer_state->optimizer.steps, cp.trainer_state->optimizer.steps);
  EXPECT_EQ(back.trainer_state->optimizer.second_moment.at("K"), cp.trainer_state->optimizer.second_moment.at("K"));
  EXPECT_EQ(checkpoint_to_string(back), text);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "koopman_checkpoint_test.json";
  const Checkpoint cp = trained_checkpoint();
  save_checkpoint(path, cp);
  EXPECT_EQ(load_checkpoint(path).model.k, cp.model.k);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), Error);
}

TEST(Checkpoint, NonFiniteValuesStoredAsNull) {
  Checkpoint cp = trained_checkpoint();
  cp.trainer_state->best_validation = std::numeric_limits<double>::infinity();
  cp.history.epochs[0].validation = std::numeric_limits<double>::quiet_NaN();
  const std::string text = checkpoint_to_string(cp);
  EXPECT_NE(text.find("\"best_validation\": null"), std::string::npos);
  const Checkpoint back = checkpoint_from_string(text);
  EXPECT_TRUE(std::isinf(back.trainer_state->best_validation));
  EXPECT_TRUE(std::isnan(back.history.epochs[0].validation));
}

TEST(Checkpoint, TruncatedFileIsCorrupt) {
  const std::string text = checkpoint_to_string(trained_checkpoint());
  EXPECT_EQ(kind_of(text.substr(0, text.size() / 2)), ErrorKind::Corrupt);
  EXPECT_EQ(kind_of(""), ErrorKind::Corrupt);
  EXPECT_EQ(kind_of("{}"), ErrorKind::Corrupt);
}

TEST(Checkpoint, MissingFieldOrBadShapeIsCorrupt) {
  auto j = nlohmann::json::parse(checkpoint_to_string(trained_checkpoint()));
  j["model"].erase("K");
  EXPECT_EQ(kind_of(j.dump()), ErrorKind::Corrupt);

  j = nlohmann::json::parse(checkpoint_to_string(trained_checkpoint()));
  j["model"]["K"] = nlohmann::json::parse(checkpoint_to_string(trained_checkpoint()))["model"]["parameters"]["encoder.0.bias"];
  EXPECT_EQ(kind_of(j.dump()), ErrorKind::Corrupt);
}

TEST(Checkpoint, VersionMismatch) {
  auto j = nlohmann::json::parse(checkpoint_to_string(trained_checkpoint()));
  j["format_version"] = kCheckpointFormatVersion + 1;
  EXPECT_EQ(kind_of(j.dump()), ErrorKind::FormatVersionMismatch);
}
