#pragma once

// Checkpoint document: model specs, parameters, K, training config, loss
// history, seed and (optionally) optimizer state for resuming.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "koopman/error.hpp"
#include "koopman/model.hpp"
#include "koopman/training.hpp"

namespace koopman {

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  KoopmanModel model;
  TrainConfig config;
  TrainHistory history;
  std::uint64_t seed = 0;
  std::optional<TrainerState> trainer_state;
};

namespace detail {

using nlohmann::json;

inline json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(rows)}};
}

inline Matrix matrix_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const json& data = j.at("data");
  if (rows < 0 || cols < 0 || data.size() != static_cast<std::size_t>(rows)) fail(ErrorKind::Corrupt, "matrix shape");
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const json& row = data.at(static_cast<std::size_t>(i));
    if (row.size() != static_cast<std::size_t>(cols)) fail(ErrorKind::Corrupt, "matrix row length");
    for (Eigen::Index j2 = 0; j2 < cols; ++j2) m(i, j2) = row.at(static_cast<std::size_t>(j2)).get<double>();
  }
  return m;
}

inline json store_to_json(const std::map<std::string, Matrix>& store) {
  json out = json::object();
  for (const auto& [name, m] : store) out[name] = matrix_to_json(m);
  return out;
}

inline std::map<std::string, Matrix> store_from_json(const json& j) {
  std::map<std::string, Matrix> out;
  for (const auto& [name, m] : j.items()) out.emplace(name, matrix_from_json(m));
  return out;
}

inline json spec_to_json(const MLPSpec& s) {
  return json{{"layer_sizes", s.layer_sizes}, {"activation", std::string(to_string(s.activation))}};
}

inline MLPSpec spec_from_json(const json& j) {
  MLPSpec s;
  s.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
  s.activation = parse_activation(j.at("activation").get<std::string>());
  return s;
}

inline json config_to_json(const TrainConfig& c) {
  return json{{"weights", {{"pred", c.weights.pred}, {"ae", c.weights.ae}, {"lin", c.weights.lin}, {"orth", c.weights.orth}}},
              {"learning_rate", c.learning_rate},
              {"lr_decay", c.lr_decay},
              {"plateau_patience", c.plateau_patience},
              {"min_learning_rate", c.min_learning_rate},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"window", c.window},
              {"stride", c.stride},
              {"seed", c.seed},
              {"formulation", std::string(to_string(c.formulation))},
              {"validation_fraction", c.validation_fraction},
              {"curriculum_start", c.curriculum_start},
              {"curriculum_epochs", c.curriculum_epochs}};
}

inline TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  const json& w = j.at("weights");
  c.weights = {w.at("pred").get<double>(), w.at("ae").get<double>(), w.at("lin").get<double>(), w.at("orth").get<double>()};
  c.learning_rate = j.at("learning_rate").get<double>();
  c.lr_decay = j.at("lr_decay").get<double>();
  c.plateau_patience = j.at("plateau_patience").get<int>();
  c.min_learning_rate = j.at("min_learning_rate").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.window = j.at("window").get<int>();
  c.stride = j.at("stride").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.formulation = parse_formulation(j.at("formulation").get<std::string>());
  c.validation_fraction = j.at("validation_fraction").get<double>();
  c.curriculum_start = j.at("curriculum_start").get<int>();
  c.curriculum_epochs = j.at("curriculum_epochs").get<int>();
  return c;
}

// Non-finite values (e.g. an unset best validation loss) are stored as null.
inline json real_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
inline double real_from(const json& j, double fallback) { return j.is_null() ? fallback : j.get<double>(); }

inline json history_to_json(const TrainHistory& h) {
  json out = json::array();
  for (const auto& e : h.epochs) {
    out.push_back(json{{"epoch", e.epoch},
                       {"pred", e.pred},
                       {"ae", e.ae},
                       {"lin", e.lin},
                       {"orth", e.orth},
                       {"total", e.total},
                       {"validation", real_or_null(e.validation)},
                       {"learning_rate", e.learning_rate},
                       {"window", e.window}});
  }
  return out;
}

inline TrainHistory history_from_json(const json& j) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  TrainHistory h;
  for (const auto& e : j) {
    h.epochs.push_back({e.at("epoch").get<int>(), e.at("pred").get<double>(), e.at("ae").get<double>(),
                        e.at("lin").get<double>(), e.at("orth").get<double>(), e.at("total").get<double>(),
                        real_from(e.at("validation"), nan), e.at("learning_rate").get<double>(),
                        e.at("window").get<int>()});
  }
  return h;
}

}  // namespace detail

inline nlohmann::json model_to_json(const KoopmanModel& m) {
  return {{"encoder", detail::spec_to_json(m.encoder_spec)},
          {"decoder", detail::spec_to_json(m.decoder_spec)},
          {"parameters", detail::store_to_json(m.params.tensors())},
          {"K", detail::matrix_to_json(m.k)},
          {"augmented", m.augmented},
          {"native_frequency", m.native_frequency}};
}

inline KoopmanModel model_from_json(const nlohmann::json& j) {
  KoopmanModel m;
  m.encoder_spec = detail::spec_from_json(j.at("encoder"));
  m.decoder_spec = detail::spec_from_json(j.at("decoder"));
  for (auto& [name, t] : detail::store_from_json(j.at("parameters"))) m.params.set(name, std::move(t));
  m.k = detail::matrix_from_json(j.at("K"));
  m.augmented = j.at("augmented").get<bool>();
  m.native_frequency = j.at("native_frequency").get<double>();
  return m;
}

inline std::string checkpoint_to_string(const Checkpoint& cp) {
  nlohmann::json j = {{"format_version", kCheckpointFormatVersion},
                      {"model", model_to_json(cp.model)},
                      {"config", detail::config_to_json(cp.config)},
                      {"history", detail::history_to_json(cp.history)},
                      {"seed", cp.seed}};
  if (cp.trainer_state) {
    const TrainerState& s = *cp.trainer_state;
    j["trainer_state"] = {{"epoch", s.epoch},
                          {"learning_rate", s.learning_rate},
                          {"best_validation", detail::real_or_null(s.best_validation)},
                          {"stale_epochs", s.stale_epochs},
                          {"adam_steps", s.optimizer.steps},
                          {"adam_first_moment", detail::store_to_json(s.optimizer.first_moment)},
                          {"adam_second_moment", detail::store_to_json(s.optimizer.second_moment)}};
  }
  return j.dump(1) + "\n";
}

inline Checkpoint checkpoint_from_string(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Corrupt, std::string("checkpoint is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("format_version")) fail(ErrorKind::Corrupt, "checkpoint: missing format_version");
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
      fail(ErrorKind::FormatVersionMismatch, "checkpoint format version " + std::to_string(version) + ", expected " +
                                                 std::to_string(kCheckpointFormatVersion));
    }
    Checkpoint cp;
    cp.model = model_from_json(j.at("model"));
    cp.config = detail::config_from_json(j.at("config"));
    cp.history = detail::history_from_json(j.at("history"));
    cp.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("trainer_state")) {
      const auto& s = j.at("trainer_state");
      TrainerState st;
      st.epoch = s.at("epoch").get<int>();
      st.learning_rate = s.at("learning_rate").get<double>();
      st.best_validation = detail::real_from(s.at("best_validation"), std::numeric_limits<double>::infinity());
      st.stale_epochs = s.at("stale_epochs").get<int>();
      st.optimizer.steps = s.at("adam_steps").get<long>();
      st.optimizer.first_moment = detail::store_from_json(s.at("adam_first_moment"));
      st.optimizer.second_moment = detail::store_from_json(s.at("adam_second_moment"));
      cp.trainer_state = std::move(st);
    }
    cp.model.validate();
    return cp;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Corrupt, std::string("checkpoint: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::FormatVersionMismatch) throw;
    fail(ErrorKind::Corrupt, std::string("checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& cp) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::InvalidArgument, "cannot write " + path.string());
  out << checkpoint_to_string(cp);
  if (!out) fail(ErrorKind::InvalidArgument, "failed writing " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::InvalidArgument, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_string(buf.str());
}

}  // namespace koopman
