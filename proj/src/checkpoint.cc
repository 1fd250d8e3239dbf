// Copyright 2026 The septic_rl Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "septic_rl/checkpoint.h"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "septic_rl/common.h"

namespace septic_rl {

using nlohmann::json;

bool Checkpoint::operator==(const Checkpoint& o) const {
  return config.dump() == o.config.dump() && scaler == o.scaler && binning == o.binning &&
         main == o.main && target == o.target && adam.step == o.adam.step &&
         adam.first_moment == o.adam.first_moment && adam.second_moment == o.adam.second_moment &&
         test_patient_ids == o.test_patient_ids && data_checksum == o.data_checksum &&
         batches_completed == o.batches_completed;
}

namespace {

json matrix_json(const Matrix& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

void matrix_from(const json& j, Matrix& m, const std::string& name) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  if (rows != m.rows() || cols != m.cols())
    throw ValidationError("checkpoint tensor " + name + " has shape " + std::to_string(rows) + "x" +
                          std::to_string(cols) + ", expected " + std::to_string(m.rows()) + "x" +
                          std::to_string(m.cols()));
  const auto& data = j.at("data");
  if (data.size() != static_cast<std::size_t>(rows * cols))
    throw ValidationError("checkpoint tensor " + name + " has the wrong element count");
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) {
      if (!data[k].is_number()) throw ValidationError("checkpoint tensor " + name + " is not numeric");
      m(r, c) = data[k++].get<double>();
    }
  if (!m.allFinite()) throw ValidationError("checkpoint tensor " + name + " is not finite");
}

json shape_json(const NetworkShape& s) {
  return {{"inputs", s.inputs},           {"hidden", s.hidden},
          {"outputs", s.outputs},         {"head", s.head == Head::kDueling ? "dueling" : "linear"},
          {"bn_momentum", s.bn_momentum}, {"bn_epsilon", s.bn_epsilon}};
}

NetworkShape shape_from(const json& j) {
  NetworkShape s;
  s.inputs = j.at("inputs").get<int>();
  s.hidden = j.at("hidden").get<int>();
  s.outputs = j.at("outputs").get<int>();
  const auto head = j.at("head").get<std::string>();
  if (head == "dueling") s.head = Head::kDueling;
  else if (head == "linear") s.head = Head::kLinear;
  else throw ValidationError("unknown network head '" + head + "'");
  s.bn_momentum = j.at("bn_momentum").get<double>();
  s.bn_epsilon = j.at("bn_epsilon").get<double>();
  if (s.inputs != kNumFeatures || s.outputs != kNumActions || s.hidden < 2)
    throw ValidationError("checkpoint network shape is invalid");
  return s;
}

json tensors_json(const std::vector<std::pair<std::string, const Matrix*>>& tensors) {
  json j = json::object();
  for (const auto& [name, m] : tensors) j[name] = matrix_json(*m);
  return j;
}

void tensors_from(const json& j, std::vector<std::pair<std::string, Matrix*>> tensors,
                  const std::string& prefix) {
  for (auto& [name, m] : tensors) {
    if (!j.contains(name)) throw ValidationError("checkpoint is missing tensor " + prefix + name);
    matrix_from(j.at(name), *m, prefix + name);
  }
}

json network_json(const NetworkParams& p) {
  return {{"shape", shape_json(p.shape)},
          {"trainable", tensors_json(p.trainable())},
          {"statistics", tensors_json(p.statistics())}};
}

NetworkParams network_from(const json& j, const std::string& prefix) {
  NetworkParams p = NetworkParams::zeros(shape_from(j.at("shape")));
  tensors_from(j.at("trainable"), p.trainable(), prefix);
  tensors_from(j.at("statistics"), p.statistics(), prefix);
  return p;
}

}  // namespace

std::string checkpoint_to_json(const Checkpoint& c) {
  json j;
  j["schema_version"] = kCheckpointSchemaVersion;
  j["config"] = c.config.dump();
  j["config_hash"] = c.config.hash();
  j["scaler"] = {{"mean", c.scaler.mean}, {"stddev", c.scaler.stddev}};
  j["binning"] = {{"iv_thresholds", c.binning.iv_thresholds},
                  {"vp_thresholds", c.binning.vp_thresholds}};
  j["main"] = network_json(c.main);
  j["target"] = network_json(c.target);
  j["adam"] = {{"step", c.adam.step},
               {"first_moment", tensors_json(c.adam.first_moment.trainable())},
               {"second_moment", tensors_json(c.adam.second_moment.trainable())}};
  j["test_patient_ids"] = c.test_patient_ids;
  j["data_checksum"] = c.data_checksum;
  j["batches_completed"] = c.batches_completed;
  return j.dump(1) + "\n";
}

Checkpoint checkpoint_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != kCheckpointSchemaVersion)
      throw ValidationError("checkpoint schema version " + std::to_string(version) +
                            " is not supported (expected " +
                            std::to_string(kCheckpointSchemaVersion) + ")");
    Checkpoint c;
    std::istringstream cfg(j.at("config").get<std::string>());
    c.config = ToolkitConfig::parse(cfg, "checkpoint config");
    if (c.config.hash() != j.at("config_hash").get<std::string>())
      throw ValidationError("checkpoint config hash does not match its config");
    c.scaler.mean = j.at("scaler").at("mean").get<std::array<double, kNumFeatures>>();
    c.scaler.stddev = j.at("scaler").at("stddev").get<std::array<double, kNumFeatures>>();
    c.binning.iv_thresholds = j.at("binning").at("iv_thresholds").get<std::array<double, 3>>();
    c.binning.vp_thresholds = j.at("binning").at("vp_thresholds").get<std::array<double, 3>>();
    c.binning.validate();
    c.main = network_from(j.at("main"), "main.");
    c.target = network_from(j.at("target"), "target.");
    if (!(c.main.shape == c.target.shape))
      throw ValidationError("checkpoint main and target networks differ in shape");
    c.adam = AdamState::for_params(c.main);
    c.adam.step = j.at("adam").at("step").get<long long>();
    tensors_from(j.at("adam").at("first_moment"), c.adam.first_moment.trainable(), "adam.m.");
    tensors_from(j.at("adam").at("second_moment"), c.adam.second_moment.trainable(), "adam.v.");
    c.test_patient_ids = j.at("test_patient_ids").get<std::vector<std::string>>();
    c.data_checksum = j.at("data_checksum").get<std::string>();
    c.batches_completed = j.at("batches_completed").get<long long>();
    return c;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string text = checkpoint_to_json(ckpt);
  write_file_atomic(path, [&](std::ostream& out) { out << text; });
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

}  // namespace septic_rl
