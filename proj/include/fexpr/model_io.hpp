// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fexpr/errors.hpp"
#include "fexpr/landmark_io.hpp"
#include "fexpr/neural_net.hpp"
#include "fexpr/pair_topology.hpp"

namespace fexpr {

/// A trained network plus everything needed to rebuild its input pipeline.
struct ModelArtifact {
  ModelParams params;
  std::vector<EmotionLabel> classes;
  LandmarkSubset subset;
  PairMode mode = PairMode::AUGrouped;
  std::uint64_t topology_fingerprint = 0;

  PairTopology topology() const { return enumerate_pairs(subset, mode); }
};

// File layout (little-endian):
//   8 bytes   magic "FEXPRMDL"
//   u32       format version
//   u64       header length H
//   H bytes   JSON header: config, classes, subset, mode, fingerprint, tensor table
//   f64[]     tensor data in tensor-table order, column-major per tensor
inline constexpr char kModelMagic[8] = {'F', 'E', 'X', 'P', 'R', 'M', 'D', 'L'};
inline constexpr std::uint32_t kModelFormatVersion = 1;

static_assert(std::endian::native == std::endian::little, "model files are written little-endian");

inline json model_config_to_json(const ModelConfig &c) {
  return json{{"feature_count", c.feature_count}, {"time_steps", c.time_steps},
              {"filters", c.filters},             {"kernel_size", c.kernel_size},
              {"dense_sizes", c.dense_sizes},     {"class_count", c.class_count},
              {"seed", c.seed},                   {"learning_rate", c.learning_rate},
              {"beta1", c.beta1},                 {"beta2", c.beta2},
              {"epsilon", c.epsilon},             {"batch_size", c.batch_size},
              {"epochs", c.epochs}};
}

inline ModelConfig model_config_from_json(const json &j) {
  ModelConfig c;
  c.feature_count = j.at("feature_count").get<Eigen::Index>();
  c.time_steps = j.at("time_steps").get<Eigen::Index>();
  c.filters = j.at("filters").get<Eigen::Index>();
  c.kernel_size = j.at("kernel_size").get<Eigen::Index>();
  c.dense_sizes = j.at("dense_sizes").get<std::vector<Eigen::Index>>();
  c.class_count = j.at("class_count").get<Eigen::Index>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.epsilon = j.at("epsilon").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.epochs = j.at("epochs").get<std::size_t>();
  return c;
}

inline void save_model(const ModelArtifact &model, const std::filesystem::path &path) {
  json tensors = json::array();
  for_each_tensor(
      [&](const std::string &name, const auto &t) {
        tensors.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
      },
      model.params);
  json classes = json::array();
  for (auto c : model.classes)
    classes.push_back(std::string(to_string(c)));
  const json header{{"format", "fexpr-model"},
                    {"version", kModelFormatVersion},
                    {"config", model_config_to_json(model.params.config)},
                    {"classes", std::move(classes)},
                    {"subset", subset_to_json(model.subset)},
                    {"mode", std::string(to_string(model.mode))},
                    {"topology_fingerprint", fingerprint_hex(model.topology_fingerprint)},
                    {"tensors", std::move(tensors)}};
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw IoError("cannot write model " + path.string());
  out.write(kModelMagic, sizeof kModelMagic);
  const std::uint32_t version = kModelFormatVersion;
  out.write(reinterpret_cast<const char *>(&version), sizeof version);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char *>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for_each_tensor(
      [&](const std::string &, const auto &t) {
        out.write(reinterpret_cast<const char *>(t.data()),
                  static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.size())));
      },
      model.params);
  if (!out)
    throw IoError("write failure on " + path.string());
}

inline ModelArtifact load_model(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open model " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kModelMagic, sizeof magic) != 0)
    throw SchemaError(path.string() + " is not a model file");
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char *>(&version), sizeof version);
  in.read(reinterpret_cast<char *>(&len), sizeof len);
  if (!in || version != kModelFormatVersion)
    throw SchemaError("unsupported model format version " + std::to_string(version));
  if (len > (std::uint64_t{1} << 32))
    throw SchemaError("model header too large");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in)
    throw SchemaError("truncated model header");

  ModelArtifact model;
  json header;
  try {
    header = json::parse(text);
    model.params = init_model(model_config_from_json(header.at("config")));
    for (const auto &c : header.at("classes"))
      model.classes.push_back(parse_emotion(c.get<std::string>()));
    model.subset = subset_from_json(header.at("subset"));
    model.mode = parse_pair_mode(header.at("mode").get<std::string>());
    model.topology_fingerprint = parse_fingerprint(header.at("topology_fingerprint").get<std::string>());
  } catch (const json::exception &e) {
    throw SchemaError(std::string("model header: ") + e.what());
  }

  const auto &table = header.at("tensors");
  std::size_t k = 0;
  for_each_tensor(
      [&](const std::string &name, auto &t) {
        if (k >= table.size() || table[k].at("name").get<std::string>() != name ||
            table[k].at("rows").get<Eigen::Index>() != t.rows() ||
            table[k].at("cols").get<Eigen::Index>() != t.cols())
          throw SchemaError("model tensor table does not match its config at '" + name + "'");
        in.read(reinterpret_cast<char *>(t.data()),
                static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(t.size())));
        ++k;
      },
      model.params);
  if (!in || k != table.size())
    throw SchemaError("truncated model data in " + path.string());
  if (static_cast<std::size_t>(model.params.config.class_count) != model.classes.size())
    throw SchemaError("model class list does not match class_count");
  if (model.topology().fingerprint() != model.topology_fingerprint)
    throw SchemaError("model topology fingerprint does not match its subset and mode");
  return model;
}

} // namespace fexpr
