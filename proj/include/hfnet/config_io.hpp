#pragma once

#include <optional>
#include <string>

#include <json.hpp>

#include "hfnet/complexity.hpp"
#include "hfnet/model.hpp"
#include "hfnet/synth.hpp"
#include "hfnet/train.hpp"

namespace hfnet {

using Json = nlohmann::ordered_json;

// Every parser rejects unknown keys and wrong types with ConfigError. Missing
// keys take the struct defaults; the writers always emit every field.

Json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const Json& j);

Json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const Json& j);

Json to_json(const DatasetSpec& s);
DatasetSpec dataset_spec_from_json(const Json& j);

Json to_json(const ArchChannelSpec& s);
ArchChannelSpec arch_spec_from_json(const Json& j);

/// A training run. `model` and `train` may be given inline or as paths
/// (relative to the document) in the source file; after resolution they are
/// always inline.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::optional<std::string> train_data;
  std::optional<std::string> val_data;
  std::optional<std::string> out_dir;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

Json to_json(const RunConfig& c);
/// `base_dir` anchors relative references.
RunConfig run_config_from_json(const Json& j, const std::string& base_dir);

/// Reads and parses a JSON file. Missing file -> ConfigError naming the path;
/// malformed JSON -> ConfigError with the parser's position.
Json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const Json& j);

RunConfig load_run_config(const std::string& path);

}  // namespace hfnet
