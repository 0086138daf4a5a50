#pragma once

// JSON (de)serialization of every configuration struct. Readers are strict:
// unknown keys and wrongly typed values raise ConfigError.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "flowcot/flowcodec.hpp"
#include "flowcot/model.hpp"
#include "flowcot/training.hpp"
#include "flowcot/worldsim.hpp"

namespace flowcot {

using Json = nlohmann::ordered_json;

struct TokenizerConfig {
  int patch_size = 4;
  int max_entries = 512;
  friend bool operator==(const TokenizerConfig&, const TokenizerConfig&) = default;
};

/// Paths and sweep settings for the multi-run commands.
struct ExperimentConfig {
  std::string data;
  std::string codebook;
  std::string out;
  /// Initial checkpoint for policy fine-tuning; empty trains from scratch.
  std::string init;
  int episodes = 2000;
  std::uint64_t data_seed = 0;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::vector<double> fractions = {1.0, 0.5};
  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

struct RunConfig {
  WorldConfig world;
  FlowCodecConfig flow;
  TokenizerConfig tokenizer;
  ModelConfig model;
  TrainConfig train;
  /// Fine-tuning stage; its layout is always policy.
  TrainConfig policy = [] {
    TrainConfig t;
    t.layout = Layout::kPolicy;
    return t;
  }();
  ExperimentConfig experiment;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

Json to_json(const WorldConfig& c);
WorldConfig world_from_json(const Json& j);
Json to_json(const ModelConfig& c);  // without the vocabulary
ModelConfig model_from_json(const Json& j);
Json to_json(const VocabLayout& v);
VocabLayout vocab_from_json(const Json& j);
Json to_json(const TrainConfig& c);
TrainConfig train_from_json(const Json& j);
Json to_json(const RunConfig& c);
/// Missing sections and keys keep their defaults.
RunConfig run_config_from_json(const Json& j);

/// Reads and parses a config file. Throws ConfigError.
RunConfig load_run_config(const std::filesystem::path& path);
Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& j);

/// Applies FLOWCOT_SEED, when set, to the training seeds.
void apply_seed_override(RunConfig& c);

inline constexpr const char* kToolVersion = "flowcot 1.0.0";

}  // namespace flowcot
