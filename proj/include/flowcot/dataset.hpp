#pragma once

// Dataset directory: manifest.json plus ep_<seed>/{frame_<t>.ppm,
// flow_<t>.f32, meta.json} for every kept episode.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "flowcot/worldsim.hpp"

namespace flowcot {

inline constexpr int kDatasetFormatVersion = 1;

struct DatasetManifest {
  int format_version = kDatasetFormatVersion;
  WorldConfig world;
  std::uint64_t seed_start = 0;
  /// Kept episodes in generation order (failed seeds are skipped).
  std::vector<std::uint64_t> seeds;
  std::vector<std::uint64_t> skipped;
  std::int64_t frames = 0;
  std::int64_t transitions = 0;
};

/// Seeds seed_start, seed_start + 1, ... until n successful episodes exist.
std::vector<std::uint64_t> successful_seeds(const WorldConfig& cfg, std::uint64_t seed_start, int n,
                                            std::vector<std::uint64_t>* skipped = nullptr);

DatasetManifest write_dataset(const std::filesystem::path& dir, const WorldConfig& cfg, int n_episodes,
                              std::uint64_t seed_start, int threads = 1);
DatasetManifest read_manifest(const std::filesystem::path& dir);
/// FNV-1a of the manifest file bytes.
std::uint64_t manifest_hash(const std::filesystem::path& dir);

void write_episode(const std::filesystem::path& ep_dir, const Episode& ep, const WorldConfig& cfg);
Episode read_episode(const std::filesystem::path& dir, std::uint64_t seed, const WorldConfig& cfg);
std::filesystem::path episode_dir(const std::filesystem::path& dir, std::uint64_t seed);

}  // namespace flowcot
