#pragma once

// model.fvc: 8-byte magic "FVCKPT01", u64 header length, JSON header, then
// every tensor as raw little-endian float32 in param_layout order.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "flowcot/flowcodec.hpp"
#include "flowcot/model.hpp"
#include "flowcot/sequence.hpp"
#include "flowcot/tokenizer.hpp"
#include "flowcot/worldsim.hpp"

namespace flowcot {

struct Checkpoint {
  ModelParams<float> params;
  Layout layout = Layout::kInterleavedCot;
  int window = 2;
  std::int64_t step = 0;
  std::uint64_t codebook_hash = 0;
  WorldConfig world;
  FlowCodecConfig codec;
  bool blank_instruction = false;
  /// Every episode seed seen in training, across stages.
  std::vector<std::uint64_t> train_seeds;
};

std::uint64_t params_hash(const ModelParams<float>& p);

/// Written via a temporary file and rename so a crash never leaves a torn file.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws DataError on a malformed file or content hash mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Loads codebook.bin stored next to the checkpoint and checks its hash.
Codebook load_checkpoint_codebook(const std::filesystem::path& ckpt_path, const Checkpoint& ckpt);

}  // namespace flowcot
