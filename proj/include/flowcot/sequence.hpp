#pragma once

// Token sequence grammar for every training layout. All layouts share one
// vocabulary; they differ in block order and in which blocks are supervised.

#include <cstdint>
#include <string>
#include <vector>

#include "flowcot/flowcodec.hpp"
#include "flowcot/tokenizer.hpp"
#include "flowcot/vocab.hpp"
#include "flowcot/worldsim.hpp"

namespace flowcot {

enum class Layout : std::uint8_t { kInterleavedCot = 0, kGrouped, kFramesOnly, kNoFlowLoss, kPolicy };

/// CLI spelling: interleaved, grouped, frames-only, no-flow-loss, policy.
std::string layout_name(Layout l);
/// Throws ConfigError.
Layout parse_layout(const std::string& s);
inline bool is_wm_layout(Layout l) { return l != Layout::kPolicy; }
inline bool has_flow_blocks(Layout l) {
  return l == Layout::kInterleavedCot || l == Layout::kGrouped || l == Layout::kNoFlowLoss;
}

enum class BlockKind : std::uint8_t { kSpecial = 0, kText, kFrame, kFlow, kAction };

struct BlockTag {
  BlockKind kind = BlockKind::kSpecial;
  int t = 0;
  friend bool operator==(const BlockTag&, const BlockTag&) = default;
};

Segment segment_of(BlockKind k);

/// mask[i] = 1 means ids[i + 1] is a supervised target of position i.
struct TokenSequence {
  std::vector<std::uint32_t> ids;
  std::vector<BlockTag> tags;
  std::vector<std::uint8_t> mask;

  std::size_t size() const { return ids.size(); }
  std::vector<Segment> segments() const;
  /// ids shifted left by one; the last target is PAD.
  std::vector<std::uint32_t> targets() const;
};

/// An episode (or a window of one) reduced to codebook ids.
struct TokenizedEpisode {
  std::uint64_t seed = 0;
  std::vector<std::uint32_t> instruction;         // word ids
  std::vector<std::vector<std::uint32_t>> frames;  // T + 1 grids of code ids
  std::vector<std::vector<std::uint32_t>> flows;   // T grids of code ids (flow images)
  std::vector<Action> actions;                    // T

  int length() const { return static_cast<int>(actions.size()); }
  /// Transitions [start, start + k) with frames [start, start + k].
  TokenizedEpisode window(int start, int k) const;
};

TokenizedEpisode tokenize_episode(const Episode& ep, const Codebook& cb, const FlowCodecConfig& codec);

/// Start indices of every length-k window; one window covering everything
/// when the episode is shorter than k.
std::vector<int> window_starts(int episode_length, int k);

/// Supervision rule shared by assemble and the loss bookkeeping: whether the
/// token at a position with this tag is a training target.
bool is_supervised(Layout layout, BlockTag tag, std::uint32_t token, const VocabLayout& vocab);

/// Clears supervision of transitions before `first`. Transition t owns flow t,
/// frame t + 1 and action t. Training windows that start after frame 0 keep
/// only their last transition, the one whose context matches sliding-window
/// inference; earlier transitions there are predicted from a shorter history
/// than inference ever uses, and identical one-frame contexts can carry
/// different targets (grip versus move while standing on a block).
void keep_transitions_from(TokenSequence& s, int first);

/// Throws LengthError when the result exceeds max_seq_len.
TokenSequence assemble(const TokenizedEpisode& ep, Layout layout, const VocabLayout& vocab,
                       int max_seq_len);
TokenSequence assemble(const Episode& ep, Layout layout, const Codebook& cb, const VocabLayout& vocab,
                       const FlowCodecConfig& codec, int max_seq_len);

}  // namespace flowcot
