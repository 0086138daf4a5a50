#pragma once

#include <cstdint>

namespace flowcot {

enum class Special : std::uint32_t {
  kPad = 0,
  kBos,
  kEos,
  kSepText,
  kSepFrame,
  kSepFlow,
  kSepAction,
};
inline constexpr std::uint32_t kNumSpecial = 7;
inline constexpr std::uint32_t kNumActionTokens = 6;

inline constexpr std::uint32_t id(Special s) { return static_cast<std::uint32_t>(s); }

/// Modality of a position, fed to the model as an additive embedding.
enum class Segment : std::uint8_t { kSpecial = 0, kText, kFrame, kFlow, kAction };
inline constexpr int kNumSegments = 5;

/// [specials | text words | codebook entries | actions]. Frame and flow
/// content share the single code range.
struct VocabLayout {
  std::uint32_t n_special = kNumSpecial;
  std::uint32_t n_text = 0;
  std::uint32_t n_code = 0;
  std::uint32_t n_action = kNumActionTokens;

  std::uint32_t total() const { return n_special + n_text + n_code + n_action; }
  std::uint32_t text_offset() const { return n_special; }
  std::uint32_t code_offset() const { return n_special + n_text; }
  std::uint32_t action_offset() const { return n_special + n_text + n_code; }

  std::uint32_t text_id(std::uint32_t word) const { return text_offset() + word; }
  std::uint32_t code_id(std::uint32_t code) const { return code_offset() + code; }
  std::uint32_t action_id(std::uint32_t action) const { return action_offset() + action; }

  bool is_special(std::uint32_t t) const { return t < n_special; }
  bool is_text(std::uint32_t t) const { return t >= text_offset() && t < code_offset(); }
  bool is_code(std::uint32_t t) const { return t >= code_offset() && t < action_offset(); }
  bool is_action(std::uint32_t t) const { return t >= action_offset() && t < total(); }

  /// Throws ConfigError if the fixed segment sizes are wrong.
  void validate() const;
  friend bool operator==(const VocabLayout&, const VocabLayout&) = default;
};

/// Segment implied by the id alone; code ids default to kFrame.
Segment default_segment(std::uint32_t token, const VocabLayout& v);

}  // namespace flowcot
