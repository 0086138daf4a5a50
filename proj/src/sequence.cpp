#include "flowcot/sequence.hpp"

#include <algorithm>

#include "flowcot/error.hpp"

namespace flowcot {

std::string layout_name(Layout l) {
  switch (l) {
    case Layout::kInterleavedCot: return "interleaved";
    case Layout::kGrouped: return "grouped";
    case Layout::kFramesOnly: return "frames-only";
    case Layout::kNoFlowLoss: return "no-flow-loss";
    case Layout::kPolicy: return "policy";
  }
  return "?";
}

Layout parse_layout(const std::string& s) {
  for (Layout l : {Layout::kInterleavedCot, Layout::kGrouped, Layout::kFramesOnly, Layout::kNoFlowLoss,
                   Layout::kPolicy})
    if (s == layout_name(l)) return l;
  throw ConfigError("unknown layout '" + s +
                    "' (expected interleaved, grouped, frames-only, no-flow-loss or policy)");
}

Segment segment_of(BlockKind k) {
  switch (k) {
    case BlockKind::kText: return Segment::kText;
    case BlockKind::kFrame: return Segment::kFrame;
    case BlockKind::kFlow: return Segment::kFlow;
    case BlockKind::kAction: return Segment::kAction;
    case BlockKind::kSpecial: break;
  }
  return Segment::kSpecial;
}

std::vector<Segment> TokenSequence::segments() const {
  std::vector<Segment> s(tags.size());
  for (std::size_t i = 0; i < tags.size(); ++i) s[i] = segment_of(tags[i].kind);
  return s;
}

std::vector<std::uint32_t> TokenSequence::targets() const {
  std::vector<std::uint32_t> t(ids.size(), id(Special::kPad));
  if (!ids.empty()) std::copy(ids.begin() + 1, ids.end(), t.begin());
  return t;
}

TokenizedEpisode TokenizedEpisode::window(int start, int k) const {
  const int T = length();
  if (start < 0 || k < 0 || start + k > T) throw DataError("window out of range");
  TokenizedEpisode w;
  w.seed = seed;
  w.instruction = instruction;
  w.frames.assign(frames.begin() + start, frames.begin() + start + k + 1);
  w.flows.assign(flows.begin() + start, flows.begin() + start + k);
  w.actions.assign(actions.begin() + start, actions.begin() + start + k);
  return w;
}

TokenizedEpisode tokenize_episode(const Episode& ep, const Codebook& cb, const FlowCodecConfig& codec) {
  TokenizedEpisode out;
  out.seed = ep.seed;
  out.instruction = ep.instruction.tokens;
  out.actions = ep.actions;
  for (const auto& f : ep.frames) out.frames.push_back(tokenize(f, cb).ids);
  for (const auto& f : ep.flows) out.flows.push_back(tokenize(flow_to_rgb(f, codec), cb).ids);
  return out;
}

std::vector<int> window_starts(int episode_length, int k) {
  if (k <= 0) throw ConfigError("window must be positive");
  if (episode_length <= k) return {0};
  std::vector<int> s(static_cast<std::size_t>(episode_length - k + 1));
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = static_cast<int>(i);
  return s;
}

bool is_supervised(Layout layout, BlockTag tag, std::uint32_t token, const VocabLayout& vocab) {
  switch (layout) {
    case Layout::kInterleavedCot:
    case Layout::kGrouped:
      return tag.kind == BlockKind::kFlow || (tag.kind == BlockKind::kFrame && tag.t >= 1);
    case Layout::kFramesOnly:
    case Layout::kNoFlowLoss:
      return tag.kind == BlockKind::kFrame && tag.t >= 1;
    case Layout::kPolicy:
      return tag.kind == BlockKind::kAction && vocab.is_action(token);
  }
  return false;
}

namespace {

struct Builder {
  const VocabLayout& vocab;
  TokenSequence seq;

  void push(std::uint32_t token, BlockTag tag) {
    seq.ids.push_back(token);
    seq.tags.push_back(tag);
  }
  void block(Special sep, BlockKind kind, int t, const std::vector<std::uint32_t>& codes) {
    push(id(sep), {kind, t});
    for (auto c : codes) push(vocab.code_id(c), {kind, t});
  }
};

}  // namespace

TokenSequence assemble(const TokenizedEpisode& ep, Layout layout, const VocabLayout& vocab,
                       int max_seq_len) {
  const int T = ep.length();
  if (static_cast<int>(ep.frames.size()) != T + 1 || static_cast<int>(ep.flows.size()) != T)
    throw DataError("episode has inconsistent frame/flow/action counts");
  Builder b{vocab, {}};
  b.push(id(Special::kBos), {BlockKind::kSpecial, 0});
  b.push(id(Special::kSepText), {BlockKind::kText, 0});
  for (auto w : ep.instruction) {
    if (w >= vocab.n_text) throw DataError("instruction word id out of range");
    b.push(vocab.text_id(w), {BlockKind::kText, 0});
  }
  switch (layout) {
    case Layout::kInterleavedCot:
    case Layout::kNoFlowLoss:
      for (int t = 0; t < T; ++t) {
        b.block(Special::kSepFrame, BlockKind::kFrame, t, ep.frames[t]);
        b.block(Special::kSepFlow, BlockKind::kFlow, t, ep.flows[t]);
      }
      b.block(Special::kSepFrame, BlockKind::kFrame, T, ep.frames[T]);
      break;
    case Layout::kGrouped:
      for (int t = 0; t <= T; ++t) b.block(Special::kSepFrame, BlockKind::kFrame, t, ep.frames[t]);
      for (int t = 0; t < T; ++t) b.block(Special::kSepFlow, BlockKind::kFlow, t, ep.flows[t]);
      break;
    case Layout::kFramesOnly:
      for (int t = 0; t <= T; ++t) b.block(Special::kSepFrame, BlockKind::kFrame, t, ep.frames[t]);
      break;
    case Layout::kPolicy:
      for (int t = 0; t < T; ++t) {
        b.block(Special::kSepFrame, BlockKind::kFrame, t, ep.frames[t]);
        b.push(id(Special::kSepAction), {BlockKind::kAction, t});
        b.push(vocab.action_id(static_cast<std::uint32_t>(ep.actions[t])), {BlockKind::kAction, t});
      }
      break;
  }
  b.push(id(Special::kEos), {BlockKind::kSpecial, 0});

  auto& s = b.seq;
  if (static_cast<int>(s.ids.size()) > max_seq_len)
    throw LengthError("sequence of " + std::to_string(s.ids.size()) + " tokens exceeds max_seq_len " +
                      std::to_string(max_seq_len) + "; use a shorter window");
  s.mask.assign(s.ids.size(), 0);
  for (std::size_t i = 0; i + 1 < s.ids.size(); ++i)
    s.mask[i] = is_supervised(layout, s.tags[i + 1], s.ids[i + 1], vocab) ? 1 : 0;
  return s;
}

void keep_transitions_from(TokenSequence& s, int first) {
  for (std::size_t i = 0; i + 1 < s.size(); ++i) {
    const BlockTag tg = s.tags[i + 1];
    int transition = 0;
    switch (tg.kind) {
      case BlockKind::kFlow:
      case BlockKind::kAction:
        transition = tg.t;
        break;
      case BlockKind::kFrame:
        transition = tg.t - 1;
        break;
      default:
        continue;
    }
    if (transition < first) s.mask[i] = 0;
  }
}

TokenSequence assemble(const Episode& ep, Layout layout, const Codebook& cb, const VocabLayout& vocab,
                       const FlowCodecConfig& codec, int max_seq_len) {
  return assemble(tokenize_episode(ep, cb, codec), layout, vocab, max_seq_len);
}

}  // namespace flowcot
