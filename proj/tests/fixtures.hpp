#pragma once

#include <vector>

#include "flowcot/flowcodec.hpp"
#include "flowcot/sequence.hpp"
#include "flowcot/tokenizer.hpp"
#include "flowcot/worldsim.hpp"

namespace fixture {

/// Codebook over frames and flow images of seeds [0, n).
inline flowcot::Codebook small_codebook(int n = 20) {
  using namespace flowcot;
  const WorldConfig cfg;
  const FlowCodecConfig codec;
  CodebookBuilder b;
  for (int s = 0; s < n; ++s) {
    const Episode ep = gen_episode(cfg, static_cast<std::uint64_t>(s));
    for (const auto& f : ep.frames) b.add(f);
    for (const auto& f : ep.flows) b.add(flow_to_rgb(f, codec));
  }
  return std::move(b).finish();
}

inline flowcot::VocabLayout vocab_for(const flowcot::Codebook& cb) {
  flowcot::VocabLayout v;
  v.n_text = static_cast<std::uint32_t>(flowcot::text_vocabulary(flowcot::WorldConfig{}).size());
  v.n_code = static_cast<std::uint32_t>(cb.size());
  return v;
}

}  // namespace fixture
