#include "flowcot/evalrollout.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "flowcot/error.hpp"
#include "flowcot/hash.hpp"
#include "flowcot/parallel.hpp"
#include "flowcot/sampling.hpp"

namespace flowcot {

namespace {

using Grid = std::vector<std::uint32_t>;

class Generator {
 public:
  Generator(const ModelParams<float>& p, const RolloutOptions& opt, TokenRollout& out)
      : dec_(p), vocab_(p.config.vocab), opt_(opt), out_(out) {}

  void reset() {
    dec_.reset();
    prov_.clear();
  }

  std::span<const float> feed(std::uint32_t token, Segment seg, Provenance prov) {
    prov_.push_back(prov);
    return dec_.append(token, seg);
  }

  std::span<const float> feed_block(Special sep, Segment seg, const Grid& codes, Provenance prov) {
    auto logits = feed(id(sep), seg, Provenance::kGrammar);
    for (auto c : codes) logits = feed(vocab_.code_id(c), seg, prov);
    return logits;
  }

  // Generates `n` code tokens starting from the logits after the separator.
  Grid generate(std::span<const float> logits, int n, Segment seg) {
    Grid codes;
    codes.reserve(n);
    for (int i = 0; i < n; ++i) {
      std::uint32_t tok;
      if (opt_.temperature > 0.0)
        tok = sample_next(logits, opt_.temperature, splitmix64(opt_.seed ^ splitmix64(counter_++)));
      else
        tok = argmax_range(logits, 0, vocab_.total());
      if (!vocab_.is_code(tok)) {
        tok = argmax_range(logits, vocab_.code_offset(), vocab_.action_offset());
        ++out_.coercion_count;
      }
      codes.push_back(tok - vocab_.code_offset());
      logits = feed(tok, seg, Provenance::kGenerated);
    }
    return codes;
  }

  const std::vector<Provenance>& provenance() const { return prov_; }

 private:
  Decoder<float> dec_;
  const VocabLayout& vocab_;
  const RolloutOptions& opt_;
  TokenRollout& out_;
  std::vector<Provenance> prov_;
  std::uint64_t counter_ = 0;
};

}  // namespace

TokenRollout rollout_tokens(const ModelParams<float>& p, Layout layout, int window,
                            std::span<const std::uint32_t> instruction, std::span<const Grid> prefix_frames,
                            std::span<const Grid> prefix_flows, int horizon, const RolloutOptions& opt) {
  if (!is_wm_layout(layout)) throw ConfigError("a policy checkpoint cannot run world-model rollouts");
  if (prefix_frames.empty()) throw ConfigError("rollout prefix must contain at least one frame");
  if (window <= 0) throw ConfigError("window must be positive");
  const VocabLayout& vocab = p.config.vocab;
  const bool interleaved = layout == Layout::kInterleavedCot || layout == Layout::kNoFlowLoss;
  const int P = static_cast<int>(prefix_frames.size());
  if (interleaved && static_cast<int>(prefix_flows.size()) != P - 1)
    throw DataError("interleaved rollout needs one flow per prefix transition");

  TokenRollout out;
  out.first_predicted = P;
  std::vector<Grid> F(prefix_frames.begin(), prefix_frames.end());
  std::vector<Grid> G;
  if (interleaved) G.assign(prefix_flows.begin(), prefix_flows.end());
  if (horizon <= 0) return out;

  const int block = static_cast<int>(F.front().size());
  Generator gen(p, opt, out);
  for (int h = 0; h < horizon; ++h) {
    const int t = P - 1 + h;
    const int start = std::max(0, t - window + 1);
    gen.reset();
    gen.feed(id(Special::kBos), Segment::kSpecial, Provenance::kPrompt);
    gen.feed(id(Special::kSepText), Segment::kText, Provenance::kPrompt);
    for (auto w : instruction) gen.feed(vocab.text_id(w), Segment::kText, Provenance::kPrompt);
    auto frame_prov = [&](int j) { return j < P ? Provenance::kPrefix : Provenance::kGenerated; };
    if (interleaved) {
      for (int j = start; j < t; ++j) {
        gen.feed_block(Special::kSepFrame, Segment::kFrame, F[j], frame_prov(j));
        gen.feed_block(Special::kSepFlow, Segment::kFlow, G[j], j < P - 1 ? Provenance::kPrefix : Provenance::kGenerated);
      }
      gen.feed_block(Special::kSepFrame, Segment::kFrame, F[t], frame_prov(t));
      auto logits = gen.feed(id(Special::kSepFlow), Segment::kFlow, Provenance::kGrammar);
      G.push_back(gen.generate(logits, block, Segment::kFlow));
      out.flows.push_back(G.back());
      logits = gen.feed(id(Special::kSepFrame), Segment::kFrame, Provenance::kGrammar);
      F.push_back(gen.generate(logits, block, Segment::kFrame));
    } else {
      for (int j = start; j <= t; ++j) gen.feed_block(Special::kSepFrame, Segment::kFrame, F[j], frame_prov(j));
      auto logits = gen.feed(id(Special::kSepFrame), Segment::kFrame, Provenance::kGrammar);
      F.push_back(gen.generate(logits, block, Segment::kFrame));
    }
    out.frames.push_back(F.back());
  }
  out.last_context = gen.provenance();
  return out;
}

RolloutResult rollout_wm(const Checkpoint& ckpt, const Codebook& cb, const Instruction& instruction,
                         std::span<const Frame> prefix, int horizon, const RolloutOptions& opt,
                         std::span<const FlowField> prefix_flows) {
  if (!is_wm_layout(ckpt.layout)) throw ConfigError("a policy checkpoint cannot run world-model rollouts");
  if (prefix.empty()) throw ConfigError("rollout prefix must contain at least one frame");
  std::vector<Grid> frames, flows;
  for (const auto& f : prefix) frames.push_back(tokenize(f, cb).ids);
  if (has_flow_blocks(ckpt.layout) && ckpt.layout != Layout::kGrouped) {
    if (prefix_flows.size() + 1 < prefix.size()) throw DataError("rollout prefix is missing flows");
    for (std::size_t t = 0; t + 1 < prefix.size(); ++t)
      flows.push_back(tokenize(flow_to_rgb(prefix_flows[t], ckpt.codec), cb).ids);
  }
  std::vector<std::uint32_t> words;
  if (!ckpt.blank_instruction) words = instruction.tokens;

  RolloutResult r;
  r.tokens = rollout_tokens(ckpt.params, ckpt.layout, ckpt.window, words, frames, flows, horizon, opt);
  const int gh = prefix.front().h / cb.patch_size(), gw = prefix.front().w / cb.patch_size();
  for (const auto& g : r.tokens.frames) r.predicted_frames.push_back(detokenize({gh, gw, g}, cb));
  for (const auto& g : r.tokens.flows) {
    r.predicted_flow_images.push_back(detokenize({gh, gw, g}, cb));
    r.predicted_flows.push_back(snap_to_lattice(rgb_to_flow(r.predicted_flow_images.back(), ckpt.codec)));
  }
  return r;
}

double token_accuracy(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b) {
  if (a.size() != b.size()) throw DataError("token grids differ in size");
  if (a.empty()) return 1.0;
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i];
  return static_cast<double>(same) / static_cast<double>(a.size());
}

double pixel_match(const Frame& a, const Frame& b) {
  if (a.h != b.h || a.w != b.w) throw DataError("frames differ in size");
  const std::size_t n = static_cast<std::size_t>(a.h) * a.w;
  if (n == 0) return 1.0;
  std::size_t same = 0;
  for (std::size_t i = 0; i < n; ++i)
    same += a.rgb[3 * i] == b.rgb[3 * i] && a.rgb[3 * i + 1] == b.rgb[3 * i + 1] && a.rgb[3 * i + 2] == b.rgb[3 * i + 2];
  return static_cast<double>(same) / static_cast<double>(n);
}

double endpoint_error(const FlowField& a, const FlowField& b) {
  if (a.h != b.h || a.w != b.w) throw DataError("flow fields differ in size");
  const std::size_t n = static_cast<std::size_t>(a.h) * a.w;
  if (n == 0) return 0.0;
  double sum = 0;
  for (std::size_t i = 0; i < n; ++i)
    sum += std::hypot(static_cast<double>(a.uv[2 * i]) - b.uv[2 * i], static_cast<double>(a.uv[2 * i + 1]) - b.uv[2 * i + 1]);
  return sum / static_cast<double>(n);
}

RolloutScore score_rollout(const RolloutResult& pred, const Episode& truth, const Codebook& cb) {
  RolloutScore s;
  const int first = pred.tokens.first_predicted;
  for (std::size_t i = 0; i < pred.predicted_frames.size(); ++i) {
    const int t = first + static_cast<int>(i);
    if (t >= static_cast<int>(truth.frames.size())) break;
    StepScore row;
    row.step = t;
    row.token_acc = token_accuracy(pred.tokens.frames[i], tokenize(truth.frames[t], cb).ids);
    row.pixel_match = pixel_match(pred.predicted_frames[i], truth.frames[t]);
    if (i < pred.predicted_flows.size()) row.flow_epe = endpoint_error(pred.predicted_flows[i], truth.flows[t - 1]);
    if (s.divergence_step < 0 && row.pixel_match < kDivergencePixelMatch) s.divergence_step = t;
    s.steps.push_back(row);
  }
  return s;
}

double heldout_frame_accuracy(const ModelParams<float>& p, Layout layout, int window,
                              std::span<const TokenizedEpisode> windows) {
  std::size_t same = 0, total = 0;
  for (const auto& w : windows) {
    const int k = w.length();
    if (k == 0) continue;
    std::span<const Grid> frames(w.frames.data(), static_cast<std::size_t>(k));
    std::span<const Grid> flows(w.flows.data(), static_cast<std::size_t>(k - 1));
    const TokenRollout r = rollout_tokens(p, layout, window, w.instruction, frames, flows, 1);
    const Grid& truth = w.frames[k];
    for (std::size_t i = 0; i < truth.size(); ++i) same += r.frames[0][i] == truth[i];
    total += truth.size();
  }
  return total == 0 ? 0.0 : static_cast<double>(same) / static_cast<double>(total);
}

PolicyOutcome run_policy_episode(const PolicyModel& m, const WorldConfig& cfg, std::uint64_t seed, int max_steps) {
  const VocabLayout& vocab = m.params.config.vocab;
  WorldState s = new_world(cfg, seed);
  PolicyOutcome out;
  out.seed = seed;
  if (max_steps <= 0) return out;
  std::vector<std::uint32_t> words;
  if (!m.blank_instruction) words = make_instruction(s, cfg).tokens;

  std::vector<Grid> F;
  std::vector<Action> A;
  std::vector<std::uint32_t> ids;
  std::vector<Segment> segs;
  auto push = [&](std::uint32_t t, Segment g) {
    ids.push_back(t);
    segs.push_back(g);
  };
  for (int t = 0; t < max_steps; ++t) {
    F.push_back(tokenize(render(s, cfg), m.codebook).ids);
    const int start = std::max(0, t - m.window + 1);
    ids.clear();
    segs.clear();
    push(id(Special::kBos), Segment::kSpecial);
    push(id(Special::kSepText), Segment::kText);
    for (auto w : words) push(vocab.text_id(w), Segment::kText);
    for (int j = start; j <= t; ++j) {
      push(id(Special::kSepFrame), Segment::kFrame);
      for (auto c : F[j]) push(vocab.code_id(c), Segment::kFrame);
      push(id(Special::kSepAction), Segment::kAction);
      if (j < t) push(vocab.action_id(static_cast<std::uint32_t>(A[j])), Segment::kAction);
    }
    const Logits<float> logits = forward(m.params, ids, segs);
    const std::uint32_t tok = argmax_range(logits.row(logits.n - 1), 0, vocab.total());
    Action a = Action::kNoop;
    if (vocab.is_action(tok))
      a = static_cast<Action>(tok - vocab.action_offset());
    else
      ++out.invalid_actions;
    s = step(s, a, cfg);
    A.push_back(a);
    out.steps = t + 1;
    if (is_success(s, cfg)) {
      out.success = true;
      break;
    }
  }
  return out;
}

PolicyEvalReport aggregate(std::vector<PolicyOutcome> outcomes) {
  PolicyEvalReport r;
  r.n_episodes = static_cast<int>(outcomes.size());
  int wins = 0;
  double steps = 0;
  for (const auto& o : outcomes)
    if (o.success) {
      ++wins;
      steps += o.steps;
    }
  r.success_rate = r.n_episodes ? static_cast<double>(wins) / r.n_episodes : 0.0;
  r.mean_steps_to_success = wins ? steps / wins : 0.0;
  r.outcomes = std::move(outcomes);
  return r;
}

void check_disjoint(std::span<const std::uint64_t> eval_seeds, std::span<const std::uint64_t> train_seeds) {
  const std::unordered_set<std::uint64_t> train(train_seeds.begin(), train_seeds.end());
  for (auto s : eval_seeds)
    if (train.count(s)) throw ContaminationError("evaluation seed " + std::to_string(s) + " was used in training");
}

PolicyEvalReport eval_policy(const Checkpoint& ckpt, const Codebook& cb, const WorldConfig& cfg,
                             std::span<const std::uint64_t> seeds, int threads) {
  if (ckpt.layout != Layout::kPolicy) throw ConfigError("eval-policy needs a policy checkpoint");
  check_disjoint(seeds, ckpt.train_seeds);
  const PolicyModel m{ckpt.params, ckpt.window, ckpt.blank_instruction, cb};
  std::vector<PolicyOutcome> out(seeds.size());
  parallel_for(static_cast<int>(seeds.size()), threads,
               [&](int i) { out[i] = run_policy_episode(m, cfg, seeds[i], cfg.horizon_max); });
  return aggregate(std::move(out));
}

PolicyEvalReport random_policy_baseline(const WorldConfig& cfg, std::span<const std::uint64_t> seeds,
                                        int max_steps, std::uint64_t rng_seed) {
  std::vector<PolicyOutcome> out;
  for (auto seed : seeds) {
    WorldState s = new_world(cfg, seed);
    PolicyOutcome o;
    o.seed = seed;
    const std::uint64_t stream = rng_seed ^ splitmix64(seed);
    for (int t = 0; t < max_steps; ++t) {
      const int a = std::min(kNumActions - 1, static_cast<int>(counter_uniform(stream, t) * kNumActions));
      s = step(s, static_cast<Action>(a), cfg);
      o.steps = t + 1;
      if (is_success(s, cfg)) {
        o.success = true;
        break;
      }
    }
    out.push_back(o);
  }
  return aggregate(std::move(out));
}

}  // namespace flowcot
