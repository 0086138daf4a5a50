#include <set>

#include "doctest.h"
#include "flowcot/error.hpp"
#include "flowcot/worldsim.hpp"

using namespace flowcot;

namespace {

// Moves every source pixel of `frame` by its flow vector over an underlay of
// the static entities, painting moved pixels last.
Frame warp(const Frame& frame, const FlowField& flow, const WorldState& s, const WorldState& next,
           const WorldConfig& cfg) {
  Scene underlay;
  underlay.outline = region_rect(cfg, s.goal_region);
  for (std::size_t i = 0; i < s.block_pos.size(); ++i)
    if (s.block_pos[i] == next.block_pos[i])
      underlay.sprites.push_back({s.block_pos[i], cfg.block_colors[s.block_color[i]].rgb});
  if (s.agent == next.agent) underlay.sprites.push_back({s.agent, cfg.agent_color});
  Frame out = render(underlay, cfg);
  for (int y = 0; y < frame.h; ++y)
    for (int x = 0; x < frame.w; ++x) {
      const FlowVec f = flow.at(y, x);
      if (f.u == 0 && f.v == 0) continue;
      out.set(y + static_cast<int>(f.v), x + static_cast<int>(f.u), frame.at(y, x));
    }
  return out;
}

bool palette_color(const WorldConfig& cfg, Rgb c) {
  if (c == cfg.background || c == cfg.outline || c == cfg.agent_color) return true;
  for (const auto& nc : cfg.block_colors)
    if (nc.rgb == c) return true;
  return false;
}

}  // namespace

TEST_SUITE("worldsim") {
  TEST_CASE("new_world is deterministic and places distinct cells") {
    const WorldConfig cfg;
    CHECK(new_world(cfg, 7) == new_world(cfg, 7));
    const WorldState s = new_world(cfg, 0);
    std::set<std::pair<int, int>> cells{{s.agent.x, s.agent.y}};
    for (const auto& b : s.block_pos) cells.insert({b.x, b.y});
    CHECK(cells.size() == 3);
    CHECK(s.block_pos.size() == 2);
    CHECK_FALSE(s.held.has_value());
  }

  TEST_CASE("impossible placement is a placement error") {
    WorldConfig cfg;
    cfg.n_blocks = 5;  // palette has 4 colors
    CHECK_THROWS_AS(new_world(cfg, 0), PlacementError);
    WorldConfig tiny;
    tiny.grid_h = tiny.grid_w = 4;
    tiny.n_blocks = 1;
    CHECK_THROWS_AS(new_world(tiny, 0), PlacementError);
  }

  TEST_CASE("config invariants") {
    WorldConfig cfg;
    cfg.grid_w = 30;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.max_speed = 4;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }

  TEST_CASE("step kinematics") {
    const WorldConfig cfg;
    WorldState s = new_world(cfg, 1);
    s.held.reset();
    s.agent = {5, 5};
    s.block_pos = {{0, 0}, {1, 0}};
    CHECK(step(s, Action::kRight, cfg).agent == Cell{6, 5});
    CHECK(step(s, Action::kNoop, cfg) == s);
    s.agent = {cfg.cells_x() - 1, 3};
    CHECK(step(s, Action::kRight, cfg) == s);

    // Pick, carry, place.
    s.agent = {0, 0};
    WorldState p = step(s, Action::kGrip, cfg);
    REQUIRE(p.held == 0);
    p = step(p, Action::kDown, cfg);
    CHECK(p.block_pos[0] == Cell{0, 1});
    p = step(p, Action::kGrip, cfg);
    CHECK_FALSE(p.held.has_value());
    // Release onto an occupied cell is refused.
    WorldState q = step(s, Action::kGrip, cfg);
    q = step(q, Action::kRight, cfg);
    CHECK(step(q, Action::kGrip, cfg).held == 0);
  }

  TEST_CASE("render paints exact palette sprites") {
    WorldConfig cfg;
    Scene empty;
    const Frame f = render(empty, cfg);
    for (int y = 0; y < f.h; ++y)
      for (int x = 0; x < f.w; ++x) REQUIRE(f.at(y, x) == cfg.background);

    WorldState s = new_world(cfg, 2);
    s.block_pos[0] = {2, 3};
    s.agent = {6, 6};
    s.block_pos[1] = {5, 5};
    const Frame r = render(s, cfg);
    const Rgb c = cfg.block_colors[s.block_color[0]].rgb;
    for (int y = 12; y < 16; ++y)
      for (int x = 8; x < 12; ++x) CHECK(r.at(y, x) == c);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const Episode ep = gen_episode(cfg, seed);
      for (const auto& fr : ep.frames)
        for (int y = 0; y < fr.h; ++y)
          for (int x = 0; x < fr.w; ++x) REQUIRE(palette_color(cfg, fr.at(y, x)));
    }
  }

  TEST_CASE("true_flow cases") {
    const WorldConfig cfg;
    WorldState s = new_world(cfg, 4);
    s.agent = {3, 3};
    const FlowField zero = true_flow(s, s, cfg);
    for (float v : zero.uv) REQUIRE(v == 0.0f);

    const WorldState r = step(s, Action::kRight, cfg);
    const FlowField fr = true_flow(s, r, cfg);
    int moving = 0;
    for (int y = 0; y < fr.h; ++y)
      for (int x = 0; x < fr.w; ++x) {
        const FlowVec v = fr.at(y, x);
        if (v.u != 0 || v.v != 0) {
          ++moving;
          CHECK(v == FlowVec{4, 0});
          CHECK(x / 4 == 3);
          CHECK(y / 4 == 3);
        }
      }
    CHECK(moving == 16);

    // Carrying a block upward moves both sprites.
    WorldState c = s;
    c.agent = c.block_pos[0];
    c = step(c, Action::kGrip, cfg);
    REQUIRE(c.held == 0);
    if (c.agent.y == 0) c = step(step(c, Action::kDown, cfg), Action::kDown, cfg);
    const WorldState up = step(c, Action::kUp, cfg);
    CHECK(up.block_pos[0] == up.agent);
    const FlowField fu = true_flow(c, up, cfg);
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) CHECK(fu.at(c.agent.y * 4 + y, c.agent.x * 4 + x) == FlowVec{0, -4});
  }

  TEST_CASE("warping frame t by the true flow reproduces frame t+1") {
    const WorldConfig cfg;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      WorldState s = new_world(cfg, seed);
      while (!is_success(s, cfg)) {
        const WorldState n = step(s, expert_action(s, cfg), cfg);
        const Frame a = render(s, cfg);
        REQUIRE(warp(a, true_flow(s, n, cfg), s, n, cfg) == render(n, cfg));
        s = n;
      }
    }
  }

  TEST_CASE("flow palette is finite") {
    const WorldConfig cfg;
    const float m = static_cast<float>(cfg.sprite_size * cfg.max_speed);
    std::set<std::pair<float, float>> seen;
    for (std::uint64_t seed = 0; seed < 100; ++seed)
      for (const auto& f : gen_episode(cfg, seed).flows)
        for (int y = 0; y < f.h; ++y)
          for (int x = 0; x < f.w; ++x) seen.insert({f.at(y, x).u, f.at(y, x).v});
    for (auto [u, v] : seen) {
      CHECK((u == 0 || u == m || u == -m));
      CHECK((v == 0 || v == m || v == -m));
    }
  }

  TEST_CASE("expert decisions") {
    const WorldConfig cfg;
    WorldState s = new_world(cfg, 5);
    s.agent = s.block_pos[s.target_block];
    CHECK(expert_action(s, cfg) == Action::kGrip);
    s = step(s, Action::kGrip, cfg);
    const CellRect goal = region_rect(cfg, s.goal_region);
    while (!goal.contains(s.agent)) s = step(s, expert_action(s, cfg), cfg);
    CHECK(expert_action(s, cfg) == Action::kGrip);
  }

  TEST_CASE("expert succeeds on seeds 0..99 within the length bound") {
    const WorldConfig cfg;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const WorldState s0 = new_world(cfg, seed);
      const Episode ep = gen_episode(cfg, seed);
      REQUIRE(ep.success);
      const Cell block = s0.block_pos[s0.target_block];
      const CellRect goal = region_rect(cfg, s0.goal_region);
      const int bound = manhattan(s0.agent, block) + manhattan(block, goal.clamp(block)) + 2;
      CHECK(ep.length() <= bound);
      CHECK(ep.length() <= cfg.horizon_max);
      CHECK(ep.frames.size() == ep.actions.size() + 1);
      CHECK(ep.flows.size() == ep.actions.size());
    }
  }

  TEST_CASE("at least 99% of 1000 seeds succeed") {
    const WorldConfig cfg;
    int ok = 0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed) ok += gen_episode(cfg, seed).success ? 1 : 0;
    CHECK(ok >= 990);
  }

  TEST_CASE("gen_episode is deterministic and instructions are well formed") {
    const WorldConfig cfg;
    CHECK(gen_episode(cfg, 3) == gen_episode(cfg, 3));
    const auto vocab = text_vocabulary(cfg);
    CHECK(vocab.size() <= 32);
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      const Instruction ins = gen_episode(cfg, seed).instruction;
      CHECK(ins.tokens.size() <= 8);
      std::string text;
      for (auto t : ins.tokens) {
        REQUIRE(t < vocab.size());
        text += (text.empty() ? "" : " ") + vocab[t];
      }
      CHECK(text == ins.text);
    }
  }
}
