#include "flowcot/worldsim.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "flowcot/error.hpp"

namespace flowcot {

namespace {

constexpr std::array<const char*, 4> kTemplateWords = {"move", "block", "to", "the"};

Cell displacement(Action a, int speed) {
  switch (a) {
    case Action::kLeft: return {-speed, 0};
    case Action::kRight: return {speed, 0};
    case Action::kUp: return {0, -speed};
    case Action::kDown: return {0, speed};
    default: return {0, 0};
  }
}

std::optional<int> block_at(const WorldState& s, Cell c, std::optional<int> skip) {
  for (int i = 0; i < static_cast<int>(s.block_pos.size()); ++i) {
    if (skip && *skip == i) continue;
    if (s.block_pos[i] == c) return i;
  }
  return std::nullopt;
}

Action move_toward(Cell from, Cell to) {
  if (to.x > from.x) return Action::kRight;
  if (to.x < from.x) return Action::kLeft;
  if (to.y > from.y) return Action::kDown;
  if (to.y < from.y) return Action::kUp;
  return Action::kNoop;
}

}  // namespace

const char* action_name(Action a) {
  switch (a) {
    case Action::kLeft: return "LEFT";
    case Action::kRight: return "RIGHT";
    case Action::kUp: return "UP";
    case Action::kDown: return "DOWN";
    case Action::kGrip: return "GRIP";
    case Action::kNoop: return "NOOP";
  }
  return "?";
}

const char* region_name(Region r) {
  switch (r) {
    case Region::kLeft: return "left";
    case Region::kRight: return "right";
    case Region::kTop: return "top";
    case Region::kBottom: return "bottom";
  }
  return "?";
}

Cell CellRect::clamp(Cell c) const {
  return {std::clamp(c.x, x0, x1 - 1), std::clamp(c.y, y0, y1 - 1)};
}

void WorldConfig::validate() const {
  if (sprite_size <= 0) throw ConfigError("sprite_size must be positive");
  if (grid_h <= 0 || grid_w <= 0 || grid_h % sprite_size != 0 || grid_w % sprite_size != 0)
    throw ConfigError("grid_h and grid_w must be positive multiples of sprite_size");
  if (max_speed < 1 || max_speed > sprite_size - 1)
    throw ConfigError("max_speed must lie in [1, sprite_size - 1]");
  if (n_blocks < 1) throw ConfigError("n_blocks must be at least 1");
  if (horizon_max < 0) throw ConfigError("horizon_max must be nonnegative");
  if (block_colors.empty()) throw ConfigError("block palette is empty");
  if (text_vocabulary(*this).size() > 32) throw ConfigError("text vocabulary exceeds 32 words");
}

CellRect region_rect(const WorldConfig& cfg, Region r) {
  const int cx = cfg.cells_x(), cy = cfg.cells_y();
  const int bx = std::max(1, cx / 4), by = std::max(1, cy / 4);
  switch (r) {
    case Region::kLeft: return {0, 0, bx, cy};
    case Region::kRight: return {cx - bx, 0, cx, cy};
    case Region::kTop: return {0, 0, cx, by};
    case Region::kBottom: return {0, cy - by, cx, cy};
  }
  return {};
}

std::vector<std::string> text_vocabulary(const WorldConfig& cfg) {
  std::vector<std::string> words(kTemplateWords.begin(), kTemplateWords.end());
  for (const auto& c : cfg.block_colors) words.push_back(c.name);
  for (int r = 0; r < kNumRegions; ++r) words.emplace_back(region_name(static_cast<Region>(r)));
  return words;
}

Instruction make_instruction(const WorldState& s, const WorldConfig& cfg) {
  const auto& color = cfg.block_colors.at(s.block_color.at(s.target_block));
  const auto n_colors = static_cast<std::uint32_t>(cfg.block_colors.size());
  Instruction ins;
  ins.tokens = {0, 4u + static_cast<std::uint32_t>(s.block_color[s.target_block]), 1, 2, 3,
                4u + n_colors + static_cast<std::uint32_t>(s.goal_region)};
  ins.text = "move " + color.name + " block to the " + region_name(s.goal_region);
  return ins;
}

WorldState new_world(const WorldConfig& cfg, std::uint64_t task_seed) {
  cfg.validate();
  std::mt19937_64 rng(task_seed);
  WorldState s;
  s.goal_region = static_cast<Region>(rng() % kNumRegions);
  const CellRect goal = region_rect(cfg, s.goal_region);

  const int n_colors = static_cast<int>(cfg.block_colors.size());
  if (cfg.n_blocks > n_colors)
    throw PlacementError("cannot give " + std::to_string(cfg.n_blocks) +
                         " blocks distinct colors from a palette of " + std::to_string(n_colors));

  const int cx = cfg.cells_x(), cy = cfg.cells_y();
  s.agent = {static_cast<int>(rng() % cx), static_cast<int>(rng() % cy)};

  std::vector<Cell> free_cells;
  for (int y = 0; y < cy; ++y)
    for (int x = 0; x < cx; ++x) {
      const Cell c{x, y};
      if (!goal.contains(c) && !(c == s.agent)) free_cells.push_back(c);
    }
  if (static_cast<int>(free_cells.size()) < cfg.n_blocks)
    throw PlacementError("only " + std::to_string(free_cells.size()) + " free cells for " +
                         std::to_string(cfg.n_blocks) + " blocks");

  // Partial Fisher-Yates for block cells and colors.
  for (int i = 0; i < cfg.n_blocks; ++i) {
    const auto j = i + static_cast<int>(rng() % (free_cells.size() - i));
    std::swap(free_cells[i], free_cells[j]);
    s.block_pos.push_back(free_cells[i]);
  }
  std::vector<int> colors(n_colors);
  std::iota(colors.begin(), colors.end(), 0);
  for (int i = 0; i < cfg.n_blocks; ++i) {
    const auto j = i + static_cast<int>(rng() % (n_colors - i));
    std::swap(colors[i], colors[j]);
    s.block_color.push_back(colors[i]);
  }
  s.target_block = static_cast<int>(rng() % cfg.n_blocks);
  return s;
}

WorldState step(const WorldState& s, Action a, const WorldConfig& cfg) {
  WorldState n = s;
  if (a == Action::kGrip) {
    if (n.held) {
      if (!block_at(n, n.agent, n.held)) n.held.reset();
    } else if (auto b = block_at(n, n.agent, std::nullopt)) {
      n.held = *b;
    }
    return n;
  }
  const Cell d = displacement(a, cfg.max_speed);
  n.agent.x = std::clamp(n.agent.x + d.x, 0, cfg.cells_x() - 1);
  n.agent.y = std::clamp(n.agent.y + d.y, 0, cfg.cells_y() - 1);
  if (n.held) n.block_pos[*n.held] = n.agent;
  return n;
}

bool is_success(const WorldState& s, const WorldConfig& cfg) {
  if (s.block_pos.empty() || s.held) return false;
  return region_rect(cfg, s.goal_region).contains(s.block_pos[s.target_block]);
}

Scene scene_of(const WorldState& s, const WorldConfig& cfg) {
  Scene scene;
  scene.outline = region_rect(cfg, s.goal_region);
  for (std::size_t i = 0; i < s.block_pos.size(); ++i)
    scene.sprites.push_back({s.block_pos[i], cfg.block_colors.at(s.block_color[i]).rgb});
  scene.sprites.push_back({s.agent, cfg.agent_color});
  return scene;
}

Frame render(const Scene& scene, const WorldConfig& cfg) {
  Frame f(cfg.grid_h, cfg.grid_w, cfg.background);
  const int sz = cfg.sprite_size;
  if (scene.outline) {
    const CellRect& r = *scene.outline;
    const int px0 = r.x0 * sz, px1 = r.x1 * sz - 1, py0 = r.y0 * sz, py1 = r.y1 * sz - 1;
    for (int x = px0; x <= px1; ++x) {
      f.set(py0, x, cfg.outline);
      f.set(py1, x, cfg.outline);
    }
    for (int y = py0; y <= py1; ++y) {
      f.set(y, px0, cfg.outline);
      f.set(y, px1, cfg.outline);
    }
  }
  for (const auto& sp : scene.sprites)
    for (int y = 0; y < sz; ++y)
      for (int x = 0; x < sz; ++x) f.set(sp.cell.y * sz + y, sp.cell.x * sz + x, sp.color);
  return f;
}

Frame render(const WorldState& s, const WorldConfig& cfg) { return render(scene_of(s, cfg), cfg); }

FlowField true_flow(const WorldState& s, const WorldState& s_next, const WorldConfig& cfg) {
  FlowField flow(cfg.grid_h, cfg.grid_w);
  const int sz = cfg.sprite_size;
  auto paint = [&](Cell from, Cell to) {
    const FlowVec d{static_cast<float>((to.x - from.x) * sz), static_cast<float>((to.y - from.y) * sz)};
    for (int y = 0; y < sz; ++y)
      for (int x = 0; x < sz; ++x) flow.set(from.y * sz + y, from.x * sz + x, d);
  };
  // Same z-order as render: blocks by index, then the agent on top.
  for (std::size_t i = 0; i < s.block_pos.size(); ++i) paint(s.block_pos[i], s_next.block_pos[i]);
  paint(s.agent, s_next.agent);
  return flow;
}

Action expert_action(const WorldState& s, const WorldConfig& cfg) {
  if (s.block_pos.empty()) return Action::kNoop;
  const CellRect goal = region_rect(cfg, s.goal_region);
  if (s.held && *s.held == s.target_block) {
    if (goal.contains(s.agent)) return Action::kGrip;
    return move_toward(s.agent, goal.clamp(s.agent));
  }
  if (s.held) {
    // Holding the wrong block: drop it as soon as the cell is free.
    if (!block_at(s, s.agent, s.held)) return Action::kGrip;
    return move_toward(s.agent, s.block_pos[s.target_block]);
  }
  const Cell target = s.block_pos[s.target_block];
  if (s.agent == target) return Action::kGrip;
  return move_toward(s.agent, target);
}

Episode gen_episode(const WorldConfig& cfg, std::uint64_t seed) {
  WorldState s = new_world(cfg, seed);
  Episode ep;
  ep.seed = seed;
  ep.instruction = make_instruction(s, cfg);
  ep.frames.push_back(render(s, cfg));
  while (!is_success(s, cfg) && ep.length() < cfg.horizon_max) {
    const Action a = expert_action(s, cfg);
    const WorldState next = step(s, a, cfg);
    ep.flows.push_back(true_flow(s, next, cfg));
    ep.frames.push_back(render(next, cfg));
    ep.actions.push_back(a);
    s = next;
  }
  ep.success = is_success(s, cfg);
  return ep;
}

}  // namespace flowcot
