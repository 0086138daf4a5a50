#pragma once

// Deterministic 2D sprite-manipulation world: an agent on a cell grid picks a
// target block and carries it into a goal band. Produces frames, exact dense
// forward flow, templated instructions and expert demonstrations.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "flowcot/image.hpp"

namespace flowcot {

enum class Action : std::uint8_t { kLeft = 0, kRight, kUp, kDown, kGrip, kNoop };
inline constexpr int kNumActions = 6;
const char* action_name(Action a);

enum class Region : std::uint8_t { kLeft = 0, kRight, kTop, kBottom };
inline constexpr int kNumRegions = 4;
const char* region_name(Region r);

struct Cell {
  int x = 0, y = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

inline int manhattan(Cell a, Cell b) { return std::abs(a.x - b.x) + std::abs(a.y - b.y); }

/// Half-open cell rectangle [x0, x1) x [y0, y1).
struct CellRect {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool contains(Cell c) const { return c.x >= x0 && c.x < x1 && c.y >= y0 && c.y < y1; }
  Cell clamp(Cell c) const;
  friend bool operator==(const CellRect&, const CellRect&) = default;
};

struct NamedColor {
  std::string name;
  Rgb rgb;
  friend bool operator==(const NamedColor&, const NamedColor&) = default;
};

struct WorldConfig {
  int grid_h = 32;
  int grid_w = 32;
  int sprite_size = 4;
  int n_blocks = 2;
  std::vector<NamedColor> block_colors = {{"red", {255, 0, 0}},
                                          {"green", {0, 255, 0}},
                                          {"blue", {0, 0, 255}},
                                          {"yellow", {255, 255, 0}}};
  Rgb agent_color{128, 128, 128};
  Rgb background{0, 0, 0};
  Rgb outline{255, 255, 255};
  /// Cells moved per step; the pixel displacement is sprite_size * max_speed.
  int max_speed = 1;
  int horizon_max = 24;
  std::uint64_t seed = 0;

  /// Throws ConfigError when an invariant is violated.
  void validate() const;
  int cells_x() const { return grid_w / sprite_size; }
  int cells_y() const { return grid_h / sprite_size; }
  friend bool operator==(const WorldConfig&, const WorldConfig&) = default;
};

CellRect region_rect(const WorldConfig& cfg, Region r);

struct WorldState {
  Cell agent;
  std::vector<Cell> block_pos;
  std::vector<int> block_color;  // index into WorldConfig::block_colors
  std::optional<int> held;
  Region goal_region = Region::kLeft;
  int target_block = 0;
  friend bool operator==(const WorldState&, const WorldState&) = default;
};

/// Closed instruction vocabulary: template words, color names, region names.
std::vector<std::string> text_vocabulary(const WorldConfig& cfg);

struct Instruction {
  std::vector<std::uint32_t> tokens;
  std::string text;
  friend bool operator==(const Instruction&, const Instruction&) = default;
};

Instruction make_instruction(const WorldState& s, const WorldConfig& cfg);

struct Episode {
  Instruction instruction;
  std::vector<Frame> frames;     // T + 1
  std::vector<FlowField> flows;  // T, flows[t] maps frames[t] -> frames[t+1]
  std::vector<Action> actions;   // T
  bool success = false;
  std::uint64_t seed = 0;

  int length() const { return static_cast<int>(actions.size()); }
  friend bool operator==(const Episode&, const Episode&) = default;
};

WorldState new_world(const WorldConfig& cfg, std::uint64_t task_seed);
WorldState step(const WorldState& s, Action a, const WorldConfig& cfg);
bool is_success(const WorldState& s, const WorldConfig& cfg);

/// Flat list of painted entities in z-order (first painted first).
struct Scene {
  struct Sprite {
    Cell cell;
    Rgb color;
  };
  std::optional<CellRect> outline;
  std::vector<Sprite> sprites;
};

Scene scene_of(const WorldState& s, const WorldConfig& cfg);
Frame render(const Scene& scene, const WorldConfig& cfg);
Frame render(const WorldState& s, const WorldConfig& cfg);

/// Forward flow anchored at frame-t pixels; the topmost entity wins.
FlowField true_flow(const WorldState& s, const WorldState& s_next, const WorldConfig& cfg);

/// Greedy Manhattan teacher: walk to the target, grip, walk into the goal
/// band, grip to release. Horizontal moves are preferred on ties.
Action expert_action(const WorldState& s, const WorldConfig& cfg);

/// Rolls the expert until success or horizon_max.
Episode gen_episode(const WorldConfig& cfg, std::uint64_t seed);

}  // namespace flowcot
