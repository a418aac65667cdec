#pragma once

#include "fbrl/common.hpp"

#include <array>
#include <string>
#include <vector>

namespace fbrl::envs {

enum class CellKind : std::uint8_t { Empty, Wall };

enum class EnvFamily : std::uint8_t { Doors, FourRooms, PointmassMaze };

std::string family_name(EnvFamily f);
EnvFamily family_from_name(const std::string& name);

struct Coord {
  int x = 0;
  int y = 0;
  bool operator==(const Coord&) const = default;
};

// Actions 0..3 = up, down, left, right. Up decreases y.
inline constexpr int kNumActions = 4;
inline constexpr std::array<Coord, kNumActions> kActionDelta = {
    Coord{0, -1}, Coord{0, 1}, Coord{-1, 0}, Coord{1, 0}};

struct LayoutSpec {
  EnvFamily env_family = EnvFamily::Doors;
  int width = 0;
  int height = 0;
  std::vector<CellKind> grid;  // row-major, grid[y * width + x]
  std::uint64_t layout_seed = 0;
  Coord start;
  std::vector<Coord> eval_goals;
  int horizon = 100;

  CellKind at(int x, int y) const { return grid[static_cast<std::size_t>(y) * width + x]; }
  CellKind& at(int x, int y) { return grid[static_cast<std::size_t>(y) * width + x]; }
  bool in_bounds(Coord c) const {
    return c.x >= 0 && c.x < width && c.y >= 0 && c.y < height;
  }
  bool is_empty(Coord c) const { return in_bounds(c) && at(c.x, c.y) == CellKind::Empty; }

  bool operator==(const LayoutSpec&) const = default;
};

struct EnvState {
  Coord pos;
  int t = 0;
  bool done = false;
};

struct StepResult {
  EnvState state;
  double reward = 0.0;
};

LayoutSpec generate_fourrooms(std::uint64_t layout_seed);
LayoutSpec generate_doors(std::uint64_t layout_seed);
LayoutSpec generate_pointmass_maze(std::uint64_t layout_seed);
LayoutSpec generate_layout(EnvFamily family, std::uint64_t layout_seed);

EnvState reset(const LayoutSpec& layout);

// Raw deterministic dynamics: blocked moves keep the position.
Coord next_pos(const LayoutSpec& layout, Coord pos, int action);

// Goal-conditioned episode step; throws if the state is already done.
StepResult step(const LayoutSpec& layout, const EnvState& state, int action, Coord goal);

// All Empty cells reachable from src by 4-connectivity.
std::vector<Coord> reachable_from(const LayoutSpec& layout, Coord src);
bool fully_connected(const LayoutSpec& layout);

// Farthest reachable Empty cell from src by Manhattan distance,
// ties broken by lowest row-major index.
Coord farthest_empty_cell(const LayoutSpec& layout, Coord src);

// Single-line structured record, round-trips exactly.
std::string layout_to_record(const LayoutSpec& layout);
LayoutSpec layout_from_record(const std::string& record);

}  // namespace fbrl::envs
