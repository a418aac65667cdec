#include "fbrl/envs.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <deque>
#include <limits>

namespace fbrl::envs {

namespace {

using nlohmann::json;

LayoutSpec blank_layout(EnvFamily family, int width, int height, std::uint64_t seed) {
  LayoutSpec l;
  l.env_family = family;
  l.width = width;
  l.height = height;
  l.layout_seed = seed;
  l.grid.assign(static_cast<std::size_t>(width) * height, CellKind::Empty);
  for (int x = 0; x < width; ++x) {
    l.at(x, 0) = CellKind::Wall;
    l.at(x, height - 1) = CellKind::Wall;
  }
  for (int y = 0; y < height; ++y) {
    l.at(0, y) = CellKind::Wall;
    l.at(width - 1, y) = CellKind::Wall;
  }
  return l;
}

Coord first_empty_cell(const LayoutSpec& l) {
  for (int y = 0; y < l.height; ++y)
    for (int x = 0; x < l.width; ++x)
      if (l.at(x, y) == CellKind::Empty) return {x, y};
  throw std::runtime_error("layout has no empty cell");
}

int manhattan(Coord a, Coord b) { return std::abs(a.x - b.x) + std::abs(a.y - b.y); }

}  // namespace

std::string family_name(EnvFamily f) {
  switch (f) {
    case EnvFamily::Doors: return "doors";
    case EnvFamily::FourRooms: return "fourrooms";
    case EnvFamily::PointmassMaze: return "pointmass";
  }
  throw std::logic_error("bad family");
}

EnvFamily family_from_name(const std::string& name) {
  if (name == "doors") return EnvFamily::Doors;
  if (name == "fourrooms") return EnvFamily::FourRooms;
  if (name == "pointmass") return EnvFamily::PointmassMaze;
  throw std::invalid_argument("unknown env family: " + name);
}

LayoutSpec generate_fourrooms(std::uint64_t layout_seed) {
  Rng rng(mix_seed(layout_seed, 0x4001));
  LayoutSpec l = blank_layout(EnvFamily::FourRooms, 11, 11, layout_seed);

  // One horizontal and one vertical internal wall; positions leave every
  // room at least one cell wide.
  int wall_y = 2 + rng.uniform_int(7);  // {2..8}
  int wall_x = 2 + rng.uniform_int(7);
  for (int x = 1; x < 10; ++x) l.at(x, wall_y) = CellKind::Wall;
  for (int y = 1; y < 10; ++y) l.at(wall_x, y) = CellKind::Wall;

  // One door per wall segment; segments exclude the intersection cell.
  auto pick = [&](int lo, int hi) { return lo + rng.uniform_int(hi - lo + 1); };
  int door_top = pick(1, wall_y - 1);      // vertical wall above intersection
  int door_bottom = pick(wall_y + 1, 9);   // vertical wall below
  int door_left = pick(1, wall_x - 1);     // horizontal wall left
  int door_right = pick(wall_x + 1, 9);    // horizontal wall right
  l.at(wall_x, door_top) = CellKind::Empty;
  l.at(wall_x, door_bottom) = CellKind::Empty;
  l.at(door_left, wall_y) = CellKind::Empty;
  l.at(door_right, wall_y) = CellKind::Empty;

  l.start = first_empty_cell(l);

  // One goal per non-start room: the room's empty cell farthest from start.
  // Room membership excludes the wall lines (door cells belong to no room).
  struct Room { int x_lo, x_hi, y_lo, y_hi; };
  std::array<Room, 3> rooms = {Room{wall_x + 1, 9, 1, wall_y - 1},
                               Room{1, wall_x - 1, wall_y + 1, 9},
                               Room{wall_x + 1, 9, wall_y + 1, 9}};
  for (const Room& r : rooms) {
    Coord best{-1, -1};
    int best_dist = -1;
    for (int y = r.y_lo; y <= r.y_hi; ++y)
      for (int x = r.x_lo; x <= r.x_hi; ++x) {
        if (l.at(x, y) != CellKind::Empty) continue;
        int d = manhattan({x, y}, l.start);
        if (d > best_dist) {
          best_dist = d;
          best = {x, y};
        }
      }
    l.eval_goals.push_back(best);
  }
  l.horizon = 100;
  return l;
}

LayoutSpec generate_doors(std::uint64_t layout_seed) {
  Rng rng(mix_seed(layout_seed, 0xD0025));
  LayoutSpec l = blank_layout(EnvFamily::Doors, 9, 9, layout_seed);

  // Fixed template: two vertical walls at columns 3 and 6, each with a
  // single door whose row is the per-seed randomization.
  int door_row_a = 1 + rng.uniform_int(7);
  int door_row_b = 1 + rng.uniform_int(7);
  for (int y = 1; y < 8; ++y) {
    if (y != door_row_a) l.at(3, y) = CellKind::Wall;
    if (y != door_row_b) l.at(6, y) = CellKind::Wall;
  }

  l.start = first_empty_cell(l);

  // Goal position is also randomized: any empty cell other than start.
  std::vector<Coord> candidates;
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 9; ++x)
      if (l.at(x, y) == CellKind::Empty && !(Coord{x, y} == l.start))
        candidates.push_back({x, y});
  l.eval_goals.push_back(candidates[rng.uniform_int(static_cast<int>(candidates.size()))]);
  l.horizon = 100;
  return l;
}

LayoutSpec generate_pointmass_maze(std::uint64_t layout_seed) {
  constexpr int kSize = 11;
  constexpr double kWallProb = 0.25;
  constexpr int kMinComponent = 12;

  for (std::uint64_t attempt = 0;; ++attempt) {
    Rng rng(mix_seed(layout_seed, 0x9A2E0000 + attempt));
    LayoutSpec l = blank_layout(EnvFamily::PointmassMaze, kSize, kSize, layout_seed);
    for (int y = 1; y < kSize - 1; ++y)
      for (int x = 1; x < kSize - 1; ++x)
        if (rng.bernoulli(kWallProb)) l.at(x, y) = CellKind::Wall;

    bool any_empty = false;
    for (auto c : l.grid) any_empty |= (c == CellKind::Empty);
    if (!any_empty) continue;

    l.start = first_empty_cell(l);
    std::vector<Coord> component = reachable_from(l, l.start);
    if (static_cast<int>(component.size()) < kMinComponent) continue;

    // Connectivity repair: isolated empty cells become walls, so every
    // remaining empty cell is reachable from start.
    std::vector<char> keep(l.grid.size(), 0);
    for (Coord c : component) keep[static_cast<std::size_t>(c.y) * kSize + c.x] = 1;
    for (int y = 0; y < kSize; ++y)
      for (int x = 0; x < kSize; ++x)
        if (l.at(x, y) == CellKind::Empty && !keep[static_cast<std::size_t>(y) * kSize + x])
          l.at(x, y) = CellKind::Wall;

    l.eval_goals.push_back(farthest_empty_cell(l, l.start));
    l.horizon = 100;
    return l;
  }
}

LayoutSpec generate_layout(EnvFamily family, std::uint64_t layout_seed) {
  switch (family) {
    case EnvFamily::Doors: return generate_doors(layout_seed);
    case EnvFamily::FourRooms: return generate_fourrooms(layout_seed);
    case EnvFamily::PointmassMaze: return generate_pointmass_maze(layout_seed);
  }
  throw std::logic_error("bad family");
}

EnvState reset(const LayoutSpec& layout) { return EnvState{layout.start, 0, false}; }

Coord next_pos(const LayoutSpec& layout, Coord pos, int action) {
  Coord d = kActionDelta[static_cast<std::size_t>(action)];
  Coord cand{pos.x + d.x, pos.y + d.y};
  return layout.is_empty(cand) ? cand : pos;
}

StepResult step(const LayoutSpec& layout, const EnvState& state, int action, Coord goal) {
  if (state.done) throw std::runtime_error("episode finished");
  if (action < 0 || action >= kNumActions) throw std::invalid_argument("bad action index");
  EnvState next;
  next.pos = next_pos(layout, state.pos, action);
  next.t = state.t + 1;
  double reward = (next.pos == goal) ? 1.0 : 0.0;
  next.done = reward > 0.0 || next.t >= layout.horizon;
  return {next, reward};
}

std::vector<Coord> reachable_from(const LayoutSpec& layout, Coord src) {
  std::vector<Coord> out;
  if (!layout.is_empty(src)) return out;
  std::vector<char> seen(layout.grid.size(), 0);
  std::deque<Coord> queue{src};
  seen[static_cast<std::size_t>(src.y) * layout.width + src.x] = 1;
  while (!queue.empty()) {
    Coord c = queue.front();
    queue.pop_front();
    out.push_back(c);
    for (int a = 0; a < kNumActions; ++a) {
      Coord n{c.x + kActionDelta[a].x, c.y + kActionDelta[a].y};
      if (!layout.is_empty(n)) continue;
      char& mark = seen[static_cast<std::size_t>(n.y) * layout.width + n.x];
      if (!mark) {
        mark = 1;
        queue.push_back(n);
      }
    }
  }
  return out;
}

bool fully_connected(const LayoutSpec& layout) {
  std::size_t n_empty = 0;
  for (auto c : layout.grid) n_empty += (c == CellKind::Empty);
  return reachable_from(layout, layout.start).size() == n_empty;
}

Coord farthest_empty_cell(const LayoutSpec& layout, Coord src) {
  std::vector<Coord> cells = reachable_from(layout, src);
  Coord best = src;
  int best_dist = -1;
  // row-major scan order makes the lowest-index cell win ties
  std::sort(cells.begin(), cells.end(), [&](Coord a, Coord b) {
    return a.y * layout.width + a.x < b.y * layout.width + b.x;
  });
  for (Coord c : cells) {
    int d = manhattan(c, src);
    if (d > best_dist) {
      best_dist = d;
      best = c;
    }
  }
  return best;
}

std::string layout_to_record(const LayoutSpec& layout) {
  json j;
  j["env_family"] = family_name(layout.env_family);
  j["width"] = layout.width;
  j["height"] = layout.height;
  j["layout_seed"] = layout.layout_seed;
  std::string cells;
  cells.reserve(layout.grid.size());
  for (auto c : layout.grid) cells.push_back(c == CellKind::Wall ? '#' : '.');
  j["grid"] = cells;
  j["start"] = {layout.start.x, layout.start.y};
  json goals = json::array();
  for (Coord g : layout.eval_goals) goals.push_back({g.x, g.y});
  j["eval_goals"] = goals;
  j["horizon"] = layout.horizon;
  return j.dump();
}

LayoutSpec layout_from_record(const std::string& record) {
  json j = json::parse(record);
  LayoutSpec l;
  l.env_family = family_from_name(j.at("env_family").get<std::string>());
  l.width = j.at("width").get<int>();
  l.height = j.at("height").get<int>();
  l.layout_seed = j.at("layout_seed").get<std::uint64_t>();
  std::string cells = j.at("grid").get<std::string>();
  if (static_cast<int>(cells.size()) != l.width * l.height)
    throw std::runtime_error("layout record: grid size mismatch");
  l.grid.resize(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (cells[i] != '.' && cells[i] != '#')
      throw std::runtime_error("layout record: bad grid character");
    l.grid[i] = cells[i] == '#' ? CellKind::Wall : CellKind::Empty;
  }
  l.start = {j.at("start")[0].get<int>(), j.at("start")[1].get<int>()};
  for (const auto& g : j.at("eval_goals"))
    l.eval_goals.push_back({g[0].get<int>(), g[1].get<int>()});
  l.horizon = j.at("horizon").get<int>();
  return l;
}

}  // namespace fbrl::envs
