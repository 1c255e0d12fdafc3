#pragma once

// 5x5 grid worlds with five objects: flat sprites (shapes2d), a dimetric cube
// projection of the same board (cubes3d), and a variant where only object 0
// responds to actions while objects 1-4 patrol fixed cyclic routes
// (controlled).

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "actionbind/core/rng.hpp"
#include "actionbind/io/dataset.hpp"

namespace actionbind {

constexpr int kGridSize = 5;
constexpr int kGridObjects = 5;
constexpr int kGridActionDim = 29;  // 25 one-hot positions ++ 4 directions
constexpr int kGridCellPx = 10;
constexpr int kGridImagePx = 50;
constexpr int64_t kGridObsNumel = 3 * kGridImagePx * kGridImagePx;

enum class GridVariant : uint8_t { kShapes2d, kCubes3d, kControlled };

inline std::string to_string(GridVariant v) {
  switch (v) {
    case GridVariant::kShapes2d: return "shapes2d";
    case GridVariant::kCubes3d: return "cubes3d";
    case GridVariant::kControlled: return "controlled";
  }
  return "?";
}

inline GridVariant grid_variant_from_string(const std::string& s) {
  if (s == "shapes2d") return GridVariant::kShapes2d;
  if (s == "cubes3d") return GridVariant::kCubes3d;
  if (s == "controlled") return GridVariant::kControlled;
  throw std::invalid_argument("unknown grid variant: " + s);
}

struct GridPos {
  int col = 0, row = 0;
  bool operator==(const GridPos&) const = default;
};

struct GridState {
  GridVariant variant = GridVariant::kShapes2d;
  std::array<GridPos, kGridObjects> objects;
};

enum class GridDir : uint8_t { kUp, kDown, kLeft, kRight };

struct GridAction {
  GridPos position;
  GridDir direction = GridDir::kUp;
};

// Patrol routes for the controlled variant: disjoint 2x2 corner loops, one
// per autonomous object. A patroller's position doubles as its route phase.
inline const std::array<GridPos, 4>& patrol_route(int object) {
  static const std::array<std::array<GridPos, 4>, 4> routes{{
      {{{0, 0}, {1, 0}, {1, 1}, {0, 1}}},
      {{{3, 0}, {4, 0}, {4, 1}, {3, 1}}},
      {{{0, 3}, {0, 4}, {1, 4}, {1, 3}}},
      {{{3, 3}, {4, 3}, {4, 4}, {3, 4}}},
  }};
  return routes[object - 1];
}

inline bool on_board(GridPos p) {
  return p.col >= 0 && p.col < kGridSize && p.row >= 0 && p.row < kGridSize;
}

inline void validate_state(const GridState& s) {
  for (int i = 0; i < kGridObjects; ++i) {
    if (!on_board(s.objects[i]))
      throw std::invalid_argument("grid state: object " + std::to_string(i) + " off board");
    for (int j = i + 1; j < kGridObjects; ++j)
      if (s.objects[i] == s.objects[j])
        throw std::invalid_argument("grid state: objects " + std::to_string(i) + " and " +
                                    std::to_string(j) + " share a cell");
  }
  if (s.variant == GridVariant::kControlled) {
    for (int i = 1; i < kGridObjects; ++i) {
      const auto& route = patrol_route(i);
      bool found = false;
      for (const auto& c : route) found = found || c == s.objects[i];
      if (!found)
        throw std::invalid_argument("grid state: patroller " + std::to_string(i) +
                                    " off its route");
    }
  }
}

inline void encode_grid_action(const GridAction& a, float* out) {
  for (int i = 0; i < kGridActionDim; ++i) out[i] = 0.0f;
  out[a.position.row * kGridSize + a.position.col] = 1.0f;
  out[25 + static_cast<int>(a.direction)] = 1.0f;
}

inline GridAction decode_grid_action(const float* v) {
  int pos = -1, dir = -1;
  for (int i = 0; i < 25; ++i)
    if (v[i] != 0.0f) {
      if (v[i] != 1.0f || pos >= 0)
        throw std::invalid_argument("grid action: position block is not one-hot");
      pos = i;
    }
  for (int i = 25; i < kGridActionDim; ++i)
    if (v[i] != 0.0f) {
      if (v[i] != 1.0f || dir >= 0)
        throw std::invalid_argument("grid action: direction block is not one-hot");
      dir = i - 25;
    }
  if (pos < 0 || dir < 0) throw std::invalid_argument("grid action: missing one-hot entry");
  return {{pos % kGridSize, pos / kGridSize}, static_cast<GridDir>(dir)};
}

inline GridState grid_reset(GridVariant variant, uint64_t seed) {
  Rng rng(seed);
  GridState s;
  s.variant = variant;
  auto cell_free = [&](GridPos p, int upto) {
    for (int i = 0; i < upto; ++i)
      if (s.objects[i] == p) return false;
    return true;
  };
  if (variant == GridVariant::kControlled) {
    // patrollers first (fixed draw order), then the agent on a free cell
    for (int i = 1; i < kGridObjects; ++i)
      s.objects[i] = patrol_route(i)[rng.uniform_int(4)];
    for (;;) {
      const int c = static_cast<int>(rng.uniform_int(25));
      const GridPos p{c % kGridSize, c / kGridSize};
      bool free = true;
      for (int i = 1; i < kGridObjects; ++i) free = free && !(s.objects[i] == p);
      if (free) {
        s.objects[0] = p;
        break;
      }
    }
  } else {
    for (int i = 0; i < kGridObjects; ++i) {
      for (;;) {
        const int c = static_cast<int>(rng.uniform_int(25));
        const GridPos p{c % kGridSize, c / kGridSize};
        if (cell_free(p, i)) {
          s.objects[i] = p;
          break;
        }
      }
    }
  }
  return s;
}

inline GridPos dir_target(GridPos p, GridDir d) {
  switch (d) {
    case GridDir::kUp: return {p.col, p.row - 1};
    case GridDir::kDown: return {p.col, p.row + 1};
    case GridDir::kLeft: return {p.col - 1, p.row};
    case GridDir::kRight: return {p.col + 1, p.row};
  }
  return p;
}

inline GridState grid_step(const GridState& s, const GridAction& a) {
  validate_state(s);
  GridState out = s;
  auto occupied = [&](GridPos p) {
    for (const auto& o : out.objects)
      if (o == p) return true;
    return false;
  };
  int idx = -1;
  for (int i = 0; i < kGridObjects; ++i)
    if (s.objects[i] == a.position) idx = i;
  const bool responsive = idx >= 0 && (s.variant != GridVariant::kControlled || idx == 0);
  if (responsive) {
    const GridPos tgt = dir_target(a.position, a.direction);
    if (on_board(tgt) && !occupied(tgt)) out.objects[idx] = tgt;
  }
  if (s.variant == GridVariant::kControlled) {
    // patrollers advance in index order after the action resolves
    for (int i = 1; i < kGridObjects; ++i) {
      const auto& route = patrol_route(i);
      int phase = 0;
      for (int p = 0; p < 4; ++p)
        if (route[p] == out.objects[i]) phase = p;
      const GridPos next = route[(phase + 1) % 4];
      if (!occupied(next)) out.objects[i] = next;
    }
  }
  return out;
}

inline GridAction grid_sample_action(const GridState& s, Rng& rng) {
  const int obj = static_cast<int>(rng.uniform_int(kGridObjects));
  const int dir = static_cast<int>(rng.uniform_int(4));
  return {s.objects[obj], static_cast<GridDir>(dir)};
}

namespace detail {

struct Rgb {
  uint8_t r, g, b;
};

// object index -> base color; object 0 is white in the controlled variant
inline Rgb grid_color(int obj, GridVariant v) {
  static const Rgb colors[kGridObjects] = {
      {220, 60, 60}, {60, 200, 80}, {70, 90, 230}, {230, 200, 60}, {200, 70, 220}};
  if (v == GridVariant::kControlled && obj == 0) return {255, 255, 255};
  return colors[obj];
}

inline void put_px(uint8_t* img, int x, int y, Rgb c) {
  constexpr int px = kGridImagePx;
  img[0 * px * px + y * px + x] = c.r;
  img[1 * px * px + y * px + x] = c.g;
  img[2 * px * px + y * px + x] = c.b;
}

inline bool sprite_hit(int obj, int x, int y) {
  const int u = 2 * x - 9, w = 2 * y - 9;  // doubled offsets from cell center
  switch (obj) {
    case 0: return u * u + w * w <= 64;                                  // circle
    case 1: return x >= 1 && x <= 8 && y >= 1 && y <= 8;                 // square
    case 2: return y >= 1 && y <= 8 && std::abs(u) <= y;                 // triangle
    case 3: return std::abs(u) + std::abs(w) <= 8;                       // diamond
    default:
      return (x >= 3 && x <= 6 && y >= 1 && y <= 8) ||
             (y >= 3 && y <= 6 && x >= 1 && x <= 8);                     // cross
  }
}

inline void render_flat(const GridState& s, uint8_t* img) {
  for (int obj = 0; obj < kGridObjects; ++obj) {
    const Rgb c = grid_color(obj, s.variant);
    const int ox = s.objects[obj].col * kGridCellPx;
    const int oy = s.objects[obj].row * kGridCellPx;
    for (int y = 0; y < kGridCellPx; ++y)
      for (int x = 0; x < kGridCellPx; ++x)
        if (sprite_hit(obj, x, y)) put_px(img, ox + x, oy + y, c);
  }
}

// Cube silhouette: hexagon with a diamond top face (half-width 4), vertical
// sides, and a bottom diamond; anchored at the top vertex.
inline void render_cube(uint8_t* img, int sx, int sy, Rgb c) {
  const Rgb top = c;
  const Rgb left{static_cast<uint8_t>(c.r * 3 / 5), static_cast<uint8_t>(c.g * 3 / 5),
                 static_cast<uint8_t>(c.b * 3 / 5)};
  const Rgb right{static_cast<uint8_t>(c.r * 2 / 5), static_cast<uint8_t>(c.g * 2 / 5),
                  static_cast<uint8_t>(c.b * 2 / 5)};
  for (int dy = 0; dy <= 10; ++dy)
    for (int dx = -4; dx <= 4; ++dx) {
      const bool in_top = std::abs(dx) + 2 * std::abs(dy - 2) <= 4;
      const bool in_mid = dy >= 2 && dy <= 8;
      const bool in_bot = dy > 8 && std::abs(dx) + 2 * std::abs(dy - 8) <= 4;
      if (!(in_top || in_mid || in_bot)) continue;
      put_px(img, sx + dx, sy + dy, in_top ? top : (dx < 0 ? left : right));
    }
}

inline void render_dimetric(const GridState& s, uint8_t* img) {
  // painter's order: larger col+row is nearer the viewer, drawn last
  std::array<int, kGridObjects> order{0, 1, 2, 3, 4};
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const int da = s.objects[a].col + s.objects[a].row;
    const int db = s.objects[b].col + s.objects[b].row;
    return da != db ? da < db : a < b;
  });
  for (int obj : order) {
    const GridPos p = s.objects[obj];
    const int sx = 25 + (p.col - p.row) * 5;
    const int sy = 2 + (p.col + p.row) * 4;
    render_cube(img, sx, sy, grid_color(obj, s.variant));
  }
}

}  // namespace detail

// Writes a 3x50x50 RGB image (channel-major). Background is uniform black.
inline void grid_render(const GridState& s, uint8_t* img) {
  validate_state(s);
  for (int64_t i = 0; i < kGridObsNumel; ++i) img[i] = 0;
  if (s.variant == GridVariant::kCubes3d)
    detail::render_dimetric(s, img);
  else
    detail::render_flat(s, img);
}

// Seed streams for dataset generation; episode e derives its reset and action
// RNGs independently so files can be regenerated piecewise.
constexpr uint64_t kGridResetStream = 0x7265736574ull;   // "reset"
constexpr uint64_t kGridActionStream = 0x616374ull;      // "act"

inline Dataset generate_grid_dataset(GridVariant variant, int64_t episodes, int64_t episode_len,
                                     uint64_t seed) {
  if (episodes < 1 || episode_len < 1)
    throw std::invalid_argument("grid dataset: need at least 1 episode of length 1");
  Dataset d;
  d.header.environment = to_string(variant);
  d.header.episodes = episodes;
  d.header.episode_len = episode_len;
  d.header.obs_shape = {3, kGridImagePx, kGridImagePx};
  d.header.action_dim = kGridActionDim;
  d.header.seed = seed;
  d.header.truth_dim = 0;
  d.header.kind = ObsKind::kImageU8;
  d.allocate();

  std::vector<uint8_t> img(kGridObsNumel), next_img(kGridObsNumel);
  for (int64_t e = 0; e < episodes; ++e) {
    GridState state = grid_reset(variant, derive_seed(seed, {kGridResetStream, uint64_t(e)}));
    Rng act_rng(derive_seed(seed, {kGridActionStream, uint64_t(e)}));
    grid_render(state, img.data());
    for (int64_t t = 0; t < episode_len; ++t) {
      const int64_t r = e * episode_len + t;
      const GridAction a = grid_sample_action(state, act_rng);
      const GridState next = grid_step(state, a);
      grid_render(next, next_img.data());
      std::copy(img.begin(), img.end(), d.obs0_u8.begin() + r * kGridObsNumel);
      encode_grid_action(a, d.actions.data() + r * kGridActionDim);
      std::copy(next_img.begin(), next_img.end(), d.obs1_u8.begin() + r * kGridObsNumel);
      state = next;
      std::swap(img, next_img);
    }
  }
  return d;
}

}  // namespace actionbind
