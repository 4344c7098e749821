#include "adsy/sim.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>

#include "adsy/rng.hpp"

namespace adsy {

std::vector<std::pair<int, int>> footprint_cells(const SimObject& obj) {
  if (obj.kind == ObjectKind::Cube) return {{obj.row, obj.col}};
  return {{obj.row, obj.col - 1}, {obj.row, obj.col}, {obj.row, obj.col + 1}};
}

int cell_to_loc(const GeometryConfig& geom, int row, int col) { return row * geom.grid_cols + col; }

std::pair<int, int> loc_to_cell(const GeometryConfig& geom, int loc) {
  return {loc / geom.grid_cols, loc % geom.grid_cols};
}

namespace {

bool in_grid(const GeometryConfig& geom, int row, int col) {
  return row >= 0 && row < geom.grid_rows && col >= 0 && col < geom.grid_cols;
}

bool occupies(const SimObject& obj, int row, int col) {
  for (auto [r, c] : footprint_cells(obj))
    if (r == row && c == col) return true;
  return false;
}

bool footprints_overlap(const SimObject& a, const SimObject& b) {
  for (auto [r, c] : footprint_cells(a))
    if (occupies(b, r, c)) return true;
  return false;
}

bool stick_center_ok(const GeometryConfig& geom, int col) {
  return col - 1 >= 0 && col + 1 < geom.grid_cols;
}

// Highest occupied level at a cell among the given objects, or -1 if empty.
int top_level_at(const std::vector<SimObject>& objects, int row, int col) {
  int top = -1;
  for (const auto& o : objects)
    if (occupies(o, row, col)) top = std::max(top, o.level);
  return top;
}

void append_bytes(std::vector<std::uint8_t>& out, const void* p, std::size_t n) {
  const auto* b = static_cast<const std::uint8_t*>(p);
  out.insert(out.end(), b, b + n);
}

}  // namespace

std::vector<std::uint8_t> WorldState::to_bytes() const {
  std::vector<std::uint8_t> out;
  const std::int32_t header[] = {geom.grid_rows, geom.grid_cols, geom.pitch,
                                 geom.image_h,   geom.image_w,   geom.max_objects,
                                 static_cast<std::int32_t>(objects.size())};
  append_bytes(out, header, sizeof(header));
  append_bytes(out, &geom.level_thickness, sizeof(float));
  append_bytes(out, &rng_seed, sizeof(rng_seed));
  for (const auto& o : objects) {
    const std::int32_t rec[] = {o.id, static_cast<std::int32_t>(o.kind), o.row, o.col, o.level};
    append_bytes(out, rec, sizeof(rec));
  }
  return out;
}

WorldState init_world(const GeometryConfig& geom, std::uint64_t seed, int num_objects) {
  if (num_objects < 1 || num_objects > geom.max_objects)
    throw std::invalid_argument("init_world: num_objects must be in [1," +
                                std::to_string(geom.max_objects) + "], got " +
                                std::to_string(num_objects));
  Rng rng(seed);
  WorldState w;
  w.geom = geom;
  w.rng_seed = seed;

  // Rejection-sample a feasible kind assignment: at most one stick fits the
  // near row (its footprint spans every column it could cover twice over).
  std::vector<ObjectKind> kinds(static_cast<std::size_t>(num_objects));
  while (true) {
    int sticks = 0;
    for (auto& k : kinds) {
      k = rng.uniform_int(2) == 0 ? ObjectKind::Cube : ObjectKind::Stick;
      if (k == ObjectKind::Stick) ++sticks;
    }
    if (sticks <= 1) break;
  }

  // Distinct center cells in the near row; sticks take the only legal center
  // column, cubes draw from the remaining cells.
  std::vector<int> free_cols;
  int stick_col = -1;
  for (int c = 0; c < geom.grid_cols; ++c)
    if (stick_center_ok(geom, c)) stick_col = c;
  const bool has_stick =
      std::any_of(kinds.begin(), kinds.end(), [](ObjectKind k) { return k == ObjectKind::Stick; });
  for (int c = 0; c < geom.grid_cols; ++c)
    if (!(has_stick && c == stick_col)) free_cols.push_back(c);
  // Fisher-Yates on the cube columns
  for (std::size_t i = free_cols.size(); i > 1; --i)
    std::swap(free_cols[i - 1], free_cols[static_cast<std::size_t>(rng.uniform_int(i))]);

  std::size_t next_col = 0;
  for (int i = 0; i < num_objects; ++i) {
    SimObject o;
    o.id = i;
    o.kind = kinds[static_cast<std::size_t>(i)];
    o.row = 0;
    o.col = o.kind == ObjectKind::Stick ? stick_col : free_cols[next_col++];
    o.level = 0;
    w.objects.push_back(o);
  }
  // Sticks sit on the table; a cube whose cell the stick covers rests on it.
  for (auto& o : w.objects) {
    if (o.kind != ObjectKind::Cube) continue;
    for (const auto& s : w.objects)
      if (s.kind == ObjectKind::Stick && occupies(s, o.row, o.col)) o.level = s.level + 1;
  }
  return w;
}

std::optional<int> graspable_at(const WorldState& w, int loc) {
  if (loc < 0 || loc >= w.geom.locations())
    throw std::invalid_argument("graspable_at: location " + std::to_string(loc) +
                                " out of range [0," + std::to_string(w.geom.locations()) + ")");
  const auto [row, col] = loc_to_cell(w.geom, loc);
  const int top = top_level_at(w.objects, row, col);
  std::optional<int> best;
  int best_level = -1;
  for (const auto& o : w.objects) {
    if (o.row != row || o.col != col) continue;
    if (o.level < top) continue;  // something sits above its center cell
    if (o.level > best_level) {
      best_level = o.level;
      best = o.id;
    }
  }
  return best;
}

namespace {

// The picked object plus everything transitively resting on it.
std::vector<int> carried_set(const WorldState& w, int target_id) {
  std::vector<int> carried{target_id};
  std::vector<std::uint8_t> in_set(w.objects.size(), 0);
  in_set[static_cast<std::size_t>(target_id)] = 1;
  bool grew = true;
  while (grew) {
    grew = false;
    for (const auto& o : w.objects) {
      if (in_set[static_cast<std::size_t>(o.id)]) continue;
      for (const auto& base : w.objects) {
        if (!in_set[static_cast<std::size_t>(base.id)]) continue;
        if (o.level == base.level + 1 && footprints_overlap(o, base)) {
          in_set[static_cast<std::size_t>(o.id)] = 1;
          carried.push_back(o.id);
          grew = true;
          break;
        }
      }
    }
  }
  std::sort(carried.begin(), carried.end());
  return carried;
}

struct MovePlan {
  bool is_noop = true;
  std::vector<int> carried;
  int drow = 0, dcol = 0, dlevel = 0;
};

MovePlan plan_move(const WorldState& w, ActionId a) {
  MovePlan plan;
  const auto target = graspable_at(w, a.pick_loc);
  if (!target) return plan;
  plan.carried = carried_set(w, *target);

  const SimObject& t = w.objects[static_cast<std::size_t>(*target)];
  const auto [r2, c2] = loc_to_cell(w.geom, a.release_loc);
  plan.drow = r2 - t.row;
  plan.dcol = c2 - t.col;

  std::vector<std::uint8_t> is_carried(w.objects.size(), 0);
  for (int id : plan.carried) is_carried[static_cast<std::size_t>(id)] = 1;

  // Destination footprint must stay on the grid for every carried object.
  std::vector<SimObject> remaining;
  for (const auto& o : w.objects)
    if (!is_carried[static_cast<std::size_t>(o.id)]) remaining.push_back(o);
  int landing = 0;
  for (int id : plan.carried) {
    SimObject moved = w.objects[static_cast<std::size_t>(id)];
    moved.row += plan.drow;
    moved.col += plan.dcol;
    for (auto [r, c] : footprint_cells(moved)) {
      if (!in_grid(w.geom, r, c)) return plan;  // off-grid: stay a no-op
      landing = std::max(landing, top_level_at(remaining, r, c) + 1);
    }
  }
  plan.dlevel = landing - t.level;
  plan.is_noop = false;
  return plan;
}

}  // namespace

std::pair<WorldState, std::vector<Effect>> apply_action(const WorldState& w, ActionId a) {
  if (a.pick_loc < 0 || a.pick_loc >= w.geom.locations() || a.release_loc < 0 ||
      a.release_loc >= w.geom.locations())
    throw std::invalid_argument("apply_action: invalid action (" + std::to_string(a.pick_loc) +
                                "," + std::to_string(a.release_loc) + ")");
  std::vector<Effect> effects(w.objects.size());
  const MovePlan plan = plan_move(w, a);
  if (plan.is_noop) return {w, effects};

  WorldState next = w;
  for (int id : plan.carried) {
    SimObject& o = next.objects[static_cast<std::size_t>(id)];
    o.row += plan.drow;
    o.col += plan.dcol;
    o.level += plan.dlevel;
    Effect& e = effects[static_cast<std::size_t>(id)];
    e.dx = static_cast<float>(plan.drow * w.geom.pitch);
    e.dy = static_cast<float>(plan.dcol * w.geom.pitch);
    e.dz = -w.geom.level_thickness * static_cast<float>(plan.dlevel);
  }
  return {next, effects};
}

bool action_valid(const WorldState& w, ActionId a) {
  const auto target = graspable_at(w, a.pick_loc);
  if (!target) return true;  // no-op on an empty location is legal data
  const MovePlan plan = plan_move(w, a);
  return !plan.is_noop;
}

RenderResult render(const WorldState& w) {
  const GeometryConfig& g = w.geom;
  RenderResult out;
  out.depth = Tensor<float>(Shape{g.image_h, g.image_w}, 1.0f);

  auto fill_cell = [&](std::vector<std::uint8_t>* mask, Tensor<float>* depth, int row, int col,
                       float value) {
    const int r0 = g.row_origin() + row * g.pitch;
    const int c0 = g.col_origin() + col * g.pitch;
    for (int r = r0; r < r0 + g.pitch; ++r)
      for (int c = c0; c < c0 + g.pitch; ++c) {
        if (mask) (*mask)[static_cast<std::size_t>(r * g.image_w + c)] = 1;
        if (depth) (*depth)[r * g.image_w + c] = value;
      }
  };

  for (int row = 0; row < g.grid_rows; ++row)
    for (int col = 0; col < g.grid_cols; ++col) {
      const int top = top_level_at(w.objects, row, col);
      if (top >= 0)
        fill_cell(nullptr, &out.depth, row, col,
                  1.0f - g.level_thickness * static_cast<float>(top + 1));
    }

  for (const auto& o : w.objects) {
    ObjectMask m;
    m.id = o.id;
    m.pixels.assign(static_cast<std::size_t>(g.image_h * g.image_w), 0);
    bool visible = false;
    for (auto [r, c] : footprint_cells(o)) {
      if (top_level_at(w.objects, r, c) == o.level) {
        fill_cell(&m.pixels, nullptr, r, c, 0);
        visible = true;
      }
    }
    if (!visible) {
      // fully hidden: the tracked segment falls back to the occluded footprint
      for (auto [r, c] : footprint_cells(o)) fill_cell(&m.pixels, nullptr, r, c, 0);
    }
    out.masks.push_back(std::move(m));
  }
  std::sort(out.masks.begin(), out.masks.end(),
            [](const ObjectMask& a, const ObjectMask& b) { return a.id < b.id; });
  return out;
}

bool occupancy_disjoint(const WorldState& w) {
  for (std::size_t i = 0; i < w.objects.size(); ++i)
    for (std::size_t j = i + 1; j < w.objects.size(); ++j) {
      const auto& a = w.objects[i];
      const auto& b = w.objects[j];
      if (a.level == b.level && footprints_overlap(a, b)) return false;
    }
  return true;
}

bool support_sound(const WorldState& w) {
  for (const auto& o : w.objects) {
    if (o.level == 0) continue;
    bool supported = false;
    for (const auto& base : w.objects)
      if (base.id != o.id && base.level == o.level - 1 && footprints_overlap(o, base))
        supported = true;
    if (!supported) return false;
  }
  return true;
}

std::pair<double, double> footprint_pixel_center(const GeometryConfig& geom, const SimObject& obj) {
  double rsum = 0, csum = 0;
  const auto cells = footprint_cells(obj);
  for (auto [r, c] : cells) {
    rsum += geom.row_origin() + r * geom.pitch + (geom.pitch - 1) / 2.0;
    csum += geom.col_origin() + c * geom.pitch + (geom.pitch - 1) / 2.0;
  }
  return {rsum / static_cast<double>(cells.size()), csum / static_cast<double>(cells.size())};
}

float surface_depth(const GeometryConfig& geom, const SimObject& obj) {
  return 1.0f - geom.level_thickness * static_cast<float>(obj.level + 1);
}

std::string describe_action(const GeometryConfig& geom, ActionId a) {
  const auto [pr, pc] = loc_to_cell(geom, a.pick_loc);
  const auto [rr, rc] = loc_to_cell(geom, a.release_loc);
  return "pick loc " + std::to_string(a.pick_loc) + " (r" + std::to_string(pr) + ",c" +
         std::to_string(pc) + ") -> release loc " + std::to_string(a.release_loc) + " (r" +
         std::to_string(rr) + ",c" + std::to_string(rc) + ")";
}

}  // namespace adsy
