#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "adsy/tensor.hpp"

namespace adsy {

// Tabletop geometry. The location lattice (grid_rows x grid_cols cells, one
// pick/release location per cell) renders as pitch x pitch pixel blocks
// centered in the image.
struct GeometryConfig {
  int grid_rows = 2;
  int grid_cols = 3;
  int pitch = 32;
  int image_h = 128;
  int image_w = 128;
  float level_thickness = 0.25f;
  int max_objects = 3;

  int locations() const { return grid_rows * grid_cols; }
  int num_actions() const { return locations() * locations(); }
  int row_origin() const { return (image_h - grid_rows * pitch) / 2; }
  int col_origin() const { return (image_w - grid_cols * pitch) / 2; }

  bool operator==(const GeometryConfig&) const = default;
};

enum class ObjectKind : std::uint8_t { Cube = 0, Stick = 1 };

// A cube covers its center cell; a stick covers three horizontally
// contiguous cells centered on its center cell.
struct SimObject {
  int id = 0;
  ObjectKind kind = ObjectKind::Cube;
  int row = 0;
  int col = 0;
  int level = 0;  // stack height index, 0 = on the table
};

struct WorldState {
  GeometryConfig geom;
  std::vector<SimObject> objects;  // sorted by id
  std::uint64_t rng_seed = 0;

  std::vector<std::uint8_t> to_bytes() const;
};

// pick location x release location, flat index pick*L + release in [0, L^2).
struct ActionId {
  int pick_loc = 0;
  int release_loc = 0;

  int flat(int locations) const { return pick_loc * locations + release_loc; }
  static ActionId from_flat(int flat, int locations) {
    return ActionId{flat / locations, flat % locations};
  }
  bool operator==(const ActionId&) const = default;
};

// Per-object change across one action: image-plane center-of-mass
// displacement in pixels (dx along rows, dy along columns) and the change of
// the object's surface depth value (moving up makes depth smaller, so dz is
// negative).
struct Effect {
  float dx = 0.0f;
  float dy = 0.0f;
  float dz = 0.0f;
  bool operator==(const Effect&) const = default;
};

struct ObjectMask {
  int id = 0;
  std::vector<std::uint8_t> pixels;  // H*W, row-major
};

struct RenderResult {
  Tensor<float> depth;             // [H,W], 1.0 = table plane
  std::vector<ObjectMask> masks;   // sorted by id
};

// Places num_objects objects at distinct locations of the near row (row 0).
// Kinds are uniform; a stick can only sit at the center column (its 3-cell
// footprint must stay on the grid), and a cube drawn onto a cell the stick
// covers rests on top of it.
WorldState init_world(const GeometryConfig& geom, std::uint64_t seed, int num_objects);

// The object whose center cell is `loc` with nothing stacked above that cell;
// highest such object wins. Occluded objects are not graspable.
std::optional<int> graspable_at(const WorldState& w, int loc);

// Pick-and-release semantics: no graspable target means a no-op. Otherwise
// the target is lifted together with everything transitively resting on it,
// translated so the target's center lands at the release location, and the
// assembly settles on the highest stack under its destination footprint.
// Effects are ordered by object id; objects outside the carried set get
// exactly (0,0,0). An action whose translated assembly would leave the grid
// is also a no-op.
std::pair<WorldState, std::vector<Effect>> apply_action(const WorldState& w, ActionId a);

// False only when the action would push the carried assembly off the grid
// (exploration resamples those); no-ops on empty locations are valid data.
bool action_valid(const WorldState& w, ActionId a);

// Orthographic top-down depth render plus per-object masks: topmost-visible
// pixels, or the full occluded footprint for completely hidden objects.
RenderResult render(const WorldState& w);

// Validity checks used by property tests.
bool occupancy_disjoint(const WorldState& w);
bool support_sound(const WorldState& w);

std::vector<std::pair<int, int>> footprint_cells(const SimObject& obj);
int cell_to_loc(const GeometryConfig& geom, int row, int col);
std::pair<int, int> loc_to_cell(const GeometryConfig& geom, int loc);

// Pixel center of mass of the object's (unoccluded) footprint.
std::pair<double, double> footprint_pixel_center(const GeometryConfig& geom, const SimObject& obj);

// Depth value of the object's own top surface.
float surface_depth(const GeometryConfig& geom, const SimObject& obj);

std::string describe_action(const GeometryConfig& geom, ActionId a);

}  // namespace adsy
