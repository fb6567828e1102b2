#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

namespace frontflow {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

enum class BoundaryTag : std::uint8_t { Inlet, Outlet, Wall };

std::string_view to_string(BoundaryTag tag);
BoundaryTag boundary_tag_from_string(std::string_view text);

struct BoundaryEdge {
  std::uint32_t a = 0;
  std::uint32_t b = 0;
  BoundaryTag tag = BoundaryTag::Wall;
};

using Triangle = std::array<std::uint32_t, 3>;

/// Counter-clockwise triangulation of the rectangle [0,D_x]x[0,D_y] with an
/// explicit tag on every boundary edge. Immutable once constructed; the
/// constructor rejects anything that violates the mesh invariants.
class Mesh {
 public:
  Mesh(std::vector<Vec2> nodes, std::vector<Triangle> triangles,
       std::vector<BoundaryEdge> boundary, Vec2 domain);

  std::span<const Vec2> nodes() const { return nodes_; }
  std::span<const Triangle> triangles() const { return triangles_; }
  std::span<const BoundaryEdge> boundary() const { return boundary_; }
  Vec2 domain() const { return domain_; }
  std::size_t node_count() const { return nodes_.size(); }
  std::size_t triangle_count() const { return triangles_.size(); }

  /// Signed area of triangle `t` (positive for every valid mesh).
  double triangle_area(std::size_t t) const;

  /// Node-node adjacency in CSR form (excludes the node itself).
  std::span<const std::uint32_t> neighbours(std::uint32_t node) const {
    return {adjacency_.data() + adjacency_offsets_[node],
            adjacency_.data() + adjacency_offsets_[node + 1]};
  }

  std::span<const std::uint32_t> inlet_nodes() const { return inlet_nodes_; }
  std::span<const std::uint32_t> outlet_nodes() const { return outlet_nodes_; }
  bool is_inlet(std::uint32_t node) const { return node_role_[node] == kRoleInlet; }
  bool is_outlet(std::uint32_t node) const { return node_role_[node] == kRoleOutlet; }

  /// Index of the node nearest to `p`; ties go to the lower index.
  std::uint32_t nearest_node(Vec2 p) const;

 private:
  static constexpr std::uint8_t kRoleInterior = 0;
  static constexpr std::uint8_t kRoleInlet = 1;
  static constexpr std::uint8_t kRoleOutlet = 2;

  void validate_and_index();

  std::vector<Vec2> nodes_;
  std::vector<Triangle> triangles_;
  std::vector<BoundaryEdge> boundary_;
  Vec2 domain_;
  std::vector<std::uint32_t> adjacency_offsets_;
  std::vector<std::uint32_t> adjacency_;
  std::vector<std::uint32_t> inlet_nodes_;
  std::vector<std::uint32_t> outlet_nodes_;
  std::vector<std::uint8_t> node_role_;
};

/// Regular nx*ny node lattice over `domain`, each cell split along its
/// lower-left to upper-right diagonal. Left edge inlet, right edge outlet,
/// top and bottom walls.
Mesh generate_structured_mesh(int nx, int ny, Vec2 domain);

Mesh parse_mesh(std::istream& in);
void write_mesh(std::ostream& out, const Mesh& mesh);
Mesh load_mesh(const std::filesystem::path& path);
void save_mesh(const std::filesystem::path& path, const Mesh& mesh);

/// Median-dual control volumes with lumped (area/3) quadrature weights.
struct ControlVolumes {
  std::vector<double> cv_area;
  std::vector<double> weights;
};

ControlVolumes build_control_volumes(const Mesh& mesh);

/// Cell-centred regular grid: point (i, j) sits at ((i+0.5)D_x/nx, (j+0.5)D_y/ny).
/// Fields on it are stored row-major with x fastest, index j*nx + i.
struct RegularGrid {
  int nx = 0;
  int ny = 0;
  Vec2 domain;

  std::size_t size() const { return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny); }
  double x(int i) const { return (i + 0.5) * domain.x / nx; }
  double y(int j) const { return (j + 0.5) * domain.y / ny; }
  std::size_t index(int i, int j) const { return static_cast<std::size_t>(j) * nx + i; }
  std::vector<Vec2> points() const;
  /// Nearest grid column/row to a coordinate, ties to the lower index.
  int nearest_i(double x) const;
  int nearest_j(double y) const;
  friend bool operator==(const RegularGrid&, const RegularGrid&) = default;
};

std::vector<double> nearest_neighbour_transfer(std::span<const double> grid_field,
                                               const RegularGrid& grid, const Mesh& mesh);

}  // namespace frontflow
