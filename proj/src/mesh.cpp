#include "frontflow/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "frontflow/error.hpp"
#include "io_util.hpp"

namespace frontflow {

namespace {

std::uint64_t edge_key(std::uint32_t a, std::uint32_t b) {
  if (a > b) std::swap(a, b);
  return (static_cast<std::uint64_t>(a) << 32) | b;
}

}  // namespace

std::string_view to_string(BoundaryTag tag) {
  switch (tag) {
    case BoundaryTag::Inlet: return "inlet";
    case BoundaryTag::Outlet: return "outlet";
    case BoundaryTag::Wall: return "wall";
  }
  return "wall";
}

BoundaryTag boundary_tag_from_string(std::string_view text) {
  if (text == "inlet") return BoundaryTag::Inlet;
  if (text == "outlet") return BoundaryTag::Outlet;
  if (text == "wall") return BoundaryTag::Wall;
  fail(ErrorCode::Parse, "unknown boundary tag '" + std::string(text) + "'");
}

Mesh::Mesh(std::vector<Vec2> nodes, std::vector<Triangle> triangles,
           std::vector<BoundaryEdge> boundary, Vec2 domain)
    : nodes_(std::move(nodes)),
      triangles_(std::move(triangles)),
      boundary_(std::move(boundary)),
      domain_(domain) {
  validate_and_index();
}

double Mesh::triangle_area(std::size_t t) const {
  const auto& tri = triangles_[t];
  const Vec2 a = nodes_[tri[0]], b = nodes_[tri[1]], c = nodes_[tri[2]];
  return 0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y));
}

void Mesh::validate_and_index() {
  auto invalid = [](const std::string& what) { fail(ErrorCode::Validation, "mesh invariant violated: " + what); };

  if (!(domain_.x > 0.0) || !(domain_.y > 0.0)) invalid("domain size must be positive");
  if (nodes_.empty() || triangles_.empty()) invalid("mesh needs nodes and triangles");
  const double tol_x = 1e-12 * domain_.x, tol_y = 1e-12 * domain_.y;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Vec2 p = nodes_[i];
    if (!(p.x >= -tol_x && p.x <= domain_.x + tol_x && p.y >= -tol_y && p.y <= domain_.y + tol_y))
      invalid("node " + std::to_string(i) + " lies outside the domain");
  }

  const auto n = static_cast<std::uint32_t>(nodes_.size());
  std::unordered_map<std::uint64_t, int> edge_uses;
  edge_uses.reserve(triangles_.size() * 3);
  for (std::size_t t = 0; t < triangles_.size(); ++t) {
    const auto& tri = triangles_[t];
    for (auto v : tri)
      if (v >= n) invalid("triangle " + std::to_string(t) + " references node index " + std::to_string(v) + " >= node count");
    if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2])
      invalid("triangle " + std::to_string(t) + " repeats a node");
    if (!(triangle_area(t) > 0.0)) invalid("triangle " + std::to_string(t) + " does not have positive signed area");
    for (int k = 0; k < 3; ++k) ++edge_uses[edge_key(tri[k], tri[(k + 1) % 3])];
  }
  for (const auto& [key, uses] : edge_uses)
    if (uses > 2) invalid("edge shared by more than two triangles");

  std::unordered_map<std::uint64_t, BoundaryTag> tags;
  bool has_inlet = false, has_outlet = false;
  for (const auto& e : boundary_) {
    if (e.a >= n || e.b >= n) invalid("boundary edge references a node index >= node count");
    const auto key = edge_key(e.a, e.b);
    const auto it = edge_uses.find(key);
    if (it == edge_uses.end() || it->second != 1)
      invalid("tagged edge (" + std::to_string(e.a) + "," + std::to_string(e.b) + ") is not a boundary edge");
    if (!tags.emplace(key, e.tag).second)
      invalid("boundary edge (" + std::to_string(e.a) + "," + std::to_string(e.b) + ") carries more than one tag");
    has_inlet |= e.tag == BoundaryTag::Inlet;
    has_outlet |= e.tag == BoundaryTag::Outlet;
  }
  for (const auto& [key, uses] : edge_uses)
    if (uses == 1 && !tags.contains(key))
      invalid("boundary edge (" + std::to_string(key >> 32) + "," + std::to_string(key & 0xffffffffu) + ") is untagged");
  if (!has_inlet) invalid("inlet edge set is empty");
  if (!has_outlet) invalid("outlet edge set is empty");

  node_role_.assign(n, kRoleInterior);
  for (const auto& e : boundary_) {
    if (e.tag == BoundaryTag::Wall) continue;
    const std::uint8_t role = e.tag == BoundaryTag::Inlet ? kRoleInlet : kRoleOutlet;
    for (auto v : {e.a, e.b}) {
      if (node_role_[v] != kRoleInterior && node_role_[v] != role)
        invalid("node " + std::to_string(v) + " belongs to both inlet and outlet");
      node_role_[v] = role;
    }
  }
  for (std::uint32_t v = 0; v < n; ++v) {
    if (node_role_[v] == kRoleInlet) inlet_nodes_.push_back(v);
    if (node_role_[v] == kRoleOutlet) outlet_nodes_.push_back(v);
  }

  std::vector<std::vector<std::uint32_t>> adj(n);
  for (const auto& tri : triangles_)
    for (int k = 0; k < 3; ++k)
      for (int m = 0; m < 3; ++m)
        if (k != m) adj[tri[k]].push_back(tri[m]);
  adjacency_offsets_.assign(n + 1, 0);
  for (std::uint32_t v = 0; v < n; ++v) {
    auto& list = adj[v];
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
    adjacency_offsets_[v + 1] = adjacency_offsets_[v] + static_cast<std::uint32_t>(list.size());
  }
  adjacency_.reserve(adjacency_offsets_.back());
  for (const auto& list : adj) adjacency_.insert(adjacency_.end(), list.begin(), list.end());
}

std::uint32_t Mesh::nearest_node(Vec2 p) const {
  std::uint32_t best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
    const double dx = nodes_[i].x - p.x, dy = nodes_[i].y - p.y;
    const double d2 = dx * dx + dy * dy;
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return best;
}

Mesh generate_structured_mesh(int nx, int ny, Vec2 domain) {
  require(nx >= 2 && ny >= 2, ErrorCode::InvalidArgument, "structured mesh needs nx >= 2 and ny >= 2");
  require(domain.x > 0.0 && domain.y > 0.0, ErrorCode::InvalidArgument, "domain size must be positive");
  auto id = [nx](int i, int j) { return static_cast<std::uint32_t>(j * nx + i); };

  std::vector<Vec2> nodes;
  nodes.reserve(static_cast<std::size_t>(nx) * ny);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      // Last row/column pinned to the domain edge exactly.
      const double x = i == nx - 1 ? domain.x : domain.x * i / (nx - 1);
      const double y = j == ny - 1 ? domain.y : domain.y * j / (ny - 1);
      nodes.push_back({x, y});
    }

  std::vector<Triangle> tris;
  tris.reserve(2 * static_cast<std::size_t>(nx - 1) * (ny - 1));
  for (int j = 0; j + 1 < ny; ++j)
    for (int i = 0; i + 1 < nx; ++i) {
      const auto a = id(i, j), b = id(i + 1, j), c = id(i + 1, j + 1), d = id(i, j + 1);
      tris.push_back({a, b, c});
      tris.push_back({a, c, d});
    }

  std::vector<BoundaryEdge> boundary;
  for (int j = 0; j + 1 < ny; ++j) {
    boundary.push_back({id(0, j), id(0, j + 1), BoundaryTag::Inlet});
    boundary.push_back({id(nx - 1, j), id(nx - 1, j + 1), BoundaryTag::Outlet});
  }
  for (int i = 0; i + 1 < nx; ++i) {
    boundary.push_back({id(i, 0), id(i + 1, 0), BoundaryTag::Wall});
    boundary.push_back({id(i, ny - 1), id(i + 1, ny - 1), BoundaryTag::Wall});
  }
  return Mesh(std::move(nodes), std::move(tris), std::move(boundary), domain);
}

Mesh parse_mesh(std::istream& in) {
  std::vector<Vec2> nodes;
  std::vector<Triangle> tris;
  std::vector<BoundaryEdge> boundary;
  std::optional<Vec2> domain;

  enum class Section { None, Nodes, Triangles, Boundary } section = Section::None;
  std::string line;
  int line_no = 0;
  auto where = [&] { return "mesh line " + std::to_string(line_no); };

  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    const auto tokens = detail::split_ws(std::string_view(line).substr(0, hash));
    if (tokens.empty()) continue;
    const auto& head = tokens[0];
    if (head == "domain") {
      if (tokens.size() != 3) fail(ErrorCode::Parse, where() + ": expected 'domain D_x D_y'");
      domain = Vec2{detail::parse_double(tokens[1], where()), detail::parse_double(tokens[2], where())};
      continue;
    }
    if (head == "nodes" || head == "triangles" || head == "boundary") {
      if (tokens.size() > 2) fail(ErrorCode::Parse, where() + ": malformed section header");
      section = head == "nodes" ? Section::Nodes : head == "triangles" ? Section::Triangles : Section::Boundary;
      continue;
    }
    switch (section) {
      case Section::None:
        fail(ErrorCode::Parse, where() + ": record outside of any section");
      case Section::Nodes: {
        if (tokens.size() != 3) fail(ErrorCode::Parse, where() + ": node record needs 'id x y'");
        const auto id = detail::parse_int(tokens[0], where());
        if (id != static_cast<long long>(nodes.size()))
          fail(ErrorCode::Parse, where() + ": node ids must be consecutive from 0");
        nodes.push_back({detail::parse_double(tokens[1], where()), detail::parse_double(tokens[2], where())});
        break;
      }
      case Section::Triangles: {
        if (tokens.size() != 4) fail(ErrorCode::Parse, where() + ": triangle record needs 'id n1 n2 n3'");
        const auto id = detail::parse_int(tokens[0], where());
        if (id != static_cast<long long>(tris.size()))
          fail(ErrorCode::Parse, where() + ": triangle ids must be consecutive from 0");
        Triangle t{};
        for (int k = 0; k < 3; ++k) {
          const auto v = detail::parse_int(tokens[k + 1], where());
          if (v < 0) fail(ErrorCode::Parse, where() + ": negative node index");
          t[k] = static_cast<std::uint32_t>(v);
        }
        tris.push_back(t);
        break;
      }
      case Section::Boundary: {
        if (tokens.size() != 3) fail(ErrorCode::Parse, where() + ": boundary record needs 'n1 n2 tag'");
        const auto a = detail::parse_int(tokens[0], where());
        const auto b = detail::parse_int(tokens[1], where());
        if (a < 0 || b < 0) fail(ErrorCode::Parse, where() + ": negative node index");
        BoundaryTag tag;
        try {
          tag = boundary_tag_from_string(tokens[2]);
        } catch (const Error& e) {
          fail(ErrorCode::Parse, where() + ": " + e.what());
        }
        boundary.push_back({static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b), tag});
        break;
      }
    }
  }
  if (!domain) {
    Vec2 extent{0.0, 0.0};
    for (const auto& p : nodes) extent = {std::max(extent.x, p.x), std::max(extent.y, p.y)};
    domain = extent;
  }
  return Mesh(std::move(nodes), std::move(tris), std::move(boundary), *domain);
}

void write_mesh(std::ostream& out, const Mesh& mesh) {
  out << "# frontflow mesh\n";
  out << "domain " << detail::format_double(mesh.domain().x) << ' ' << detail::format_double(mesh.domain().y) << '\n';
  out << "nodes\n";
  const auto nodes = mesh.nodes();
  for (std::size_t i = 0; i < nodes.size(); ++i)
    out << i << ' ' << detail::format_double(nodes[i].x) << ' ' << detail::format_double(nodes[i].y) << '\n';
  out << "triangles\n";
  const auto tris = mesh.triangles();
  for (std::size_t t = 0; t < tris.size(); ++t)
    out << t << ' ' << tris[t][0] << ' ' << tris[t][1] << ' ' << tris[t][2] << '\n';
  out << "boundary\n";
  for (const auto& e : mesh.boundary()) out << e.a << ' ' << e.b << ' ' << to_string(e.tag) << '\n';
}

Mesh load_mesh(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  return parse_mesh(in);
}

void save_mesh(const std::filesystem::path& path, const Mesh& mesh) {
  auto out = detail::open_out(path);
  write_mesh(out, mesh);
  if (!out) fail(ErrorCode::Io, "failed writing mesh '" + path.string() + "'");
}

ControlVolumes build_control_volumes(const Mesh& mesh) {
  ControlVolumes cv;
  cv.weights.assign(mesh.node_count(), 0.0);
  const auto tris = mesh.triangles();
  for (std::size_t t = 0; t < tris.size(); ++t) {
    const double third = mesh.triangle_area(t) / 3.0;
    for (auto v : tris[t]) cv.weights[v] += third;
  }
  for (std::size_t i = 0; i < cv.weights.size(); ++i)
    if (!(cv.weights[i] > 0.0))
      fail(ErrorCode::Validation, "mesh invariant violated: node " + std::to_string(i) + " is not part of any triangle");
  cv.cv_area = cv.weights;
  return cv;
}

std::vector<Vec2> RegularGrid::points() const {
  std::vector<Vec2> pts;
  pts.reserve(size());
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) pts.push_back({x(i), y(j)});
  return pts;
}

namespace {

int nearest_cell_centre(double coord, double length, int count) {
  const double h = length / count;
  int k = static_cast<int>(std::floor(coord / h - 0.5));
  k = std::clamp(k, 0, count - 1);
  // Compare against the next centre up; strict '<' keeps ties on the lower index.
  while (k + 1 < count && std::abs((k + 1.5) * h - coord) < std::abs((k + 0.5) * h - coord)) ++k;
  while (k > 0 && std::abs((k - 0.5) * h - coord) <= std::abs((k + 0.5) * h - coord)) --k;
  return k;
}

}  // namespace

int RegularGrid::nearest_i(double xc) const { return nearest_cell_centre(xc, domain.x, nx); }
int RegularGrid::nearest_j(double yc) const { return nearest_cell_centre(yc, domain.y, ny); }

std::vector<double> nearest_neighbour_transfer(std::span<const double> grid_field, const RegularGrid& grid,
                                               const Mesh& mesh) {
  require(grid.nx >= 1 && grid.ny >= 1, ErrorCode::InvalidArgument, "grid must have at least one point");
  require(grid_field.size() == grid.size(), ErrorCode::InvalidArgument, "grid field size does not match the grid");
  const Vec2 d = mesh.domain();
  const bool match = std::abs(d.x - grid.domain.x) <= 1e-9 * d.x && std::abs(d.y - grid.domain.y) <= 1e-9 * d.y;
  require(match, ErrorCode::InvalidArgument, "grid domain does not cover the mesh domain");

  std::vector<double> out(mesh.node_count());
  const auto nodes = mesh.nodes();
  for (std::size_t v = 0; v < nodes.size(); ++v)
    out[v] = grid_field[grid.index(grid.nearest_i(nodes[v].x), grid.nearest_j(nodes[v].y))];
  return out;
}

}  // namespace frontflow
