#include "mixpinn/mesh.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace mixpinn {

std::string hex64(std::uint64_t value) {
  char buffer[17];
  auto [end, ec] = std::to_chars(buffer, buffer + 16, value, 16);
  std::string digits(buffer, end);
  return std::string(16 - digits.size(), '0') + digits;
}

double signed_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  return (b - a).dot((c - a).cross(d - a)) / 6.0;
}

std::vector<std::vector<Index>> Mesh::rigid_components() const {
  std::vector<std::vector<Index>> components(static_cast<std::size_t>(rigid_count));
  for (Index i = 0; i < node_count(); ++i) {
    const AnatomyLabel label = node_labels[static_cast<std::size_t>(i)];
    if (label > 0) components[static_cast<std::size_t>(label - 1)].push_back(i);
  }
  return components;
}

std::uint64_t Mesh::hash() const {
  Fnv1a h;
  h.update("MIXMESH 1");
  h.update_value(static_cast<std::uint64_t>(rest_positions.size()));
  for (std::size_t i = 0; i < rest_positions.size(); ++i) {
    for (int k = 0; k < 3; ++k) h.update_value(rest_positions[i][k]);
    h.update_value(static_cast<std::int64_t>(node_labels[i]));
  }
  h.update_value(static_cast<std::uint64_t>(tetrahedra.size()));
  for (const Tet& t : tetrahedra)
    for (Index v : t) h.update_value(static_cast<std::int64_t>(v));
  h.update_value(static_cast<std::uint64_t>(fixed_nodes.size()));
  for (Index v : fixed_nodes) h.update_value(static_cast<std::int64_t>(v));
  h.update_value(static_cast<std::uint64_t>(back_surface_nodes.size()));
  for (Index v : back_surface_nodes) h.update_value(static_cast<std::int64_t>(v));
  return h.digest();
}

void Mesh::validate() const {
  const Index n = node_count();
  if (node_labels.size() != rest_positions.size()) throw DataError("mesh: node label count differs from node count");
  for (std::size_t i = 0; i < node_labels.size(); ++i) {
    if (node_labels[i] < 0 || node_labels[i] > rigid_count)
      throw DataError("mesh: node " + std::to_string(i) + " has label " + std::to_string(node_labels[i]) +
                      " outside 0.." + std::to_string(rigid_count));
  }
  std::vector<bool> seen(static_cast<std::size_t>(rigid_count) + 1, false);
  for (AnatomyLabel l : node_labels) seen[static_cast<std::size_t>(l)] = true;
  for (int k = 1; k <= rigid_count; ++k)
    if (!seen[static_cast<std::size_t>(k)]) throw DataError("mesh: rigid label " + std::to_string(k) + " has no nodes");
  for (std::size_t t = 0; t < tetrahedra.size(); ++t) {
    const Tet& tet = tetrahedra[t];
    for (Index v : tet)
      if (v < 0 || v >= n)
        throw DataError("mesh: tetrahedron " + std::to_string(t) + " references node " + std::to_string(v) +
                        " but the mesh has " + std::to_string(n) + " nodes");
    const double vol = signed_volume(rest_positions[tet[0]], rest_positions[tet[1]], rest_positions[tet[2]],
                                     rest_positions[tet[3]]);
    if (!(vol > 0.0)) throw DataError("mesh: tetrahedron " + std::to_string(t) + " has non-positive volume");
  }
  auto check_set = [n](const std::vector<Index>& set, const char* name) {
    for (std::size_t i = 0; i < set.size(); ++i) {
      if (set[i] < 0 || set[i] >= n) throw DataError(std::string("mesh: ") + name + " node index out of range");
      if (i > 0 && set[i] <= set[i - 1]) throw DataError(std::string("mesh: ") + name + " set not sorted/unique");
    }
  };
  check_set(fixed_nodes, "fixed");
  check_set(back_surface_nodes, "back surface");
  std::vector<Index> overlap;
  std::set_intersection(fixed_nodes.begin(), fixed_nodes.end(), back_surface_nodes.begin(), back_surface_nodes.end(),
                        std::back_inserter(overlap));
  if (!overlap.empty()) throw DataError("mesh: fixed and back surface node sets overlap");
  for (std::size_t e = 0; e + 1 < edges.size(); ++e)
    if (!(edges[e] < edges[e + 1])) throw DataError("mesh: edges not sorted/unique");
  for (const Edge& e : edges)
    if (e[0] < 0 || e[1] >= n || e[0] >= e[1]) throw DataError("mesh: malformed edge");
  if (edge_labels.size() != edges.size()) throw DataError("mesh: edge label count differs from edge count");
}

PhantomConfig PhantomConfig::desk_default() {
  PhantomConfig config;
  // Two blocks along the long axis, separated by a soft "disc", 15-45 mm below the back surface.
  config.inclusions = {
      Box{Vec3(25.0, 20.0, 35.0), Vec3(75.0, 60.0, 65.0)},
      Box{Vec3(85.0, 20.0, 35.0), Vec3(135.0, 60.0, 65.0)},
  };
  return config;
}

void PhantomConfig::validate() const {
  for (int k = 0; k < 3; ++k) {
    if (cells[static_cast<std::size_t>(k)] < 2)
      throw UsageError("phantom: resolution must be at least 2 cells per axis");
    if (!(dimensions[k] > 0.0)) throw UsageError("phantom: box dimensions must be positive");
  }
  for (std::size_t i = 0; i < inclusions.size(); ++i) {
    const Box& b = inclusions[i];
    if (!((b.lo.array() > 0.0).all() && (b.hi.array() < dimensions.array()).all() && (b.lo.array() < b.hi.array()).all()))
      throw UsageError("phantom: inclusion " + std::to_string(i + 1) + " does not lie strictly inside the box");
    for (std::size_t j = 0; j < i; ++j) {
      const Box& o = inclusions[j];
      const bool disjoint = ((b.hi.array() <= o.lo.array()) || (o.hi.array() <= b.lo.array())).any();
      if (!disjoint)
        throw UsageError("phantom: inclusions " + std::to_string(j + 1) + " and " + std::to_string(i + 1) + " overlap");
    }
  }
}

std::vector<Edge> derive_edges(std::span<const Tet> tetrahedra) {
  std::vector<Edge> edges;
  edges.reserve(tetrahedra.size() * 6);
  for (const Tet& t : tetrahedra) {
    for (int a = 0; a < 4; ++a) {
      for (int b = a + 1; b < 4; ++b) {
        const Index u = t[static_cast<std::size_t>(a)];
        const Index v = t[static_cast<std::size_t>(b)];
        edges.push_back(u < v ? Edge{u, v} : Edge{v, u});
      }
    }
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

std::vector<AnatomyLabel> label_edges(const Mesh& mesh) {
  std::vector<AnatomyLabel> labels(mesh.edges.size(), kSoftTissue);
  for (std::size_t e = 0; e < mesh.edges.size(); ++e) {
    const AnatomyLabel a = mesh.node_labels[static_cast<std::size_t>(mesh.edges[e][0])];
    const AnatomyLabel b = mesh.node_labels[static_cast<std::size_t>(mesh.edges[e][1])];
    if (a > 0 && a == b) labels[e] = a;
  }
  return labels;
}

Mesh generate_phantom(const PhantomConfig& config) {
  config.validate();
  const int nx = config.cells[0], ny = config.cells[1], nz = config.cells[2];
  const Vec3 h(config.dimensions.x() / nx, config.dimensions.y() / ny, config.dimensions.z() / nz);
  auto node_id = [&](int i, int j, int k) -> Index {
    return (static_cast<Index>(k) * (ny + 1) + j) * (nx + 1) + i;
  };

  Mesh mesh;
  mesh.rigid_count = static_cast<int>(config.inclusions.size());
  for (int k = 0; k <= nz; ++k)
    for (int j = 0; j <= ny; ++j)
      for (int i = 0; i <= nx; ++i) mesh.rest_positions.emplace_back(i * h.x(), j * h.y(), k * h.z());

  mesh.node_labels.assign(mesh.rest_positions.size(), kSoftTissue);
  for (std::size_t n = 0; n < mesh.rest_positions.size(); ++n)
    for (std::size_t b = 0; b < config.inclusions.size(); ++b)
      if (config.inclusions[b].contains(mesh.rest_positions[n])) mesh.node_labels[n] = static_cast<int>(b) + 1;

  // Kuhn split: six tetrahedra around the cell diagonal, one per axis permutation.
  // Every cell is a translate of the others, so shared faces always conform.
  const std::array<std::array<int, 3>, 6> permutations = {
      {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
  for (int k = 0; k < nz; ++k) {
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        for (const auto& perm : permutations) {
          std::array<int, 3> corner = {i, j, k};
          Tet tet;
          tet[0] = node_id(corner[0], corner[1], corner[2]);
          for (int s = 0; s < 3; ++s) {
            ++corner[static_cast<std::size_t>(perm[static_cast<std::size_t>(s)])];
            tet[static_cast<std::size_t>(s) + 1] = node_id(corner[0], corner[1], corner[2]);
          }
          const auto& p = mesh.rest_positions;
          if (signed_volume(p[tet[0]], p[tet[1]], p[tet[2]], p[tet[3]]) < 0.0) std::swap(tet[2], tet[3]);
          mesh.tetrahedra.push_back(tet);
        }
      }
    }
  }

  for (int j = 0; j <= ny; ++j) {
    for (int i = 0; i <= nx; ++i) {
      mesh.fixed_nodes.push_back(node_id(i, j, 0));
      mesh.back_surface_nodes.push_back(node_id(i, j, nz));
    }
  }
  std::sort(mesh.fixed_nodes.begin(), mesh.fixed_nodes.end());
  std::sort(mesh.back_surface_nodes.begin(), mesh.back_surface_nodes.end());

  mesh.edges = derive_edges(mesh.tetrahedra);
  mesh.edge_labels = label_edges(mesh);

  for (std::size_t b = 0; b < config.inclusions.size(); ++b) {
    if (std::find(mesh.node_labels.begin(), mesh.node_labels.end(), static_cast<int>(b) + 1) == mesh.node_labels.end())
      throw UsageError("phantom: inclusion " + std::to_string(b + 1) + " contains no mesh node");
  }
  mesh.validate();
  return mesh;
}

Mesh center_mesh(const Mesh& mesh) {
  if (mesh.rest_positions.empty()) throw DataError("center_mesh: empty mesh");
  Vec3 mean = Vec3::Zero();
  for (const Vec3& p : mesh.rest_positions) mean += p;
  mean /= static_cast<double>(mesh.rest_positions.size());
  Mesh centered = mesh;
  for (Vec3& p : centered.rest_positions) p -= mean;
  return centered;
}

namespace {

template <class T>
std::string format_number(T value) {
  char buffer[64];
  auto [end, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
  return std::string(buffer, end);
}

// Line-oriented tokenizer that tracks line numbers and byte offsets for diagnostics.
class MeshParser {
 public:
  MeshParser(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  std::vector<std::string_view> next_line(std::size_t expected_tokens, const char* what) {
    if (!std::getline(in_, line_)) fail(std::string("unexpected end of file while reading ") + what);
    ++line_number_;
    line_offset_ = offset_;
    offset_ += line_.size() + 1;
    tokens_.clear();
    std::size_t pos = 0;
    while (pos < line_.size()) {
      while (pos < line_.size() && std::isspace(static_cast<unsigned char>(line_[pos]))) ++pos;
      std::size_t start = pos;
      while (pos < line_.size() && !std::isspace(static_cast<unsigned char>(line_[pos]))) ++pos;
      if (pos > start) tokens_.emplace_back(line_.data() + start, pos - start);
    }
    if (tokens_.size() != expected_tokens)
      fail(std::string("expected ") + std::to_string(expected_tokens) + " fields for " + what + ", found " +
           std::to_string(tokens_.size()));
    return tokens_;
  }

  template <class T>
  T parse(std::string_view token, const char* what) {
    T value{};
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec != std::errc() || ptr != token.data() + token.size())
      fail(std::string("malformed ") + what + " '" + std::string(token) + "'");
    return value;
  }

  std::size_t section(const char* keyword) {
    auto tokens = next_line(2, keyword);
    if (tokens[0] != keyword) fail(std::string("expected section '") + keyword + "'");
    return parse<std::size_t>(tokens[1], "count");
  }

  [[noreturn]] void fail(const std::string& message) const {
    throw ParseError(source_ + ": " + message, line_number_, line_offset_);
  }

 private:
  std::istream& in_;
  std::string source_;
  std::string line_;
  std::vector<std::string_view> tokens_;
  std::size_t line_number_ = 0;
  std::size_t offset_ = 0;
  std::size_t line_offset_ = 0;
};

}  // namespace

void save_mesh(const Mesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "MIXMESH 1\n";
  out << "nodes " << mesh.rest_positions.size() << '\n';
  for (std::size_t i = 0; i < mesh.rest_positions.size(); ++i) {
    const Vec3& p = mesh.rest_positions[i];
    out << format_number(p.x()) << ' ' << format_number(p.y()) << ' ' << format_number(p.z()) << ' '
        << mesh.node_labels[i] << '\n';
  }
  out << "tets " << mesh.tetrahedra.size() << '\n';
  for (const Tet& t : mesh.tetrahedra) out << t[0] << ' ' << t[1] << ' ' << t[2] << ' ' << t[3] << '\n';
  out << "fixed " << mesh.fixed_nodes.size() << '\n';
  for (Index v : mesh.fixed_nodes) out << v << '\n';
  out << "back " << mesh.back_surface_nodes.size() << '\n';
  for (Index v : mesh.back_surface_nodes) out << v << '\n';
  if (!out) throw DataError("failed writing " + path.string());
}

Mesh load_mesh(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open mesh file " + path.string());
  MeshParser parser(in, path.string());

  auto header = parser.next_line(2, "header");
  if (header[0] != "MIXMESH" || header[1] != "1") parser.fail("not a MIXMESH 1 file");

  Mesh mesh;
  const std::size_t node_count = parser.section("nodes");
  mesh.rest_positions.reserve(node_count);
  mesh.node_labels.reserve(node_count);
  for (std::size_t i = 0; i < node_count; ++i) {
    auto tok = parser.next_line(4, "node");
    mesh.rest_positions.emplace_back(parser.parse<double>(tok[0], "coordinate"), parser.parse<double>(tok[1], "coordinate"),
                                     parser.parse<double>(tok[2], "coordinate"));
    const int label = parser.parse<int>(tok[3], "label");
    if (label < 0) parser.fail("negative anatomy label");
    mesh.node_labels.push_back(label);
    mesh.rigid_count = std::max(mesh.rigid_count, label);
  }

  auto read_index = [&](std::string_view token) {
    const Index v = parser.parse<Index>(token, "node index");
    if (v < 0 || static_cast<std::size_t>(v) >= node_count)
      parser.fail("node index " + std::string(token) + " out of range (node count " + std::to_string(node_count) + ")");
    return v;
  };

  const std::size_t tet_count = parser.section("tets");
  mesh.tetrahedra.reserve(tet_count);
  for (std::size_t t = 0; t < tet_count; ++t) {
    auto tok = parser.next_line(4, "tetrahedron");
    mesh.tetrahedra.push_back({read_index(tok[0]), read_index(tok[1]), read_index(tok[2]), read_index(tok[3])});
  }
  const std::size_t fixed_count = parser.section("fixed");
  for (std::size_t i = 0; i < fixed_count; ++i) mesh.fixed_nodes.push_back(read_index(parser.next_line(1, "fixed node")[0]));
  const std::size_t back_count = parser.section("back");
  for (std::size_t i = 0; i < back_count; ++i)
    mesh.back_surface_nodes.push_back(read_index(parser.next_line(1, "back node")[0]));

  mesh.edges = derive_edges(mesh.tetrahedra);
  mesh.edge_labels = label_edges(mesh);
  mesh.validate();
  return mesh;
}

}  // namespace mixpinn
