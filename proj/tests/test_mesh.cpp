#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <set>

using namespace mixpinn;

TEST_CASE("phantom without inclusions: all soft, one fixed face") {
  PhantomConfig c;
  c.dimensions = Vec3(2, 2, 2);
  c.cells = {2, 2, 2};
  const Mesh m = generate_phantom(c);
  CHECK(m.node_count() == 27);
  CHECK(std::all_of(m.node_labels.begin(), m.node_labels.end(), [](int l) { return l == 0; }));
  REQUIRE(m.fixed_nodes.size() == 9);
  for (Index v : m.fixed_nodes) CHECK(m.rest_positions[static_cast<std::size_t>(v)].z() == 0.0);
  CHECK(m.back_surface_nodes.size() == 9);
  CHECK(m.rigid_count == 0);
}

TEST_CASE("desk phantom node and edge counts per label") {
  const PhantomConfig c = PhantomConfig::desk_default();
  const Mesh m = generate_phantom(c);
  const int nx = c.cells[0], ny = c.cells[1], nz = c.cells[2];

  // Nodes: brute-force containment over an independently enumerated lattice.
  std::vector<int> expected_nodes(c.inclusions.size() + 1, 0);
  const Vec3 h(c.dimensions.x() / nx, c.dimensions.y() / ny, c.dimensions.z() / nz);
  for (int k = 0; k <= nz; ++k)
    for (int j = 0; j <= ny; ++j)
      for (int i = 0; i <= nx; ++i) {
        const Vec3 p(i * h.x(), j * h.y(), k * h.z());
        int label = 0;
        for (std::size_t b = 0; b < c.inclusions.size(); ++b) {
          const Box& box = c.inclusions[b];
          if (p.x() >= box.lo.x() && p.x() < box.hi.x() && p.y() >= box.lo.y() && p.y() < box.hi.y() &&
              p.z() >= box.lo.z() && p.z() < box.hi.z())
            label = static_cast<int>(b) + 1;
        }
        ++expected_nodes[static_cast<std::size_t>(label)];
      }
  for (std::size_t l = 0; l < expected_nodes.size(); ++l)
    CHECK(std::count(m.node_labels.begin(), m.node_labels.end(), static_cast<int>(l)) == expected_nodes[l]);
  // Each default inclusion spans a 5 x 4 x 3 block of lattice points.
  CHECK(expected_nodes[1] == 60);
  CHECK(expected_nodes[2] == 60);

  // Edges of a six-tet diagonal split: lattice lines, one diagonal per face, one per cell.
  const long axis = long(nx) * (ny + 1) * (nz + 1) + long(nx + 1) * ny * (nz + 1) + long(nx + 1) * (ny + 1) * nz;
  const long faces = long(nx) * ny * (nz + 1) + long(nx) * (ny + 1) * nz + long(nx + 1) * ny * nz;
  const long cells = long(nx) * ny * nz;
  CHECK(static_cast<long>(m.edges.size()) == axis + faces + cells);

  // Rigid edges: every edge of the mesh between two nodes in the same box.
  std::vector<long> rigid(c.inclusions.size() + 1, 0);
  for (std::size_t e = 0; e < m.edges.size(); ++e) ++rigid[static_cast<std::size_t>(m.edge_labels[e])];
  for (std::size_t b = 1; b < rigid.size(); ++b) {
    long count = 0;
    for (const Edge& e : m.edges)
      if (c.inclusions[b - 1].contains(m.rest_positions[static_cast<std::size_t>(e[0])]) &&
          c.inclusions[b - 1].contains(m.rest_positions[static_cast<std::size_t>(e[1])]))
        ++count;
    CHECK(rigid[b] == count);
    // 5x4x3 sub-lattice with the same split pattern.
    const long a = 4L * 4 * 3 + 5L * 3 * 3 + 5L * 4 * 2, f = 4L * 3 * 3 + 4L * 4 * 2 + 5L * 3 * 2, v = 4L * 3 * 2;
    CHECK(count == a + f + v);
  }
}

TEST_CASE("phantom rejects an inclusion crossing the boundary") {
  PhantomConfig c;
  c.inclusions = {{Vec3(150, 10, 10), Vec3(170, 30, 30)}};
  CHECK_THROWS_AS(generate_phantom(c), UsageError);
  c.inclusions = {{Vec3(0, 10, 10), Vec3(20, 30, 30)}};
  CHECK_THROWS_AS(generate_phantom(c), UsageError);
}

TEST_CASE("phantom rejects fewer than two cells") {
  PhantomConfig c;
  c.cells = {1, 8, 8};
  c.inclusions.clear();
  CHECK_THROWS_AS(generate_phantom(c), UsageError);
}

TEST_CASE("phantom tetrahedra have positive volume") {
  const Mesh m = generate_phantom(testing::small_phantom_config());
  double total = 0.0;
  for (const Tet& t : m.tetrahedra) {
    const auto& p = m.rest_positions;
    const double v = signed_volume(p[t[0]], p[t[1]], p[t[2]], p[t[3]]);
    CHECK(v > 0.0);
    total += v;
  }
  CHECK(total == doctest::Approx(60.0 * 40.0 * 40.0).epsilon(1e-12));
}

TEST_CASE("derive_edges") {
  const std::vector<Tet> one = {{0, 1, 2, 3}};
  const auto e1 = derive_edges(one);
  CHECK(e1 == std::vector<Edge>{{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}});
  const std::vector<Tet> two = {{0, 1, 2, 3}, {1, 2, 3, 4}};
  CHECK(derive_edges(two).size() == 9);
}

TEST_CASE("derive_edges matches a brute-force pair scan") {
  const Mesh m = generate_phantom(testing::small_phantom_config());
  std::vector<Edge> all;
  for (const Tet& t : m.tetrahedra)
    for (int a = 0; a < 4; ++a)
      for (int b = a + 1; b < 4; ++b) all.push_back({std::min(t[a], t[b]), std::max(t[a], t[b])});
  std::size_t unique = 0;
  for (std::size_t i = 0; i < all.size(); ++i) {
    bool seen = false;
    for (std::size_t j = 0; j < i && !seen; ++j) seen = all[j] == all[i];
    unique += !seen;
  }
  CHECK(m.edges.size() == unique);
}

TEST_CASE("label_edges rule") {
  Mesh m;
  m.rest_positions = {Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)};
  m.node_labels = {1, 1, 0, 2};
  m.edges = {{0, 1}, {0, 2}, {1, 3}};
  m.rigid_count = 2;
  CHECK(label_edges(m) == std::vector<AnatomyLabel>{1, 0, 0});
}

TEST_CASE("center_mesh") {
  Mesh single;
  single.rest_positions = {Vec3(3, 4, 5)};
  single.node_labels = {0};
  CHECK(center_mesh(single).rest_positions[0] == Vec3::Zero());

  const Mesh m = testing::small_phantom();
  Vec3 mean = Vec3::Zero();
  for (const Vec3& p : m.rest_positions) mean += p;
  CHECK((mean / static_cast<double>(m.node_count())).norm() < 1e-9);
  const Mesh again = center_mesh(m);
  for (std::size_t i = 0; i < m.rest_positions.size(); ++i)
    CHECK((again.rest_positions[i] - m.rest_positions[i]).norm() < 1e-12);
  CHECK(again.tetrahedra == m.tetrahedra);
  CHECK(again.fixed_nodes == m.fixed_nodes);
}

TEST_CASE("mesh file round trip and errors") {
  testing::TempDir dir("mesh");
  const Mesh m = testing::small_phantom();
  save_mesh(m, dir / "m.txt");
  const Mesh back = load_mesh(dir / "m.txt");
  CHECK(back == m);
  CHECK(back.hash() == m.hash());

  {
    std::ifstream in(dir / "m.txt");
    std::string text((std::istreambuf_iterator<char>(in)), {});
    std::ofstream(dir / "trunc.txt") << text.substr(0, text.size() / 2);
    std::string bad = text;
    const auto tets = bad.find("tets ");
    const auto eol = bad.find('\n', tets);
    bad.replace(eol + 1, bad.find(' ', eol + 1) - eol - 1, "99999");
    std::ofstream(dir / "range.txt") << bad;
  }
  CHECK_THROWS_AS(load_mesh(dir / "trunc.txt"), ParseError);
  CHECK_THROWS_AS(load_mesh(dir / "range.txt"), DataError);
  CHECK_THROWS_AS(load_mesh(dir / "missing.txt"), DataError);

  // Relabeling component 1 as 3 leaves label 1 without nodes.
  Mesh gap = m;
  for (AnatomyLabel& l : gap.node_labels)
    if (l == 1) l = 3;
  gap.rigid_count = 3;
  CHECK_THROWS_AS(gap.validate(), DataError);
}
