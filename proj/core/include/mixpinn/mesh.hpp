#pragma once

#include "mixpinn/common.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace mixpinn {

/// Per-node anatomy label: 0 is soft tissue, 1..R are rigid components.
using AnatomyLabel = int;

constexpr AnatomyLabel kSoftTissue = 0;

using Tet = std::array<Index, 4>;

/// Undirected edge stored with first < second.
using Edge = std::array<Index, 2>;

struct Box {
  Vec3 lo = Vec3::Zero();
  Vec3 hi = Vec3::Zero();

  /// Half-open containment: lo <= p < hi on every axis.
  bool contains(const Vec3& p) const {
    return (p.array() >= lo.array()).all() && (p.array() < hi.array()).all();
  }
};

/// Labeled tetrahedral mesh. Positions are in millimeters.
struct Mesh {
  std::vector<Vec3> rest_positions;
  std::vector<Tet> tetrahedra;
  std::vector<AnatomyLabel> node_labels;
  std::vector<Edge> edges;
  std::vector<AnatomyLabel> edge_labels;
  std::vector<Index> fixed_nodes;
  std::vector<Index> back_surface_nodes;
  int rigid_count = 0;

  Index node_count() const { return static_cast<Index>(rest_positions.size()); }

  /// Node ids of each rigid component; entry k-1 holds label k.
  std::vector<std::vector<Index>> rigid_components() const;

  /// Stable content hash over everything that load_mesh reads back.
  std::uint64_t hash() const;

  /// Throws DataError naming the first violated invariant.
  void validate() const;

  friend bool operator==(const Mesh&, const Mesh&) = default;
};

/// Structured soft box with axis-aligned rigid inclusions.
///
/// The box spans [0, dimensions] before centering. The anterior face is z = 0
/// and is fixed; the posterior face z = dimensions.z() is the probe-facing
/// back surface. Inclusion boxes are given in the same frame.
struct PhantomConfig {
  Vec3 dimensions{160.0, 80.0, 80.0};
  std::array<int, 3> cells{16, 8, 8};
  std::vector<Box> inclusions;
  std::uint64_t seed = 0;

  /// Desk-scale default: 16x8x8 cells of 10 mm with two vertebra-like blocks.
  static PhantomConfig desk_default();

  void validate() const;
};

Mesh generate_phantom(const PhantomConfig& config);

/// Sorted unique undirected edges of the given tetrahedra.
std::vector<Edge> derive_edges(std::span<const Tet> tetrahedra);

/// Label k > 0 iff both endpoints carry label k, otherwise soft (0).
std::vector<AnatomyLabel> label_edges(const Mesh& mesh);

/// Translates rest positions so their mean is the origin.
Mesh center_mesh(const Mesh& mesh);

/// Signed volume of a tetrahedron; positive for the mesh's orientation convention.
double signed_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d);

void save_mesh(const Mesh& mesh, const std::filesystem::path& path);
Mesh load_mesh(const std::filesystem::path& path);

}  // namespace mixpinn
