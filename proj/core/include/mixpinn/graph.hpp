#pragma once

#include "mixpinn/autodiff.hpp"
#include "mixpinn/mesh.hpp"
#include "mixpinn/oracle.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace mixpinn {

// Node feature layout: prescribed displacement, Cartesian rest position,
// spherical rest position, then a one-hot rigid mask of width R.
constexpr Index kFeatDisplacement = 0;
constexpr Index kFeatPosition = 3;
constexpr Index kFeatSpherical = 6;
constexpr Index kFeatMask = 9;
// Edge feature layout: rest length, then a one-hot rigid mask of width R.
constexpr Index kEdgeFeatLength = 0;
constexpr Index kEdgeFeatMask = 1;

inline Index node_feature_width(int rigid_count) { return kFeatMask + rigid_count; }
inline Index edge_feature_width(int rigid_count) { return kEdgeFeatMask + rigid_count; }

enum class EdgeOrigin : std::uint8_t { Mesh = 0, VirtualNode = 1, VirtualEdge = 2 };

struct DirectedEdge {
  Index source;
  Index target;
  friend bool operator==(const DirectedEdge&, const DirectedEdge&) = default;
};

/// Undirected edges whose length must stay constant, with their rest lengths.
struct RigidEdgeRegistry {
  std::vector<Edge> endpoints;
  std::vector<double> rest_lengths;
  std::vector<AnatomyLabel> labels;
  std::vector<EdgeOrigin> origins;

  std::size_t size() const { return endpoints.size(); }
  void add(Edge edge, double rest_length, AnatomyLabel label, EdgeOrigin origin);
  /// Entries whose origin passes the filter.
  RigidEdgeRegistry filtered(bool include_virtual_node, bool include_virtual_edge) const;

  friend bool operator==(const RigidEdgeRegistry&, const RigidEdgeRegistry&) = default;
};

struct GraphSample {
  Matrix node_features;  // V x (9 + R)
  std::vector<DirectedEdge> directed_edges;
  std::vector<EdgeOrigin> edge_origins;  // per directed edge
  Matrix edge_features;                  // E x (1 + R)
  Matrix targets;                        // V x 3, mm
  Matrix rest_positions;                 // V x 3, mm, virtual nodes included
  std::vector<AnatomyLabel> node_labels;
  RigidEdgeRegistry rigid_edges;
  std::vector<Index> virtual_node_ids;
  std::vector<Index> virtual_edge_ids;  // directed edge indices added by augment_ve
  Index real_node_count = 0;
  int rigid_count = 0;
  std::uint64_t mesh_hash = 0;

  Index node_count() const { return node_features.rows(); }
  Index edge_count() const { return static_cast<Index>(directed_edges.size()); }

  friend bool operator==(const GraphSample& a, const GraphSample& b);
};

/// (r, polar angle from +z, azimuth in (-pi, pi]); the origin maps to zeros.
Vec3 spherical(const Vec3& p);

/// Throws DataError unless the mesh's mean rest position is (numerically) the origin.
void require_centered(const Mesh& mesh);

/// Node/edge features, targets and rigid registry for one simulated sample.
/// `sample_mesh_hash` is the hash the sample was generated against.
GraphSample build_features(const Mesh& mesh, const SimulationSample& sample, std::uint64_t sample_mesh_hash);

/// One virtual node per rigid component at the component's mean rest position,
/// linked both ways to every component node.
GraphSample augment_vn(const GraphSample& graph, const Mesh& mesh);

/// Links every rigid node to its component's representative, the node closest
/// to `contact_centroid` (lowest index on ties), where no edge exists yet.
GraphSample augment_ve(const GraphSample& graph, const Mesh& mesh, const Vec3& contact_centroid);

/// Unweighted mean rest position of the sample's contact nodes.
Vec3 contact_centroid(const Mesh& mesh, const SimulationSample& sample);

struct AugmentOptions {
  bool virtual_nodes = false;
  bool virtual_edges = false;
};

GraphSample make_graph(const Mesh& mesh, const SimulationSample& sample, std::uint64_t sample_mesh_hash,
                       const AugmentOptions& options);

struct EdgeResiduals {
  std::vector<double> rest;       // c
  std::vector<double> predicted;  // distance after adding the predicted displacement
};

EdgeResiduals rigid_edge_residuals(const RigidEdgeRegistry& registry, const Matrix& rest_positions,
                                   const Matrix& predicted);
EdgeResiduals rigid_edge_residuals(const GraphSample& graph, const Matrix& predicted);

/// Disjoint union of graphs, laid out for attention: entries are grouped by
/// destination, each node's incoming edges (in edge order) then its self entry.
struct GraphBatch {
  Matrix node_features;
  Matrix edge_features;
  Matrix targets;
  Matrix rest_positions;
  std::vector<AnatomyLabel> node_labels;
  std::vector<Index> node_offsets;  // graph g owns rows [node_offsets[g], node_offsets[g + 1])
  std::vector<std::uint8_t> is_real;
  RigidEdgeRegistry rigid_edges;
  Index edge_count = 0;

  // Attention entries (source -> target), grouped by target; self entries have source == target.
  ad::IndexList attention_sources;
  ad::IndexList attention_targets;
  Matrix attention_edge_features;  // (E + V) x edge width; zero rows for self entries

  Index node_count() const { return node_features.rows(); }
  std::size_t graph_count() const { return node_offsets.size() - 1; }
};

GraphBatch batch_graphs(std::span<const GraphSample* const> graphs);
GraphBatch batch_graphs(const GraphSample& graph);

// Optional cache of built graphs. Regenerable from mesh + dataset.
struct GraphCache {
  std::uint64_t mesh_hash = 0;
  std::uint64_t dataset_hash = 0;
  AugmentOptions options;
  std::vector<GraphSample> graphs;
};

void save_graph_cache(const GraphCache& cache, const std::filesystem::path& path);
GraphCache load_graph_cache(const std::filesystem::path& path);

}  // namespace mixpinn
