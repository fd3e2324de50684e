#include "mixpinn/graph.hpp"

#include "mixpinn/binary_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <unordered_set>

namespace mixpinn {

bool operator==(const GraphSample& a, const GraphSample& b) {
  return same_matrix(a.node_features, b.node_features) && a.directed_edges == b.directed_edges &&
         a.edge_origins == b.edge_origins && same_matrix(a.edge_features, b.edge_features) &&
         same_matrix(a.targets, b.targets) && same_matrix(a.rest_positions, b.rest_positions) &&
         a.node_labels == b.node_labels && a.rigid_edges == b.rigid_edges && a.virtual_node_ids == b.virtual_node_ids &&
         a.virtual_edge_ids == b.virtual_edge_ids && a.real_node_count == b.real_node_count &&
         a.rigid_count == b.rigid_count && a.mesh_hash == b.mesh_hash;
}

void RigidEdgeRegistry::add(Edge edge, double rest_length, AnatomyLabel label, EdgeOrigin origin) {
  if (edge[0] > edge[1]) std::swap(edge[0], edge[1]);
  endpoints.push_back(edge);
  rest_lengths.push_back(rest_length);
  labels.push_back(label);
  origins.push_back(origin);
}

RigidEdgeRegistry RigidEdgeRegistry::filtered(bool include_virtual_node, bool include_virtual_edge) const {
  RigidEdgeRegistry out;
  for (std::size_t e = 0; e < size(); ++e) {
    if (origins[e] == EdgeOrigin::VirtualNode && !include_virtual_node) continue;
    if (origins[e] == EdgeOrigin::VirtualEdge && !include_virtual_edge) continue;
    out.add(endpoints[e], rest_lengths[e], labels[e], origins[e]);
  }
  return out;
}

Vec3 spherical(const Vec3& p) {
  const double r = p.norm();
  if (r == 0.0) return Vec3::Zero();
  const double polar = std::acos(std::clamp(p.z() / r, -1.0, 1.0));
  double azimuth = std::atan2(p.y(), p.x());
  if (azimuth == -std::numbers::pi) azimuth = std::numbers::pi;
  return {r, polar, azimuth};
}

void require_centered(const Mesh& mesh) {
  Vec3 mean = Vec3::Zero();
  double extent = 1.0;
  for (const Vec3& p : mesh.rest_positions) {
    mean += p;
    extent = std::max(extent, p.cwiseAbs().maxCoeff());
  }
  mean /= static_cast<double>(std::max<Index>(1, mesh.node_count()));
  if (mean.norm() > 1e-9 * extent)
    throw DataError("graph: mesh is not centered (mean rest position norm " + std::to_string(mean.norm()) +
                    " mm); run center_mesh first");
}

namespace {

void append_node(GraphSample& g, const Vec3& rest, const Vec3& prescribed, AnatomyLabel label, const Vec3& target) {
  const Index row = g.node_features.rows();
  g.node_features.conservativeResize(row + 1, Eigen::NoChange);
  g.node_features.row(row).setZero();
  g.node_features.block<1, 3>(row, kFeatDisplacement) = prescribed.transpose();
  g.node_features.block<1, 3>(row, kFeatPosition) = rest.transpose();
  g.node_features.block<1, 3>(row, kFeatSpherical) = spherical(rest).transpose();
  if (label > 0) g.node_features(row, kFeatMask + label - 1) = 1.0;
  g.rest_positions.conservativeResize(row + 1, Eigen::NoChange);
  g.rest_positions.row(row) = rest.transpose();
  g.targets.conservativeResize(row + 1, Eigen::NoChange);
  g.targets.row(row) = target.transpose();
  g.node_labels.push_back(label);
}

// Appends a -> b and b -> a with identical features; returns the index of the first.
Index append_edge_pair(GraphSample& g, Index a, Index b, AnatomyLabel label, EdgeOrigin origin, Index& row) {
  const double length = (g.rest_positions.row(b) - g.rest_positions.row(a)).norm();
  const Index first = static_cast<Index>(g.directed_edges.size());
  for (const DirectedEdge e : {DirectedEdge{a, b}, DirectedEdge{b, a}}) {
    g.directed_edges.push_back(e);
    g.edge_origins.push_back(origin);
    g.edge_features.row(row).setZero();
    g.edge_features(row, kEdgeFeatLength) = length;
    if (label > 0) g.edge_features(row, kEdgeFeatMask + label - 1) = 1.0;
    ++row;
  }
  if (label > 0) g.rigid_edges.add(Edge{a, b}, length, label, origin);
  return first;
}

}  // namespace

GraphSample build_features(const Mesh& mesh, const SimulationSample& sample, std::uint64_t sample_mesh_hash) {
  if (sample_mesh_hash != mesh.hash())
    throw DataError("graph: sample was generated for mesh " + hex64(sample_mesh_hash) + " but the mesh hash is " +
                    hex64(mesh.hash()));
  require_centered(mesh);
  const Index n = mesh.node_count();
  if (sample.ground_truth.rows() != n || sample.ground_truth.cols() != 3)
    throw DataError("graph: ground truth has " + std::to_string(sample.ground_truth.rows()) + " rows for " +
                    std::to_string(n) + " nodes");
  if (sample.prescribed.rows() != static_cast<Index>(sample.contact_nodes.size()))
    throw DataError("graph: prescription count does not match contact node count");

  GraphSample g;
  g.rigid_count = mesh.rigid_count;
  g.mesh_hash = sample_mesh_hash;
  g.real_node_count = n;
  g.node_features = Matrix::Zero(n, node_feature_width(mesh.rigid_count));
  g.rest_positions.resize(n, 3);
  g.targets = sample.ground_truth;
  g.node_labels = mesh.node_labels;
  for (Index i = 0; i < n; ++i) {
    const Vec3& p = mesh.rest_positions[static_cast<std::size_t>(i)];
    g.rest_positions.row(i) = p.transpose();
    g.node_features.block<1, 3>(i, kFeatPosition) = p.transpose();
    g.node_features.block<1, 3>(i, kFeatSpherical) = spherical(p).transpose();
    const AnatomyLabel label = mesh.node_labels[static_cast<std::size_t>(i)];
    if (label > 0) g.node_features(i, kFeatMask + label - 1) = 1.0;
  }
  for (std::size_t c = 0; c < sample.contact_nodes.size(); ++c) {
    const Index node = sample.contact_nodes[c];
    if (node < 0 || node >= n) throw DataError("graph: contact node out of range");
    g.node_features.block<1, 3>(node, kFeatDisplacement) = sample.prescribed.row(static_cast<Index>(c));
  }

  g.edge_features.resize(2 * static_cast<Index>(mesh.edges.size()), edge_feature_width(mesh.rigid_count));
  g.directed_edges.reserve(2 * mesh.edges.size());
  g.edge_origins.reserve(2 * mesh.edges.size());
  Index row = 0;
  for (std::size_t e = 0; e < mesh.edges.size(); ++e)
    append_edge_pair(g, mesh.edges[e][0], mesh.edges[e][1], mesh.edge_labels[e], EdgeOrigin::Mesh, row);
  return g;
}

GraphSample augment_vn(const GraphSample& graph, const Mesh& mesh) {
  GraphSample g = graph;
  const auto components = mesh.rigid_components();
  Index extra_edges = 0;
  for (const auto& nodes : components) extra_edges += 2 * static_cast<Index>(nodes.size());
  Index row = g.edge_features.rows();
  g.edge_features.conservativeResize(row + extra_edges, Eigen::NoChange);

  for (std::size_t k = 0; k < components.size(); ++k) {
    const auto& nodes = components[k];
    if (nodes.empty()) throw DataError("augment_vn: rigid component " + std::to_string(k + 1) + " is empty");
    Vec3 center = Vec3::Zero();
    Vec3 target = Vec3::Zero();
    for (Index i : nodes) {
      center += g.rest_positions.row(i).transpose();
      target += g.targets.row(i).transpose();
    }
    center /= static_cast<double>(nodes.size());
    target /= static_cast<double>(nodes.size());
    const AnatomyLabel label = static_cast<AnatomyLabel>(k) + 1;
    const Index vn = g.node_features.rows();
    append_node(g, center, Vec3::Zero(), label, target);
    g.virtual_node_ids.push_back(vn);
    for (Index i : nodes) append_edge_pair(g, i, vn, label, EdgeOrigin::VirtualNode, row);
  }
  return g;
}

GraphSample augment_ve(const GraphSample& graph, const Mesh& mesh, const Vec3& contact_centroid) {
  GraphSample g = graph;
  auto key = [](Index a, Index b) {
    if (a > b) std::swap(a, b);
    return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint64_t>(b);
  };
  std::unordered_set<std::uint64_t> existing;
  existing.reserve(g.directed_edges.size());
  for (const DirectedEdge& e : g.directed_edges) existing.insert(key(e.source, e.target));

  std::vector<std::pair<Index, Index>> additions;  // (node, representative)
  std::vector<AnatomyLabel> addition_labels;
  const auto components = mesh.rigid_components();
  for (std::size_t k = 0; k < components.size(); ++k) {
    const auto& nodes = components[k];
    if (nodes.empty()) continue;
    Index representative = nodes.front();
    double best = std::numeric_limits<double>::infinity();
    for (Index i : nodes) {
      const double d = (g.rest_positions.row(i).transpose() - contact_centroid).squaredNorm();
      if (d < best) {
        best = d;
        representative = i;
      }
    }
    for (Index i : nodes) {
      if (i == representative || existing.contains(key(i, representative))) continue;
      additions.emplace_back(i, representative);
      addition_labels.push_back(static_cast<AnatomyLabel>(k) + 1);
    }
  }

  Index row = g.edge_features.rows();
  g.edge_features.conservativeResize(row + 2 * static_cast<Index>(additions.size()), Eigen::NoChange);
  for (std::size_t a = 0; a < additions.size(); ++a) {
    const Index first = append_edge_pair(g, additions[a].first, additions[a].second, addition_labels[a],
                                         EdgeOrigin::VirtualEdge, row);
    g.virtual_edge_ids.push_back(first);
    g.virtual_edge_ids.push_back(first + 1);
  }
  return g;
}

Vec3 contact_centroid(const Mesh& mesh, const SimulationSample& sample) {
  if (sample.contact_nodes.empty()) throw DataError("contact_centroid: sample has no contact nodes");
  Vec3 c = Vec3::Zero();
  for (Index i : sample.contact_nodes) c += mesh.rest_positions[static_cast<std::size_t>(i)];
  return c / static_cast<double>(sample.contact_nodes.size());
}

GraphSample make_graph(const Mesh& mesh, const SimulationSample& sample, std::uint64_t sample_mesh_hash,
                       const AugmentOptions& options) {
  GraphSample g = build_features(mesh, sample, sample_mesh_hash);
  if (options.virtual_nodes) g = augment_vn(g, mesh);
  if (options.virtual_edges) g = augment_ve(g, mesh, contact_centroid(mesh, sample));
  return g;
}

EdgeResiduals rigid_edge_residuals(const RigidEdgeRegistry& registry, const Matrix& rest_positions,
                                   const Matrix& predicted) {
  if (predicted.rows() != rest_positions.rows() || predicted.cols() != 3)
    throw DataError("rigid_edge_residuals: prediction has " + std::to_string(predicted.rows()) + " rows for " +
                    std::to_string(rest_positions.rows()) + " nodes");
  EdgeResiduals out;
  out.rest = registry.rest_lengths;
  out.predicted.reserve(registry.size());
  for (const Edge& e : registry.endpoints) {
    const auto a = rest_positions.row(e[0]) + predicted.row(e[0]);
    const auto b = rest_positions.row(e[1]) + predicted.row(e[1]);
    out.predicted.push_back((b - a).norm());
  }
  return out;
}

EdgeResiduals rigid_edge_residuals(const GraphSample& graph, const Matrix& predicted) {
  return rigid_edge_residuals(graph.rigid_edges, graph.rest_positions, predicted);
}

GraphBatch batch_graphs(std::span<const GraphSample* const> graphs) {
  if (graphs.empty()) throw UsageError("batch_graphs: empty batch");
  GraphBatch batch;
  Index nodes = 0, edges = 0;
  for (const GraphSample* g : graphs) {
    nodes += g->node_count();
    edges += g->edge_count();
    if (g->node_features.cols() != graphs.front()->node_features.cols() ||
        g->edge_features.cols() != graphs.front()->edge_features.cols())
      throw UsageError("batch_graphs: graphs have different feature widths");
  }
  const Index node_width = graphs.front()->node_features.cols();
  const Index edge_width = graphs.front()->edge_features.cols();
  batch.node_features.resize(nodes, node_width);
  batch.targets.resize(nodes, 3);
  batch.rest_positions.resize(nodes, 3);
  batch.edge_features.resize(edges, edge_width);
  batch.attention_edge_features = Matrix::Zero(edges + nodes, edge_width);
  batch.edge_count = edges;
  std::vector<Index> sources, targets;
  sources.reserve(static_cast<std::size_t>(edges + nodes));
  targets.reserve(static_cast<std::size_t>(edges + nodes));

  Index node_offset = 0, edge_offset = 0;
  batch.node_offsets.push_back(0);
  for (const GraphSample* g : graphs) {
    batch.node_features.middleRows(node_offset, g->node_count()) = g->node_features;
    batch.targets.middleRows(node_offset, g->node_count()) = g->targets;
    batch.rest_positions.middleRows(node_offset, g->node_count()) = g->rest_positions;
    batch.edge_features.middleRows(edge_offset, g->edge_count()) = g->edge_features;
    batch.node_labels.insert(batch.node_labels.end(), g->node_labels.begin(), g->node_labels.end());
    for (Index i = 0; i < g->node_count(); ++i) batch.is_real.push_back(i < g->real_node_count ? 1 : 0);
    for (const DirectedEdge& e : g->directed_edges) {
      sources.push_back(e.source + node_offset);
      targets.push_back(e.target + node_offset);
    }
    for (std::size_t r = 0; r < g->rigid_edges.size(); ++r)
      batch.rigid_edges.add(Edge{g->rigid_edges.endpoints[r][0] + node_offset, g->rigid_edges.endpoints[r][1] + node_offset},
                            g->rigid_edges.rest_lengths[r], g->rigid_edges.labels[r], g->rigid_edges.origins[r]);
    node_offset += g->node_count();
    edge_offset += g->edge_count();
    batch.node_offsets.push_back(node_offset);
  }
  for (Index i = 0; i < nodes; ++i) {
    sources.push_back(i);
    targets.push_back(i);
  }

  // Stable counting sort by destination: each node's incoming edges in edge
  // order, then its self entry. Keeps scatter writes sequential.
  const std::size_t entries = sources.size();
  std::vector<Index> start(static_cast<std::size_t>(nodes) + 1, 0);
  for (Index t : targets) ++start[static_cast<std::size_t>(t) + 1];
  for (std::size_t i = 1; i < start.size(); ++i) start[i] += start[i - 1];
  std::vector<Index> sorted_sources(entries), sorted_targets(entries);
  for (std::size_t k = 0; k < entries; ++k) {
    const Index slot = start[static_cast<std::size_t>(targets[k])]++;
    sorted_sources[static_cast<std::size_t>(slot)] = sources[k];
    sorted_targets[static_cast<std::size_t>(slot)] = targets[k];
    if (k < static_cast<std::size_t>(edges))
      batch.attention_edge_features.row(slot) = batch.edge_features.row(static_cast<Index>(k));
  }
  sources = std::move(sorted_sources);
  targets = std::move(sorted_targets);
  batch.attention_sources = ad::make_index_list(std::move(sources));
  batch.attention_targets = ad::make_index_list(std::move(targets));
  return batch;
}

GraphBatch batch_graphs(const GraphSample& graph) {
  const GraphSample* one[] = {&graph};
  return batch_graphs(one);
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::string_view kCacheMagic = "MIXGRAPH 1\n";

void write_matrix(io::BinaryWriter& w, const Matrix& m) {
  w.write<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
  w.write<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
  w.write_doubles(std::span(m.data(), static_cast<std::size_t>(m.size())));
}

Matrix read_matrix(io::BinaryReader& r) {
  const auto rows = r.read<std::uint64_t>();
  const auto cols = r.read<std::uint64_t>();
  if (rows > (1ULL << 32) || cols > (1ULL << 20)) throw ParseError("graph cache: implausible matrix shape", 0, r.offset());
  Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  r.read_doubles(std::span(m.data(), static_cast<std::size_t>(m.size())));
  return m;
}

template <class T>
void write_ints(io::BinaryWriter& w, const std::vector<T>& v) {
  w.write<std::uint64_t>(v.size());
  for (T x : v) w.write<std::int64_t>(static_cast<std::int64_t>(x));
}

template <class T>
std::vector<T> read_ints(io::BinaryReader& r) {
  const auto n = r.read<std::uint64_t>();
  if (n > (1ULL << 32)) throw ParseError("graph cache: implausible list length", 0, r.offset());
  std::vector<T> v;
  v.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) v.push_back(static_cast<T>(r.read<std::int64_t>()));
  return v;
}

}  // namespace

namespace {

// Everything except the per-sample displacement columns and targets.
bool same_topology(const GraphSample& a, const GraphSample& b) {
  return a.node_features.rows() == b.node_features.rows() && a.node_features.cols() == b.node_features.cols() &&
         (a.node_features.rightCols(a.node_features.cols() - kFeatPosition).array() ==
          b.node_features.rightCols(b.node_features.cols() - kFeatPosition).array())
             .all() &&
         a.directed_edges == b.directed_edges && a.edge_origins == b.edge_origins &&
         same_matrix(a.edge_features, b.edge_features) && same_matrix(a.rest_positions, b.rest_positions) &&
         a.node_labels == b.node_labels && a.rigid_edges == b.rigid_edges && a.virtual_node_ids == b.virtual_node_ids &&
         a.virtual_edge_ids == b.virtual_edge_ids && a.real_node_count == b.real_node_count &&
         a.rigid_count == b.rigid_count && a.mesh_hash == b.mesh_hash;
}

void write_topology(io::BinaryWriter& w, const GraphSample& g) {
  w.write<std::int64_t>(g.real_node_count);
  w.write<std::int32_t>(g.rigid_count);
  w.write<std::uint64_t>(g.mesh_hash);
  write_matrix(w, g.node_features.rightCols(g.node_features.cols() - kFeatPosition));
  write_matrix(w, g.edge_features);
  write_matrix(w, g.rest_positions);
  std::vector<Index> flat;
  flat.reserve(2 * g.directed_edges.size());
  for (const DirectedEdge& e : g.directed_edges) {
    flat.push_back(e.source);
    flat.push_back(e.target);
  }
  write_ints(w, flat);
  write_ints(w, g.edge_origins);
  write_ints(w, g.node_labels);
  std::vector<Index> ends;
  for (const Edge& e : g.rigid_edges.endpoints) {
    ends.push_back(e[0]);
    ends.push_back(e[1]);
  }
  write_ints(w, ends);
  w.write<std::uint64_t>(g.rigid_edges.rest_lengths.size());
  w.write_doubles(g.rigid_edges.rest_lengths);
  write_ints(w, g.rigid_edges.labels);
  write_ints(w, g.rigid_edges.origins);
  write_ints(w, g.virtual_node_ids);
  write_ints(w, g.virtual_edge_ids);
}

GraphSample read_topology(io::BinaryReader& r, const std::string& source) {
  GraphSample g;
  g.real_node_count = r.read<std::int64_t>();
  g.rigid_count = r.read<std::int32_t>();
  g.mesh_hash = r.read<std::uint64_t>();
  const Matrix fixed_columns = read_matrix(r);
  g.node_features = Matrix::Zero(fixed_columns.rows(), fixed_columns.cols() + kFeatPosition);
  g.node_features.rightCols(fixed_columns.cols()) = fixed_columns;
  g.edge_features = read_matrix(r);
  g.rest_positions = read_matrix(r);
  const auto flat = read_ints<Index>(r);
  if (flat.size() % 2 != 0) throw ParseError(source + ": odd edge list", 0, r.offset());
  for (std::size_t e = 0; e < flat.size(); e += 2) g.directed_edges.push_back({flat[e], flat[e + 1]});
  g.edge_origins = read_ints<EdgeOrigin>(r);
  g.node_labels = read_ints<AnatomyLabel>(r);
  const auto ends = read_ints<Index>(r);
  if (ends.size() % 2 != 0) throw ParseError(source + ": odd rigid edge list", 0, r.offset());
  for (std::size_t e = 0; e < ends.size(); e += 2) g.rigid_edges.endpoints.push_back({ends[e], ends[e + 1]});
  const auto lengths = r.read<std::uint64_t>();
  if (lengths != g.rigid_edges.endpoints.size()) throw ParseError(source + ": rigid edge count mismatch", 0, r.offset());
  g.rigid_edges.rest_lengths.resize(lengths);
  r.read_doubles(g.rigid_edges.rest_lengths);
  g.rigid_edges.labels = read_ints<AnatomyLabel>(r);
  g.rigid_edges.origins = read_ints<EdgeOrigin>(r);
  g.virtual_node_ids = read_ints<Index>(r);
  g.virtual_edge_ids = read_ints<Index>(r);
  const Index n = g.node_features.rows();
  if (g.rest_positions.rows() != n || static_cast<Index>(g.node_labels.size()) != n ||
      g.edge_features.rows() != static_cast<Index>(g.directed_edges.size()) ||
      g.edge_origins.size() != g.directed_edges.size())
    throw DataError(source + ": inconsistent graph record");
  return g;
}

}  // namespace

// Consecutive graphs usually share everything but the prescribed displacement
// and the targets, so a topology record is only written when it changes.
void save_graph_cache(const GraphCache& cache, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  io::BinaryWriter w(out);
  w.write_bytes(kCacheMagic);
  w.write<std::uint64_t>(cache.mesh_hash);
  w.write<std::uint64_t>(cache.dataset_hash);
  w.write<std::uint8_t>(cache.options.virtual_nodes ? 1 : 0);
  w.write<std::uint8_t>(cache.options.virtual_edges ? 1 : 0);
  w.write<std::uint64_t>(cache.graphs.size());
  for (std::size_t k = 0; k < cache.graphs.size(); ++k) {
    const GraphSample& g = cache.graphs[k];
    const bool reuse = k > 0 && same_topology(g, cache.graphs[k - 1]);
    w.write<std::uint8_t>(reuse ? 1 : 0);
    if (!reuse) write_topology(w, g);
    write_matrix(w, g.node_features.leftCols(kFeatPosition));
    write_matrix(w, g.targets);
  }
  if (!w.ok()) throw DataError("failed writing " + path.string());
}

GraphCache load_graph_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open graph cache " + path.string());
  io::BinaryReader r(in, path.string());
  const std::string magic = r.read_bytes(kCacheMagic.size());
  if (magic.starts_with("MIXGRAPH ") && magic != kCacheMagic)
    throw DataError(path.string() + ": unsupported graph cache version");
  if (magic != kCacheMagic) throw DataError(path.string() + ": not a graph cache file");
  GraphCache cache;
  cache.mesh_hash = r.read<std::uint64_t>();
  cache.dataset_hash = r.read<std::uint64_t>();
  cache.options.virtual_nodes = r.read<std::uint8_t>() != 0;
  cache.options.virtual_edges = r.read<std::uint8_t>() != 0;
  const auto count = r.read<std::uint64_t>();
  if (count > (1ULL << 32)) throw ParseError(path.string() + ": implausible graph count", 0, r.offset());
  cache.graphs.reserve(count);
  for (std::uint64_t k = 0; k < count; ++k) {
    const bool reuse = r.read<std::uint8_t>() != 0;
    if (reuse && k == 0) throw DataError(path.string() + ": first graph cannot reuse a topology");
    GraphSample g = reuse ? cache.graphs.back() : read_topology(r, path.string());
    const Matrix displacement = read_matrix(r);
    g.targets = read_matrix(r);
    if (displacement.rows() != g.node_count() || displacement.cols() != kFeatPosition ||
        g.targets.rows() != g.node_count() || g.targets.cols() != 3)
      throw DataError(path.string() + ": graph " + std::to_string(k) + " has inconsistent per-sample blocks");
    g.node_features.leftCols(kFeatPosition) = displacement;
    cache.graphs.push_back(std::move(g));
  }
  if (!r.at_end()) throw DataError(path.string() + ": trailing bytes after the last graph");
  return cache;
}

}  // namespace mixpinn
