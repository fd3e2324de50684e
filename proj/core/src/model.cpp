#include "mixpinn/model.hpp"

#include "mixpinn/binary_io.hpp"

#include <cmath>
#include <fstream>
#include <random>

namespace mixpinn {

ModelConfig ModelConfig::paper_scale(int rigid_count) {
  ModelConfig c;
  c.layers = 8;
  c.heads = 2;
  c.hidden = 256;
  c.rigid_count = rigid_count;
  return c;
}

void ModelConfig::validate() const {
  if (layers < 1) throw UsageError("model: layers must be >= 1");
  if (heads < 1) throw UsageError("model: heads must be >= 1");
  if (hidden < 1) throw UsageError("model: hidden must be >= 1");
  if (rigid_count < 0) throw UsageError("model: rigid_count must be >= 0");
  if (!(negative_slope >= 0.0 && negative_slope < 1.0)) throw UsageError("model: negative_slope must be in [0, 1)");
}

std::size_t ModelParams::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return i;
  throw UsageError("model: no parameter block named '" + std::string(name) + "'");
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  if (!(a.config == b.config) || a.names != b.names || a.blocks.size() != b.blocks.size() ||
      a.output_scale != b.output_scale || !same_matrix(a.node_scale, b.node_scale) ||
      !same_matrix(a.edge_scale, b.edge_scale))
    return false;
  for (std::size_t i = 0; i < a.blocks.size(); ++i)
    if (!same_matrix(a.blocks[i], b.blocks[i])) return false;
  return true;
}

bool operator==(const Checkpoint& a, const Checkpoint& b) {
  return a.params == b.params && a.mesh_hash == b.mesh_hash && a.dataset_hash == b.dataset_hash &&
         a.augment.virtual_nodes == b.augment.virtual_nodes && a.augment.virtual_edges == b.augment.virtual_edges &&
         a.rel == b.rel && a.rel_weight == b.rel_weight;
}

namespace {

std::string head_name(int layer, int head, const char* what) {
  return "layer" + std::to_string(layer) + ".head" + std::to_string(head) + "." + what;
}

std::string layer_name(int layer, const char* what) { return "layer" + std::to_string(layer) + "." + what; }

}  // namespace

ModelParams init_params(const ModelConfig& config) {
  config.validate();
  ModelParams p;
  p.config = config;
  std::mt19937_64 rng(config.seed);
  auto uniform = [&](Index rows, Index cols, Index fan_in) {
    const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
  };
  auto add = [&](std::string name, Matrix m) {
    p.names.push_back(std::move(name));
    p.blocks.push_back(std::move(m));
  };

  const Index f = config.node_input_width();
  const Index ef = config.edge_input_width();
  const Index h = config.hidden;
  add("input.weight", uniform(f, h, f));
  add("input.bias", Matrix::Zero(1, h));
  for (int l = 0; l < config.layers; ++l) {
    for (int k = 0; k < config.heads; ++k) {
      add(head_name(l, k, "theta"), uniform(h, h, h));
      add(head_name(l, k, "a"), uniform(h, 1, h));
      if (config.use_edge_features) {
        add(head_name(l, k, "theta_e"), uniform(ef, h, ef));
        add(head_name(l, k, "a_e"), uniform(h, 1, h));
      }
    }
    add(layer_name(l, "wo"), uniform(config.heads * h, h, config.heads * h));
  }
  add("readout", uniform(h, 3, h));
  p.node_scale = Matrix::Ones(1, f);
  p.edge_scale = Matrix::Ones(1, ef);
  return p;
}

void fit_scaling(ModelParams& params, std::span<const GraphSample> graphs) {
  const Index f = params.config.node_input_width();
  const Index ef = params.config.edge_input_width();
  params.node_scale = Matrix::Ones(1, f);
  params.edge_scale = Matrix::Ones(1, ef);
  params.output_scale = 1.0;
  if (graphs.empty()) return;

  Eigen::RowVectorXd node_sq = Eigen::RowVectorXd::Zero(kFeatMask);
  double edge_sq = 0.0, target_sq = 0.0;
  double nodes = 0.0, edges = 0.0;
  for (const GraphSample& g : graphs) {
    if (g.node_features.cols() != f || g.edge_features.cols() != ef)
      throw DataError("fit_scaling: graph feature widths do not match the model config");
    node_sq += g.node_features.leftCols(kFeatMask).colwise().squaredNorm();
    edge_sq += g.edge_features.col(kEdgeFeatLength).squaredNorm();
    target_sq += g.targets.squaredNorm();
    nodes += static_cast<double>(g.node_count());
    edges += static_cast<double>(g.edge_count());
  }
  auto rms = [](double sq, double n) {
    const double r = n > 0 ? std::sqrt(sq / n) : 0.0;
    return r > 0 ? r : 1.0;
  };
  for (Index c = 0; c < kFeatMask; ++c) params.node_scale(0, c) = rms(node_sq(c), nodes);
  params.edge_scale(0, kEdgeFeatLength) = rms(edge_sq, edges);
  params.output_scale = rms(target_sq, 3.0 * nodes);
}

ad::Var gat_layer_forward(ad::Var x, const GraphBatch& batch, ad::Var edge_features, const GatLayerVars& layer,
                          double negative_slope, Matrix* alpha) {
  const Index n = x.rows();
  if (n != batch.node_count())
    throw UsageError("gat_layer_forward: " + std::to_string(n) + " rows for " + std::to_string(batch.node_count()) +
                     " nodes");
  const bool with_edges = !layer.theta_e.empty();
  if (with_edges != edge_features.valid())
    throw UsageError("gat_layer_forward: edge features must be supplied iff the layer uses them");

  const std::size_t heads = layer.theta.size();
  std::vector<ad::Var> outputs;
  outputs.reserve(heads);
  if (alpha) alpha->resize(static_cast<Index>(batch.attention_targets->size()), static_cast<Index>(heads));
  for (std::size_t k = 0; k < heads; ++k) {
    ad::Var transformed = ad::matmul(x, layer.theta[k]);
    ad::Var score = ad::matmul(transformed, layer.a[k]);
    ad::Var logits = ad::add(ad::gather_rows(score, batch.attention_targets), ad::gather_rows(score, batch.attention_sources));
    if (with_edges)
      logits = ad::add(logits, ad::matmul(edge_features, ad::matmul(layer.theta_e[k], layer.a_e[k])));
    logits = ad::leaky_relu(logits, negative_slope);
    ad::Var weights = ad::segment_softmax(logits, batch.attention_targets, n);
    if (alpha) alpha->col(static_cast<Index>(k)) = weights.value().col(0);
    outputs.push_back(
        ad::weighted_gather_scatter(transformed, weights, batch.attention_sources, batch.attention_targets, n));
  }
  return ad::matmul(ad::concat_cols(outputs), layer.wo);
}

std::vector<ad::Var> bind_params(ad::Tape& tape, const ModelParams& params, bool trainable) {
  std::vector<ad::Var> vars;
  vars.reserve(params.blocks.size());
  for (const Matrix& b : params.blocks) vars.push_back(trainable ? tape.parameter(b) : tape.constant(b));
  return vars;
}

ad::Var model_forward(ad::Tape& tape, const GraphBatch& batch, const ModelParams& params, std::span<const ad::Var> vars,
                      AttentionLog* log) {
  const ModelConfig& c = params.config;
  if (vars.size() != params.blocks.size())
    throw UsageError("model_forward: " + std::to_string(vars.size()) + " variables for " +
                     std::to_string(params.blocks.size()) + " parameter blocks");
  if (batch.node_features.cols() != c.node_input_width())
    throw UsageError("model_forward: node features have width " + std::to_string(batch.node_features.cols()) +
                     ", model expects " + std::to_string(c.node_input_width()));

  auto var = [&](std::string_view name) { return vars[params.index_of(name)]; };

  Matrix scaled = batch.node_features.array().rowwise() / params.node_scale.row(0).array();
  ad::Var h = tape.constant(std::move(scaled));
  h = ad::leaky_relu(ad::add_row(ad::matmul(h, var("input.weight")), var("input.bias")), c.negative_slope);

  ad::Var edges;
  if (c.use_edge_features) {
    if (batch.attention_edge_features.cols() != c.edge_input_width())
      throw UsageError("model_forward: edge features have width " +
                       std::to_string(batch.attention_edge_features.cols()) + ", model expects " +
                       std::to_string(c.edge_input_width()));
    Matrix e = batch.attention_edge_features.array().rowwise() / params.edge_scale.row(0).array();
    edges = tape.constant(std::move(e));
  }

  if (log) log->alpha.assign(static_cast<std::size_t>(c.layers), Matrix());
  for (int l = 0; l < c.layers; ++l) {
    GatLayerVars layer;
    for (int k = 0; k < c.heads; ++k) {
      layer.theta.push_back(var(head_name(l, k, "theta")));
      layer.a.push_back(var(head_name(l, k, "a")));
      if (c.use_edge_features) {
        layer.theta_e.push_back(var(head_name(l, k, "theta_e")));
        layer.a_e.push_back(var(head_name(l, k, "a_e")));
      }
    }
    layer.wo = var(layer_name(l, "wo"));
    Matrix* alpha = log ? &log->alpha[static_cast<std::size_t>(l)] : nullptr;
    h = ad::leaky_relu(gat_layer_forward(h, batch, edges, layer, c.negative_slope, alpha), c.negative_slope);
  }
  return ad::scale(ad::matmul(h, var("readout")), params.output_scale);
}

Matrix predict(const ModelParams& params, const GraphBatch& batch, AttentionLog* log) {
  ad::Tape tape(false);
  const auto vars = bind_params(tape, params, false);
  return model_forward(tape, batch, params, vars, log).value();
}

Matrix predict(const ModelParams& params, const GraphSample& graph) { return predict(params, batch_graphs(graph)); }

// ---------------------------------------------------------------------------

namespace {

constexpr std::string_view kCheckpointMagic = "MIXCKPT 1\n";

void write_block(io::BinaryWriter& w, std::string_view name, const Matrix& m) {
  w.write<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
  w.write_bytes(name);
  w.write<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
  w.write<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
  w.write_doubles(std::span(m.data(), static_cast<std::size_t>(m.size())));
}

}  // namespace

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  const ModelParams& p = checkpoint.params;
  const ModelConfig& c = p.config;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  io::BinaryWriter w(out);
  w.write_bytes(kCheckpointMagic);
  w.write<std::int32_t>(c.layers);
  w.write<std::int32_t>(c.heads);
  w.write<std::int32_t>(c.hidden);
  w.write<std::uint8_t>(c.use_edge_features ? 1 : 0);
  w.write<double>(c.negative_slope);
  w.write<std::int32_t>(c.rigid_count);
  w.write<std::uint64_t>(c.seed);
  w.write<std::uint64_t>(checkpoint.mesh_hash);
  w.write<std::uint64_t>(checkpoint.dataset_hash);
  w.write<std::uint8_t>(checkpoint.augment.virtual_nodes ? 1 : 0);
  w.write<std::uint8_t>(checkpoint.augment.virtual_edges ? 1 : 0);
  w.write<std::uint8_t>(checkpoint.rel ? 1 : 0);
  w.write<double>(checkpoint.rel_weight);
  w.write<double>(p.output_scale);
  w.write<std::uint64_t>(p.blocks.size() + 2);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) write_block(w, p.names[i], p.blocks[i]);
  write_block(w, "scale.node", p.node_scale);
  write_block(w, "scale.edge", p.edge_scale);
  if (!w.ok()) throw DataError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  io::BinaryReader r(in, path.string());
  const std::string magic = r.read_bytes(kCheckpointMagic.size());
  if (magic.starts_with("MIXCKPT ") && magic != kCheckpointMagic)
    throw DataError(path.string() + ": unsupported checkpoint version");
  if (magic != kCheckpointMagic) throw DataError(path.string() + ": not a checkpoint file");

  Checkpoint ck;
  ModelConfig& c = ck.params.config;
  c.layers = r.read<std::int32_t>();
  c.heads = r.read<std::int32_t>();
  c.hidden = r.read<std::int32_t>();
  c.use_edge_features = r.read<std::uint8_t>() != 0;
  c.negative_slope = r.read<double>();
  c.rigid_count = r.read<std::int32_t>();
  c.seed = r.read<std::uint64_t>();
  c.validate();
  ck.mesh_hash = r.read<std::uint64_t>();
  ck.dataset_hash = r.read<std::uint64_t>();
  ck.augment.virtual_nodes = r.read<std::uint8_t>() != 0;
  ck.augment.virtual_edges = r.read<std::uint8_t>() != 0;
  ck.rel = r.read<std::uint8_t>() != 0;
  ck.rel_weight = r.read<double>();
  ck.params.output_scale = r.read<double>();

  // The expected layout comes from the config; every stored block must match it.
  const ModelParams layout = init_params(c);
  const auto count = r.read<std::uint64_t>();
  if (count != layout.blocks.size() + 2)
    throw DataError(path.string() + ": " + std::to_string(count) + " blocks, config implies " +
                    std::to_string(layout.blocks.size() + 2));
  for (std::uint64_t b = 0; b < count; ++b) {
    const auto name_length = r.read<std::uint32_t>();
    if (name_length > 256) throw ParseError(path.string() + ": implausible block name length", 0, r.offset());
    std::string name = r.read_bytes(name_length);
    const auto rows = static_cast<Index>(r.read<std::uint64_t>());
    const auto cols = static_cast<Index>(r.read<std::uint64_t>());
    const Matrix* expected = nullptr;
    if (b < layout.blocks.size()) {
      if (name != layout.names[b])
        throw DataError(path.string() + ": block " + std::to_string(b) + " is '" + name + "', expected '" +
                        layout.names[b] + "'");
      expected = &layout.blocks[b];
    } else if (name == "scale.node") {
      expected = &layout.node_scale;
    } else if (name == "scale.edge") {
      expected = &layout.edge_scale;
    } else {
      throw DataError(path.string() + ": unexpected block '" + name + "'");
    }
    if (rows != expected->rows() || cols != expected->cols())
      throw DataError(path.string() + ": block '" + name + "' has shape " + std::to_string(rows) + "x" +
                      std::to_string(cols) + ", expected " + std::to_string(expected->rows()) + "x" +
                      std::to_string(expected->cols()));
    Matrix m(rows, cols);
    r.read_doubles(std::span(m.data(), static_cast<std::size_t>(m.size())));
    if (!m.allFinite()) throw DataError(path.string() + ": block '" + name + "' contains non-finite values");
    if (name == "scale.node") {
      ck.params.node_scale = std::move(m);
    } else if (name == "scale.edge") {
      ck.params.edge_scale = std::move(m);
    } else {
      ck.params.names.push_back(std::move(name));
      ck.params.blocks.push_back(std::move(m));
    }
  }
  if (!r.at_end()) throw DataError(path.string() + ": trailing bytes after the last block");
  return ck;
}

}  // namespace mixpinn
