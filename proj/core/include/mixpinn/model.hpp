#pragma once

#include "mixpinn/autodiff.hpp"
#include "mixpinn/graph.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mixpinn {

struct ModelConfig {
  int layers = 8;
  int heads = 2;
  int hidden = 32;  // per head
  bool use_edge_features = false;
  double negative_slope = 0.01;
  int rigid_count = 2;
  std::uint64_t seed = 0;

  /// 8 two-headed layers of width 256.
  static ModelConfig paper_scale(int rigid_count);

  void validate() const;
  Index node_input_width() const { return node_feature_width(rigid_count); }
  Index edge_input_width() const { return edge_feature_width(rigid_count); }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Trainable blocks in a fixed order, plus fixed input/output scaling that is
/// derived from training data and never updated by the optimizer.
///
/// Block names:
///   input.weight, input.bias
///   layer{l}.head{h}.theta, layer{l}.head{h}.a            (every layer/head)
///   layer{l}.head{h}.theta_e, layer{l}.head{h}.a_e        (edge features only)
///   layer{l}.wo, readout
struct ModelParams {
  ModelConfig config;
  std::vector<std::string> names;
  std::vector<Matrix> blocks;
  Matrix node_scale;  // 1 x node width, features are divided by it
  Matrix edge_scale;  // 1 x edge width
  double output_scale = 1.0;

  std::size_t index_of(std::string_view name) const;
  const Matrix& block(std::string_view name) const { return blocks[index_of(name)]; }
  Matrix& block(std::string_view name) { return blocks[index_of(name)]; }

  friend bool operator==(const ModelParams& a, const ModelParams& b);
};

/// Uniform in +-sqrt(3 / fan_in) for every matrix, zero biases, unit scaling.
ModelParams init_params(const ModelConfig& config);

/// Per-column RMS of continuous node/edge features and of the targets over
/// `graphs`; one-hot columns keep scale 1.
void fit_scaling(ModelParams& params, std::span<const GraphSample> graphs);

/// Attention coefficients captured during a forward pass: one
/// (edges + nodes) x heads matrix per layer, rows in GraphBatch attention order.
struct AttentionLog {
  std::vector<Matrix> alpha;
};

/// Per-head, per-layer pieces for a single GAT layer.
struct GatLayerVars {
  std::vector<ad::Var> theta;
  std::vector<ad::Var> a;
  std::vector<ad::Var> theta_e;  // empty without edge features
  std::vector<ad::Var> a_e;
  ad::Var wo;
};

/// One attention layer followed by the W_o projection (no activation).
/// `edge_features` must be valid iff the layer has edge parameters.
/// Returns the layer output and, if `alpha` is non-null, stores the attention matrix.
ad::Var gat_layer_forward(ad::Var x, const GraphBatch& batch, ad::Var edge_features, const GatLayerVars& layer,
                          double negative_slope, Matrix* alpha = nullptr);

/// Predicted displacements (nodes x 3, mm). `vars` holds one tape variable per
/// params.blocks entry, in order.
ad::Var model_forward(ad::Tape& tape, const GraphBatch& batch, const ModelParams& params, std::span<const ad::Var> vars,
                      AttentionLog* log = nullptr);

/// Registers every block of `params` as a tape parameter (or constant when
/// `trainable` is false).
std::vector<ad::Var> bind_params(ad::Tape& tape, const ModelParams& params, bool trainable);

/// Inference without gradient bookkeeping.
Matrix predict(const ModelParams& params, const GraphBatch& batch, AttentionLog* log = nullptr);
Matrix predict(const ModelParams& params, const GraphSample& graph);

struct Checkpoint {
  ModelParams params;
  std::uint64_t mesh_hash = 0;
  std::uint64_t dataset_hash = 0;
  AugmentOptions augment;
  bool rel = false;
  double rel_weight = 1.0;

  friend bool operator==(const Checkpoint& a, const Checkpoint& b);
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mixpinn
