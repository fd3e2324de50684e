#pragma once

#include "mixpinn/autodiff.hpp"
#include "mixpinn/graph.hpp"
#include "mixpinn/model.hpp"
#include "mixpinn/oracle.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace mixpinn {

struct TrainConfig {
  int batch_size = 4;
  double initial_lr = 5e-4;
  double plateau_factor = 0.1;
  int plateau_patience = 5;
  double min_lr = 1e-8;
  int early_stop_patience = 15;
  double weight_decay = 0.01;
  bool rel = false;
  double rel_weight = 1.0;              // lambda, used only when rel is on
  bool rel_virtual_edges = true;        // VE edges join the rigid-edge loss
  int max_epochs = 100;
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Everything one ablation row varies: model shape, loss and graph augmentation.
struct ExperimentConfig {
  ModelConfig model;
  TrainConfig train;
  AugmentOptions augment;
};

// Tape losses.

/// Mean Euclidean error over `nodes` (all rows when null).
ad::Var loss_mee(ad::Var pred, const Matrix& target, const ad::IndexList& nodes = nullptr);
/// Mean squared deviation of predicted rigid-edge lengths from rest. Zero for an empty registry.
ad::Var loss_rel(ad::Var pred, const RigidEdgeRegistry& registry, const Matrix& rest_positions);
/// MEE over every batch node, plus lambda * REL when enabled.
ad::Var total_loss(ad::Var pred, const GraphBatch& batch, const TrainConfig& config);

/// Rigid edges REL is computed over for a given config.
RigidEdgeRegistry rel_registry(const RigidEdgeRegistry& registry, const TrainConfig& config);

struct MetricsReport {
  double mee = 0.0;
  double mae = 0.0;
  double mse = 0.0;
  double rigid_mee = 0.0;
  double soft_mee = 0.0;
  double ree = 0.0;
  std::size_t samples = 0;
  double infer_ms = 0.0;  // mean wall-clock per sample
};

/// Metrics of one prediction over the graph's real nodes and real mesh rigid edges.
MetricsReport sample_metrics(const GraphSample& graph, const Matrix& pred);

/// MEE of predicting zero everywhere, over real nodes, averaged over graphs.
double zero_predictor_mee(std::span<const GraphSample> graphs);

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

AdamState adam_init(std::span<const Matrix> params);

/// One AdamW update with decoupled weight decay (p -= lr * decay * p) and bias correction.
void adamw_step(std::span<Matrix> params, std::span<const Matrix> grads, AdamState& state, double lr,
                double weight_decay);

class PlateauScheduler {
 public:
  PlateauScheduler(double lr, double factor, int patience, double min_lr);
  /// Records one validation loss and returns the learning rate for the next epoch.
  double step(double validation_loss);
  double lr() const { return lr_; }

 private:
  double lr_, factor_, min_lr_;
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int bad_epochs_ = 0;
};

class EarlyStopping {
 public:
  explicit EarlyStopping(int patience);
  /// Records one validation loss; true once the best loss is `patience` epochs old.
  bool update(double validation_loss);
  int epochs_since_best() const { return since_best_; }

 private:
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int since_best_ = 0;
};

struct Split {
  std::vector<std::size_t> train, val, test;  // sample indices, dataset order
  std::size_t train_positions = 0, val_positions = 0, test_positions = 0;
};

/// Unique (grid_i, grid_j) positions, shuffled by seed, partitioned with
/// floor(ratio * count) positions for validation and test and the rest for training.
Split split_by_position(std::span<const ProbePose> poses, std::array<double, 3> ratios, std::uint64_t seed);
Split split_by_position(const Dataset& dataset, std::array<double, 3> ratios, std::uint64_t seed);

std::vector<GraphSample> build_graphs(const Mesh& mesh, const Dataset& dataset, std::span<const std::size_t> indices,
                                      const AugmentOptions& augment);

/// Averages sample_metrics over the split, timing each inference.
MetricsReport evaluate(const ModelParams& params, std::span<const GraphSample> graphs);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  ModelParams best;
  std::vector<EpochRecord> curve;
  int best_epoch = 0;
  bool early_stopped = false;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mean total loss over the graphs, evaluated in batches without gradients.
double validation_loss(const ModelParams& params, std::span<const GraphSample> graphs, const TrainConfig& config);

/// Shuffled mini-batch AdamW with plateau decay and early stopping; keeps the
/// parameters with the lowest validation loss. Throws NumericalError on a non-finite loss.
TrainResult train_loop(const ExperimentConfig& config, std::span<const GraphSample> train,
                       std::span<const GraphSample> val, const EpochCallback& on_epoch = {});

void write_curve_csv(std::span<const EpochRecord> curve, std::ostream& out);

struct AblationRow {
  int experiment = 0;
  int heads = 2;
  bool edge_feat = false;
  bool rel = false;
  bool vn = false;
  bool ve = false;
};

/// The 13 configurations, in experiment order.
std::vector<AblationRow> ablation_grid();

ExperimentConfig apply_row(const ExperimentConfig& base, const AblationRow& row);

struct AblationResult {
  AblationRow row;
  MetricsReport metrics;
  bool ok = false;
  std::string error;
};

/// Trains and tests one model per grid row; row failures are logged and reported, not thrown.
std::vector<AblationResult> run_ablation(const ExperimentConfig& base, const Mesh& mesh, const Dataset& dataset,
                                         const Split& split, int jobs = 1);

void write_metrics_header(std::ostream& out);
void write_ablation_csv(std::span<const AblationResult> results, std::ostream& out);

}  // namespace mixpinn
