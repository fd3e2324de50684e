#include "mixpinn/train.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>
#include <utility>

namespace mixpinn {

void TrainConfig::validate() const {
  if (batch_size < 1) throw UsageError("train: batch_size must be >= 1");
  if (!(initial_lr > 0)) throw UsageError("train: initial_lr must be positive");
  if (!(plateau_factor > 0 && plateau_factor < 1)) throw UsageError("train: plateau_factor must be in (0, 1)");
  if (plateau_patience < 1) throw UsageError("train: plateau_patience must be >= 1");
  if (!(min_lr > 0)) throw UsageError("train: min_lr must be positive");
  if (early_stop_patience < 1) throw UsageError("train: early_stop_patience must be >= 1");
  if (!(weight_decay >= 0)) throw UsageError("train: weight_decay must be >= 0");
  if (!(rel_weight >= 0)) throw UsageError("train: lambda must be >= 0");
  if (max_epochs < 1) throw UsageError("train: max_epochs must be >= 1");
}

// ---------------------------------------------------------------------------
// Losses

ad::Var loss_mee(ad::Var pred, const Matrix& target, const ad::IndexList& nodes) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw UsageError("loss_mee: prediction " + std::to_string(pred.rows()) + "x" + std::to_string(pred.cols()) +
                     " vs target " + std::to_string(target.rows()) + "x" + std::to_string(target.cols()));
  ad::Tape& tape = *pred.tape();
  if (!nodes) {
    if (target.rows() == 0) throw UsageError("loss_mee: empty node set");
    return ad::mean(ad::l2_rows(ad::sub(pred, tape.constant(target))));
  }
  if (nodes->empty()) throw UsageError("loss_mee: empty node set");
  Matrix picked(static_cast<Index>(nodes->size()), target.cols());
  for (std::size_t k = 0; k < nodes->size(); ++k) picked.row(static_cast<Index>(k)) = target.row((*nodes)[k]);
  return ad::mean(ad::l2_rows(ad::sub(ad::gather_rows(pred, nodes), tape.constant(std::move(picked)))));
}

ad::Var loss_rel(ad::Var pred, const RigidEdgeRegistry& registry, const Matrix& rest_positions) {
  ad::Tape& tape = *pred.tape();
  if (registry.size() == 0) return tape.constant(Matrix::Zero(1, 1));
  std::vector<Index> first, second;
  Matrix rest_delta(static_cast<Index>(registry.size()), 3);
  Matrix rest_length(static_cast<Index>(registry.size()), 1);
  for (std::size_t e = 0; e < registry.size(); ++e) {
    const auto [a, b] = registry.endpoints[e];
    first.push_back(a);
    second.push_back(b);
    rest_delta.row(static_cast<Index>(e)) = rest_positions.row(b) - rest_positions.row(a);
    rest_length(static_cast<Index>(e), 0) = registry.rest_lengths[e];
  }
  ad::Var moved = ad::sub(ad::gather_rows(pred, ad::make_index_list(std::move(second))),
                          ad::gather_rows(pred, ad::make_index_list(std::move(first))));
  ad::Var length = ad::l2_rows(ad::add(moved, tape.constant(std::move(rest_delta))));
  return ad::mean(ad::square(ad::sub(length, tape.constant(std::move(rest_length)))));
}

RigidEdgeRegistry rel_registry(const RigidEdgeRegistry& registry, const TrainConfig& config) {
  return registry.filtered(true, config.rel_virtual_edges);
}

ad::Var total_loss(ad::Var pred, const GraphBatch& batch, const TrainConfig& config) {
  ad::Var loss = loss_mee(pred, batch.targets);
  if (config.rel && config.rel_weight > 0) {
    const RigidEdgeRegistry registry = rel_registry(batch.rigid_edges, config);
    if (registry.size() == 0) spdlog::warn("rigid-edge loss enabled but the batch has no rigid edges");
    loss = ad::add(loss, ad::scale(loss_rel(pred, registry, batch.rest_positions), config.rel_weight));
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Metrics

MetricsReport sample_metrics(const GraphSample& graph, const Matrix& pred) {
  const Index n = graph.real_node_count;
  if (n == 0) throw DataError("metrics: graph has no nodes");
  if (pred.rows() < n || pred.cols() != 3) throw UsageError("metrics: prediction shape does not match the graph");
  MetricsReport m;
  m.samples = 1;
  double rigid_sum = 0.0, soft_sum = 0.0;
  Index rigid_nodes = 0, soft_nodes = 0;
  for (Index i = 0; i < n; ++i) {
    const Eigen::RowVector3d e = pred.row(i) - graph.targets.row(i);
    const double norm = e.norm();
    m.mee += norm;
    m.mae += e.cwiseAbs().sum();
    m.mse += e.squaredNorm();
    if (graph.node_labels[static_cast<std::size_t>(i)] > 0) {
      rigid_sum += norm;
      ++rigid_nodes;
    } else {
      soft_sum += norm;
      ++soft_nodes;
    }
  }
  m.mee /= static_cast<double>(n);
  m.mae /= static_cast<double>(n);
  m.mse /= static_cast<double>(n);
  m.rigid_mee = rigid_nodes ? rigid_sum / static_cast<double>(rigid_nodes) : 0.0;
  m.soft_mee = soft_nodes ? soft_sum / static_cast<double>(soft_nodes) : 0.0;

  const RigidEdgeRegistry mesh_edges = graph.rigid_edges.filtered(false, false);
  if (mesh_edges.size() > 0) {
    const EdgeResiduals r = rigid_edge_residuals(mesh_edges, graph.rest_positions, pred);
    for (std::size_t e = 0; e < r.rest.size(); ++e) m.ree += std::abs(r.rest[e] - r.predicted[e]);
    m.ree /= static_cast<double>(r.rest.size());
  }
  return m;
}

double zero_predictor_mee(std::span<const GraphSample> graphs) {
  if (graphs.empty()) throw DataError("zero_predictor_mee: no graphs");
  double total = 0.0;
  for (const GraphSample& g : graphs)
    total += g.targets.topRows(g.real_node_count).rowwise().norm().mean();
  return total / static_cast<double>(graphs.size());
}

MetricsReport evaluate(const ModelParams& params, std::span<const GraphSample> graphs) {
  if (graphs.empty()) throw DataError("evaluate: empty split");
  MetricsReport total;
  double elapsed_ms = 0.0;
  for (const GraphSample& g : graphs) {
    const GraphBatch batch = batch_graphs(g);
    const auto start = std::chrono::steady_clock::now();
    const Matrix pred = predict(params, batch);
    elapsed_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    const MetricsReport m = sample_metrics(g, pred);
    total.mee += m.mee;
    total.mae += m.mae;
    total.mse += m.mse;
    total.rigid_mee += m.rigid_mee;
    total.soft_mee += m.soft_mee;
    total.ree += m.ree;
  }
  const double n = static_cast<double>(graphs.size());
  total.mee /= n;
  total.mae /= n;
  total.mse /= n;
  total.rigid_mee /= n;
  total.soft_mee /= n;
  total.ree /= n;
  total.samples = graphs.size();
  total.infer_ms = elapsed_ms / n;
  return total;
}

// ---------------------------------------------------------------------------
// Optimization

AdamState adam_init(std::span<const Matrix> params) {
  AdamState s;
  for (const Matrix& p : params) {
    s.m.push_back(Matrix::Zero(p.rows(), p.cols()));
    s.v.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
  return s;
}

void adamw_step(std::span<Matrix> params, std::span<const Matrix> grads, AdamState& state, double lr,
                double weight_decay) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw UsageError("adamw_step: parameter, gradient and state counts differ");
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = params[i];
    const Matrix& g = grads[i];
    if (g.rows() != p.rows() || g.cols() != p.cols() || state.m[i].rows() != p.rows() || state.m[i].cols() != p.cols())
      throw UsageError("adamw_step: shape mismatch in block " + std::to_string(i));
    p *= 1.0 - lr * weight_decay;
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g.cwiseAbs2();
    p.array() -= lr * (state.m[i].array() / c1) / ((state.v[i].array() / c2).sqrt() + state.epsilon);
  }
}

PlateauScheduler::PlateauScheduler(double lr, double factor, int patience, double min_lr)
    : lr_(lr), factor_(factor), min_lr_(min_lr), patience_(patience) {}

double PlateauScheduler::step(double validation_loss) {
  if (validation_loss < best_) {
    best_ = validation_loss;
    bad_epochs_ = 0;
  } else if (++bad_epochs_ >= patience_) {
    lr_ = std::max(lr_ * factor_, min_lr_);
    bad_epochs_ = 0;
  }
  return lr_;
}

EarlyStopping::EarlyStopping(int patience) : patience_(patience) {}

bool EarlyStopping::update(double validation_loss) {
  if (validation_loss < best_) {
    best_ = validation_loss;
    since_best_ = 0;
  } else {
    ++since_best_;
  }
  return since_best_ >= patience_;
}

// ---------------------------------------------------------------------------
// Data

Split split_by_position(std::span<const ProbePose> poses, std::array<double, 3> ratios, std::uint64_t seed) {
  for (double r : ratios)
    if (r < 0) throw UsageError("split: ratios must be non-negative");
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9) throw UsageError("split: ratios must sum to 1");

  std::vector<std::pair<int, int>> positions;
  for (const ProbePose& p : poses) positions.emplace_back(p.grid_i, p.grid_j);
  std::sort(positions.begin(), positions.end());
  positions.erase(std::unique(positions.begin(), positions.end()), positions.end());
  if (positions.size() < 3)
    throw DataError("split: need at least 3 probe positions, found " + std::to_string(positions.size()));

  std::mt19937_64 rng(seed);
  std::shuffle(positions.begin(), positions.end(), rng);
  const double count = static_cast<double>(positions.size());
  // The small epsilon keeps exact products such as 0.2 * 10 from flooring to one less.
  const auto n_val = static_cast<std::size_t>(std::floor(ratios[1] * count + 1e-9));
  const auto n_test = static_cast<std::size_t>(std::floor(ratios[2] * count + 1e-9));
  const std::size_t n_train = positions.size() - n_val - n_test;

  std::map<std::pair<int, int>, int> part;
  for (std::size_t k = 0; k < positions.size(); ++k) part[positions[k]] = k < n_train ? 0 : (k < n_train + n_val ? 1 : 2);

  Split s;
  s.train_positions = n_train;
  s.val_positions = n_val;
  s.test_positions = n_test;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    switch (part.at({poses[i].grid_i, poses[i].grid_j})) {
      case 0: s.train.push_back(i); break;
      case 1: s.val.push_back(i); break;
      default: s.test.push_back(i); break;
    }
  }
  return s;
}

Split split_by_position(const Dataset& dataset, std::array<double, 3> ratios, std::uint64_t seed) {
  std::vector<ProbePose> poses;
  poses.reserve(dataset.samples.size());
  for (const SimulationSample& s : dataset.samples) poses.push_back(s.pose);
  return split_by_position(poses, ratios, seed);
}

std::vector<GraphSample> build_graphs(const Mesh& mesh, const Dataset& dataset, std::span<const std::size_t> indices,
                                      const AugmentOptions& augment) {
  std::vector<GraphSample> graphs;
  graphs.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= dataset.samples.size()) throw UsageError("build_graphs: sample index out of range");
    graphs.push_back(make_graph(mesh, dataset.samples[i], dataset.mesh_hash, augment));
  }
  return graphs;
}

// ---------------------------------------------------------------------------
// Training

namespace {

GraphBatch make_batch(std::span<const GraphSample> graphs, std::span<const std::size_t> order) {
  std::vector<const GraphSample*> members;
  members.reserve(order.size());
  for (std::size_t i : order) members.push_back(&graphs[i]);
  return batch_graphs(members);
}

}  // namespace

double validation_loss(const ModelParams& params, std::span<const GraphSample> graphs, const TrainConfig& config) {
  if (graphs.empty()) throw DataError("validation_loss: empty split");
  std::vector<std::size_t> order(graphs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double total = 0.0;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
    const GraphBatch batch = make_batch(graphs, std::span(order).subspan(start, end - start));
    ad::Tape tape(false);
    const auto vars = bind_params(tape, params, false);
    total += total_loss(model_forward(tape, batch, params, vars), batch, config).scalar() *
             static_cast<double>(end - start);
  }
  return total / static_cast<double>(graphs.size());
}

TrainResult train_loop(const ExperimentConfig& config, std::span<const GraphSample> train,
                       std::span<const GraphSample> val, const EpochCallback& on_epoch) {
  const TrainConfig& tc = config.train;
  tc.validate();
  if (train.empty()) throw DataError("train: empty training split");
  if (val.empty()) throw DataError("train: empty validation split");
  ad::tune_allocator();

  ModelParams params = init_params(config.model);
  fit_scaling(params, train);
  AdamState adam = adam_init(params.blocks);
  PlateauScheduler scheduler(tc.initial_lr, tc.plateau_factor, tc.plateau_patience, tc.min_lr);
  EarlyStopping stopper(tc.early_stop_patience);
  std::mt19937_64 rng(tc.seed);

  TrainResult result;
  result.best = params;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Matrix> grads(params.blocks.size());

  for (int epoch = 1; epoch <= tc.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = scheduler.lr();
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(tc.batch_size));
      const GraphBatch batch = make_batch(train, std::span(order).subspan(start, end - start));
      ad::Tape tape;
      const auto vars = bind_params(tape, params, true);
      const ad::Var loss = total_loss(model_forward(tape, batch, params, vars), batch, tc);
      const double value = loss.scalar();
      if (!std::isfinite(value))
        throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch) + ", lr " +
                             std::to_string(lr) + "; try a lower learning rate or check the input data");
      tape.backward(loss);
      for (std::size_t b = 0; b < vars.size(); ++b) grads[b] = tape.grad(vars[b]);
      adamw_step(params.blocks, grads, adam, lr, tc.weight_decay);
      epoch_loss += value * static_cast<double>(end - start);
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = epoch_loss / static_cast<double>(train.size());
    record.val_loss = validation_loss(params, val, tc);
    record.lr = lr;
    if (!std::isfinite(record.val_loss))
      throw NumericalError("train: non-finite validation loss at epoch " + std::to_string(epoch));
    result.curve.push_back(record);
    spdlog::debug("epoch {} train {:.6f} val {:.6f} lr {:.2e}", epoch, record.train_loss, record.val_loss, lr);
    if (on_epoch) on_epoch(record);

    if (record.val_loss < best_val) {
      best_val = record.val_loss;
      result.best = params;
      result.best_epoch = epoch;
    }
    scheduler.step(record.val_loss);
    if (stopper.update(record.val_loss)) {
      result.early_stopped = true;
      spdlog::info("early stop at epoch {} (best epoch {})", epoch, result.best_epoch);
      break;
    }
  }
  return result;
}

void write_curve_csv(std::span<const EpochRecord> curve, std::ostream& out) {
  out << "epoch,train_loss,val_loss,lr\n";
  char line[160];
  for (const EpochRecord& r : curve) {
    // %.17g round-trips doubles, so curves from two runs can be compared byte for byte.
    std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss, r.val_loss, r.lr);
    out << line;
  }
}

// ---------------------------------------------------------------------------
// Ablation

std::vector<AblationRow> ablation_grid() {
  //            exp heads  edge   rel    vn     ve
  return {
      {1, 1, false, false, false, false},
      {2, 2, false, false, false, false},
      {3, 2, true, false, false, false},
      {4, 2, true, true, false, false},
      {5, 2, true, false, true, false},
      {6, 2, true, false, false, true},
      {7, 2, true, true, true, false},
      {8, 2, true, true, false, true},
      {9, 2, false, true, false, false},
      {10, 2, false, false, true, false},
      {11, 2, false, false, false, true},
      {12, 2, false, true, true, false},
      {13, 2, false, true, false, true},
  };
}

ExperimentConfig apply_row(const ExperimentConfig& base, const AblationRow& row) {
  ExperimentConfig c = base;
  c.model.heads = row.heads;
  c.model.use_edge_features = row.edge_feat;
  c.train.rel = row.rel;
  c.augment.virtual_nodes = row.vn;
  c.augment.virtual_edges = row.ve;
  return c;
}

std::vector<AblationResult> run_ablation(const ExperimentConfig& base, const Mesh& mesh, const Dataset& dataset,
                                         const Split& split, int jobs) {
  const std::vector<AblationRow> grid = ablation_grid();
  std::vector<AblationResult> results(grid.size());

  struct SplitGraphs {
    std::vector<GraphSample> train, val, test;
  };
  std::map<std::pair<bool, bool>, SplitGraphs> graphs;
  for (const AblationRow& row : grid) {
    auto& g = graphs[{row.vn, row.ve}];
    if (!g.train.empty()) continue;
    const AugmentOptions augment{row.vn, row.ve};
    g.train = build_graphs(mesh, dataset, split.train, augment);
    g.val = build_graphs(mesh, dataset, split.val, augment);
    g.test = build_graphs(mesh, dataset, split.test, augment);
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < grid.size(); k = next++) {
      AblationResult& r = results[k];
      r.row = grid[k];
      try {
        const SplitGraphs& g = graphs.at({r.row.vn, r.row.ve});
        const TrainResult trained = train_loop(apply_row(base, r.row), g.train, g.val);
        r.metrics = evaluate(trained.best, g.test);
        r.ok = true;
        spdlog::info("ablation experiment {}: test MEE {:.4f} mm", r.row.experiment, r.metrics.mee);
      } catch (const std::exception& e) {
        r.error = e.what();
        spdlog::error("ablation experiment {} failed: {}", r.row.experiment, r.error);
      }
    }
  };
  const int threads = std::clamp(jobs, 1, static_cast<int>(grid.size()));
  {
    std::vector<std::jthread> pool;
    for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
  }
  return results;
}

void write_metrics_header(std::ostream& out) {
  out << "experiment,heads,edge_feat,rel,vn,ve,mee,mae,mse,rigid_mee,soft_mee,ree,infer_ms\n";
}

void write_ablation_csv(std::span<const AblationResult> results, std::ostream& out) {
  write_metrics_header(out);
  char line[320];
  for (const AblationResult& r : results) {
    const AblationRow& row = r.row;
    if (r.ok) {
      const MetricsReport& m = r.metrics;
      std::snprintf(line, sizeof line, "%d,%d,%d,%d,%d,%d,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f\n", row.experiment,
                    row.heads, row.edge_feat, row.rel, row.vn, row.ve, m.mee, m.mae, m.mse, m.rigid_mee, m.soft_mee,
                    m.ree, m.infer_ms);
    } else {
      std::snprintf(line, sizeof line, "%d,%d,%d,%d,%d,%d,nan,nan,nan,nan,nan,nan,nan\n", row.experiment, row.heads,
                    row.edge_feat, row.rel, row.vn, row.ve);
    }
    out << line;
  }
}

}  // namespace mixpinn
