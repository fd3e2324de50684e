#include "commands.hpp"

#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>

namespace mixpinn::cli {

namespace fs = std::filesystem;

std::uint64_t file_hash(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  Fnv1a h;
  std::array<char, 1 << 16> buffer;
  while (in) {
    in.read(buffer.data(), buffer.size());
    h.update(std::as_bytes(std::span(buffer.data(), static_cast<std::size_t>(in.gcount()))));
  }
  return h.digest();
}

int exit_code_for(const std::exception& error) {
  if (dynamic_cast<const UsageError*>(&error)) return 1;
  if (dynamic_cast<const NumericalError*>(&error)) return 3;
  return 2;
}

namespace {

struct Manifest {
  std::string command;
  std::vector<std::pair<std::string, std::string>> entries;

  void input(const std::string& name, std::uint64_t hash) { entries.emplace_back("input." + name, hex64(hash)); }
  void output(const std::string& name, const fs::path& path) {
    entries.emplace_back("output." + name, path.filename().string() + " " + hex64(file_hash(path)));
  }
  void note(const std::string& key, const std::string& value) { entries.emplace_back(key, value); }
};

void write_manifest(const RunConfig& config, const Manifest& m) {
  const fs::path path = config.artifact(m.command + ".manifest");
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "# mixpinn " << m.command << " manifest\n";
  out << "command = " << m.command << "\n";
  out << "seed = " << config.seed() << "\n";
  for (const auto& [k, v] : m.entries) out << k << " = " << v << "\n";
  out << "[config]\n" << config.dump();
}

void ensure_workdir(const RunConfig& config) {
  std::error_code ec;
  fs::create_directories(config.workdir(), ec);
  if (ec) throw DataError("cannot create workdir " + config.workdir().string() + ": " + ec.message());
}

std::string format(const char* fmt, double v) {
  char buffer[64];
  std::snprintf(buffer, sizeof buffer, fmt, v);
  return buffer;
}

struct Inputs {
  Mesh mesh;
  Dataset dataset;
  std::uint64_t mesh_hash = 0;
  std::uint64_t dataset_hash = 0;
};

Mesh read_mesh(const RunConfig& config) { return load_mesh(config.artifact("mesh.txt")); }

Inputs read_mesh_and_dataset(const RunConfig& config) {
  Inputs in;
  in.mesh = read_mesh(config);
  in.mesh_hash = in.mesh.hash();
  const fs::path dataset_path = config.artifact("dataset.bin");
  in.dataset = load_dataset(dataset_path);
  in.dataset_hash = file_hash(dataset_path);
  if (in.dataset.mesh_hash != in.mesh_hash)
    throw DataError("dataset " + dataset_path.string() + " was simulated on mesh " + hex64(in.dataset.mesh_hash) +
                    " but mesh.txt hashes to " + hex64(in.mesh_hash) + "; re-run simulate");
  return in;
}

Checkpoint read_checkpoint(const RunConfig& config, const Inputs& in) {
  Checkpoint ck = load_checkpoint(config.artifact("checkpoint.bin"));
  if (ck.mesh_hash != in.mesh_hash)
    throw DataError("checkpoint was trained on mesh " + hex64(ck.mesh_hash) + " but mesh.txt hashes to " +
                    hex64(in.mesh_hash));
  if (ck.dataset_hash != in.dataset_hash)
    throw DataError("checkpoint was trained on dataset " + hex64(ck.dataset_hash) + " but dataset.bin hashes to " +
                    hex64(in.dataset_hash));
  if (ck.params.config.rigid_count != in.mesh.rigid_count)
    throw DataError("checkpoint expects " + std::to_string(ck.params.config.rigid_count) + " rigid components, mesh has " +
                    std::to_string(in.mesh.rigid_count));
  return ck;
}

const std::vector<std::size_t>& split_part(const Split& split, const std::string& name) {
  if (name == "train") return split.train;
  if (name == "val") return split.val;
  return split.test;
}

void cmd_phantom(const RunConfig& config) {
  ensure_workdir(config);
  const Mesh mesh = center_mesh(generate_phantom(config.phantom()));
  const fs::path out = config.artifact("mesh.txt");
  save_mesh(mesh, out);
  spdlog::info("phantom: {} nodes, {} tetrahedra, {} rigid components -> {}", mesh.node_count(), mesh.tetrahedra.size(),
               mesh.rigid_count, out.string());
  Manifest m{"phantom", {}};
  m.note("mesh_hash", hex64(mesh.hash()));
  m.output("mesh", out);
  write_manifest(config, m);
}

void cmd_simulate(const RunConfig& config) {
  ensure_workdir(config);
  const Mesh mesh = read_mesh(config);
  const SweepConfig sweep = config.sweep();
  std::vector<SweepFailure> failures;
  const auto start = std::chrono::steady_clock::now();
  const Dataset dataset = run_sweep(mesh, sweep, &failures);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (dataset.samples.empty()) throw NumericalError("simulate: every pose failed; see the log for reasons");
  const fs::path out = config.artifact("dataset.bin");
  save_dataset(dataset, out);
  spdlog::info("simulate: {} samples ({} failed poses) in {:.1f} s -> {}", dataset.samples.size(), failures.size(),
               seconds, out.string());
  Manifest m{"simulate", {}};
  m.input("mesh", mesh.hash());
  m.note("samples", std::to_string(dataset.samples.size()));
  m.note("failed_poses", std::to_string(failures.size()));
  for (const SweepFailure& f : failures)
    m.note("failure", std::to_string(f.pose.grid_i) + "," + std::to_string(f.pose.grid_j) + "," +
                          std::to_string(f.pose.angle_code) + " " + f.reason);
  m.output("dataset", out);
  write_manifest(config, m);
}

void cmd_build_graphs(const RunConfig& config) {
  const Inputs in = read_mesh_and_dataset(config);
  const ExperimentConfig exp = config.experiment(in.mesh.rigid_count);
  GraphCache cache;
  cache.mesh_hash = in.mesh_hash;
  cache.dataset_hash = in.dataset_hash;
  cache.options = exp.augment;
  std::vector<std::size_t> all(in.dataset.samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  cache.graphs = build_graphs(in.mesh, in.dataset, all, exp.augment);
  const fs::path out = config.artifact("graphs.bin");
  save_graph_cache(cache, out);
  spdlog::info("build-graphs: {} graphs (vn={}, ve={}) -> {}", cache.graphs.size(), exp.augment.virtual_nodes,
               exp.augment.virtual_edges, out.string());
  Manifest m{"build-graphs", {}};
  m.input("mesh", in.mesh_hash);
  m.input("dataset", in.dataset_hash);
  m.output("graphs", out);
  write_manifest(config, m);
}

/// Graphs for the given samples, taken from graphs.bin when it matches the inputs.
std::vector<GraphSample> graphs_for(const RunConfig& config, const Inputs& in, const AugmentOptions& augment,
                                    std::span<const std::size_t> indices) {
  const fs::path cache_path = config.artifact("graphs.bin");
  if (fs::exists(cache_path)) {
    GraphCache cache = load_graph_cache(cache_path);
    const bool match = cache.mesh_hash == in.mesh_hash && cache.dataset_hash == in.dataset_hash &&
                       cache.options.virtual_nodes == augment.virtual_nodes &&
                       cache.options.virtual_edges == augment.virtual_edges &&
                       cache.graphs.size() == in.dataset.samples.size();
    if (match) {
      std::vector<GraphSample> out;
      out.reserve(indices.size());
      for (std::size_t i : indices) out.push_back(std::move(cache.graphs[i]));
      return out;
    }
    spdlog::info("graphs.bin does not match the current inputs/options; rebuilding graphs");
  }
  return build_graphs(in.mesh, in.dataset, indices, augment);
}

void write_metrics_row(std::ostream& out, int experiment, const ModelConfig& model, bool rel,
                       const AugmentOptions& augment, const MetricsReport& m) {
  AblationResult r;
  r.row = {experiment, model.heads, model.use_edge_features, rel, augment.virtual_nodes, augment.virtual_edges};
  r.metrics = m;
  r.ok = true;
  write_ablation_csv(std::span(&r, 1), out);
}

void cmd_train(const RunConfig& config) {
  const Inputs in = read_mesh_and_dataset(config);
  const ExperimentConfig exp = config.experiment(in.mesh.rigid_count);
  const Split split = split_by_position(in.dataset, config.split_ratios(), config.split_seed());
  spdlog::info("train: split {}/{}/{} positions, {}/{}/{} samples", split.train_positions, split.val_positions,
               split.test_positions, split.train.size(), split.val.size(), split.test.size());
  const auto train = graphs_for(config, in, exp.augment, split.train);
  const auto val = graphs_for(config, in, exp.augment, split.val);

  const TrainResult result = train_loop(exp, train, val, [](const EpochRecord& r) {
    spdlog::info("epoch {:4d}  train {:.6f}  val {:.6f}  lr {:.1e}", r.epoch, r.train_loss, r.val_loss, r.lr);
  });

  Checkpoint ck;
  ck.params = result.best;
  ck.mesh_hash = in.mesh_hash;
  ck.dataset_hash = in.dataset_hash;
  ck.augment = exp.augment;
  ck.rel = exp.train.rel;
  ck.rel_weight = exp.train.rel_weight;
  const fs::path ck_path = config.artifact("checkpoint.bin");
  save_checkpoint(ck, ck_path);
  const fs::path curve_path = config.artifact("curve.csv");
  {
    std::ofstream out(curve_path);
    write_curve_csv(result.curve, out);
  }
  spdlog::info("train: best epoch {} of {}{} -> {}", result.best_epoch, result.curve.size(),
               result.early_stopped ? " (early stop)" : "", ck_path.string());

  Manifest m{"train", {}};
  m.input("mesh", in.mesh_hash);
  m.input("dataset", in.dataset_hash);
  m.note("best_epoch", std::to_string(result.best_epoch));
  m.note("epochs_run", std::to_string(result.curve.size()));
  m.output("checkpoint", ck_path);
  m.output("curve", curve_path);
  write_manifest(config, m);
}

void cmd_eval(const RunConfig& config) {
  const Inputs in = read_mesh_and_dataset(config);
  const Checkpoint ck = read_checkpoint(config, in);
  const Split split = split_by_position(in.dataset, config.split_ratios(), config.split_seed());
  const std::string& part = config.get("eval.split");
  const auto graphs = graphs_for(config, in, ck.augment, split_part(split, part));
  const MetricsReport metrics = evaluate(ck.params, graphs);
  const double baseline = zero_predictor_mee(graphs);

  const fs::path out_path = config.artifact("eval.csv");
  {
    std::ofstream out(out_path);
    write_metrics_row(out, 0, ck.params.config, ck.rel, ck.augment, metrics);
  }
  std::printf("%s split: %zu samples\n", part.c_str(), metrics.samples);
  std::printf("MEE %.4f  MAE %.4f  MSE %.4f  Rigid MEE %.4f  Soft MEE %.4f  REE %.4f  (mm, mm^2)\n", metrics.mee,
              metrics.mae, metrics.mse, metrics.rigid_mee, metrics.soft_mee, metrics.ree);
  std::printf("zero-predictor MEE %.4f mm, inference %.3f ms/sample\n", baseline, metrics.infer_ms);

  Manifest m{"eval", {}};
  m.input("mesh", in.mesh_hash);
  m.input("dataset", in.dataset_hash);
  m.input("checkpoint", file_hash(config.artifact("checkpoint.bin")));
  m.note("split", part);
  m.note("zero_predictor_mee", format("%.6f", baseline));
  m.output("metrics", out_path);
  write_manifest(config, m);
}

void cmd_ablate(const RunConfig& config) {
  const Inputs in = read_mesh_and_dataset(config);
  const ExperimentConfig base = config.experiment(in.mesh.rigid_count);
  const Split split = split_by_position(in.dataset, config.split_ratios(), config.split_seed());
  const auto results = run_ablation(base, in.mesh, in.dataset, split, config.jobs());
  const fs::path out_path = config.artifact("ablation.csv");
  {
    std::ofstream out(out_path);
    write_ablation_csv(results, out);
  }
  std::size_t failed = 0;
  for (const AblationResult& r : results) failed += r.ok ? 0 : 1;
  spdlog::info("ablate: {} rows ({} failed) -> {}", results.size(), failed, out_path.string());
  Manifest m{"ablate", {}};
  m.input("mesh", in.mesh_hash);
  m.input("dataset", in.dataset_hash);
  m.note("failed_rows", std::to_string(failed));
  m.output("ablation", out_path);
  write_manifest(config, m);
}

void cmd_predict(const RunConfig& config) {
  const Inputs in = read_mesh_and_dataset(config);
  const Checkpoint ck = read_checkpoint(config, in);
  const auto index = static_cast<std::size_t>(config.integer("predict.sample"));
  if (index >= in.dataset.samples.size())
    throw UsageError("predict: sample " + std::to_string(index) + " out of range, dataset has " +
                     std::to_string(in.dataset.samples.size()));
  const GraphSample graph = make_graph(in.mesh, in.dataset.samples[index], in.dataset.mesh_hash, ck.augment);
  const Matrix pred = predict(ck.params, graph);
  const fs::path out_path = config.artifact("prediction.csv");
  {
    std::ofstream out(out_path);
    char line[96];
    for (Index i = 0; i < graph.real_node_count; ++i) {
      std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g\n", pred(i, 0), pred(i, 1), pred(i, 2));
      out << line;
    }
  }
  const ProbePose& pose = in.dataset.samples[index].pose;
  spdlog::info("predict: sample {} (position {},{} angle {} depth {}) -> {}", index, pose.grid_i, pose.grid_j,
               kProbeAnglesDeg[static_cast<std::size_t>(pose.angle_code)], pose.depth, out_path.string());
  Manifest m{"predict", {}};
  m.input("mesh", in.mesh_hash);
  m.input("dataset", in.dataset_hash);
  m.input("checkpoint", file_hash(config.artifact("checkpoint.bin")));
  m.note("sample", std::to_string(index));
  m.output("prediction", out_path);
  write_manifest(config, m);
}

void cmd_profile(const RunConfig& config) {
  constexpr int kMinSamples = 50;
  const Inputs in = read_mesh_and_dataset(config);
  const Checkpoint ck = read_checkpoint(config, in);
  const int wanted = config.integer("profile.samples");
  const int warmup = config.integer("profile.warmup");
  if (wanted < kMinSamples) throw UsageError("profile: profile.samples must be at least " + std::to_string(kMinSamples));

  // Whole poses, test split first, until enough samples are covered.
  const Split split = split_by_position(in.dataset, config.split_ratios(), config.split_seed());
  std::vector<std::size_t> order = split.test;
  order.insert(order.end(), split.val.begin(), split.val.end());
  order.insert(order.end(), split.train.begin(), split.train.end());
  std::vector<std::size_t> chosen;
  std::set<std::tuple<int, int, int>> poses;
  std::vector<std::tuple<int, int, int>> pose_order;
  for (std::size_t i : order) {
    const ProbePose& p = in.dataset.samples[i].pose;
    const auto key = std::make_tuple(p.grid_i, p.grid_j, p.angle_code);
    if (!poses.contains(key)) {
      if (static_cast<int>(chosen.size()) >= wanted) break;
      poses.insert(key);
      pose_order.push_back(key);
    }
    chosen.push_back(i);
  }
  if (static_cast<int>(chosen.size()) < wanted)
    throw DataError("profile: dataset has " + std::to_string(chosen.size()) + " samples, " + std::to_string(wanted) +
                    " requested");

  using clock = std::chrono::steady_clock;
  auto ms_since = [](clock::time_point t) { return std::chrono::duration<double, std::milli>(clock::now() - t).count(); };

  // Oracle: amortized per-sample cost of the incremental sweep of each pose.
  SweepConfig sweep = config.sweep();
  sweep.jobs = 1;
  (void)simulate_pose(in.mesh, sweep, std::get<0>(pose_order[0]), std::get<1>(pose_order[0]),
                      std::get<2>(pose_order[0]));
  double oracle_ms = 0.0;
  std::size_t oracle_samples = 0;
  for (const auto& [gi, gj, angle] : pose_order) {
    const auto t = clock::now();
    const auto samples = simulate_pose(in.mesh, sweep, gi, gj, angle);
    oracle_ms += ms_since(t);
    oracle_samples += samples.size();
  }
  oracle_ms /= static_cast<double>(oracle_samples);

  std::vector<GraphSample> graphs;
  graphs.reserve(chosen.size());
  for (std::size_t i : chosen) graphs.push_back(make_graph(in.mesh, in.dataset.samples[i], in.dataset.mesh_hash, ck.augment));
  std::vector<GraphBatch> batches;
  batches.reserve(graphs.size());
  for (const GraphSample& g : graphs) batches.push_back(batch_graphs(g));
  for (int w = 0; w < warmup; ++w) (void)predict(ck.params, batches[static_cast<std::size_t>(w) % batches.size()]);

  std::map<int, std::pair<double, int>> by_depth;
  double inference_ms = 0.0;
  for (std::size_t k = 0; k < batches.size(); ++k) {
    const auto t = clock::now();
    (void)predict(ck.params, batches[k]);
    const double ms = ms_since(t);
    inference_ms += ms;
    auto& slot = by_depth[in.dataset.samples[chosen[k]].pose.depth];
    slot.first += ms;
    slot.second += 1;
  }
  inference_ms /= static_cast<double>(batches.size());

  double mean = 0.0, var = 0.0;
  for (const auto& [depth, slot] : by_depth) mean += slot.first / slot.second;
  mean /= static_cast<double>(by_depth.size());
  for (const auto& [depth, slot] : by_depth) var += std::pow(slot.first / slot.second - mean, 2);
  var /= static_cast<double>(by_depth.size());
  const double cv = mean > 0 ? std::sqrt(var) / mean : 0.0;

  const fs::path out_path = config.artifact("profile.txt");
  {
    std::ofstream out(out_path);
    out << "samples = " << batches.size() << "\n";
    out << "oracle_ms_mean = " << format("%.4f", oracle_ms) << "\n";
    out << "inference_ms_mean = " << format("%.4f", inference_ms) << "\n";
    out << "speedup = " << format("%.4f", oracle_ms / inference_ms) << "\n";
    out << "inference_cv_across_depths = " << format("%.4f", cv) << "\n";
    for (const auto& [depth, slot] : by_depth)
      out << "inference_ms_depth_" << depth << " = " << format("%.4f", slot.first / slot.second) << "\n";
  }
  std::printf("oracle %.3f ms/sample, inference %.3f ms/sample, speed-up %.2fx, inference CV across depths %.2f%%\n",
              oracle_ms, inference_ms, oracle_ms / inference_ms, 100.0 * cv);

  Manifest m{"profile", {}};
  m.input("mesh", in.mesh_hash);
  m.input("dataset", in.dataset_hash);
  m.input("checkpoint", file_hash(config.artifact("checkpoint.bin")));
  m.note("profile_file", out_path.filename().string());
  write_manifest(config, m);
}

const std::map<std::string, std::function<void(const RunConfig&)>>& table() {
  static const std::map<std::string, std::function<void(const RunConfig&)>> commands = {
      {"phantom", cmd_phantom}, {"simulate", cmd_simulate}, {"build-graphs", cmd_build_graphs},
      {"train", cmd_train},     {"eval", cmd_eval},         {"ablate", cmd_ablate},
      {"predict", cmd_predict}, {"profile", cmd_profile},
  };
  return commands;
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"phantom", "simulate", "build-graphs", "train",
                                                 "eval",    "ablate",   "predict",      "profile"};
  return names;
}

void run_command(const std::string& name, const RunConfig& config) {
  auto it = table().find(name);
  if (it == table().end()) throw UsageError("unknown command '" + name + "'");
  config.validate();
  it->second(config);
}

}  // namespace mixpinn::cli
