#include "mixpinn/autodiff.hpp"
#include "mixpinn/graph.hpp"
#include "mixpinn/mesh.hpp"
#include "mixpinn/model.hpp"
#include "mixpinn/oracle.hpp"
#include "mixpinn/train.hpp"

#include <benchmark/benchmark.h>

#include <memory>
#include <numeric>
#include <random>

using namespace mixpinn;

namespace {

const Mesh& desk_mesh() {
  static const Mesh mesh = center_mesh(generate_phantom(PhantomConfig::desk_default()));
  return mesh;
}

// Depth-5 sample of one pose, simulated once.
const SimulationSample& desk_sample() {
  static const SimulationSample sample = [] {
    SweepConfig s;
    s.probe.depth_steps = 5;
    return simulate_pose(desk_mesh(), s, 2, 1, 1).back();
  }();
  return sample;
}

void BM_AssembleStiffness(benchmark::State& state) {
  const Mesh& m = desk_mesh();
  for (auto _ : state) benchmark::DoNotOptimize(assemble_stiffness(m, MaterialParams{}));
}
BENCHMARK(BM_AssembleStiffness)->Unit(benchmark::kMillisecond);

void BM_OracleStep(benchmark::State& state) {
  const Mesh& m = desk_mesh();
  const SimulationSample& s = desk_sample();
  const ReducedSystem sys = reduce_rigid(assemble_stiffness(m, MaterialParams{}), m);
  std::vector<NodalPrescription> push;
  for (std::size_t i = 0; i < s.contact_nodes.size(); ++i)
    push.push_back({s.contact_nodes[i], s.prescribed.row(static_cast<Index>(i)).transpose()});
  for (auto _ : state) benchmark::DoNotOptimize(solve_step(sys, push, m.fixed_nodes));
}
BENCHMARK(BM_OracleStep)->Unit(benchmark::kMillisecond);

void BM_SimulatePose(benchmark::State& state) {
  SweepConfig s;
  s.probe.depth_steps = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(simulate_pose(desk_mesh(), s, 2, 1, 0));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SimulatePose)->Arg(1)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_ModelForward(benchmark::State& state) {
  const GraphSample g = make_graph(desk_mesh(), desk_sample(), desk_mesh().hash(), AugmentOptions{true, false});
  const GraphBatch b = batch_graphs(g);
  ModelConfig c;
  c.layers = static_cast<int>(state.range(0));
  c.rigid_count = desk_mesh().rigid_count;
  ModelParams p = init_params(c);
  const std::vector<GraphSample> one = {g};
  fit_scaling(p, one);
  for (auto _ : state) benchmark::DoNotOptimize(predict(p, b));
}
BENCHMARK(BM_ModelForward)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const GraphSample g = make_graph(desk_mesh(), desk_sample(), desk_mesh().hash(), AugmentOptions{true, false});
  const GraphBatch b = batch_graphs(g);
  ModelConfig c;
  c.rigid_count = desk_mesh().rigid_count;
  ModelParams p = init_params(c);
  const std::vector<GraphSample> one = {g};
  fit_scaling(p, one);
  TrainConfig tc;
  tc.rel = state.range(0) != 0;
  for (auto _ : state) {
    ad::Tape tape;
    const auto vars = bind_params(tape, p, true);
    const ad::Var loss = total_loss(model_forward(tape, b, p, vars), b, tc);
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.value());
  }
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_SegmentSoftmax(benchmark::State& state) {
  const Index segments = state.range(0), per = 12;
  auto seg = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(segments * per));
  for (std::size_t i = 0; i < seg->size(); ++i) (*seg)[i] = static_cast<Index>(i) / per;
  const Matrix logits = Matrix::Random(segments * per, 1);
  for (auto _ : state) {
    ad::Tape tape;
    const ad::Var x = tape.parameter(logits);
    const ad::Var y = ad::segment_softmax(x, seg, segments);
    tape.backward(ad::sum(y));
    benchmark::DoNotOptimize(y.value());
  }
  state.SetItemsProcessed(state.iterations() * segments * per);
}
BENCHMARK(BM_SegmentSoftmax)->Arg(1000)->Arg(10000);

}  // namespace

BENCHMARK_MAIN();
