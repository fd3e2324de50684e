#pragma once

#include "mixpinn/mesh.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace mixpinn {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Per-node displacement field, one row per node, millimeters.
using Field = Matrix;

struct MaterialParams {
  double young_modulus = 25400.0;  // Pa
  double poisson_ratio = 0.45;

  void validate() const;
  double lame_lambda() const;
  double lame_mu() const;
};

/// Global stiffness of constant-strain tetrahedra at the given nodal positions.
/// Throws DataError naming the first inverted tetrahedron.
SparseMatrix assemble_stiffness(std::span<const Vec3> positions, std::span<const Tet> tetrahedra,
                                const MaterialParams& material);
SparseMatrix assemble_stiffness(const Mesh& mesh, const MaterialParams& material);

/// Stiffness after replacing every rigid component's nodal DOFs with a 6-DOF
/// motion (translation, linearized rotation about the component centroid).
///
/// Full DOFs relate to reduced DOFs through `expansion`:  u_full = expansion * q.
/// Soft node i owns reduced DOFs soft_dof[i] .. soft_dof[i] + 2; rigid
/// component k owns component_dof[k] .. component_dof[k] + 5, translation first.
struct ReducedSystem {
  SparseMatrix stiffness;
  SparseMatrix expansion;
  std::vector<Index> soft_dof;  // -1 for rigid nodes
  std::vector<Index> component_dof;
  std::vector<Vec3> centroids;
  std::vector<AnatomyLabel> node_labels;

  Index full_dofs() const { return expansion.rows(); }
  Index reduced_dofs() const { return stiffness.rows(); }
};

ReducedSystem reduce_rigid(const SparseMatrix& stiffness, const Mesh& mesh, std::span<const Vec3> positions);
ReducedSystem reduce_rigid(const SparseMatrix& stiffness, const Mesh& mesh);

/// One prescribed full-system DOF (3 * node + axis).
struct DofValue {
  Index dof;
  double value;
};

struct NodalPrescription {
  Index node;
  Vec3 displacement;
};

struct RigidMotion {
  Vec3 translation = Vec3::Zero();
  Vec3 rotation = Vec3::Zero();  // linearized rotation vector, radians
};

struct StepSolution {
  Field field;
  std::vector<RigidMotion> rigid;
  double relative_residual = 0.0;
};

/// Factorizes the free block of a reduced system once for a fixed set of
/// prescribed DOFs; each solve() only supplies the prescribed values.
class DirichletSolver {
 public:
  DirichletSolver(const ReducedSystem& system, std::vector<Index> prescribed_dofs);
  ~DirichletSolver();
  DirichletSolver(DirichletSolver&&) noexcept;
  DirichletSolver& operator=(DirichletSolver&&) noexcept;

  /// `values[k]` is the displacement of prescribed_dofs[k].
  StepSolution solve(std::span<const double> values) const;

  static constexpr double kResidualTolerance = 1e-10;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

StepSolution solve_dirichlet(const ReducedSystem& system, std::span<const DofValue> prescribed);

/// Prescribed nodes get their full 3-vector, fixed nodes get zero. Both must be soft nodes.
StepSolution solve_step(const ReducedSystem& system, std::span<const NodalPrescription> prescribed,
                        std::span<const Index> fixed);

/// Linear least-squares fit of u_i = t + theta x (r_i - c) over the component's rest positions.
RigidMotion fit_rigid_motion(const Field& field, const Mesh& mesh, std::span<const Index> component);

/// Replaces each rigid component's linearized motion by the exact rotation
/// about its rest centroid. Components that already move isometrically are
/// left untouched, which makes the projection idempotent.
Field project_rigid(const Field& field, const Mesh& mesh);

Mat3 rodrigues(const Vec3& rotation);

// ---------------------------------------------------------------------------
// Probe sweep

constexpr int kProbeAngleCount = 4;
constexpr std::array<double, kProbeAngleCount> kProbeAnglesDeg = {0.0, 45.0, 90.0, 135.0};

struct ProbePose {
  int grid_i = 0;
  int grid_j = 0;
  int angle_code = 0;  // index into kProbeAnglesDeg
  int depth = 1;       // 1-based depth step

  double angle_radians() const;
  friend bool operator==(const ProbePose&, const ProbePose&) = default;
};

struct ProbeConfig {
  int positions_x = 6;
  int positions_y = 4;
  double grid_spacing = 10.0;  // mm
  double half_long = 20.0;     // mm, footprint rectangle
  double half_short = 5.0;
  int depth_steps = 10;
  double step_depth = 1.0;  // mm per step
  Vec3 push_direction{0.0, 0.0, -1.0};

  void validate() const;
};

struct Footprint {
  Vec3 center = Vec3::Zero();
  std::vector<Index> contact_nodes;
};

/// Probe center of grid position (i, j) on the back surface.
Vec3 probe_center(const Mesh& mesh, const ProbeConfig& probe, int grid_i, int grid_j);

/// Back-surface nodes inside the rotated footprint rectangle. Throws DataError when empty.
Footprint probe_footprint(const Mesh& mesh, const ProbeConfig& probe, const ProbePose& pose);

/// Prescribed displacement of every contact node at the pose's depth.
Vec3 probe_displacement(const ProbeConfig& probe, int depth);

struct SimulationSample {
  ProbePose pose;
  std::vector<Index> contact_nodes;
  Field prescribed;    // contact_nodes.size() x 3
  Field ground_truth;  // node_count x 3

  friend bool operator==(const SimulationSample& a, const SimulationSample& b) {
    return a.pose == b.pose && a.contact_nodes == b.contact_nodes && same_matrix(a.prescribed, b.prescribed) &&
           same_matrix(a.ground_truth, b.ground_truth);
  }
};

struct SweepConfig {
  ProbeConfig probe;
  MaterialParams material;
  bool geometry_update = true;  // false: purely linear oracle on the rest geometry
  int jobs = 1;
};

struct SweepFailure {
  ProbePose pose;
  std::string reason;
};

struct Dataset {
  std::uint64_t mesh_hash = 0;
  Index node_count = 0;
  std::vector<SimulationSample> samples;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// All depth steps of one (position, rotation) pose, incrementally loaded.
std::vector<SimulationSample> simulate_pose(const Mesh& mesh, const SweepConfig& config, int grid_i, int grid_j,
                                            int angle_code);

/// Every grid position x rotation x depth. Poses that fail are skipped and reported.
Dataset run_sweep(const Mesh& mesh, const SweepConfig& config, std::vector<SweepFailure>* failures = nullptr);

void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

/// Largest |deformed - rest| / rest length over rigid-labeled mesh edges.
double max_rigid_edge_strain(const Mesh& mesh, const Field& field);

}  // namespace mixpinn
