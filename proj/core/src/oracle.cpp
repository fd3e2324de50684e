#include "mixpinn/oracle.hpp"

#include "mixpinn/binary_io.hpp"

#include <Eigen/Dense>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numbers>
#include <optional>
#include <thread>

namespace mixpinn {

void MaterialParams::validate() const {
  if (!(young_modulus > 0.0)) throw UsageError("material: Young's modulus must be positive");
  if (!(poisson_ratio >= 0.0 && poisson_ratio < 0.5)) throw UsageError("material: Poisson ratio must lie in [0, 0.5)");
}

double MaterialParams::lame_lambda() const {
  return young_modulus * poisson_ratio / ((1.0 + poisson_ratio) * (1.0 - 2.0 * poisson_ratio));
}

double MaterialParams::lame_mu() const { return young_modulus / (2.0 * (1.0 + poisson_ratio)); }

SparseMatrix assemble_stiffness(std::span<const Vec3> positions, std::span<const Tet> tetrahedra,
                                const MaterialParams& material) {
  material.validate();
  const double lambda = material.lame_lambda();
  const double mu = material.lame_mu();
  const Index dofs = 3 * static_cast<Index>(positions.size());

  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(tetrahedra.size() * 144);
  for (std::size_t t = 0; t < tetrahedra.size(); ++t) {
    const Tet& tet = tetrahedra[t];
    const Vec3& x0 = positions[static_cast<std::size_t>(tet[0])];
    Mat3 edges;
    for (int a = 0; a < 3; ++a) edges.col(a) = positions[static_cast<std::size_t>(tet[a + 1])] - x0;
    const double volume = edges.determinant() / 6.0;
    if (!(volume > 0.0))
      throw DataError("assemble_stiffness: tetrahedron " + std::to_string(t) + " is inverted or degenerate (volume " +
                      std::to_string(volume) + ")");
    // Rows of edges^-1 are the gradients of the barycentric coordinates 1..3.
    const Mat3 inv = edges.inverse();
    Eigen::Matrix<double, 4, 3> grad;
    grad.row(0) = -inv.colwise().sum();
    grad.bottomRows<3>() = inv;

    for (int a = 0; a < 4; ++a) {
      for (int b = 0; b < 4; ++b) {
        const double dot = grad.row(a).dot(grad.row(b));
        for (int i = 0; i < 3; ++i) {
          for (int j = 0; j < 3; ++j) {
            double k = lambda * grad(a, i) * grad(b, j) + mu * grad(a, j) * grad(b, i);
            if (i == j) k += mu * dot;
            triplets.emplace_back(3 * tet[static_cast<std::size_t>(a)] + i, 3 * tet[static_cast<std::size_t>(b)] + j,
                                  volume * k);
          }
        }
      }
    }
  }
  SparseMatrix stiffness(dofs, dofs);
  stiffness.setFromTriplets(triplets.begin(), triplets.end());
  return stiffness;
}

SparseMatrix assemble_stiffness(const Mesh& mesh, const MaterialParams& material) {
  return assemble_stiffness(mesh.rest_positions, mesh.tetrahedra, material);
}

ReducedSystem reduce_rigid(const SparseMatrix& stiffness, const Mesh& mesh, std::span<const Vec3> positions) {
  const Index n = mesh.node_count();
  if (stiffness.rows() != 3 * n || stiffness.cols() != 3 * n)
    throw DataError("reduce_rigid: stiffness size does not match the mesh");

  ReducedSystem system;
  system.node_labels = mesh.node_labels;
  system.soft_dof.assign(static_cast<std::size_t>(n), -1);
  Index next = 0;
  for (Index i = 0; i < n; ++i) {
    if (mesh.node_labels[static_cast<std::size_t>(i)] == kSoftTissue) {
      system.soft_dof[static_cast<std::size_t>(i)] = next;
      next += 3;
    }
  }
  const auto components = mesh.rigid_components();
  for (std::size_t k = 0; k < components.size(); ++k) {
    if (components[k].empty())
      throw DataError("reduce_rigid: rigid component " + std::to_string(k + 1) + " has no nodes");
    Vec3 centroid = Vec3::Zero();
    for (Index i : components[k]) centroid += positions[static_cast<std::size_t>(i)];
    centroid /= static_cast<double>(components[k].size());
    system.centroids.push_back(centroid);
    system.component_dof.push_back(next);
    next += 6;
  }

  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(3 * n) * 3);
  for (Index i = 0; i < n; ++i) {
    const AnatomyLabel label = mesh.node_labels[static_cast<std::size_t>(i)];
    if (label == kSoftTissue) {
      for (int d = 0; d < 3; ++d) triplets.emplace_back(3 * i + d, system.soft_dof[static_cast<std::size_t>(i)] + d, 1.0);
      continue;
    }
    const Index base = system.component_dof[static_cast<std::size_t>(label - 1)];
    const Vec3 p = positions[static_cast<std::size_t>(i)] - system.centroids[static_cast<std::size_t>(label - 1)];
    for (int d = 0; d < 3; ++d) triplets.emplace_back(3 * i + d, base + d, 1.0);
    // theta x p, row by row.
    triplets.emplace_back(3 * i + 0, base + 4, p.z());
    triplets.emplace_back(3 * i + 0, base + 5, -p.y());
    triplets.emplace_back(3 * i + 1, base + 5, p.x());
    triplets.emplace_back(3 * i + 1, base + 3, -p.z());
    triplets.emplace_back(3 * i + 2, base + 3, p.y());
    triplets.emplace_back(3 * i + 2, base + 4, -p.x());
  }
  system.expansion.resize(3 * n, next);
  system.expansion.setFromTriplets(triplets.begin(), triplets.end());
  SparseMatrix tk = SparseMatrix(system.expansion.transpose()) * stiffness;
  system.stiffness = tk * system.expansion;
  return system;
}

ReducedSystem reduce_rigid(const SparseMatrix& stiffness, const Mesh& mesh) {
  return reduce_rigid(stiffness, mesh, mesh.rest_positions);
}

struct DirichletSolver::Impl {
  const ReducedSystem* system = nullptr;
  std::vector<Index> prescribed_reduced;  // reduced dof per prescribed entry
  std::vector<Index> free_index;          // reduced dof -> free slot or -1
  std::vector<Index> free_dofs;
  SparseMatrix k_ff;
  SparseMatrix k_fp;
  Eigen::SimplicialLDLT<SparseMatrix> ldlt;
};

DirichletSolver::DirichletSolver(const ReducedSystem& system, std::vector<Index> prescribed_dofs)
    : impl_(std::make_unique<Impl>()) {
  impl_->system = &system;
  const Index reduced = system.reduced_dofs();
  std::vector<Index> prescribed_slot(static_cast<std::size_t>(reduced), -1);
  for (std::size_t k = 0; k < prescribed_dofs.size(); ++k) {
    const Index dof = prescribed_dofs[k];
    if (dof < 0 || dof >= system.full_dofs()) throw DataError("solve: prescribed DOF out of range");
    const Index node = dof / 3;
    const Index soft = system.soft_dof[static_cast<std::size_t>(node)];
    if (soft < 0) throw DataError("solve: node " + std::to_string(node) + " is rigid and cannot be prescribed");
    const Index r = soft + dof % 3;
    if (prescribed_slot[static_cast<std::size_t>(r)] >= 0)
      throw DataError("solve: DOF " + std::to_string(dof) + " prescribed twice");
    prescribed_slot[static_cast<std::size_t>(r)] = static_cast<Index>(k);
    impl_->prescribed_reduced.push_back(r);
  }
  impl_->free_index.assign(static_cast<std::size_t>(reduced), -1);
  for (Index r = 0; r < reduced; ++r) {
    if (prescribed_slot[static_cast<std::size_t>(r)] < 0) {
      impl_->free_index[static_cast<std::size_t>(r)] = static_cast<Index>(impl_->free_dofs.size());
      impl_->free_dofs.push_back(r);
    }
  }
  const Index nf = static_cast<Index>(impl_->free_dofs.size());
  const Index np = static_cast<Index>(prescribed_dofs.size());
  std::vector<Eigen::Triplet<double>> ff, fp;
  for (Index col = 0; col < system.stiffness.outerSize(); ++col) {
    for (SparseMatrix::InnerIterator it(system.stiffness, col); it; ++it) {
      const Index row_free = impl_->free_index[static_cast<std::size_t>(it.row())];
      if (row_free < 0) continue;
      const Index col_free = impl_->free_index[static_cast<std::size_t>(col)];
      if (col_free >= 0)
        ff.emplace_back(row_free, col_free, it.value());
      else
        fp.emplace_back(row_free, prescribed_slot[static_cast<std::size_t>(col)], it.value());
    }
  }
  impl_->k_ff.resize(nf, nf);
  impl_->k_ff.setFromTriplets(ff.begin(), ff.end());
  impl_->k_fp.resize(nf, np);
  impl_->k_fp.setFromTriplets(fp.begin(), fp.end());
  if (nf == 0) return;

  impl_->ldlt.compute(impl_->k_ff);
  bool singular = impl_->ldlt.info() != Eigen::Success;
  if (!singular) {
    const Vector& d = impl_->ldlt.vectorD();
    const double dmax = d.cwiseAbs().maxCoeff();
    singular = !(d.minCoeff() > 1e-12 * dmax);
  }
  if (singular)
    throw NumericalError("solve: stiffness is singular after boundary conditions; fix more nodes to remove rigid-body modes");
}

DirichletSolver::~DirichletSolver() = default;
DirichletSolver::DirichletSolver(DirichletSolver&&) noexcept = default;
DirichletSolver& DirichletSolver::operator=(DirichletSolver&&) noexcept = default;

StepSolution DirichletSolver::solve(std::span<const double> values) const {
  const Impl& s = *impl_;
  if (values.size() != s.prescribed_reduced.size()) throw DataError("solve: prescribed value count mismatch");
  const ReducedSystem& system = *s.system;
  Vector q = Vector::Zero(system.reduced_dofs());
  const Eigen::Map<const Vector> prescribed(values.data(), static_cast<Index>(values.size()));
  for (std::size_t k = 0; k < values.size(); ++k) q[s.prescribed_reduced[k]] = values[k];

  StepSolution solution;
  if (!s.free_dofs.empty()) {
    const Vector rhs = -(s.k_fp * prescribed);
    const Vector free = s.ldlt.solve(rhs);
    const double rhs_norm = rhs.norm();
    const double residual = (s.k_ff * free - rhs).norm();
    solution.relative_residual = rhs_norm > 0.0 ? residual / rhs_norm : residual;
    if (!std::isfinite(solution.relative_residual) || solution.relative_residual > kResidualTolerance)
      throw NumericalError("solve: relative residual " + std::to_string(solution.relative_residual) +
                           " exceeds tolerance");
    for (std::size_t f = 0; f < s.free_dofs.size(); ++f) q[s.free_dofs[f]] = free[static_cast<Index>(f)];
  }
  const Vector full = system.expansion * q;
  const Index n = system.full_dofs() / 3;
  solution.field = Eigen::Map<const Matrix>(full.data(), n, 3);
  for (Index base : system.component_dof)
    solution.rigid.push_back(RigidMotion{q.segment<3>(base), q.segment<3>(base + 3)});
  return solution;
}

StepSolution solve_dirichlet(const ReducedSystem& system, std::span<const DofValue> prescribed) {
  std::vector<Index> dofs;
  std::vector<double> values;
  for (const DofValue& p : prescribed) {
    dofs.push_back(p.dof);
    values.push_back(p.value);
  }
  return DirichletSolver(system, std::move(dofs)).solve(values);
}

StepSolution solve_step(const ReducedSystem& system, std::span<const NodalPrescription> prescribed,
                        std::span<const Index> fixed) {
  std::vector<DofValue> dofs;
  std::vector<Index> seen;
  for (const NodalPrescription& p : prescribed) {
    seen.push_back(p.node);
    for (int d = 0; d < 3; ++d) dofs.push_back({3 * p.node + d, p.displacement[d]});
  }
  std::sort(seen.begin(), seen.end());
  for (Index f : fixed) {
    if (std::binary_search(seen.begin(), seen.end(), f))
      throw DataError("solve_step: node " + std::to_string(f) + " is both prescribed and fixed");
    for (int d = 0; d < 3; ++d) dofs.push_back({3 * f + d, 0.0});
  }
  return solve_dirichlet(system, dofs);
}

Mat3 rodrigues(const Vec3& rotation) {
  const double angle = rotation.norm();
  if (angle == 0.0) return Mat3::Identity();
  return Eigen::AngleAxisd(angle, rotation / angle).toRotationMatrix();
}

RigidMotion fit_rigid_motion(const Field& field, const Mesh& mesh, std::span<const Index> component) {
  RigidMotion motion;
  if (component.empty()) return motion;
  Vec3 centroid = Vec3::Zero();
  for (Index i : component) {
    centroid += mesh.rest_positions[static_cast<std::size_t>(i)];
    motion.translation += field.row(i).transpose();
  }
  centroid /= static_cast<double>(component.size());
  motion.translation /= static_cast<double>(component.size());
  // theta x p = -[p]x theta, so the normal equations use [p]x^T [p]x = |p|^2 I - p p^T.
  Mat3 normal = Mat3::Zero();
  Vec3 rhs = Vec3::Zero();
  for (Index i : component) {
    const Vec3 p = mesh.rest_positions[static_cast<std::size_t>(i)] - centroid;
    const Vec3 u = field.row(i).transpose() - motion.translation;
    normal += p.squaredNorm() * Mat3::Identity() - p * p.transpose();
    rhs += p.cross(u);
  }
  motion.rotation = normal.completeOrthogonalDecomposition().solve(rhs);
  return motion;
}

Field project_rigid(const Field& field, const Mesh& mesh) {
  Field projected = field;
  const auto components = mesh.rigid_components();
  std::vector<std::vector<std::size_t>> component_edges(components.size());
  for (std::size_t e = 0; e < mesh.edges.size(); ++e)
    if (mesh.edge_labels[e] > 0) component_edges[static_cast<std::size_t>(mesh.edge_labels[e] - 1)].push_back(e);

  for (std::size_t k = 0; k < components.size(); ++k) {
    const auto& nodes = components[k];
    if (nodes.empty()) continue;
    bool isometric = true;
    for (std::size_t e : component_edges[k]) {
      const Index a = mesh.edges[e][0], b = mesh.edges[e][1];
      const Vec3 rest = mesh.rest_positions[static_cast<std::size_t>(b)] - mesh.rest_positions[static_cast<std::size_t>(a)];
      const Vec3 moved = rest + (field.row(b) - field.row(a)).transpose();
      if (std::abs(moved.norm() - rest.norm()) > 1e-12 * rest.norm()) {
        isometric = false;
        break;
      }
    }
    if (isometric) continue;

    const RigidMotion motion = fit_rigid_motion(field, mesh, nodes);
    Vec3 centroid = Vec3::Zero();
    for (Index i : nodes) centroid += mesh.rest_positions[static_cast<std::size_t>(i)];
    centroid /= static_cast<double>(nodes.size());
    const Mat3 rotation = rodrigues(motion.rotation);
    for (Index i : nodes) {
      const Vec3 p = mesh.rest_positions[static_cast<std::size_t>(i)] - centroid;
      projected.row(i) = (motion.translation + rotation * p - p).transpose();
    }
  }
  return projected;
}

double max_rigid_edge_strain(const Mesh& mesh, const Field& field) {
  double worst = 0.0;
  for (std::size_t e = 0; e < mesh.edges.size(); ++e) {
    if (mesh.edge_labels[e] == kSoftTissue) continue;
    const Index a = mesh.edges[e][0], b = mesh.edges[e][1];
    const Vec3 rest = mesh.rest_positions[static_cast<std::size_t>(b)] - mesh.rest_positions[static_cast<std::size_t>(a)];
    const Vec3 moved = rest + (field.row(b) - field.row(a)).transpose();
    worst = std::max(worst, std::abs(moved.norm() - rest.norm()) / rest.norm());
  }
  return worst;
}

// ---------------------------------------------------------------------------

double ProbePose::angle_radians() const {
  return kProbeAnglesDeg.at(static_cast<std::size_t>(angle_code)) * std::numbers::pi / 180.0;
}

void ProbeConfig::validate() const {
  if (positions_x < 1 || positions_y < 1) throw UsageError("probe: need at least one grid position per axis");
  if (!(grid_spacing > 0.0)) throw UsageError("probe: grid spacing must be positive");
  if (!(half_long > 0.0 && half_short > 0.0)) throw UsageError("probe: footprint half-lengths must be positive");
  if (depth_steps < 1) throw UsageError("probe: need at least one depth step");
  if (!(step_depth > 0.0)) throw UsageError("probe: step depth must be positive");
  if (std::abs(push_direction.norm() - 1.0) > 1e-12) throw UsageError("probe: push direction must be a unit vector");
}

Vec3 probe_center(const Mesh& mesh, const ProbeConfig& probe, int grid_i, int grid_j) {
  if (mesh.back_surface_nodes.empty()) throw DataError("probe: mesh has no back surface");
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  Vec3 mean = Vec3::Zero();
  for (Index i : mesh.back_surface_nodes) {
    const Vec3& p = mesh.rest_positions[static_cast<std::size_t>(i)];
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
    mean += p;
  }
  mean /= static_cast<double>(mesh.back_surface_nodes.size());
  // Grid origin: back-surface node nearest the corner of a grid centered on the surface.
  const Vec3 target = mean - 0.5 * probe.grid_spacing * Vec3(probe.positions_x - 1, probe.positions_y - 1, 0.0);
  Index origin = mesh.back_surface_nodes.front();
  double best = std::numeric_limits<double>::infinity();
  for (Index i : mesh.back_surface_nodes) {
    const Vec3 d = mesh.rest_positions[static_cast<std::size_t>(i)] - target;
    const double dist = d.head<2>().squaredNorm();
    if (dist < best - 1e-12) {
      best = dist;
      origin = i;
    }
  }
  Vec3 center = mesh.rest_positions[static_cast<std::size_t>(origin)];
  center.x() += grid_i * probe.grid_spacing;
  center.y() += grid_j * probe.grid_spacing;
  if (center.x() < lo.x() - 1e-9 || center.x() > hi.x() + 1e-9 || center.y() < lo.y() - 1e-9 ||
      center.y() > hi.y() + 1e-9)
    throw DataError("probe: grid position (" + std::to_string(grid_i) + ", " + std::to_string(grid_j) +
                    ") lies off the back surface");
  return center;
}

Footprint probe_footprint(const Mesh& mesh, const ProbeConfig& probe, const ProbePose& pose) {
  Footprint footprint;
  footprint.center = probe_center(mesh, probe, pose.grid_i, pose.grid_j);
  const double angle = pose.angle_radians();
  const double c = std::cos(angle), s = std::sin(angle);
  constexpr double kTolerance = 1e-9;
  for (Index i : mesh.back_surface_nodes) {
    const Vec3 d = mesh.rest_positions[static_cast<std::size_t>(i)] - footprint.center;
    const double along = c * d.x() + s * d.y();
    const double across = -s * d.x() + c * d.y();
    if (std::abs(along) <= probe.half_long + kTolerance && std::abs(across) <= probe.half_short + kTolerance)
      footprint.contact_nodes.push_back(i);
  }
  if (footprint.contact_nodes.empty())
    throw DataError("probe: empty footprint at grid position (" + std::to_string(pose.grid_i) + ", " +
                    std::to_string(pose.grid_j) + "), probe is off the surface");
  return footprint;
}

Vec3 probe_displacement(const ProbeConfig& probe, int depth) { return depth * probe.step_depth * probe.push_direction; }

namespace {

std::vector<Index> prescribed_dofs(std::span<const Index> contact, std::span<const Index> fixed) {
  std::vector<Index> dofs;
  for (Index i : contact)
    for (int d = 0; d < 3; ++d) dofs.push_back(3 * i + d);
  for (Index i : fixed)
    for (int d = 0; d < 3; ++d) dofs.push_back(3 * i + d);
  return dofs;
}

std::vector<double> prescribed_values(std::size_t contact_count, std::size_t fixed_count, const Vec3& displacement) {
  std::vector<double> values;
  values.reserve(3 * (contact_count + fixed_count));
  for (std::size_t i = 0; i < contact_count; ++i)
    for (int d = 0; d < 3; ++d) values.push_back(displacement[d]);
  values.resize(values.size() + 3 * fixed_count, 0.0);
  return values;
}

}  // namespace

std::vector<SimulationSample> simulate_pose(const Mesh& mesh, const SweepConfig& config, int grid_i, int grid_j,
                                            int angle_code) {
  config.probe.validate();
  config.material.validate();
  ProbePose pose{grid_i, grid_j, angle_code, 1};
  const Footprint footprint = probe_footprint(mesh, config.probe, pose);
  const auto& contact = footprint.contact_nodes;
  const std::vector<Index> dofs = prescribed_dofs(contact, mesh.fixed_nodes);
  const Index n = mesh.node_count();

  std::vector<SimulationSample> samples;
  auto emit = [&](int depth, Field field) {
    SimulationSample sample;
    sample.pose = pose;
    sample.pose.depth = depth;
    sample.contact_nodes = contact;
    const Vec3 prescription = probe_displacement(config.probe, depth);
    sample.prescribed.resize(static_cast<Index>(contact.size()), 3);
    for (std::size_t c = 0; c < contact.size(); ++c) {
      sample.prescribed.row(static_cast<Index>(c)) = prescription.transpose();
      field.row(contact[c]) = prescription.transpose();
    }
    for (Index f : mesh.fixed_nodes) field.row(f).setZero();
    sample.ground_truth = std::move(field);
    samples.push_back(std::move(sample));
  };

  if (!config.geometry_update) {
    const ReducedSystem system = reduce_rigid(assemble_stiffness(mesh, config.material), mesh);
    const DirichletSolver solver(system, dofs);
    for (int depth = 1; depth <= config.probe.depth_steps; ++depth) {
      const auto values =
          prescribed_values(contact.size(), mesh.fixed_nodes.size(), probe_displacement(config.probe, depth));
      emit(depth, project_rigid(solver.solve(values).field, mesh));
    }
    return samples;
  }

  // Updated-geometry increments. Rigid components carry an exact accumulated
  // rotation so their ground truth stays isometric at every step.
  const auto components = mesh.rigid_components();
  std::vector<Vec3> rest_centroids;
  for (const auto& nodes : components) {
    Vec3 c = Vec3::Zero();
    for (Index i : nodes) c += mesh.rest_positions[static_cast<std::size_t>(i)];
    rest_centroids.push_back(c / static_cast<double>(nodes.size()));
  }
  std::vector<Mat3> rotations(components.size(), Mat3::Identity());
  std::vector<Vec3> translations(components.size(), Vec3::Zero());
  Field displacement = Field::Zero(n, 3);
  std::vector<Vec3> positions = mesh.rest_positions;
  const auto increment = prescribed_values(contact.size(), mesh.fixed_nodes.size(), probe_displacement(config.probe, 1));

  for (int depth = 1; depth <= config.probe.depth_steps; ++depth) {
    const ReducedSystem system =
        reduce_rigid(assemble_stiffness(positions, mesh.tetrahedra, config.material), mesh, positions);
    const StepSolution step = DirichletSolver(system, dofs).solve(increment);
    for (Index i = 0; i < n; ++i)
      if (mesh.node_labels[static_cast<std::size_t>(i)] == kSoftTissue) displacement.row(i) += step.field.row(i);
    for (std::size_t k = 0; k < components.size(); ++k) {
      rotations[k] = rodrigues(step.rigid[k].rotation) * rotations[k];
      translations[k] += step.rigid[k].translation;
      for (Index i : components[k]) {
        const Vec3& rest = mesh.rest_positions[static_cast<std::size_t>(i)];
        const Vec3 moved = rest_centroids[k] + translations[k] + rotations[k] * (rest - rest_centroids[k]);
        displacement.row(i) = (moved - rest).transpose();
      }
    }
    for (std::size_t c = 0; c < contact.size(); ++c)
      displacement.row(contact[c]) = probe_displacement(config.probe, depth).transpose();
    for (Index i = 0; i < n; ++i)
      positions[static_cast<std::size_t>(i)] = mesh.rest_positions[static_cast<std::size_t>(i)] + displacement.row(i).transpose();
    emit(depth, project_rigid(displacement, mesh));
  }
  return samples;
}

Dataset run_sweep(const Mesh& mesh, const SweepConfig& config, std::vector<SweepFailure>* failures) {
  config.probe.validate();
  struct Task {
    int i, j, angle;
  };
  std::vector<Task> tasks;
  for (int i = 0; i < config.probe.positions_x; ++i)
    for (int j = 0; j < config.probe.positions_y; ++j)
      for (int a = 0; a < kProbeAngleCount; ++a) tasks.push_back({i, j, a});

  std::vector<std::optional<std::vector<SimulationSample>>> results(tasks.size());
  std::vector<std::string> errors(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t t = next++; t < tasks.size(); t = next++) {
      try {
        results[t] = simulate_pose(mesh, config, tasks[t].i, tasks[t].j, tasks[t].angle);
      } catch (const Error& e) {
        errors[t] = e.what();
      }
    }
  };
  const int jobs = std::max(1, config.jobs);
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < jobs; ++w) pool.emplace_back(worker);
  }

  Dataset dataset;
  dataset.mesh_hash = mesh.hash();
  dataset.node_count = mesh.node_count();
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    if (!results[t]) {
      const ProbePose pose{tasks[t].i, tasks[t].j, tasks[t].angle, 0};
      spdlog::warn("sweep: pose ({}, {}) at {} deg skipped: {}", pose.grid_i, pose.grid_j,
                   kProbeAnglesDeg[static_cast<std::size_t>(pose.angle_code)], errors[t]);
      if (failures) failures->push_back({pose, errors[t]});
      continue;
    }
    for (auto& sample : *results[t]) dataset.samples.push_back(std::move(sample));
  }
  return dataset;
}

namespace {
constexpr std::string_view kDatasetMagic = "MIXDATA ";
constexpr std::string_view kDatasetVersion = "1\n";
}  // namespace

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  io::BinaryWriter w(out);
  w.write_bytes(kDatasetMagic);
  w.write_bytes(kDatasetVersion);
  w.write<std::uint64_t>(dataset.mesh_hash);
  w.write<std::uint64_t>(dataset.samples.size());
  w.write<std::uint64_t>(static_cast<std::uint64_t>(dataset.node_count));
  for (const SimulationSample& s : dataset.samples) {
    if (s.ground_truth.rows() != dataset.node_count) throw DataError("save_dataset: sample node count mismatch");
    w.write<std::int32_t>(s.pose.grid_i);
    w.write<std::int32_t>(s.pose.grid_j);
    w.write<std::uint8_t>(static_cast<std::uint8_t>(s.pose.angle_code));
    w.write<std::int32_t>(s.pose.depth);
    w.write<std::uint64_t>(s.contact_nodes.size());
    for (Index i : s.contact_nodes) w.write<std::int64_t>(i);
    w.write_doubles(std::span(s.prescribed.data(), static_cast<std::size_t>(s.prescribed.size())));
    w.write_doubles(std::span(s.ground_truth.data(), static_cast<std::size_t>(s.ground_truth.size())));
  }
  if (!w.ok()) throw DataError("failed writing " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset file " + path.string());
  io::BinaryReader r(in, path.string());
  if (r.read_bytes(kDatasetMagic.size()) != kDatasetMagic) throw DataError(path.string() + ": not a MIXDATA file");
  const std::string version = r.read_bytes(kDatasetVersion.size());
  if (version != kDatasetVersion)
    throw DataError(path.string() + ": unsupported dataset version '" + version.substr(0, version.find('\n')) + "'");
  Dataset dataset;
  dataset.mesh_hash = r.read<std::uint64_t>();
  const auto count = r.read<std::uint64_t>();
  dataset.node_count = static_cast<Index>(r.read<std::uint64_t>());
  dataset.samples.reserve(count);
  for (std::uint64_t k = 0; k < count; ++k) {
    SimulationSample s;
    s.pose.grid_i = r.read<std::int32_t>();
    s.pose.grid_j = r.read<std::int32_t>();
    s.pose.angle_code = r.read<std::uint8_t>();
    s.pose.depth = r.read<std::int32_t>();
    if (s.pose.angle_code >= kProbeAngleCount) throw ParseError(path.string() + ": bad angle code", 0, r.offset());
    const auto contacts = r.read<std::uint64_t>();
    if (contacts > static_cast<std::uint64_t>(dataset.node_count))
      throw ParseError(path.string() + ": contact count exceeds node count", 0, r.offset());
    for (std::uint64_t c = 0; c < contacts; ++c) {
      const auto i = r.read<std::int64_t>();
      if (i < 0 || i >= dataset.node_count) throw ParseError(path.string() + ": contact index out of range", 0, r.offset());
      s.contact_nodes.push_back(i);
    }
    s.prescribed.resize(static_cast<Index>(contacts), 3);
    r.read_doubles(std::span(s.prescribed.data(), static_cast<std::size_t>(s.prescribed.size())));
    s.ground_truth.resize(dataset.node_count, 3);
    r.read_doubles(std::span(s.ground_truth.data(), static_cast<std::size_t>(s.ground_truth.size())));
    dataset.samples.push_back(std::move(s));
  }
  if (!r.at_end()) throw ParseError(path.string() + ": trailing bytes after last sample", 0, r.offset());
  return dataset;
}

}  // namespace mixpinn
