#pragma once

#include "mixpinn/mesh.hpp"
#include "mixpinn/oracle.hpp"

#include <Eigen/Dense>

#include <utility>
#include <vector>

namespace testing {

using namespace mixpinn;

using Dense = Eigen::MatrixXd;

// Rigid-motion basis (3 translations, 3 infinitesimal rotations) of a node list.
inline Dense rigid_modes(const std::vector<Vec3>& p, const std::vector<Index>& nodes, const Vec3& about) {
  Dense b = Dense::Zero(3 * static_cast<Index>(nodes.size()), 6);
  for (std::size_t s = 0; s < nodes.size(); ++s) {
    const Vec3 r = p[static_cast<std::size_t>(nodes[s])] - about;
    const Index row = 3 * static_cast<Index>(s);
    b.block<3, 3>(row, 0).setIdentity();
    for (int axis = 0; axis < 3; ++axis) b.block<3, 1>(row, 3 + axis) = Vec3::Unit(axis).cross(r);
  }
  return b;
}

// Minimizes the full quadratic energy subject to Dirichlet values and to every
// rigid component moving as an infinitesimal rigid body, via a dense KKT solve.
inline Dense lagrange_solve(const Mesh& mesh, const Dense& k, const std::vector<std::pair<Index, double>>& dirichlet) {
  const Index n = 3 * mesh.node_count();
  std::vector<Eigen::RowVectorXd> rows;
  std::vector<double> rhs;
  for (const auto& [dof, value] : dirichlet) {
    Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(n);
    r[dof] = 1.0;
    rows.push_back(r);
    rhs.push_back(value);
  }
  for (const auto& nodes : mesh.rigid_components()) {
    const Dense b = rigid_modes(mesh.rest_positions, nodes, Vec3::Zero());
    // Constraint rows span the orthogonal complement of the rigid modes.
    Eigen::HouseholderQR<Dense> qr(b);
    const Dense q = qr.householderQ() * Dense::Identity(b.rows(), b.rows());
    for (Index c = 6; c < b.rows(); ++c) {
      Eigen::RowVectorXd r = Eigen::RowVectorXd::Zero(n);
      for (std::size_t s = 0; s < nodes.size(); ++s)
        for (int d = 0; d < 3; ++d) r[3 * nodes[s] + d] = q(3 * static_cast<Index>(s) + d, c);
      rows.push_back(r);
      rhs.push_back(0.0);
    }
  }
  const Index m = static_cast<Index>(rows.size());
  Dense kkt = Dense::Zero(n + m, n + m);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(n + m);
  kkt.topLeftCorner(n, n) = k;
  for (Index r = 0; r < m; ++r) {
    kkt.block(n + r, 0, 1, n) = rows[static_cast<std::size_t>(r)];
    kkt.block(0, n + r, n, 1) = rows[static_cast<std::size_t>(r)].transpose();
    b[n + r] = rhs[static_cast<std::size_t>(r)];
  }
  const Eigen::VectorXd x = kkt.fullPivLu().solve(b);
  return x.head(n).reshaped<Eigen::RowMajor>(mesh.node_count(), 3);
}

// Uniaxial stretch of a unit cube (3x3x3 cells) with every boundary node
// prescribed to the closed-form field; returns the worst interior-node error
// and worst strain/stress deviation, both relative to the loading.
struct PatchResult {
  double displacement_error = 0.0;
  double strain_error = 0.0;
  double stress_error = 0.0;
  std::size_t interior_nodes = 0;
};

inline PatchResult uniaxial_patch_test(const MaterialParams& mat, double eps) {
  PhantomConfig c;
  c.dimensions = Vec3(1, 1, 1);
  c.cells = {3, 3, 3};
  const Mesh m = generate_phantom(c);
  const double nu = mat.poisson_ratio, e_mod = mat.young_modulus;
  auto exact = [&](const Vec3& p) { return Vec3(-nu * eps * p.x(), -nu * eps * p.y(), eps * p.z()); };

  std::vector<DofValue> prescribed;
  std::vector<Index> interior;
  for (Index i = 0; i < m.node_count(); ++i) {
    const Vec3& p = m.rest_positions[static_cast<std::size_t>(i)];
    const bool boundary = (p.array() < 1e-12).any() || (p.array() > 1.0 - 1e-12).any();
    if (!boundary) {
      interior.push_back(i);
      continue;
    }
    for (int d = 0; d < 3; ++d) prescribed.push_back({3 * i + d, exact(p)[d]});
  }
  const StepSolution s = solve_dirichlet(reduce_rigid(assemble_stiffness(m, mat), m), prescribed);
  PatchResult r;
  r.interior_nodes = interior.size();
  for (Index i : interior)
    r.displacement_error = std::max(
        r.displacement_error, (s.field.row(i).transpose() - exact(m.rest_positions[static_cast<std::size_t>(i)])).norm() / eps);

  // Closed form: strain diag(-nu, -nu, 1) eps, stress uniaxial with sigma_zz = E eps.
  const double lambda = e_mod * nu / ((1 + nu) * (1 - 2 * nu)), mu = e_mod / (2 * (1 + nu));
  Mat3 strain_exact = Mat3::Zero();
  strain_exact.diagonal() << -nu * eps, -nu * eps, eps;
  Mat3 stress_exact = Mat3::Zero();
  stress_exact(2, 2) = e_mod * eps;
  for (const Tet& t : m.tetrahedra) {
    Mat3 dx, du;
    for (int a = 0; a < 3; ++a) {
      dx.col(a) = m.rest_positions[static_cast<std::size_t>(t[a + 1])] - m.rest_positions[static_cast<std::size_t>(t[0])];
      du.col(a) = (s.field.row(t[a + 1]) - s.field.row(t[0])).transpose();
    }
    const Mat3 grad = du * dx.inverse();
    const Mat3 strain = 0.5 * (grad + grad.transpose());
    const Mat3 stress = lambda * strain.trace() * Mat3::Identity() + 2 * mu * strain;
    r.strain_error = std::max(r.strain_error, (strain - strain_exact).cwiseAbs().maxCoeff() / eps);
    r.stress_error = std::max(r.stress_error, (stress - stress_exact).cwiseAbs().maxCoeff() / (e_mod * eps));
  }
  return r;
}

}  // namespace testing
