#pragma once

// Stationary scattering for finite-rank perturbations: channel coordinates on
// the Fermi surface, the scattering amplitude assembled column by column from
// collar resolvent solves, the S-matrix with its weighted unitarity defect,
// and in/out decompositions of Helmholtz solutions on a window.

#include <utility>

#include "latspec/fermi.hpp"
#include "latspec/perturb.hpp"
#include "latspec/spectral.hpp"

namespace latspec {

// Channel coordinates at energy lambda: one node of the level set per
// channel, in band-major node order, carrying the generalized eigenfunction
//   psi_k(n, c) = (2pi)^{-d/2} e^{-i n.x_k} a_k(c)
// and the co-area weight mu_k. Functions on channels pair through
// <phi, psi> = sum_k phi_k conj(psi_k) mu_k.
struct ChannelBasis {
  double lambda = 0.0;
  int dim = 0;
  FermiSurfaceMesh mesh;
  // energy sits in the exceptional set (outside the threshold set): the
  // transform machinery stays valid, but embedded point spectrum may exist
  bool exceptional = false;

  std::size_t size() const { return mesh.nodes.size(); }

  cd wave(std::size_t k, const LatticeSite& s) const {
    const FermiNode& nd = mesh.nodes[k];
    double phase = 0.0;
    for (int i = 0; i < dim; ++i) phase -= double(s.n[i]) * nd.x[i];
    return std::pow(kTwoPi, -0.5 * dim) * std::polar(1.0, phase) * nd.eigvec(s.cls);
  }

  Eigen::VectorXd mu() const {
    Eigen::VectorXd out(mesh.nodes.size());
    for (std::size_t k = 0; k < mesh.nodes.size(); ++k) out(long(k)) = mesh.nodes[k].mu;
    return out;
  }

  // channel coefficients as a transform-side datum (amplitudes along the
  // band eigenvectors)
  SpectralDatum lift(const Eigen::VectorXcd& coeff) const {
    SpectralDatum out;
    out.lambda = lambda;
    out.mesh = mesh;
    out.amps.resize(mesh.nodes.size());
    for (std::size_t k = 0; k < mesh.nodes.size(); ++k)
      out.amps[k] = mesh.nodes[k].eigvec * coeff(long(k));
    return out;
  }

  // trace coefficients of a finitely supported vector: c_k = <a_k, (Uf)(x_k)>
  Eigen::VectorXcd trace(const LatticeSpec& L, const LatticeVector& f) const {
    Eigen::VectorXcd out(mesh.nodes.size());
    for (std::size_t k = 0; k < mesh.nodes.size(); ++k) {
      const FermiNode& nd = mesh.nodes[k];
      out(long(k)) = nd.eigvec.dot(torus_symbol(L, f, nd.x.data()));
    }
    return out;
  }
};

inline ChannelBasis channel_basis(const LatticeSpec& L, double lambda, FermiOptions fo = {}) {
  fo.with_eigvecs = true;
  // nodes must sit on the level set to machine precision: the wave residual
  // |H0 psi - lambda psi| is exactly |lambda_band(x_k) - lambda| times the
  // amplitude, so the generic surface tolerance is not small enough here
  fo.surf_tol = std::min(fo.surf_tol, 1e-13);
  ChannelBasis cb;
  cb.lambda = lambda;
  cb.dim = L.dim;
  cb.mesh = fermi_surface(L, lambda, fo);
  cb.exceptional = t1_contains(L, lambda);
  return cb;
}

struct ScatteringMatrix {
  double lambda = 0.0;
  // kernel against the co-area measure: (A phi)_k = sum_l a(k,l) mu_l phi_l
  Eigen::MatrixXcd a;
  // node-coordinate action of S = I - 2 pi i A
  Eigen::MatrixXcd s;
  Eigen::VectorXd mu;
  // ||S* M S - M|| in the weighted norm, M = diag(mu); quadrature error of
  // the channel mesh dominates this once the energy is off the thresholds
  double unitarity_defect = 0.0;
  bool exceptional = false;
};

namespace detail {

// columns of the scattering amplitude against a prepared collar solver:
//   A(:,l) = trace of Pext g_l + K1 R(lambda + i0) g_l,  g_l = K2 psi_l
inline Eigen::MatrixXcd a_matrix_columns(const PerturbedOperator& op, const ChannelBasis& cb,
                                         const CollarSolver& cs) {
  const auto& L = op.lattice();
  const int N = int(cb.size());
  std::vector<LatticeSite> shells = op.shell_inner();
  shells.insert(shells.end(), op.shell_outer().begin(), op.shell_outer().end());
  Eigen::MatrixXcd A(N, N);
  for (int l = 0; l < N; ++l) {
    LatticeVector psi;
    for (const auto& s : shells) psi.set(s, cb.wave(std::size_t(l), s));
    LatticeVector g = op.apply_k2(psi);
    if (g.empty()) {
      A.col(l).setZero();
      continue;
    }
    PerturbedResolventResult r = cs.solve(g, {});
    LatticeVector q1 = op.exterior_part(g);
    for (const auto& [s, v] : r.k1u.values) q1.add(s, v);
    A.col(l) = cb.trace(L, q1);
  }
  return A;
}

inline double weighted_unitarity_defect(const Eigen::MatrixXcd& S, const Eigen::VectorXd& mu) {
  Eigen::VectorXd sq = mu.array().sqrt();
  Eigen::MatrixXcd T = sq.asDiagonal() * S * sq.cwiseInverse().asDiagonal();
  Eigen::MatrixXcd D = T.adjoint() * T - Eigen::MatrixXcd::Identity(S.rows(), S.cols());
  return D.operatorNorm();
}

}  // namespace detail

inline Eigen::MatrixXcd a_matrix(const PerturbedOperator& op, const ChannelBasis& cb,
                                 const PerturbOptions& opt = {}) {
  detail::CollarSolver cs;
  cs.init(op, true, cb.lambda, LimitSide::Plus, cd(0.0, 0.0));
  cs.factorize(opt);
  return detail::a_matrix_columns(op, cb, cs);
}

inline ScatteringMatrix s_matrix(const PerturbedOperator& op, const ChannelBasis& cb,
                                 const PerturbOptions& opt = {}) {
  ScatteringMatrix out;
  out.lambda = cb.lambda;
  out.exceptional = cb.exceptional;
  out.a = a_matrix(op, cb, opt);
  out.mu = cb.mu();
  const long n = out.a.rows();
  out.s = Eigen::MatrixXcd::Identity(n, n) - cd(0.0, kTwoPi) * out.a * out.mu.asDiagonal();
  out.unitarity_defect = detail::weighted_unitarity_defect(out.s, out.mu);
  return out;
}

// Scattering solution for incident amplitudes phi_in: the truncated incident
// wave u_in = Pext F0* phi_in, the full field u = u_in - R(lambda+i0)(H-lambda) u_in
// on the window |n| <= window_radius, and the outgoing amplitudes S phi_in.
struct HelmholtzSolution {
  LatticeVector u;
  Eigen::VectorXcd phi_out;
  // sup |(H - lambda) u| over complete-stencil window rows
  double interior_residual = 0.0;
  // scale for the residual: quadrature error of the channel mesh times the
  // incident amplitude mass
  double quad_error = 0.0;
  double energy_defect = 0.0;  // | ||phi_out|| - ||phi_in|| | / ||phi_in||
  double unitarity_defect = 0.0;
};

inline HelmholtzSolution helmholtz_in_out(const PerturbedOperator& op, const ChannelBasis& cb,
                                          const Eigen::VectorXcd& phi_in, long window_radius,
                                          const PerturbOptions& opt = {}) {
  const auto& L = op.lattice();
  const long a = op.box_radius();
  if (phi_in.size() != long(cb.size()))
    fail_config("SizeMismatch", "incident amplitude length " + std::to_string(phi_in.size()) +
                                    " does not match the channel count " +
                                    std::to_string(cb.size()));
  if (window_radius < a + 2)
    fail_config("WindowTooSmall", "window radius must reach past the surgery box (need >= " +
                                      std::to_string(a + 2) + ")");

  // window sites: everything the operator knows inside the radius, plus one
  // ring so every reported row has a complete stencil
  std::vector<LatticeSite> window, window_ext, residual_rows;
  auto visit = [&](long r, auto&& fn) {
    Offset n{0, 0, 0};
    for (n[0] = -r; n[0] <= r; ++n[0])
      for (n[1] = -r; n[1] <= r; ++n[1]) {
        long lo2 = L.dim >= 3 ? -r : 0, hi2 = L.dim >= 3 ? r : 0;
        for (n[2] = lo2; n[2] <= hi2; ++n[2])
          for (int c = 0; c < L.num_classes; ++c) fn(LatticeSite{n, c});
      }
  };
  visit(window_radius + 1, [&](const LatticeSite& s) {
    if (!op.site_exists(s)) return;
    window.push_back(s);
    if (detail::cheb_radius(s.n, L.dim) > a) window_ext.push_back(s);
    if (detail::cheb_radius(s.n, L.dim) <= window_radius) residual_rows.push_back(s);
  });
  for (int k = 0; k < op.added_count(); ++k) {
    window.push_back(added_site(L, k));
    residual_rows.push_back(added_site(L, k));
  }

  detail::CollarSolver cs;
  cs.init(op, true, cb.lambda, LimitSide::Plus, cd(0.0, 0.0));
  cs.cover_evals(window_ext);
  cs.factorize(opt);

  // outgoing amplitudes through the shared factorization
  Eigen::MatrixXcd A = detail::a_matrix_columns(op, cb, cs);
  Eigen::VectorXd mu = cb.mu();
  const long n = A.rows();
  Eigen::MatrixXcd S =
      Eigen::MatrixXcd::Identity(n, n) - cd(0.0, kTwoPi) * A * mu.asDiagonal();

  HelmholtzSolution out;
  out.phi_out = S * phi_in;
  out.unitarity_defect = detail::weighted_unitarity_defect(S, mu);

  // incident wave on the shells (untruncated) and its collar image
  SpectralDatum datum = cb.lift(phi_in);
  std::vector<LatticeSite> shells = op.shell_inner();
  shells.insert(shells.end(), op.shell_outer().begin(), op.shell_outer().end());
  LatticeVector w_shell = f0_adjoint_eval(L, datum, shells);
  LatticeVector g = op.apply_k1(w_shell);

  LatticeVector u_in = f0_adjoint_eval(L, datum, window_ext);
  if (g.empty()) {
    out.u = u_in;
  } else {
    PerturbedResolventResult r = cs.solve(g, window);
    out.u = u_in;
    for (const auto& [s, v] : r.u.values) out.u.add(s, -v);
  }

  LatticeVector hu = op.apply(out.u);
  double resid = 0.0;
  for (const auto& p : residual_rows)
    resid = std::max(resid, std::abs(hu.at(p) - cb.lambda * out.u.at(p)));
  out.interior_residual = resid;

  double mass = 0.0;
  for (long k = 0; k < n; ++k) mass += std::abs(phi_in(k)) * mu(k);
  mass *= std::pow(kTwoPi, -0.5 * L.dim);
  out.quad_error = std::max(out.unitarity_defect, 1e-10) * std::max(mass, 1e-300);

  double nin = 0.0, nout = 0.0;
  for (long k = 0; k < n; ++k) {
    nin += std::norm(phi_in(k)) * mu(k);
    nout += std::norm(out.phi_out(k)) * mu(k);
  }
  nin = std::sqrt(nin);
  nout = std::sqrt(nout);
  out.energy_defect = nin > 0 ? std::abs(nout - nin) / nin : 0.0;
  return out;
}

}  // namespace latspec
