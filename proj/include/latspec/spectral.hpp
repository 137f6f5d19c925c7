#pragma once

// Fixed-energy spectral data: the trace of a lattice vector onto the
// Fermi surface, its adjoint (which produces generalized eigenfunctions
// of the free operator), and dyadic-shell norms used as decay
// diagnostics for such eigenfunctions.

#include <algorithm>
#include <map>

#include "latspec/fermi.hpp"
#include "latspec/vectors.hpp"

namespace latspec {

// Amplitudes attached to the nodes of a Fermi-surface mesh, one C^s
// value per node, constrained to the range of the band projector there.
// The natural squared norm weights each node by mu = w/|grad lambda|,
// the same measure the density of states integrates.
struct SpectralDatum {
  double lambda = 0.0;
  FermiSurfaceMesh mesh;
  std::vector<Eigen::VectorXcd> amps;

  double norm2() const {
    double acc = 0.0;
    for (std::size_t k = 0; k < amps.size(); ++k) acc += amps[k].squaredNorm() * mesh.nodes[k].mu;
    return acc;
  }
  double norm() const { return std::sqrt(norm2()); }

  // max over nodes of |amp - P amp|; zero for data in the projector range
  double projector_residual() const {
    double worst = 0.0;
    for (std::size_t k = 0; k < amps.size(); ++k) {
      const Eigen::VectorXcd& v = mesh.nodes[k].eigvec;
      Eigen::VectorXcd proj = v * v.dot(amps[k]);
      worst = std::max(worst, (amps[k] - proj).norm());
    }
    return worst;
  }
};

// (Uf)(x) = (2pi)^{-d/2} sum_n f(n) e^{i n.x}, one component per class.
inline Eigen::VectorXcd torus_symbol(const LatticeSpec& L, const LatticeVector& f,
                                     const double* x) {
  Eigen::VectorXcd out = Eigen::VectorXcd::Zero(L.num_classes);
  for (const auto& [site, val] : f.values) {
    double phase = 0.0;
    for (int a = 0; a < L.dim; ++a) phase += double(site.n[a]) * x[a];
    out[site.cls] += val * std::polar(1.0, phase);
  }
  return out * std::pow(kTwoPi, -0.5 * L.dim);
}

// Trace onto the level set: phi(x_k) = P(x_k) (Uf)(x_k) at every node
// of the given mesh. The mesh must carry eigenvectors.
inline SpectralDatum f0_apply(const LatticeSpec& L, const LatticeVector& f,
                              const FermiSurfaceMesh& mesh) {
  SpectralDatum out;
  out.lambda = mesh.lambda;
  out.mesh = mesh;
  out.amps.resize(mesh.nodes.size());
  for (std::size_t k = 0; k < mesh.nodes.size(); ++k) {
    const FermiNode& nd = mesh.nodes[k];
    if (nd.eigvec.size() != L.num_classes)
      fail_domain("MeshUnavailable", "mesh nodes carry no eigenvectors");
    Eigen::VectorXcd uf = torus_symbol(L, f, nd.x.data());
    out.amps[k] = nd.eigvec * nd.eigvec.dot(uf);
  }
  return out;
}

inline SpectralDatum f0_apply(const LatticeSpec& L, double lambda, const LatticeVector& f,
                              FermiOptions fo = {}) {
  fo.with_eigvecs = true;
  return f0_apply(L, f, fermi_surface(L, lambda, fo));
}

// Adjoint evaluated on lattice sites:
//   u(n) = (2pi)^{-d/2} sum_k e^{-i n.x_k} P(x_k) phi_k w_k/|grad lambda|.
// For a plane-wave datum (a single node) this is an exact generalized
// eigenfunction; in general (H0 - lambda) u vanishes up to mesh error.
inline LatticeVector f0_adjoint_eval(const LatticeSpec& L, const SpectralDatum& phi,
                                     const std::vector<LatticeSite>& sites) {
  double scale = std::pow(kTwoPi, -0.5 * L.dim);
  // project once; for data satisfying the range invariant this is a no-op
  std::vector<Eigen::VectorXcd> pamp(phi.amps.size());
  for (std::size_t k = 0; k < phi.amps.size(); ++k) {
    const Eigen::VectorXcd& v = phi.mesh.nodes[k].eigvec;
    pamp[k] = v * v.dot(phi.amps[k]) * phi.mesh.nodes[k].mu;
  }
  LatticeVector out;
  for (const LatticeSite& s : sites) {
    cd acc(0, 0);
    for (std::size_t k = 0; k < phi.amps.size(); ++k) {
      const FermiNode& nd = phi.mesh.nodes[k];
      double phase = 0.0;
      for (int a = 0; a < L.dim; ++a) phase += double(s.n[a]) * nd.x[a];
      acc += std::polar(1.0, -phase) * pamp[k][s.cls];
    }
    out.set(s, acc * scale);
  }
  return out;
}

// Dyadic-shell norms of a finitely supported (or windowed) vector.
// Shells are r_{j-1} <= |n| < r_j with r_{-1} = 0, r_j = 2^j, |n| the
// Euclidean length of the cell index; class components are summed.
struct BesovReport {
  double b_norm = 0.0;
  double b_star_norm = 0.0;
  std::vector<double> profile_radii;  // dyadic R up to the window radius
  std::vector<double> profile;        // (1/R) sum_{|n|<R} |u(n)|^2
  double window_radius = 0.0;
};

inline BesovReport besov_report(const LatticeVector& u, double window_radius = 0.0) {
  // per-cell energy |u(n)|^2 summed over classes
  std::map<std::array<long, 3>, double> cell;
  for (const auto& [site, val] : u.values) cell[site.n] += std::norm(val);

  double support_radius = 0.0;
  std::vector<std::pair<double, double>> by_r;  // (|n|, energy)
  by_r.reserve(cell.size());
  for (const auto& [n, e] : cell) {
    double r = std::sqrt(double(n[0]) * n[0] + double(n[1]) * n[1] + double(n[2]) * n[2]);
    support_radius = std::max(support_radius, r);
    by_r.emplace_back(r, e);
  }
  if (window_radius <= 0.0) window_radius = support_radius;
  if (window_radius < 8.0)
    fail_domain("WindowTooSmall", "besov_report needs a window of radius >= 8, got " +
                                      std::to_string(window_radius));
  std::sort(by_r.begin(), by_r.end());

  BesovReport rep;
  rep.window_radius = window_radius;

  // b-norm: sum_j r_j^{1/2} (shell L2), truncated at the window
  {
    std::size_t i = 0;
    double rlo = 0.0;
    for (int j = 0; rlo <= window_radius && i < by_r.size(); ++j) {
      double rhi = std::pow(2.0, j);
      double e = 0.0;
      while (i < by_r.size() && by_r[i].first < rhi) e += by_r[i++].second;
      rep.b_norm += std::sqrt(rhi) * std::sqrt(e);
      rlo = rhi;
    }
  }

  // b*-norm: sup over R in (1, window] of (1/R) sum_{|n|<R} |u|^2; the
  // sup of this piecewise 1/R function sits just above a jump radius
  {
    double best = 0.0, acc = 0.0;
    std::size_t i = 0;
    // R -> 1+ picks up everything with |n| <= 1 in the closure of the sup
    while (i < by_r.size() && by_r[i].first <= 1.0 + 1e-12) acc += by_r[i++].second;
    best = acc;
    for (; i < by_r.size() && by_r[i].first <= window_radius; ++i) {
      acc += by_r[i].second;
      double r = by_r[i].first;
      // include ties at the same radius before scoring
      while (i + 1 < by_r.size() && by_r[i + 1].first <= r + 1e-12) acc += by_r[++i].second;
      best = std::max(best, acc / r);
    }
    rep.b_star_norm = std::sqrt(best);
  }

  // profile on dyadic radii
  for (double R = 1.0; R <= window_radius; R *= 2.0) {
    double acc = 0.0;
    for (const auto& [r, e] : by_r)
      if (r < R) acc += e;
    rep.profile_radii.push_back(R);
    rep.profile.push_back(acc / R);
  }
  return rep;
}

}  // namespace latspec
