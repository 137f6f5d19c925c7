#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "latspec/green.hpp"
#include "latspec/spectral.hpp"

using namespace latspec;

namespace {

double agm(double a, double b) {
  for (int i = 0; i < 60; ++i) {
    double m = 0.5 * (a + b);
    b = std::sqrt(a * b);
    a = m;
  }
  return a;
}

LatticeVector random_vector(const LatticeSpec& L, std::mt19937& rng, int radius, int nsites) {
  std::uniform_int_distribution<long> off(-radius, radius);
  std::uniform_int_distribution<int> cls(0, L.num_classes - 1);
  std::uniform_real_distribution<double> val(-1.0, 1.0);
  LatticeVector f;
  for (int i = 0; i < nsites; ++i)
    f.add({off(rng), L.dim >= 2 ? off(rng) : 0, L.dim == 3 ? off(rng) : 0}, cls(rng),
          cd(val(rng), val(rng)));
  return f;
}

std::vector<LatticeSite> window_sites(const LatticeSpec& L, int r) {
  std::vector<LatticeSite> sites;
  int r2 = L.dim >= 2 ? r : 0;
  int r3 = L.dim == 3 ? r : 0;
  for (long a = -r; a <= r; ++a)
    for (long b = -r2; b <= r2; ++b)
      for (long c = -r3; c <= r3; ++c)
        for (int j = 0; j < L.num_classes; ++j) sites.push_back({{a, b, c}, j});
  return sites;
}

// relative residual of (H0 - lambda) u over the interior of a window
double eigen_residual(const LatticeSpec& L, const LatticeVector& u, double lambda, int rin) {
  LatticeVector hu = apply_h0(L, u);
  double num = 0.0, den = 0.0;
  for (const auto& s : window_sites(L, rin)) {
    num += std::norm(hu.at(s) - lambda * u.at(s));
    den += std::norm(u.at(s));
  }
  return std::sqrt(num / den);
}

}  // namespace

TEST_CASE("delta trace is flat across the surface") {
  LatticeSpec L = build_lattice("square", 2);
  auto datum = f0_apply(L, 0.3, delta_vector({0, 0, 0}, 0));
  REQUIRE(!datum.amps.empty());
  double want = 1.0 / kTwoPi;
  for (const auto& a : datum.amps) {
    REQUIRE(a.size() == 1);
    CHECK(std::abs(a[0] - cd(want, 0.0)) < 1e-13);
  }
  CHECK(datum.projector_residual() < 1e-13);

  // squared trace norm equals the density of states for a delta input
  double rho = 1.0 / (kPi * agm(1.0, 0.3));
  CHECK(std::abs(datum.norm2() - rho) < 1e-4);
}

TEST_CASE("symbols vanishing on the surface have zero trace") {
  LatticeSpec L = build_lattice("square", 2);
  double lambda = 0.3;
  // f with (Uf)(x) = lambda_1(x) - lambda = -(cos x1 + cos x2)/2 - lambda
  LatticeVector f;
  f.add({0, 0, 0}, 0, cd(-lambda * kTwoPi, 0.0));
  for (Offset o : {Offset{1, 0, 0}, Offset{-1, 0, 0}, Offset{0, 1, 0}, Offset{0, -1, 0}})
    f.add(o, 0, cd(-kTwoPi / 4.0, 0.0));
  // the trace vanishes exactly on the surface; numerically it is limited
  // by how precisely the nodes sit on the level set, so ask for tighter
  // node placement than the default
  FermiOptions fo;
  fo.surf_tol = 1e-13;
  auto datum = f0_apply(L, lambda, f, fo);
  double worst = 0.0;
  for (const auto& a : datum.amps) worst = std::max(worst, a.norm());
  CHECK(worst < 1e-12);
}

TEST_CASE("optical theorem and Parseval identity") {
  LatticeSpec L = build_lattice("square", 2);
  std::mt19937 rng(20260817);

  // one block set per (energy, side) covers every trial: supports live in
  // radius 2, so all site differences fall in the radius-4 ball
  std::vector<Offset> offs;
  std::map<Offset, std::size_t> oidx;
  for (long a = -4; a <= 4; ++a)
    for (long b = -4; b <= 4; ++b) {
      oidx[{a, b, 0}] = offs.size();
      offs.push_back({a, b, 0});
    }
  auto apply = [&](const std::vector<Eigen::MatrixXcd>& blocks, const LatticeVector& f,
                   const std::vector<LatticeSite>& sites) {
    LatticeVector out;
    for (const auto& s : sites) {
      cd acc(0, 0);
      for (const auto& [fs, v] : f.values)
        acc += blocks[oidx.at({s.n[0] - fs.n[0], s.n[1] - fs.n[1], 0})](s.cls, fs.cls) * v;
      out.set(s, acc);
    }
    return out;
  };

  for (double lambda : {0.3, -0.6}) {
    GreenLimitOptions eo;
    eo.method = LimitMethod::EpsExtrapolation;
    auto plus = green_limit_blocks(L, lambda, offs, eo);
    eo.side = LimitSide::Minus;
    auto minus = green_limit_blocks(L, lambda, offs, eo);

    FermiOptions fo;
    auto mesh = fermi_surface(L, lambda, fo);

    for (int trial = 0; trial < 3; ++trial) {
      LatticeVector f = random_vector(L, rng, 2, 4);
      std::vector<LatticeSite> supp;
      for (const auto& [s, v] : f.sorted_entries()) supp.push_back(s);

      LatticeVector up = apply(plus.blocks, f, supp);
      LatticeVector um = apply(minus.blocks, f, supp);

      double surf = f0_apply(L, f, mesh).norm2();

      // Im(R0(lambda+i0) f, f) = pi * |trace of f|^2
      double lhs_opt = std::imag(dot(up, f));
      INFO("lambda=" << lambda << " trial=" << trial);
      CHECK(std::abs(lhs_opt - kPi * surf) < 1e-4 * f.norm() * f.norm());

      // (1/2 pi i) ((R0(+) - R0(-)) f, f) = |trace of f|^2
      cd jump = (dot(up, f) - dot(um, f)) / cd(0.0, kTwoPi);
      CHECK(std::abs(jump - cd(surf, 0.0)) < 1e-3 * surf + 1e-9);
    }
  }
}

TEST_CASE("single node adjoint is an exact Bloch wave") {
  LatticeSpec L = build_lattice("hexagonal", 2);
  // exact eigenpair at an arbitrary momentum
  VectorXd x(2);
  x << 1.234, 0.567;
  auto B = band_eigensystem(L, x);
  int band = 1;
  double lambda = B.evals[band];

  SpectralDatum phi;
  phi.lambda = lambda;
  phi.mesh.lambda = lambda;
  phi.mesh.dim = 2;
  FermiNode nd;
  nd.x = x;
  nd.band = band;
  nd.weight = 1.0;
  nd.grad_norm = 1.0;
  nd.mu = 1.0;
  nd.eigvec = B.evecs.col(band);
  phi.mesh.nodes.push_back(nd);
  phi.amps.push_back(B.evecs.col(band));

  LatticeVector u = f0_adjoint_eval(L, phi, window_sites(L, 7));
  CHECK(eigen_residual(L, u, lambda, 6) < 1e-12);
}

TEST_CASE("adjoint residual shrinks under mesh refinement") {
  LatticeSpec L = build_lattice("square", 2);
  double lambda = 0.3;
  LatticeVector f = delta_vector({0, 0, 0}, 0);

  // With Newton-placed nodes every node is an exact on-shell plane wave,
  // so the residual floors at the placement tolerance for any mesh size.
  for (int n : {64, 128}) {
    FermiOptions fo;
    fo.grid_n = n;
    auto datum = f0_apply(L, lambda, f, fo);
    LatticeVector u = f0_adjoint_eval(L, datum, window_sites(L, 21));
    CHECK(eigen_residual(L, u, lambda, 20) < 2e-10);
  }

  // The classical convergence study appears once node placement is held
  // at interpolation accuracy: the residual then falls like the cell size.
  double resid[2];
  int idx = 0;
  for (int n : {64, 128}) {
    FermiOptions fo;
    fo.grid_n = n;
    fo.surf_tol = 1.0;  // keep chord-interpolated crossings
    auto datum = f0_apply(L, lambda, f, fo);
    LatticeVector u = f0_adjoint_eval(L, datum, window_sites(L, 21));
    resid[idx++] = eigen_residual(L, u, lambda, 20);
  }
  INFO("residuals " << resid[0] << " -> " << resid[1]);
  CHECK(resid[1] < 0.6 * resid[0]);
  CHECK(resid[0] < 0.05);
}

TEST_CASE("generalized eigenfunctions do not decay in besov average") {
  LatticeSpec L = build_lattice("square", 2);
  double lambda = 0.3;
  auto datum = f0_apply(L, lambda, delta_vector({0, 0, 0}, 0));
  LatticeVector u = f0_adjoint_eval(L, datum, window_sites(L, 24));
  auto rep = besov_report(u, 24.0);
  REQUIRE(rep.profile.size() >= 4);
  // profile (1/R) sum_{|n|<R} |u|^2 stays bounded away from zero
  for (std::size_t i = 1; i < rep.profile.size(); ++i) CHECK(rep.profile[i] > 1e-3);
  CHECK(rep.profile.back() > 0.5 * rep.profile[1]);
}

TEST_CASE("shell norms on model vectors") {
  // delta at the origin: single shell
  {
    auto rep = besov_report(delta_vector({0, 0, 0}, 0), 16.0);
    CHECK(rep.b_star_norm == Catch::Approx(1.0).margin(1e-14));
    CHECK(rep.b_norm == Catch::Approx(1.0).margin(1e-14));
    for (std::size_t i = 0; i < rep.profile.size(); ++i)
      CHECK(rep.profile[i] == Catch::Approx(1.0 / rep.profile_radii[i]).margin(1e-14));
  }
  // indicator of a ball: b-norm matches a hand computation from shell counts
  {
    LatticeVector u;
    for (long a = -10; a <= 10; ++a)
      for (long b = -10; b <= 10; ++b)
        if (a * a + b * b < 100) u.set({{a, b, 0}, 0}, cd(1.0, 0.0));
    auto rep = besov_report(u);
    double want = 0.0;
    double rlo = 0.0;
    for (int j = 0; rlo < 10.0; ++j) {
      double rhi = std::pow(2.0, j);
      long count = 0;
      for (long a = -10; a <= 10; ++a)
        for (long b = -10; b <= 10; ++b) {
          double r = std::sqrt(double(a * a + b * b));
          if (r >= rlo && r < rhi && a * a + b * b < 100) ++count;
        }
      want += std::sqrt(rhi) * std::sqrt(double(count));
      rlo = rhi;
    }
    CHECK(rep.b_norm == Catch::Approx(want).epsilon(1e-12));
    CHECK(std::isfinite(rep.b_norm));
    // duality sanity on this and a couple of random vectors
    CHECK(rep.b_star_norm <= 1.2 * rep.b_norm);
  }
  std::mt19937 rng(7);
  for (int t = 0; t < 5; ++t) {
    LatticeSpec L = build_lattice("kagome", 2);
    LatticeVector u = random_vector(L, rng, 12, 30);
    auto rep = besov_report(u, 12.0);
    CHECK(rep.b_star_norm <= 1.2 * rep.b_norm);
    for (double p : rep.profile) CHECK(p >= 0.0);
  }
}

TEST_CASE("spectral guards") {
  LatticeSpec L = build_lattice("square", 2);
  CHECK_THROWS_WITH(f0_apply(L, 0.0, delta_vector({0, 0, 0}, 0)),
                    Catch::Matchers::ContainsSubstring("EnergyAtThreshold"));
  CHECK_THROWS_WITH(besov_report(delta_vector({2, 0, 0}, 0)),
                    Catch::Matchers::ContainsSubstring("WindowTooSmall"));
}
