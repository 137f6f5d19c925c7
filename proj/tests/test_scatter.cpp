#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "latspec/scatter.hpp"

using namespace latspec;
using Catch::Matchers::ContainsSubstring;
using Eigen::MatrixXcd;
using Eigen::VectorXcd;

namespace {

PerturbedOperator free_op(const LatticeSpec& L) { return PerturbedOperator(L, {}); }

PerturbedOperator site_potential(const LatticeSpec& L, double v) {
  PerturbationSpec ps;
  ps.potential[LatticeSite{{0, 0, 0}, 0}] = v;
  return PerturbedOperator(L, ps);
}

// samples of the conjugated channel wave at the origin, the vector the
// rank-one scattering amplitude is built from
VectorXcd origin_samples(const ChannelBasis& cb) {
  VectorXcd chi(long(cb.size()));
  for (long k = 0; k < chi.size(); ++k)
    chi(k) = std::conj(cb.wave(std::size_t(k), LatticeSite{{0, 0, 0}, 0}));
  return chi;
}

cd mu_dot(const ChannelBasis& cb, const VectorXcd& a, const VectorXcd& b) {
  cd acc(0, 0);
  for (long k = 0; k < a.size(); ++k)
    acc += std::conj(a(k)) * b(k) * cb.mesh.nodes[std::size_t(k)].mu;
  return acc;
}

}  // namespace

TEST_CASE("channel basis carries exact waves and quadrature weights") {
  LatticeSpec sq = build_lattice("square", 2);
  ChannelBasis cb = channel_basis(sq, 0.3, {.grid_n = 64});
  REQUIRE(cb.size() > 50);
  CHECK(cb.dim == 2);
  CHECK_FALSE(cb.exceptional);

  // every wave solves the free equation at the exact energy
  double worst = 0.0;
  for (std::size_t k = 0; k < cb.size(); k += 7) {
    LatticeVector psi;
    for (long i = -2; i <= 2; ++i)
      for (long j = -2; j <= 2; ++j)
        psi.set(LatticeSite{{i, j, 0}, 0}, cb.wave(k, LatticeSite{{i, j, 0}, 0}));
    LatticeVector h = apply_h0(sq, psi);
    for (long i = -1; i <= 1; ++i)
      for (long j = -1; j <= 1; ++j)
        worst = std::max(
            worst, std::abs(h.at({{i, j, 0}, 0}) - 0.3 * psi.at(LatticeSite{{i, j, 0}, 0})));
  }
  CHECK(worst < 1e-12);

  // the lift of unit coefficients reproduces the quadrature weights
  Eigen::VectorXd mu = cb.mu();
  for (std::size_t k : {std::size_t(0), cb.size() / 2, cb.size() - 1}) {
    VectorXcd e = VectorXcd::Zero(long(cb.size()));
    e(long(k)) = 1.0;
    CHECK(cb.lift(e).norm2() == Catch::Approx(mu(long(k))).epsilon(1e-12));
  }
  std::mt19937 rng(3);
  std::normal_distribution<double> nd;
  VectorXcd c(long(cb.size()));
  double expect = 0.0;
  for (long k = 0; k < c.size(); ++k) {
    c(k) = cd(nd(rng), nd(rng));
    expect += std::norm(c(k)) * mu(k);
  }
  CHECK(cb.lift(c).norm2() == Catch::Approx(expect).epsilon(1e-12));

  // refining the grid refines the node set
  ChannelBasis fine = channel_basis(sq, 0.3, {.grid_n = 128});
  CHECK(fine.size() > cb.size());

  CHECK_THROWS_WITH(channel_basis(sq, 0.0), ContainsSubstring("EnergyAtThreshold"));
  CHECK_THROWS_WITH(channel_basis(sq, 1.0), ContainsSubstring("EnergyAtThreshold"));
}

TEST_CASE("channel counts across bands and the exceptional flag") {
  LatticeSpec lad = build_lattice("ladder-square", 2);
  ChannelBasis two = channel_basis(lad, 0.0, {.grid_n = 96});
  REQUIRE(two.mesh.band_ranges.size() == 2);
  CHECK(two.mesh.band_ids[0] != two.mesh.band_ids[1]);
  // band-major ordering: each range is a contiguous run of one band
  for (std::size_t r = 0; r < two.mesh.band_ranges.size(); ++r) {
    auto [b, e] = two.mesh.band_ranges[r];
    REQUIRE(e > b);
    for (int k = b; k < e; ++k)
      CHECK(two.mesh.nodes[std::size_t(k)].band == two.mesh.band_ids[r]);
  }
  CHECK_FALSE(two.exceptional);

  LatticeSpec gr = build_lattice("graphite", 2);
  ChannelBasis one = channel_basis(gr, 0.8, {.grid_n = 96});
  CHECK(one.mesh.band_ranges.size() == 1);
  CHECK(one.size() > 100);
  CHECK(one.exceptional);  // inside the exceptional band interval
}

TEST_CASE("zero perturbation scatters trivially") {
  LatticeSpec sq = build_lattice("square", 2);
  ChannelBasis cb = channel_basis(sq, 0.3, {.grid_n = 128});
  ScatteringMatrix sm = s_matrix(free_op(sq), cb);
  long n = long(cb.size());
  CHECK(sm.a.operatorNorm() < 1e-10);
  CHECK((sm.s - MatrixXcd::Identity(n, n)).operatorNorm() < 1e-8);
  CHECK(sm.unitarity_defect < 1e-8);
}

TEST_CASE("rank-one potential matches the closed form") {
  LatticeSpec sq = build_lattice("square", 2);
  const double v = 0.5, lam = 0.3;
  PerturbedOperator op = site_potential(sq, v);

  GreenLimitOptions go;
  go.mesh_grid = 1024;
  LatticeSite origin{{0, 0, 0}, 0};
  cd G0 = green_limit_apply(sq, lam, delta_vector({0, 0, 0}, 0), {origin}, go).at(origin);
  cd t = v / (1.0 + v * G0);

  ChannelBasis cb = channel_basis(sq, lam, {.grid_n = 256});
  ScatteringMatrix sm = s_matrix(op, cb);
  long n = long(cb.size());

  CHECK(sm.unitarity_defect < 1e-3);

  VectorXcd chi = origin_samples(cb);
  MatrixXcd Sor = MatrixXcd::Identity(n, n) -
                  cd(0.0, kTwoPi) * (t * chi * chi.adjoint()) * sm.mu.asDiagonal();
  CHECK((sm.s - Sor).operatorNorm() < 1e-4);

  // the amplitude is numerically rank one
  Eigen::JacobiSVD<MatrixXcd> svd(sm.a);
  CHECK(svd.singularValues()(1) / svd.singularValues()(0) < 1e-6);

  // quadrature refinement shrinks the unitarity defect
  ScatteringMatrix coarse = s_matrix(op, channel_basis(sq, lam, {.grid_n = 128}));
  ScatteringMatrix fine = s_matrix(op, channel_basis(sq, lam, {.grid_n = 512}));
  CHECK(fine.unitarity_defect < coarse.unitarity_defect);
  CHECK(coarse.unitarity_defect < 1e-3);
}

TEST_CASE("weak coupling follows the linear response") {
  LatticeSpec sq = build_lattice("square", 2);
  ChannelBasis cb = channel_basis(sq, 0.3, {.grid_n = 96});
  MatrixXcd outer = origin_samples(cb) * origin_samples(cb).adjoint();
  double onorm = outer.operatorNorm();
  std::vector<double> C, dev;
  for (double v : {0.01, 0.02, 0.04}) {
    MatrixXcd A = a_matrix(site_potential(sq, v), cb);
    C.push_back(A.operatorNorm() / (v * onorm));
    dev.push_back((A - v * outer).operatorNorm() / A.operatorNorm());
  }
  for (double c : C) {
    CHECK(c > 0.9);
    CHECK(c < 1.1);
  }
  CHECK(*std::max_element(C.begin(), C.end()) / *std::min_element(C.begin(), C.end()) < 2.0);
  // departure from the first-order amplitude doubles with the coupling
  CHECK(dev[2] / dev[0] > 3.0);
  CHECK(dev[2] / dev[0] < 5.0);
}

TEST_CASE("amplitude kernel obeys time-reversal reciprocity") {
  LatticeSpec sq = build_lattice("square", 2);
  PerturbationSpec ps;
  ps.potential[LatticeSite{{0, 0, 0}, 0}] = 0.4;
  ps.potential[LatticeSite{{1, 0, 0}, 0}] = -0.6;
  PerturbedOperator op(sq, ps);
  ChannelBasis cb = channel_basis(sq, 0.3, {.grid_n = 96});
  MatrixXcd A = a_matrix(op, cb);
  long n = long(cb.size());

  // pair each node with its reflection through the origin
  std::vector<long> neg(std::size_t(n), -1);
  for (long k = 0; k < n; ++k)
    for (long l = 0; l < n; ++l) {
      double d = 0;
      for (int i = 0; i < 2; ++i)
        d = std::max(d, std::abs(std::remainder(
                            cb.mesh.nodes[std::size_t(k)].x[i] + cb.mesh.nodes[std::size_t(l)].x[i],
                            kTwoPi)));
      if (d < 1e-9) {
        neg[std::size_t(k)] = l;
        break;
      }
    }
  long matched = 0;
  double recip = 0, transpose = 0;
  for (long k = 0; k < n; ++k) {
    REQUIRE(neg[std::size_t(k)] >= 0);
    for (long l = 0; l < n; ++l) {
      ++matched;
      recip = std::max(recip, std::abs(A(k, l) - A(neg[std::size_t(l)], neg[std::size_t(k)])));
      transpose = std::max(transpose, std::abs(A(k, l) - A(l, k)));
    }
  }
  CHECK(matched == n * n);
  CHECK(recip < 1e-8);
  CHECK(transpose > 1e-3);  // the potential is genuinely asymmetric
}

TEST_CASE("helmholtz solutions split into incident and outgoing data") {
  LatticeSpec sq = build_lattice("square", 2);
  ChannelBasis cb = channel_basis(sq, 0.3, {.grid_n = 128});
  long n = long(cb.size());
  std::mt19937 rng(11);
  std::normal_distribution<double> nd;
  VectorXcd phi(n);
  for (long k = 0; k < n; ++k) phi(k) = cd(nd(rng), nd(rng));

  SECTION("free operator passes the wave through") {
    HelmholtzSolution h = helmholtz_in_out(free_op(sq), cb, phi, 10);
    CHECK((h.phi_out - phi).norm() < 1e-8);
    CHECK(h.interior_residual < 10 * h.quad_error);
    // the field is the untruncated incident wave, inside the box included
    std::vector<LatticeSite> sites;
    for (long i = -10; i <= 10; ++i)
      for (long j = -10; j <= 10; ++j) sites.push_back(LatticeSite{{i, j, 0}, 0});
    LatticeVector w = f0_adjoint_eval(sq, cb.lift(phi), sites);
    double du = 0;
    for (const auto& s : sites) du = std::max(du, std::abs(h.u.at(s) - w.at(s)));
    CHECK(du < 1e-9);
  }

  SECTION("rank-one scatterer keeps energy balance") {
    PerturbedOperator op = site_potential(sq, 0.5);
    HelmholtzSolution h = helmholtz_in_out(op, cb, phi, 10);
    CHECK(h.interior_residual < 10 * h.quad_error);
    CHECK(h.energy_defect <= h.unitarity_defect);
    // outgoing amplitudes only pick up a phase in the scattering channel
    VectorXcd chi = origin_samples(cb);
    cd ratio = mu_dot(cb, chi, h.phi_out) / mu_dot(cb, chi, phi);
    CHECK(std::abs(1.0 - std::abs(ratio)) < 1e-4);
    CHECK(std::abs(ratio - cd(1.0, 0.0)) > 0.1);  // the phase actually moved
  }

  SECTION("input validation") {
    CHECK_THROWS_WITH(helmholtz_in_out(free_op(sq), cb, phi.head(3), 10),
                      ContainsSubstring("SizeMismatch"));
    CHECK_THROWS_WITH(helmholtz_in_out(free_op(sq), cb, phi, 2),
                      ContainsSubstring("WindowTooSmall"));
  }
}
