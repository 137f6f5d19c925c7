#include <catch2/catch_amalgamated.hpp>

#include "latspec/green.hpp"

using namespace latspec;

namespace {

std::vector<Offset> ball_offsets(int dim, int r) {
  std::vector<Offset> out;
  int r2 = dim >= 2 ? r : 0;
  int r3 = dim == 3 ? r : 0;
  for (int a = -r; a <= r; ++a)
    for (int b = -r2; b <= r2; ++b)
      for (int c = -r3; c <= r3; ++c) out.push_back({a, b, c});
  return out;
}

// u(n, j) = blocks[n](j, src_cls), i.e. R0 applied to delta at (0, src_cls).
LatticeVector blocks_to_vector(const std::vector<Offset>& offsets,
                               const std::vector<Eigen::MatrixXcd>& blocks, int src_cls) {
  LatticeVector u;
  for (std::size_t q = 0; q < offsets.size(); ++q)
    for (int j = 0; j < blocks[q].rows(); ++j) u.set(LatticeSite{offsets[q], j}, blocks[q](j, src_cls));
  return u;
}

// max over rows within |n|_inf <= rin of |(H0 u - z u - delta_{0,src})(row)|.
double stencil_residual(const LatticeSpec& L, const LatticeVector& u, cd z, int src_cls,
                        int rin) {
  LatticeVector hu = apply_h0(L, u);
  double worst = 0.0;
  int r2 = L.dim >= 2 ? rin : 0;
  int r3 = L.dim == 3 ? rin : 0;
  for (int a = -rin; a <= rin; ++a)
    for (int b = -r2; b <= r2; ++b)
      for (int c = -r3; c <= r3; ++c)
        for (int j = 0; j < L.num_classes; ++j) {
          LatticeSite s{{a, b, c}, j};
          cd want = (a == 0 && b == 0 && c == 0 && j == src_cls) ? cd(1, 0) : cd(0, 0);
          worst = std::max(worst, std::abs(hu.at(s) - z * u.at(s) - want));
        }
  return worst;
}

// Chain Green's function: for the 1-d chain H(x) = -cos x,
//   G(n; z) = -w^{|n|} / sqrt(z^2 - 1),  w the root of w^2 + 2zw + 1 = 0
// with |w| < 1 (contour integral around the unit circle). The same
// expression continues to Im z > 0 and to the boundary value at
// lambda + i0, where |w| = 1 and sqrt(z^2-1) is taken on the principal
// branch approached from above.
cd chain_green(long n, cd z) {
  cd s = std::sqrt(z * z - 1.0);
  cd w1 = -z + s, w2 = -z - s;
  cd w = std::abs(w1) <= std::abs(w2) ? w1 : w2;
  return -std::pow(w, double(std::labs(n))) / ((w == w1) ? s : -s);
}

double agm(double a, double b) {
  for (int i = 0; i < 60; ++i) {
    double m = 0.5 * (a + b);
    b = std::sqrt(a * b);
    a = m;
  }
  return a;
}

}  // namespace

TEST_CASE("chain resolvent matches the closed form") {
  LatticeSpec L = build_lattice("square", 1);
  for (double zr : {2.0, -3.0, 1.2}) {
    std::vector<Offset> offs;
    for (long n = -5; n <= 5; ++n) offs.push_back({n, 0, 0});
    auto blocks = resolvent_blocks(L, zr, offs);
    for (std::size_t q = 0; q < offs.size(); ++q) {
      cd want = chain_green(offs[q][0], cd(zr, 0.0));
      INFO("z=" << zr << " n=" << offs[q][0]);
      CHECK(std::abs(blocks[q](0, 0) - want) < 1e-13);
    }
  }
  // complex z as well
  cd z(0.4, 0.9);
  auto blocks = resolvent_blocks(L, z, {{0, 0, 0}, {3, 0, 0}});
  CHECK(std::abs(blocks[0](0, 0) - chain_green(0, z)) < 1e-12);
  CHECK(std::abs(blocks[1](0, 0) - chain_green(3, z)) < 1e-12);
}

TEST_CASE("off-spectrum blocks satisfy the exact stencil equation") {
  struct Case {
    const char* name;
    int dim;
    cd z;
  };
  for (const Case& tc : {Case{"square", 2, {0.3, 0.4}},
                         Case{"hexagonal", 2, {2.0, 0.0}},
                         Case{"ladder-square", 2, {1.5, 0.0}},
                         Case{"kagome", 2, {0.8, 0.3}},
                         Case{"diamond", 3, {0.5, 0.5}}}) {
    LatticeSpec L = build_lattice(tc.name, tc.dim);
    int ball = tc.dim == 3 ? 3 : 5;
    int rin = tc.dim == 3 ? 2 : 4;
    auto offs = ball_offsets(tc.dim, ball);
    for (int src = 0; src < L.num_classes; ++src) {
      auto blocks = resolvent_blocks(L, tc.z, offs);
      LatticeVector u = blocks_to_vector(offs, blocks, src);
      INFO(tc.name << " src=" << src);
      CHECK(stencil_residual(L, u, tc.z, src, rin) < 1e-11);
    }
  }
}

TEST_CASE("blocks are reciprocal and conjugate symmetric") {
  LatticeSpec L = build_lattice("hexagonal", 2);
  cd z(0.4, 0.3);
  std::vector<Offset> offs{{1, 2, 0}, {-1, -2, 0}, {2, 0, 0}, {-2, 0, 0}};
  auto blocks = resolvent_blocks(L, z, offs);
  CHECK((blocks[0] - blocks[1].transpose()).cwiseAbs().maxCoeff() < 1e-13);
  CHECK((blocks[2] - blocks[3].transpose()).cwiseAbs().maxCoeff() < 1e-13);

  auto conj_blocks = resolvent_blocks(L, std::conj(z), offs);
  CHECK((conj_blocks[0] - blocks[0].conjugate()).cwiseAbs().maxCoeff() < 1e-13);

  LatticeSpec sq = build_lattice("square", 2);
  auto far = resolvent_blocks(sq, cd(0.0, 100.0), {{0, 0, 0}});
  CHECK(std::abs(cd(0.0, 100.0) * far[0](0, 0) + 1.0) < 1e-3);
}

TEST_CASE("square block matches a plain dense trapezoid") {
  LatticeSpec L = build_lattice("square", 2);
  double z = 2.0;
  std::vector<Offset> offs{{0, 0, 0}, {1, 0, 0}, {2, 1, 0}};
  auto blocks = resolvent_blocks(L, z, offs);

  const int N = 512;
  for (std::size_t q = 0; q < offs.size(); ++q) {
    cd acc(0, 0);
    for (int k = 0; k < N; ++k)
      for (int l = 0; l < N; ++l) {
        double x = kTwoPi * k / N, y = kTwoPi * l / N;
        double lam = -(std::cos(x) + std::cos(y)) / 2.0;
        double phase = -double(offs[q][0]) * x - double(offs[q][1]) * y;
        acc += std::polar(1.0, phase) / (lam - z);
      }
    acc /= double(N) * double(N);
    CHECK(std::abs(blocks[q](0, 0) - acc) < 1e-10);
  }
  CHECK(blocks[0](0, 0).real() < 0.0);
  CHECK(std::abs(blocks[0](0, 0).imag()) < 1e-13);
}

TEST_CASE("chain boundary values match the continued closed form") {
  LatticeSpec L = build_lattice("square", 1);
  double lambda = 0.3;
  GreenLimitOptions opt;
  opt.method = LimitMethod::EpsExtrapolation;
  std::vector<Offset> offs{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {5, 0, 0}};
  auto res = green_limit_blocks(L, lambda, offs, opt);
  for (std::size_t q = 0; q < offs.size(); ++q) {
    cd want = chain_green(offs[q][0], cd(lambda, 1e-13));
    INFO("n=" << offs[q][0] << " got " << res.blocks[q](0, 0) << " want " << want);
    // extrapolation truncation grows with the phase gradient, hence with |n|
    CHECK(std::abs(res.blocks[q](0, 0) - want) < 1e-5 * (1.0 + 3.0 * std::labs(offs[q][0])));
  }
  // boundary value from below is the conjugate
  opt.side = LimitSide::Minus;
  auto resm = green_limit_blocks(L, lambda, {{2, 0, 0}}, opt);
  CHECK(std::abs(resm.blocks[0](0, 0) - std::conj(res.blocks[2](0, 0))) < 5e-5);
}

TEST_CASE("two limiting routes agree on the square lattice") {
  LatticeSpec L = build_lattice("square", 2);
  double lambda = 0.3;
  auto offs = ball_offsets(2, 2);

  GreenLimitOptions eo;
  eo.method = LimitMethod::EpsExtrapolation;
  auto eps = green_limit_blocks(L, lambda, offs, eo);

  GreenLimitOptions po;
  po.method = LimitMethod::PvDelta;
  auto pv = green_limit_blocks(L, lambda, offs, po);

  double worst = 0.0;
  for (std::size_t q = 0; q < offs.size(); ++q)
    worst = std::max(worst, (eps.blocks[q] - pv.blocks[q]).cwiseAbs().maxCoeff());
  INFO("cross-method defect " << worst << " (eps est " << eps.error_estimate << ", pv est "
                              << pv.error_estimate << ")");
  CHECK(worst < 1e-4);

  CHECK(eps.fitted_order > 0.5);
  CHECK(eps.fitted_order < 2.5);

  // Im G(0; +i0) = pi * rho(lambda); for this lattice rho has the closed
  // form 1/(pi * agm(1, |lambda|)), so Im G(0) = 1/agm(1, |lambda|).
  double want_im = 1.0 / agm(1.0, std::abs(lambda));
  std::size_t q0 = 0;
  while (offs[q0] != Offset{0, 0, 0}) ++q0;
  CHECK(std::abs(eps.blocks[q0](0, 0).imag() - want_im) < 5e-5);
  CHECK(std::abs(pv.blocks[q0](0, 0).imag() - want_im) < 5e-5);

  // boundary values satisfy the stencil equation through the origin row
  LatticeVector u = blocks_to_vector(offs, pv.blocks, 0);
  double resid = stencil_residual(L, u, cd(lambda, 0.0), 0, 1);
  INFO("pv stencil residual " << resid);
  CHECK(resid < 5e-4);

  // lower boundary value is the conjugate for this real scalar stencil
  po.side = LimitSide::Minus;
  auto pvm = green_limit_blocks(L, lambda, {{1, 1, 0}}, po);
  std::size_t q11 = 0;
  while (offs[q11] != Offset{1, 1, 0}) ++q11;
  CHECK(std::abs(pvm.blocks[0](0, 0) - std::conj(pv.blocks[q11](0, 0))) < 1e-8);
}

TEST_CASE("two limiting routes agree on the hexagonal lattice") {
  LatticeSpec L = build_lattice("hexagonal", 2);
  double lambda = 0.4;
  std::vector<Offset> offs{{0, 0, 0}, {1, 0, 0}};

  GreenLimitOptions eo;
  eo.method = LimitMethod::EpsExtrapolation;
  auto eps = green_limit_blocks(L, lambda, offs, eo);

  GreenLimitOptions po;
  auto pv = green_limit_blocks(L, lambda, offs, po);

  double worst = 0.0;
  for (std::size_t q = 0; q < offs.size(); ++q)
    worst = std::max(worst, (eps.blocks[q] - pv.blocks[q]).cwiseAbs().maxCoeff());
  INFO("cross-method defect " << worst);
  CHECK(worst < 1e-4);

  // diagonal spectral density: sum_j Im G_jj(0) = pi * rho(lambda)
  double rho = density_of_states(L, lambda);
  double im_trace = eps.blocks[0](0, 0).imag() + eps.blocks[0](1, 1).imag();
  CHECK(std::abs(im_trace - kPi * rho) < 5e-4);
}

TEST_CASE("principal-value route works in three dimensions") {
  LatticeSpec L = build_lattice("diamond", 3);
  double lambda = 0.75;
  auto offs = ball_offsets(3, 2);
  GreenLimitOptions po;
  auto pv = green_limit_blocks(L, lambda, offs, po);

  LatticeVector u = blocks_to_vector(offs, pv.blocks, 0);
  double resid = stencil_residual(L, u, cd(lambda, 0.0), 0, 1);
  INFO("pv stencil residual " << resid);
  CHECK(resid < 5e-3);

  std::size_t q0 = 0;
  while (offs[q0] != Offset{0, 0, 0}) ++q0;
  double rho = density_of_states(L, lambda);
  double im_trace = pv.blocks[q0](0, 0).imag() + pv.blocks[q0](1, 1).imag();
  INFO("im trace " << im_trace << " vs pi rho " << kPi * rho);
  CHECK(std::abs(im_trace - kPi * rho) < 5e-3);
  CHECK(pv.blocks[q0](0, 0).imag() > 0.0);
}

TEST_CASE("resolvent applies to general finitely supported vectors") {
  LatticeSpec L = build_lattice("hexagonal", 2);
  cd z(1.9, 0.0);
  LatticeVector f;
  f.add({0, 0, 0}, 0, cd(2.0, 0.0));
  f.add({1, -1, 0}, 1, cd(0.0, 1.0));

  std::vector<LatticeSite> sites{{{0, 0, 0}, 0}, {{0, 0, 0}, 1}, {{2, 1, 0}, 0}};
  LatticeVector u = resolvent_offspectrum(L, z, f, sites);

  // same thing assembled from blocks by hand
  std::vector<Offset> offs;
  for (const auto& s : sites) {
    offs.push_back({s.n[0], s.n[1], 0});
    offs.push_back({s.n[0] - 1, s.n[1] + 1, 0});
  }
  auto blocks = resolvent_blocks(L, z, offs);
  for (std::size_t i = 0; i < sites.size(); ++i) {
    cd want = blocks[2 * i](sites[i].cls, 0) * cd(2.0, 0.0) +
              blocks[2 * i + 1](sites[i].cls, 1) * cd(0.0, 1.0);
    CHECK(std::abs(u.at(sites[i]) - want) < 1e-12);
  }

  // and it inverts the stencil: (H0 - z) u = f on a window
  auto offs_ball = ball_offsets(2, 5);
  std::vector<LatticeSite> ball_sites;
  for (const auto& o : offs_ball)
    for (int j = 0; j < L.num_classes; ++j) ball_sites.push_back({o, j});
  LatticeVector ub = resolvent_offspectrum(L, z, f, ball_sites);
  LatticeVector hu = apply_h0(L, ub);
  double worst = 0.0;
  for (const auto& o : ball_offsets(2, 4))
    for (int j = 0; j < L.num_classes; ++j) {
      LatticeSite s{o, j};
      worst = std::max(worst, std::abs(hu.at(s) - z * ub.at(s) - f.at(s)));
    }
  CHECK(worst < 1e-11);
}

TEST_CASE("resolvent and limit guards reject bad inputs") {
  LatticeSpec sq2 = build_lattice("square", 2);
  CHECK_THROWS_WITH(resolvent_blocks(sq2, cd(0.3, 0.0), {{0, 0, 0}}),
                    Catch::Matchers::ContainsSubstring("SpectrumTooClose"));
  {
    ResolventOptions opt;
    opt.grid_n = 64;
    CHECK_THROWS_WITH(resolvent_blocks(sq2, cd(1.0 + 5e-3, 0.0), {{0, 0, 0}}, opt),
                      Catch::Matchers::ContainsSubstring("SpectrumTooClose"));
  }
  CHECK_THROWS_WITH(green_limit_blocks(sq2, 0.0, {{0, 0, 0}}),
                    Catch::Matchers::ContainsSubstring("EnergyAtThreshold"));
  CHECK_THROWS_WITH(green_limit_blocks(sq2, 1.0 - 2e-4, {{0, 0, 0}}),
                    Catch::Matchers::ContainsSubstring("EnergyAtThreshold"));

  LatticeSpec chain = build_lattice("square", 1);
  GreenLimitOptions po;
  po.method = LimitMethod::PvDelta;
  CHECK_THROWS_WITH(green_limit_blocks(chain, 0.3, {{0, 0, 0}}, po),
                    Catch::Matchers::ContainsSubstring("MeshUnavailable"));
}

TEST_CASE("green results are bitwise reproducible") {
  LatticeSpec L = build_lattice("square", 2);
  GreenLimitOptions po;
  auto a = green_limit_blocks(L, 0.3, {{1, 0, 0}}, po);
  auto b = green_limit_blocks(L, 0.3, {{1, 0, 0}}, po);
  CHECK(a.blocks[0](0, 0).real() == b.blocks[0](0, 0).real());
  CHECK(a.blocks[0](0, 0).imag() == b.blocks[0](0, 0).imag());
}
