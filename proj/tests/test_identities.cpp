#include <catch2/catch_amalgamated.hpp>

#include "latspec/bloch.hpp"

using namespace latspec;

TEST_CASE("helper polynomials at frozen points") {
  // b_d(0) = d + d(d-1)/2, f_d(0) = d+1, so both sides of the
  // factorization equal (d+1)^2/2 at the origin.
  for (int d = 2; d <= 4; ++d) {
    std::vector<cd> z(static_cast<std::size_t>(d), cd(0, 0));
    CHECK(std::abs(helper_b(z) - cd(d + d * (d - 1) / 2.0, 0)) < 1e-14);
    CHECK(std::abs(helper_f(z) - cd(d + 1.0, 0)) < 1e-14);
    CHECK(std::abs((helper_b(z) + 0.5 * (d + 1)) - cd(sqr(d + 1.0) / 2, 0)) < 1e-14);
  }

  // Critical values of b_3 are {6, 0, -2}.
  auto b3 = [](double a, double b, double c) {
    std::vector<cd> z = {cd(a, 0), cd(b, 0), cd(c, 0)};
    return helper_b(z).real();
  };
  CHECK(std::abs(b3(0, 0, 0) - 6.0) < 1e-14);
  CHECK(std::abs(b3(kPi, 0, 0) - 0.0) < 1e-14);
  CHECK(std::abs(b3(kPi, kPi, 0) - (-2.0)) < 1e-14);
}

TEST_CASE("factorization of b_d holds off the real torus") {
  for (int d = 2; d <= 4; ++d) {
    IdentityReport rep = verify_identity(IdentityKind::FactorizationBd, d, 100);
    INFO("d=" << d);
    CHECK(rep.max_defect < 1e-12);
  }
}

TEST_CASE("kagome characteristic polynomial factors through hexagonal") {
  IdentityReport rep = verify_identity(IdentityKind::LineGraphHexToKagome, 2, 100);
  CHECK(rep.max_defect < 1e-12);

  // Spot check at a frozen point: x = (pi/2, pi/3), lambda = 0.3.
  LatticeSpec kag = build_lattice("kagome", 2);
  LatticeSpec hex = build_lattice("hexagonal", 2);
  VectorXd x(2);
  x << kPi / 2, kPi / 3;
  cd lam(0.3, 0.0);
  cd lhs = char_poly_det(kag, x, lam);
  cd rhs = (0.5 - lam) * (9.0 / 16.0) * char_poly_det(hex, x, (4.0 / 3.0) * (lam + 0.25));
  CHECK(std::abs(lhs - rhs) < 1e-14);
}

TEST_CASE("subdivision relation against the square lattice") {
  for (int d = 2; d <= 3; ++d) {
    IdentityReport rep = verify_identity(IdentityKind::SubdivisionRelation, d, 100);
    INFO("d=" << d);
    CHECK(rep.max_defect < 1e-12);
  }

  // Frozen spot check, d = 2: p_S(x, l) = (-l) * (1/2) * p_sq(x, 1-2l^2).
  LatticeSpec sub = build_lattice("subdivision-square", 2);
  LatticeSpec sq = build_lattice("square", 2);
  VectorXd x(2);
  x << 1.1, 2.7;
  cd lam(0.7, 0.0);
  cd lhs = char_poly_det(sub, x, lam);
  cd rhs = (-lam) * 0.5 * char_poly_det(sq, x, 1.0 - 2.0 * lam * lam);
  CHECK(std::abs(lhs - rhs) < 1e-14);
}

TEST_CASE("ladder relation against the square lattice") {
  for (int d = 2; d <= 3; ++d) {
    IdentityReport rep = verify_identity(IdentityKind::LadderRelation, d, 100);
    INFO("d=" << d);
    CHECK(rep.max_defect < 1e-12);
  }
}
