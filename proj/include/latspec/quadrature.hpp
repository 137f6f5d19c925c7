#pragma once

// Quadrature rules: periodic trapezoid grids on the torus and
// Gauss-Legendre nodes for finite intervals.

#include "latspec/common.hpp"

namespace latspec {

// Nodes x_i = 2*pi*i/n, i = 0..n-1. For smooth periodic integrands the
// rule converges geometrically; weights are all 2*pi/n.
inline std::vector<double> torus_nodes(int n) {
  std::vector<double> x(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) x[static_cast<std::size_t>(i)] = kTwoPi * i / n;
  return x;
}

struct GaussLegendre {
  std::vector<double> nodes;    // in (-1,1)
  std::vector<double> weights;  // sum to 2
};

// Golub-Welsch is overkill at these orders; Newton on the recurrence
// with the Chebyshev initial guess converges in a handful of steps.
inline GaussLegendre gauss_legendre(int n) {
  GaussLegendre rule;
  rule.nodes.resize(static_cast<std::size_t>(n));
  rule.weights.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    double x = std::cos(kPi * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      pp = n * (x * p1 - p0) / (x * x - 1.0);
      double dx = p1 / pp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    rule.nodes[static_cast<std::size_t>(n - 1 - i)] = x;
    rule.weights[static_cast<std::size_t>(n - 1 - i)] = 2.0 / ((1.0 - x * x) * pp * pp);
  }
  return rule;
}

// Maps a (-1,1) rule onto (a,b).
inline GaussLegendre gauss_legendre(int n, double a, double b) {
  GaussLegendre base = gauss_legendre(n);
  double mid = 0.5 * (a + b), half = 0.5 * (b - a);
  for (std::size_t i = 0; i < base.nodes.size(); ++i) {
    base.nodes[i] = mid + half * base.nodes[i];
    base.weights[i] *= half;
  }
  return base;
}

}  // namespace latspec
