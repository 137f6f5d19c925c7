#pragma once

// Floquet band analysis: eigensystems with gauge fixing and gradients,
// closed-form characteristic polynomials, polynomial identities between
// related lattices, band intervals, and critical-value (threshold)
// detection.

#include <Eigen/Eigenvalues>

#include "latspec/lattice.hpp"

namespace latspec {

// ---------------------------------------------------------------------
// Eigensystems

struct BandEigensystem {
  VectorXd evals;               // ascending
  MatrixXcd evecs;              // orthonormal columns, gauge-fixed
  MatrixXd grads;               // dim x s, column j = grad of band j
  std::vector<bool> grad_valid; // false near unresolved crossings
  double min_gap = 0.0;         // smallest adjacent spacing
};

namespace detail {

// Gauge: rotate each column so its largest-magnitude component is real
// and positive. The anchor is the first component within 1e-9 of the
// maximum, so exact-magnitude ties (frequent in two-class lattices)
// resolve the same way after rounding.
inline int gauge_anchor(const VectorXcd& v) {
  double best = 0.0;
  for (int i = 0; i < v.size(); ++i) best = std::max(best, std::abs(v[i]));
  for (int i = 0; i < v.size(); ++i)
    if (std::abs(v[i]) >= best - 1e-9) return i;
  return 0;
}

inline void fix_gauge(MatrixXcd& V) {
  for (int j = 0; j < V.cols(); ++j) {
    int k = gauge_anchor(V.col(j));
    cd phase = V(k, j) / std::abs(V(k, j));
    V.col(j) *= std::conj(phase);
  }
}

}  // namespace detail

inline BandEigensystem band_eigensystem(const LatticeSpec& L, const VectorXd& x,
                                        double gap_tol = defaults::gap_tol) {
  const int s = L.num_classes;
  Eigen::SelfAdjointEigenSolver<MatrixXcd> es(bloch_matrix(L, x));
  BandEigensystem B;
  B.evals = es.eigenvalues();
  B.evecs = es.eigenvectors();
  detail::fix_gauge(B.evecs);
  B.grads = MatrixXd::Zero(L.dim, s);
  B.grad_valid.assign(static_cast<std::size_t>(s), false);
  B.min_gap = std::numeric_limits<double>::infinity();
  for (int j = 0; j + 1 < s; ++j)
    B.min_gap = std::min(B.min_gap, B.evals[j + 1] - B.evals[j]);

  std::vector<MatrixXcd> dH;
  dH.reserve(static_cast<std::size_t>(L.dim));
  for (int k = 0; k < L.dim; ++k) dH.push_back(bloch_matrix_derivative(L, x, k));

  for (int j = 0; j < s; ++j) {
    double gap = std::numeric_limits<double>::infinity();
    if (j > 0) gap = std::min(gap, B.evals[j] - B.evals[j - 1]);
    if (j + 1 < s) gap = std::min(gap, B.evals[j + 1] - B.evals[j]);
    if (gap > gap_tol) {
      for (int k = 0; k < L.dim; ++k) {
        cd v = B.evecs.col(j).adjoint() * dH[static_cast<std::size_t>(k)] * B.evecs.col(j);
        B.grads(k, j) = v.real();
      }
      B.grad_valid[static_cast<std::size_t>(j)] = true;
    } else if (L.is_flat_value(B.evals[j])) {
      // Dispersionless level: gradient is identically zero even where
      // another band touches it.
      B.grad_valid[static_cast<std::size_t>(j)] = true;
    }
  }
  return B;
}

// Fast eigenvalue-only path for grid sweeps; uses the closed-form
// solvers for s <= 3. Accuracy ~1e-9 absolute, callers refine afterwards.
class FastBandEvaluator {
 public:
  explicit FastBandEvaluator(const LatticeSpec& L) : L_(&L), s_(L.num_classes) {
    for (const auto& e : L.edges) {
      double c = -1.0 / std::sqrt(double(L.degrees[static_cast<std::size_t>(e.from)]) *
                                  double(L.degrees[static_cast<std::size_t>(e.to)]));
      terms_.push_back({e.from, e.to, {double(e.shift[0]), double(e.shift[1]), double(e.shift[2])}, c});
    }
  }

  int bands() const { return s_; }

  void values(const VectorXd& x, double* out) {
    build(x);
    if (s_ == 1) {
      out[0] = h_(0, 0).real();
    } else if (s_ == 2) {
      Eigen::Matrix2cd m = h_.topLeftCorner<2, 2>();
      es2_.computeDirect(m, Eigen::EigenvaluesOnly);
      out[0] = es2_.eigenvalues()[0];
      out[1] = es2_.eigenvalues()[1];
    } else if (s_ == 3) {
      Eigen::Matrix3cd m = h_.topLeftCorner<3, 3>();
      es3_.computeDirect(m, Eigen::EigenvaluesOnly);
      for (int j = 0; j < 3; ++j) out[j] = es3_.eigenvalues()[j];
    } else {
      esn_.compute(h_, Eigen::EigenvaluesOnly);
      for (int j = 0; j < s_; ++j) out[j] = esn_.eigenvalues()[j];
    }
  }

 private:
  void build(const VectorXd& x) {
    if (h_.rows() != s_) h_ = MatrixXcd::Zero(s_, s_);
    h_.setZero();
    for (const auto& t : terms_) {
      double phase = 0;
      for (int k = 0; k < L_->dim; ++k) phase -= t.shift[static_cast<std::size_t>(k)] * x[k];
      h_(t.from, t.to) += t.coeff * cd(std::cos(phase), std::sin(phase));
    }
  }
  struct Term {
    int from, to;
    std::array<double, 3> shift;
    double coeff;
  };
  const LatticeSpec* L_;
  int s_;
  std::vector<Term> terms_;
  MatrixXcd h_;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2cd> es2_;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3cd> es3_;
  Eigen::SelfAdjointEigenSolver<MatrixXcd> esn_;
};

// ---------------------------------------------------------------------
// Characteristic polynomials p(x, lambda) = det(H(x) - lambda)

// Trigonometric building blocks; complex arguments are allowed so the
// identities below can be sampled off the real torus.
inline cd helper_a(const std::vector<cd>& z) {
  cd a = 0;
  for (const auto& t : z) a += std::cos(t);
  return a;
}

inline cd helper_b(const std::vector<cd>& z) {
  cd b = helper_a(z);
  for (std::size_t j = 0; j < z.size(); ++j)
    for (std::size_t k = j + 1; k < z.size(); ++k) b += std::cos(z[j] - z[k]);
  return b;
}

inline cd helper_f(const std::vector<cd>& z) {
  cd f = 1;
  const cd I(0, 1);
  for (const auto& t : z) f += std::exp(I * t);
  return f;
}

inline double helper_alpha(const VectorXd& x) {
  return 3 + 2 * (std::cos(x[0]) + std::cos(x[1]) + std::cos(x[0] - x[1]));
}

inline double helper_beta(const VectorXd& x) {
  return 1 + std::cos(x[0]) + std::cos(x[1]) + std::cos(x[0] - x[1]);
}

inline cd char_poly_det(const LatticeSpec& L, const VectorXd& x, cd lambda) {
  MatrixXcd M = bloch_matrix(L, x);
  M.diagonal().array() -= lambda;
  return M.determinant();
}

inline cd char_poly_closed(const LatticeSpec& L, const VectorXd& x, cd lambda) {
  const int d = L.dim;
  double a = 0;
  for (int j = 0; j < d; ++j) a += std::cos(x[j]);
  if (L.name == "square") return -a / d - lambda;
  if (L.name == "triangular")
    return -(std::cos(x[0]) + std::cos(x[1]) + std::cos(x[0] - x[1])) / 3.0 - lambda;
  if (L.name == "hexagonal") return lambda * lambda - helper_alpha(x) / 9.0;
  if (L.name == "kagome")
    return -(lambda - 0.5) * (lambda * lambda + 0.5 * lambda - helper_beta(x) / 8.0);
  if (L.name == "diamond") {
    std::vector<cd> z(x.data(), x.data() + d);
    cd gamma = 1.0 / double(d + 1) + 2.0 * helper_b(z) / double((d + 1) * (d + 1));
    return lambda * lambda - gamma;
  }
  if (L.name == "subdivision-square") {
    cd disp = lambda * lambda - (d + a) / (2.0 * d);
    cd p = disp;
    for (int j = 0; j < d - 1; ++j) p *= -lambda;
    return p;
  }
  if (L.name == "ladder-square") {
    double q = 2.0 * d + 1.0;
    return (lambda + (2 * a + 1) / q) * (lambda + (2 * a - 1) / q);
  }
  if (L.name == "graphite") {
    double alpha = helper_alpha(x);
    cd t = lambda * lambda - (alpha + 1) / 16.0;
    return t * t - alpha / 64.0;
  }
  fail_config("UnknownLattice", L.name);
}

// ---------------------------------------------------------------------
// Identities between characteristic polynomials

enum class IdentityKind {
  FactorizationBd,        // b_d(z) + (d+1)/2 = f_d(z) f_d(-z) / 2
  LineGraphHexToKagome,   // kagome = line graph of hexagonal
  SubdivisionRelation,    // subdivision-square vs square
  LadderRelation,         // ladder-square vs square
};

struct IdentityReport {
  IdentityKind kind;
  int dim = 0;
  int samples = 0;
  double max_defect = 0.0;
};

inline IdentityReport verify_identity(IdentityKind kind, int dim, int samples = 100,
                                      std::uint64_t seed = 902100) {
  IdentityReport rep{kind, dim, samples, 0.0};
  CounterRng rng(seed, static_cast<std::uint64_t>(kind) * 16 + static_cast<std::uint64_t>(dim));
  const cd I(0, 1);

  auto random_x = [&](int d) {
    VectorXd x(d);
    for (int k = 0; k < d; ++k) x[k] = rng.uniform(0.0, kTwoPi);
    return x;
  };
  auto random_lambda = [&] {
    return cd(rng.uniform(-1.4, 1.4), rng.uniform(-0.5, 0.5));
  };

  for (int t = 0; t < samples; ++t) {
    double defect = 0;
    switch (kind) {
      case IdentityKind::FactorizationBd: {
        std::vector<cd> z(static_cast<std::size_t>(dim));
        for (auto& v : z) v = cd(rng.uniform(0.0, kTwoPi), rng.uniform(-1.0, 1.0));
        std::vector<cd> zneg(z);
        for (auto& v : zneg) v = -v;
        cd lhs = helper_b(z) + 0.5 * (dim + 1);
        cd rhs = 0.5 * helper_f(z) * helper_f(zneg);
        defect = std::abs(lhs - rhs);
        break;
      }
      case IdentityKind::LineGraphHexToKagome: {
        static const LatticeSpec kag = build_lattice("kagome", 2);
        static const LatticeSpec hex = build_lattice("hexagonal", 2);
        VectorXd x = random_x(2);
        cd lam = random_lambda();
        cd lhs = char_poly_det(kag, x, lam);
        cd rhs = (0.5 - lam) * (9.0 / 16.0) *
                 char_poly_det(hex, x, (4.0 / 3.0) * (lam + 0.25));
        defect = std::abs(lhs - rhs);
        break;
      }
      case IdentityKind::SubdivisionRelation: {
        const LatticeSpec sub = build_lattice("subdivision-square", dim);
        const LatticeSpec sq = build_lattice("square", dim);
        VectorXd x = random_x(dim);
        cd lam = random_lambda();
        cd lhs = char_poly_det(sub, x, lam);
        cd factor = 0.5;
        for (int j = 0; j < dim - 1; ++j) factor *= -lam;
        cd rhs = factor * char_poly_det(sq, x, 1.0 - 2.0 * lam * lam);
        defect = std::abs(lhs - rhs);
        break;
      }
      case IdentityKind::LadderRelation: {
        const LatticeSpec lad = build_lattice("ladder-square", dim);
        const LatticeSpec sq = build_lattice("square", dim);
        VectorXd x = random_x(dim);
        cd lam = random_lambda();
        double k = 2.0 * dim;
        cd lhs = char_poly_det(lad, x, lam);
        cd rhs = sqr(k / (k + 1)) * char_poly_det(sq, x, ((k + 1) * lam + 1.0) / k) *
                 char_poly_det(sq, x, ((k + 1) * lam - 1.0) / k);
        defect = std::abs(lhs - rhs);
        break;
      }
    }
    rep.max_defect = std::max(rep.max_defect, defect);
  }
  return rep;
}

// ---------------------------------------------------------------------
// Band intervals

struct BandInterval {
  double lo = 0.0;
  double hi = 0.0;
  bool flat = false;
};

struct SpectrumBands {
  std::vector<BandInterval> bands;                 // per sorted band index
  std::vector<std::pair<double, double>> support;  // merged union
  int grid_n = 0;
};

namespace detail {

// Local refinement of an extremum of the j-th sorted band: repeatedly
// samples a shrinking 5^d stencil. Handles conical extrema, where plain
// grid sampling is only first-order accurate.
inline double zoom_extremum(FastBandEvaluator& ev, int band, VectorXd center,
                            double halfwidth, bool maximize, int rounds = 14) {
  const int d = center.size();
  std::vector<double> vals(static_cast<std::size_t>(ev.bands()));
  double best_val;
  ev.values(center, vals.data());
  best_val = vals[static_cast<std::size_t>(band)];
  for (int r = 0; r < rounds; ++r) {
    VectorXd best_x = center;
    std::vector<int> idx(static_cast<std::size_t>(d), -2);
    for (;;) {
      VectorXd x = center;
      for (int k = 0; k < d; ++k) x[k] += halfwidth * idx[static_cast<std::size_t>(k)] / 2.0;
      ev.values(x, vals.data());
      double v = vals[static_cast<std::size_t>(band)];
      if (maximize ? v > best_val : v < best_val) {
        best_val = v;
        best_x = x;
      }
      int k = 0;
      while (k < d && ++idx[static_cast<std::size_t>(k)] == 3) idx[static_cast<std::size_t>(k++)] = -2;
      if (k == d) break;
    }
    center = best_x;
    halfwidth *= 0.5;
  }
  return best_val;
}

}  // namespace detail

inline SpectrumBands spectrum_bands(const LatticeSpec& L, int grid_n = 0) {
  if (grid_n == 0) grid_n = L.dim == 3 ? defaults::grid_n_3d : defaults::grid_n_2d;
  const int d = L.dim, s = L.num_classes;
  FastBandEvaluator ev(L);

  struct Extreme {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    VectorXd arg_lo, arg_hi;
  };
  std::vector<Extreme> ext(static_cast<std::size_t>(s));

  std::vector<double> vals(static_cast<std::size_t>(s));
  std::vector<int> k(static_cast<std::size_t>(d), 0);
  VectorXd x(d);
  for (;;) {
    for (int j = 0; j < d; ++j) x[j] = kTwoPi * k[static_cast<std::size_t>(j)] / grid_n;
    ev.values(x, vals.data());
    for (int j = 0; j < s; ++j) {
      auto& e = ext[static_cast<std::size_t>(j)];
      if (vals[static_cast<std::size_t>(j)] < e.lo) {
        e.lo = vals[static_cast<std::size_t>(j)];
        e.arg_lo = x;
      }
      if (vals[static_cast<std::size_t>(j)] > e.hi) {
        e.hi = vals[static_cast<std::size_t>(j)];
        e.arg_hi = x;
      }
    }
    int j = 0;
    while (j < d && ++k[static_cast<std::size_t>(j)] == grid_n) k[static_cast<std::size_t>(j++)] = 0;
    if (j == d) break;
  }

  SpectrumBands out;
  out.grid_n = grid_n;
  double h = kTwoPi / grid_n;
  for (int j = 0; j < s; ++j) {
    auto& e = ext[static_cast<std::size_t>(j)];
    BandInterval b;
    if (e.hi - e.lo < 1e-10) {
      b.flat = true;
      b.lo = b.hi = 0.5 * (e.lo + e.hi);
    } else {
      b.lo = detail::zoom_extremum(ev, j, e.arg_lo, h, false);
      b.hi = detail::zoom_extremum(ev, j, e.arg_hi, h, true);
    }
    out.bands.push_back(b);
  }

  // Merge overlapping band intervals into the support.
  std::vector<std::pair<double, double>> ivs;
  for (const auto& b : out.bands) ivs.emplace_back(b.lo, b.hi);
  std::sort(ivs.begin(), ivs.end());
  for (const auto& iv : ivs) {
    if (!out.support.empty() && iv.first <= out.support.back().second + 1e-9)
      out.support.back().second = std::max(out.support.back().second, iv.second);
    else
      out.support.push_back(iv);
  }
  return out;
}

// ---------------------------------------------------------------------
// Thresholds

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

struct ThresholdSet {
  std::vector<double> t0_catalog;   // tabulated critical values, as printed
  std::vector<double> t0;           // exact critical values (used for guards)
  std::vector<double> t1;           // exceptional energies, finite part
  std::vector<Interval> t1_bands;   // exceptional energy intervals
  std::vector<double> t0_numeric;   // detector output (filled on request)
};

namespace detail {

inline std::vector<double> sorted_unique(std::vector<double> v, double tol = 1e-8) {
  std::sort(v.begin(), v.end());
  std::vector<double> out;
  for (double t : v)
    if (out.empty() || t - out.back() > tol) out.push_back(t);
  return out;
}

}  // namespace detail

inline ThresholdSet thresholds_catalog(const LatticeSpec& L) {
  ThresholdSet T;
  const int d = L.dim;
  if (L.name == "square") {
    for (int n = -d; n <= d; ++n) T.t0_catalog.push_back(double(n) / d);
    for (int n = -d; n <= d; ++n)
      if ((n - d) % 2 == 0) T.t0.push_back(double(n) / d);
    T.t1 = {-1.0, 1.0};
  } else if (L.name == "triangular") {
    T.t0_catalog = {-1.0, 1.0 / 3.0, 0.5};
    T.t0 = T.t0_catalog;
    T.t1 = {-1.0, 0.5};
  } else if (L.name == "hexagonal") {
    T.t0_catalog = {-1.0, -1.0 / 3.0, 0.0, 1.0 / 3.0, 1.0};
    T.t0 = T.t0_catalog;
    T.t1 = {-1.0, 0.0, 1.0};
  } else if (L.name == "kagome") {
    T.t0_catalog = {-1.0, -0.5, -0.25, 0.0, 0.5};
    T.t0 = T.t0_catalog;
    T.t1 = {-1.0, -0.25, 0.5};
  } else if (L.name == "diamond") {
    for (int ell = d; ell >= -d; ell -= 2) {
      double v = double(ell + 1) / (d + 1);
      T.t0_catalog.push_back(v);
      T.t0_catalog.push_back(-v);
    }
    T.t0_catalog.push_back(0.0);
    T.t0_catalog = detail::sorted_unique(T.t0_catalog);
    T.t0 = T.t0_catalog;
    T.t1 = {-1.0, 0.0, 1.0};
  } else if (L.name == "subdivision-square") {
    // The tabulated set and the actual critical values differ here: the
    // dispersive branches are +-sqrt((d+a)/2d) with a = sum cos x_j
    // critical at integer a, so the true values carry square roots.
    T.t0_catalog.push_back(0.0);
    for (int n = 1; n <= d; ++n) {
      T.t0_catalog.push_back(double(n) / d);
      T.t0_catalog.push_back(-double(n) / d);
    }
    T.t0_catalog = detail::sorted_unique(T.t0_catalog);
    T.t0.push_back(0.0);
    for (int n = 1; n <= d; ++n) {
      double v = std::sqrt(double(n) / d);
      T.t0.push_back(v);
      T.t0.push_back(-v);
    }
    T.t0 = detail::sorted_unique(T.t0);
    T.t1 = {-1.0, 0.0, 1.0};
  } else if (L.name == "ladder-square") {
    double q = 2.0 * d + 1.0;
    T.t0_catalog.push_back(-1.0);
    T.t0_catalog.push_back(1.0);
    for (int n = -(2 * d - 1); n <= 2 * d - 1; n += 2) T.t0_catalog.push_back(n / q);
    T.t0_catalog = detail::sorted_unique(T.t0_catalog);
    T.t0 = T.t0_catalog;
    T.t1_bands = {{-1.0, -(2.0 * d - 1.0) / q}, {(2.0 * d - 1.0) / q, 1.0}};
  } else if (L.name == "graphite") {
    T.t0_catalog = {-1.0, -0.5, -0.25, 0.0, 0.25, 0.5, 1.0};
    T.t0 = T.t0_catalog;
    T.t1_bands = {{-1.0, -0.5}, {0.5, 1.0}};
  } else {
    fail_config("UnknownLattice", L.name);
  }
  return T;
}

struct NumericThresholdOptions {
  int scan_n = 0;          // 0 = auto (48 in 2d, 16 in 3d)
  double dedup_tol = 1e-8;
  double touch_gap_tol = 1e-5;  // accept a band touch below this residual gap
};

namespace detail {

// Newton search for zeros of grad lambda_j, seeded on a coarse grid.
inline void critical_point_channel(const LatticeSpec& L, int scan_n,
                                   std::vector<double>& found) {
  const int d = L.dim, s = L.num_classes;
  auto gradient = [&](const VectorXd& x, int band, bool& ok) {
    BandEigensystem B = band_eigensystem(L, x);
    ok = B.grad_valid[static_cast<std::size_t>(band)];
    return ok ? VectorXd(B.grads.col(band)) : VectorXd::Zero(d).eval();
  };

  std::vector<int> k(static_cast<std::size_t>(d), 0);
  for (;;) {
    VectorXd seed(d);
    for (int j = 0; j < d; ++j) seed[j] = kTwoPi * (k[static_cast<std::size_t>(j)] + 0.5) / scan_n;
    for (int band = 0; band < s; ++band) {
      if (L.is_flat_value(band_eigensystem(L, seed).evals[band])) continue;
      VectorXd x = seed;
      bool converged = false;
      for (int iter = 0; iter < 40; ++iter) {
        bool ok = false;
        VectorXd g = gradient(x, band, ok);
        if (!ok) break;
        if (g.norm() < 1e-11) {
          converged = true;
          break;
        }
        // Finite-difference Jacobian of the gradient.
        MatrixXd J(d, d);
        const double h = 1e-5;
        bool okj = true;
        for (int c = 0; c < d; ++c) {
          VectorXd xp = x, xm = x;
          xp[c] += h;
          xm[c] -= h;
          bool o1 = false, o2 = false;
          VectorXd gp = gradient(xp, band, o1), gm = gradient(xm, band, o2);
          if (!o1 || !o2) {
            okj = false;
            break;
          }
          J.col(c) = (gp - gm) / (2 * h);
        }
        if (!okj) break;
        Eigen::FullPivLU<MatrixXd> lu(J);
        if (!lu.isInvertible()) break;
        VectorXd dx = lu.solve(g);
        double n = dx.norm();
        if (n > 0.7) dx *= 0.7 / n;
        x -= dx;
        if (n > 20.0) break;
      }
      if (converged) {
        BandEigensystem B = band_eigensystem(L, x);
        if (B.grad_valid[static_cast<std::size_t>(band)] && B.grads.col(band).norm() < 1e-9)
          found.push_back(B.evals[band]);
      }
    }
    int j = 0;
    while (j < d && ++k[static_cast<std::size_t>(j)] == scan_n) k[static_cast<std::size_t>(j++)] = 0;
    if (j == d) break;
  }
}

// Gap minimization between adjacent sorted bands; a vanishing gap marks
// a band-touch energy. The midpoint of the two sorted values is used as
// the threshold value, which is exact for symmetric cones.
inline void band_touch_channel(const LatticeSpec& L, int scan_n, double touch_gap_tol,
                               std::vector<double>& found) {
  const int s = L.num_classes;
  if (s < 2) return;
  const int d = L.dim;
  FastBandEvaluator ev(L);
  std::vector<double> vals(static_cast<std::size_t>(s));

  for (int pair = 0; pair + 1 < s; ++pair) {
    double best_gap = std::numeric_limits<double>::infinity();
    VectorXd best_x(d);
    std::vector<int> k(static_cast<std::size_t>(d), 0);
    VectorXd x(d);
    for (;;) {
      for (int j = 0; j < d; ++j) x[j] = kTwoPi * k[static_cast<std::size_t>(j)] / scan_n;
      ev.values(x, vals.data());
      double gap = vals[static_cast<std::size_t>(pair + 1)] - vals[static_cast<std::size_t>(pair)];
      if (gap < best_gap) {
        best_gap = gap;
        best_x = x;
      }
      int j = 0;
      while (j < d && ++k[static_cast<std::size_t>(j)] == scan_n) k[static_cast<std::size_t>(j++)] = 0;
      if (j == d) break;
    }
    // Zoom on the argmin.
    double hw = kTwoPi / scan_n;
    VectorXd center = best_x;
    for (int r = 0; r < 16; ++r) {
      VectorXd bx = center;
      std::vector<int> idx(static_cast<std::size_t>(d), -2);
      for (;;) {
        VectorXd y = center;
        for (int j = 0; j < d; ++j) y[j] += hw * idx[static_cast<std::size_t>(j)] / 2.0;
        ev.values(y, vals.data());
        double gap = vals[static_cast<std::size_t>(pair + 1)] - vals[static_cast<std::size_t>(pair)];
        if (gap < best_gap) {
          best_gap = gap;
          bx = y;
        }
        int j = 0;
        while (j < d && ++idx[static_cast<std::size_t>(j)] == 3) idx[static_cast<std::size_t>(j++)] = -2;
        if (j == d) break;
      }
      center = bx;
      hw *= 0.5;
    }
    if (best_gap < touch_gap_tol) {
      ev.values(center, vals.data());
      found.push_back(0.5 * (vals[static_cast<std::size_t>(pair)] + vals[static_cast<std::size_t>(pair + 1)]));
    }
  }
}

}  // namespace detail

inline std::vector<double> thresholds_numeric(const LatticeSpec& L,
                                              const NumericThresholdOptions& opt = {}) {
  int scan_n = opt.scan_n > 0 ? opt.scan_n : (L.dim == 3 ? 16 : 48);
  std::vector<double> found;

  // Dispersionless levels.
  for (const auto& fb : L.flat_bands) found.push_back(fb.value);

  detail::critical_point_channel(L, scan_n, found);
  detail::band_touch_channel(L, scan_n, opt.touch_gap_tol, found);

  return detail::sorted_unique(found, opt.dedup_tol);
}

inline ThresholdSet thresholds(const LatticeSpec& L, bool with_numeric = true,
                               const NumericThresholdOptions& opt = {}) {
  ThresholdSet T = thresholds_catalog(L);
  if (with_numeric) T.t0_numeric = thresholds_numeric(L, opt);
  return T;
}

}  // namespace latspec
