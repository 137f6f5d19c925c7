#pragma once

// Free resolvent R0(z) = (H0 - z)^-1 as lattice Green's function blocks
//   G(n; z)_{j j'} = (2 pi)^-d \int_T^d [(H(x) - z)^-1]_{j j'} e^{-i n.x} dx
// (the entry <delta_{n,j}, R0(z) delta_{0,j'}> under the Fourier
// normalization (Uf)(x) = (2 pi)^{-d/2} sum_n f(n) e^{in.x}), and its
// boundary values G(n; lambda +- i0) on the spectrum by two independent
// routes:
//   - eps_extrapolation: R0(lambda +- i eps) on a shrinking eps ladder,
//     each leg integrated on a grid dense enough for the pole tube,
//     then Richardson-extrapolated with an empirically fitted order;
//   - pv_delta: a smooth-bump split of each band denominator into a
//     full-grid far part (the singular window removed per eigenvalue),
//     a principal-value tube integral over level-set masses Phi(t)
//     evaluated on Fermi meshes, and the surface term +- i pi Phi(0).
// The two routes share nothing but the Bloch matrix, which is what makes
// their agreement a meaningful check.

#include <algorithm>
#include <mutex>

#include "latspec/fermi.hpp"
#include "latspec/quadrature.hpp"
#include "latspec/vectors.hpp"

namespace latspec {

enum class LimitSide { Plus, Minus };
enum class LimitMethod { EpsExtrapolation, PvDelta };

struct ResolventOptions {
  int grid_n = 0;       // explicit trapezoid resolution; 0 = auto from dist(z, spectrum)
  int max_grid = 0;     // auto-mode cap; 0 = 16384 (d<=2) / 256 (d=3)
  double safety = 21.0; // auto mode: N ~ safety * grad_bound / dist
};

struct GreenLimitOptions {
  LimitMethod method = LimitMethod::PvDelta;
  LimitSide side = LimitSide::Plus;
  // eps_extrapolation route
  double eps0 = 1e-2;
  int eps_terms = 4;
  double safety = 21.0;
  int max_grid = 0;
  // pv_delta route
  int far_grid = 0;        // 0 = 512 (d=2) / 64 (d=3)
  int mesh_grid = 0;       // 0 = 192 (d=2) / 48 (d=3); Richardson pairs with n/2
  int gl_points = 16;      // nodes for the principal-value tube integral
  double tube_halfwidth = 0.0;  // energy units; 0 = clamp(0.45 dist, 5e-4, 0.05)
};

struct GreenLimitResult {
  std::vector<Eigen::MatrixXcd> blocks;  // one s x s block per requested offset
  double lambda = 0.0;
  LimitSide side = LimitSide::Plus;
  LimitMethod method = LimitMethod::PvDelta;
  double error_estimate = 0.0;
  // eps route diagnostics
  double fitted_order = 0.0;
  std::vector<double> eps_used;
  // pv route diagnostics
  double tube_halfwidth = 0.0;
  int far_grid = 0;
  int mesh_grid = 0;
};

namespace detail {

// Flattened stencil for tight per-point Bloch matrix evaluation.
struct CompiledStencil {
  int s = 0;
  int dim = 0;
  struct Term {
    int from, to;
    double m[3];
    double coef;
  };
  std::vector<Term> terms;

  static CompiledStencil build(const LatticeSpec& L) {
    CompiledStencil c;
    c.s = L.num_classes;
    c.dim = L.dim;
    for (const auto& e : L.edges) {
      Term t;
      t.from = e.from;
      t.to = e.to;
      for (int a = 0; a < 3; ++a) t.m[a] = double(e.shift[static_cast<std::size_t>(a)]);
      t.coef = -1.0 / std::sqrt(double(L.degrees[static_cast<std::size_t>(e.from)]) *
                                double(L.degrees[static_cast<std::size_t>(e.to)]));
      c.terms.push_back(t);
    }
    return c;
  }

  void eval(const double* x, Eigen::MatrixXcd& H) const {
    H.setZero();
    for (const auto& t : terms) {
      double phase = 0.0;
      for (int a = 0; a < dim; ++a) phase -= t.m[a] * x[a];
      H(t.from, t.to) += t.coef * cd(std::cos(phase), std::sin(phase));
    }
  }
};

// (H - z)^-1 into M without heap traffic; closed adjugates up to s = 3,
// fixed-size LU beyond.
inline void resolvent_into(const Eigen::MatrixXcd& H, cd z, Eigen::MatrixXcd& M) {
  const int s = int(H.rows());
  if (s == 1) {
    M(0, 0) = 1.0 / (H(0, 0) - z);
    return;
  }
  if (s == 2) {
    cd a = H(0, 0) - z, b = H(0, 1), c = H(1, 0), d = H(1, 1) - z;
    cd det = a * d - b * c;
    cd inv = 1.0 / det;
    M(0, 0) = d * inv;
    M(0, 1) = -b * inv;
    M(1, 0) = -c * inv;
    M(1, 1) = a * inv;
    return;
  }
  if (s == 3) {
    cd a = H(0, 0) - z, b = H(0, 1), c = H(0, 2);
    cd d = H(1, 0), e = H(1, 1) - z, f = H(1, 2);
    cd g = H(2, 0), h = H(2, 1), i = H(2, 2) - z;
    cd A = e * i - f * h, B = -(d * i - f * g), C = d * h - e * g;
    cd det = a * A + b * B + c * C;
    cd inv = 1.0 / det;
    M(0, 0) = A * inv;
    M(0, 1) = -(b * i - c * h) * inv;
    M(0, 2) = (b * f - c * e) * inv;
    M(1, 0) = B * inv;
    M(1, 1) = (a * i - c * g) * inv;
    M(1, 2) = -(a * f - c * d) * inv;
    M(2, 0) = C * inv;
    M(2, 1) = -(a * h - b * g) * inv;
    M(2, 2) = (a * e - b * d) * inv;
    return;
  }
  if (s == 4) {
    Eigen::Matrix4cd T = H;
    for (int k = 0; k < 4; ++k) T(k, k) -= z;
    Eigen::Matrix4cd R = T.inverse();
    M = R;
    return;
  }
  Eigen::MatrixXcd T = H;
  for (int k = 0; k < s; ++k) T(k, k) -= z;
  M = T.partialPivLu().inverse();
}

// Offsets grouped by their axis-0 component so the inner trapezoid loop
// reduces each row to one accumulator per distinct m1.
struct OffsetPlan {
  std::vector<Offset> offsets;
  std::vector<long> m1;
  std::vector<int> m1_index;  // per offset

  static OffsetPlan build(const std::vector<Offset>& offs) {
    OffsetPlan p;
    p.offsets = offs;
    for (const auto& o : offs) {
      auto it = std::find(p.m1.begin(), p.m1.end(), o[0]);
      if (it == p.m1.end()) {
        p.m1_index.push_back(int(p.m1.size()));
        p.m1.push_back(o[0]);
      } else {
        p.m1_index.push_back(int(it - p.m1.begin()));
      }
    }
    return p;
  }
};

inline std::vector<cd> phase_table(long m, int N) {
  std::vector<cd> t(static_cast<std::size_t>(N));
  for (int k = 0; k < N; ++k)
    t[static_cast<std::size_t>(k)] = std::polar(1.0, -double(m) * kTwoPi * k / N);
  return t;
}

// blocks[q] = N^-d sum_x M(x) e^{-i offsets[q].x} for a caller-supplied
// per-point matrix function. Deterministic: per-chunk accumulators are
// combined in chunk order regardless of thread count.
template <class PointFn>
std::vector<Eigen::MatrixXcd> torus_block_sum(int s, int dim, const std::vector<Offset>& offsets,
                                              int N, PointFn&& point_matrix) {
  OffsetPlan plan = OffsetPlan::build(offsets);
  const std::size_t Q = offsets.size();
  const std::size_t U = plan.m1.size();
  std::vector<std::vector<cd>> ph1;
  ph1.reserve(U);
  for (long m : plan.m1) ph1.push_back(phase_table(m, N));

  const std::size_t s2 = static_cast<std::size_t>(s) * static_cast<std::size_t>(s);
  auto zero_blocks = [&] {
    return std::vector<Eigen::MatrixXcd>(Q, Eigen::MatrixXcd::Zero(s, s));
  };

  std::vector<std::vector<Eigen::MatrixXcd>> chunk_acc;
  long rows = (dim == 1) ? 1 : (dim == 2 ? N : long(N) * N);

  // Pre-size per-chunk storage to the chunk plan used by parallel_chunks.
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  {
    // mirror the fixed chunking: ceil division into <= 64 chunks
    std::size_t n = static_cast<std::size_t>(rows);
    std::size_t target = std::min<std::size_t>(64, n);
    std::size_t base = n / std::max<std::size_t>(1, target);
    std::size_t rem = n % std::max<std::size_t>(1, target);
    std::size_t b = 0;
    for (std::size_t c = 0; c < target; ++c) {
      std::size_t len = base + (c < rem ? 1 : 0);
      if (!len) continue;
      ranges.emplace_back(b, b + len);
      b += len;
    }
  }
  chunk_acc.assign(ranges.size(), zero_blocks());

  parallel_chunks(ranges.size(), [&](std::size_t chunk, std::size_t cb, std::size_t ce) {
    for (std::size_t ci = cb; ci < ce; ++ci) {
      auto [rb, re] = ranges[ci];
      auto& acc = chunk_acc[ci];
      std::vector<cd> rowM(static_cast<std::size_t>(N) * s2);
      std::vector<Eigen::MatrixXcd> accU(U, Eigen::MatrixXcd::Zero(s, s));
      Eigen::MatrixXcd M(s, s);
      double x[3] = {0, 0, 0};
      for (std::size_t r = rb; r < re; ++r) {
        long l2 = 0, l3 = 0;
        if (dim == 2) {
          l2 = long(r);
        } else if (dim == 3) {
          l2 = long(r) % N;
          l3 = long(r) / N;
        }
        x[1] = kTwoPi * double(l2) / N;
        x[2] = kTwoPi * double(l3) / N;
        for (int k = 0; k < N; ++k) {
          x[0] = kTwoPi * double(k) / N;
          point_matrix(x, M);
          cd* dst = rowM.data() + static_cast<std::size_t>(k) * s2;
          for (std::size_t e = 0; e < s2; ++e) dst[e] = M.data()[e];
        }
        for (std::size_t u = 0; u < U; ++u) accU[u].setZero();
        for (int k = 0; k < N; ++k) {
          const cd* src = rowM.data() + static_cast<std::size_t>(k) * s2;
          for (std::size_t u = 0; u < U; ++u) {
            cd ph = ph1[u][static_cast<std::size_t>(k)];
            cd* a = accU[u].data();
            for (std::size_t e = 0; e < s2; ++e) a[e] += src[e] * ph;
          }
        }
        for (std::size_t q = 0; q < Q; ++q) {
          const Offset& o = plan.offsets[q];
          double ph = 0.0;
          if (dim >= 2) ph -= double(o[1]) * x[1];
          if (dim == 3) ph -= double(o[2]) * x[2];
          cd outer = std::polar(1.0, ph);
          acc[q] += accU[static_cast<std::size_t>(plan.m1_index[q])] * outer;
        }
      }
    }
  });

  std::vector<Eigen::MatrixXcd> blocks = zero_blocks();
  for (const auto& acc : chunk_acc)
    for (std::size_t q = 0; q < Q; ++q) blocks[q] += acc[q];
  double scale = std::pow(double(N), -dim);
  for (auto& b : blocks) b *= scale;
  return blocks;
}

// Cached per-lattice analytic context for resolvent work: band intervals,
// critical values (exact + flat), and a gradient bound.
struct ResolventContext {
  double grad_bound = 0.0;
  std::vector<double> critical;
  std::vector<std::pair<double, double>> support;  // closed intervals
  std::vector<double> flat_values;
};

inline const ResolventContext& resolvent_context(const LatticeSpec& L) {
  static std::mutex mu;
  static std::map<std::pair<std::string, int>, ResolventContext> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto key = std::make_pair(L.name, L.dim);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;

  ResolventContext ctx;
  const auto& guard = guard_info(L);
  ctx.critical = guard.critical;
  for (const auto& iv : guard.bands.support) ctx.support.push_back(iv);
  for (const auto& fb : L.flat_bands) {
    ctx.flat_values.push_back(fb.value);
    ctx.support.emplace_back(fb.value, fb.value);
  }

  int n = L.dim == 3 ? 24 : 48;
  double gb = 0.0;
  VectorXd x(L.dim);
  for (long flat = 0; flat < (L.dim == 2 ? long(n) * n : long(n) * n * n); ++flat) {
    long rem = flat;
    for (int a = 0; a < L.dim; ++a) {
      x[a] = kTwoPi * double(rem % n) / n;
      rem /= n;
    }
    BandEigensystem B = band_eigensystem(L, x);
    for (int j = 0; j < L.num_classes; ++j)
      if (B.grad_valid[static_cast<std::size_t>(j)])
        gb = std::max(gb, B.grads.col(j).norm());
  }
  ctx.grad_bound = std::max(0.25, 1.15 * gb);
  return cache.emplace(key, std::move(ctx)).first->second;
}

inline double distance_to_interval(cd z, double lo, double hi) {
  double dr = 0.0;
  if (z.real() < lo) dr = lo - z.real();
  else if (z.real() > hi) dr = z.real() - hi;
  return std::hypot(dr, z.imag());
}

inline double spectrum_distance(const LatticeSpec& L, cd z) {
  const auto& ctx = resolvent_context(L);
  double d = std::numeric_limits<double>::infinity();
  for (const auto& iv : ctx.support) d = std::min(d, distance_to_interval(z, iv.first, iv.second));
  return d;
}

inline int round_up_multiple(double v, int mult) {
  long k = long(std::ceil(v / mult));
  return int(std::max<long>(1, k) * mult);
}

// Smooth even bump: 1 at 0, identically 0 for |s| >= 1, flat to all
// orders at both ends of its support.
inline double smooth_bump(double s) {
  double s2 = s * s;
  if (s2 >= 1.0) return 0.0;
  return std::exp(1.0 - 1.0 / (1.0 - s2));
}

}  // namespace detail

// Green's function blocks G(n; z) for z off the spectrum. Auto mode picks
// the trapezoid resolution from the spectral distance (the integrand's
// pole tube has width ~ dist/|grad lambda|); an explicit grid_n is honored
// but rejected when the tube is unresolved.
inline std::vector<Eigen::MatrixXcd> resolvent_blocks(const LatticeSpec& L, cd z,
                                                      const std::vector<Offset>& offsets,
                                                      const ResolventOptions& opt = {}) {
  const auto& ctx = detail::resolvent_context(L);
  double dist = detail::spectrum_distance(L, z);
  if (!(dist > 0.0) || !std::isfinite(dist))
    fail_domain("SpectrumTooClose", "z lies on the spectrum");

  int max_grid = opt.max_grid > 0 ? opt.max_grid : (L.dim == 3 ? 256 : 16384);
  int def_grid = L.dim == 3 ? defaults::grid_n_3d : defaults::grid_n_2d;
  int N;
  if (opt.grid_n > 0) {
    N = opt.grid_n;
    if (dist < 10.0 * (kTwoPi / N) * ctx.grad_bound)
      fail_domain("SpectrumTooClose",
                  "dist(z, spectrum)=" + std::to_string(dist) +
                      " under-resolved at grid_n=" + std::to_string(N));
  } else {
    N = std::clamp(detail::round_up_multiple(opt.safety * ctx.grad_bound / dist, 64),
                   def_grid, max_grid);
    if (double(N) * dist / ctx.grad_bound < 18.0)
      fail_domain("SpectrumTooClose",
                  "dist(z, spectrum)=" + std::to_string(dist) +
                      " beyond the grid cap " + std::to_string(max_grid));
  }

  auto stencil = detail::CompiledStencil::build(L);
  const int s = L.num_classes;
  return detail::torus_block_sum(
      s, L.dim, offsets, N, [&, s](const double* x, Eigen::MatrixXcd& M) {
        thread_local Eigen::MatrixXcd H;
        H.resize(s, s);
        stencil.eval(x, H);
        detail::resolvent_into(H, z, M);
      });
}

// (R0(z) f)(site) for finitely supported f, evaluated at eval_sites.
inline LatticeVector resolvent_offspectrum(const LatticeSpec& L, cd z, const LatticeVector& f,
                                           const std::vector<LatticeSite>& eval_sites,
                                           const ResolventOptions& opt = {}) {
  if (f.empty()) fail_config("EmptyVector", "resolvent input has no support");
  auto fs = f.sorted_entries();
  std::vector<Offset> offsets;
  std::map<Offset, int> seen;
  for (const auto& site : eval_sites)
    for (const auto& [s, v] : fs) {
      (void)v;
      Offset d{site.n[0] - s.n[0], site.n[1] - s.n[1], site.n[2] - s.n[2]};
      if (seen.emplace(d, int(offsets.size())).second) offsets.push_back(d);
    }
  auto blocks = resolvent_blocks(L, z, offsets, opt);
  LatticeVector out;
  for (const auto& site : eval_sites) {
    cd acc(0.0, 0.0);
    for (const auto& [s, v] : fs) {
      Offset d{site.n[0] - s.n[0], site.n[1] - s.n[1], site.n[2] - s.n[2]};
      acc += blocks[static_cast<std::size_t>(seen[d])](site.cls, s.cls) * v;
    }
    out.set(site, acc);
  }
  return out;
}


namespace detail {

struct EpsLeg {
  double eps;
  std::vector<Eigen::MatrixXcd> blocks;
};

inline GreenLimitResult green_limit_eps(const LatticeSpec& L, double lambda,
                                        const std::vector<Offset>& offsets,
                                        const GreenLimitOptions& opt) {
  const auto& ctx = resolvent_context(L);
  int max_grid = opt.max_grid > 0 ? opt.max_grid : (L.dim == 3 ? 256 : 16384);
  int def_grid = L.dim == 3 ? defaults::grid_n_3d : defaults::grid_n_2d;
  double sgn = opt.side == LimitSide::Plus ? 1.0 : -1.0;

  auto stencil = CompiledStencil::build(L);
  std::vector<EpsLeg> legs;
  for (int k = 0; k < opt.eps_terms; ++k) {
    double eps = opt.eps0 / double(1 << k);
    int N = std::clamp(round_up_multiple(opt.safety * ctx.grad_bound / eps, 64), def_grid,
                       max_grid);
    cd z(lambda, sgn * eps);
    const int s = L.num_classes;
    auto blocks = torus_block_sum(s, L.dim, offsets, N,
                                  [&, s](const double* x, Eigen::MatrixXcd& M) {
                                    thread_local Eigen::MatrixXcd H;
                                    H.resize(s, s);
                                    stencil.eval(x, H);
                                    resolvent_into(H, z, M);
                                  });
    legs.push_back({eps, std::move(blocks)});
  }

  // Fit the leading order p from the Frobenius norms of successive
  // differences (the ladder halves eps, so the ratio estimates 2^p),
  // then run Richardson stages assuming orders p, p+1, p+2, ...
  const std::size_t Q = offsets.size();
  int T = opt.eps_terms;
  std::vector<double> diff_norm;
  for (int k = 0; k + 1 < T; ++k) {
    double acc = 0.0;
    for (std::size_t q = 0; q < Q; ++q)
      acc += (legs[static_cast<std::size_t>(k + 1)].blocks[q] -
              legs[static_cast<std::size_t>(k)].blocks[q])
                 .squaredNorm();
    diff_norm.push_back(std::sqrt(acc));
  }
  double p = 1.0;
  {
    std::vector<double> ests;
    for (std::size_t k = 0; k + 1 < diff_norm.size(); ++k)
      if (diff_norm[k + 1] > 0)
        ests.push_back(std::log2(diff_norm[k] / diff_norm[k + 1]));
    if (!ests.empty()) {
      double m = 0.0;
      for (double e : ests) m += e;
      p = std::clamp(m / double(ests.size()), 0.25, 4.0);
    }
  }

  std::vector<std::vector<Eigen::MatrixXcd>> table;
  for (auto& leg : legs) table.push_back(leg.blocks);
  double last_corr = 0.0;
  for (int stage = 0; stage + 1 < T; ++stage) {
    double factor = std::pow(2.0, p + stage) - 1.0;
    std::vector<std::vector<Eigen::MatrixXcd>> next;
    for (int k = 0; k + 1 < int(table.size()); ++k) {
      std::vector<Eigen::MatrixXcd> row;
      for (std::size_t q = 0; q < Q; ++q) {
        Eigen::MatrixXcd corr =
            (table[static_cast<std::size_t>(k + 1)][q] - table[static_cast<std::size_t>(k)][q]) /
            factor;
        row.push_back(table[static_cast<std::size_t>(k + 1)][q] + corr);
        if (k + 2 == int(table.size())) last_corr = std::max(last_corr, corr.cwiseAbs().maxCoeff());
      }
      next.push_back(std::move(row));
    }
    table = std::move(next);
  }

  GreenLimitResult res;
  res.blocks = table.front();
  res.lambda = lambda;
  res.side = opt.side;
  res.method = LimitMethod::EpsExtrapolation;
  res.fitted_order = p;
  res.error_estimate = last_corr;
  for (const auto& leg : legs) res.eps_used.push_back(leg.eps);
  return res;
}

// Level-set mass matrices Phi(t)[q] = sum_nodes mu_k P_b(x_k) e^{-i n_q.x_k}
// from one mesh.
inline std::vector<Eigen::MatrixXcd> level_mass(const LatticeSpec& L, const FermiSurfaceMesh& mesh,
                                                const std::vector<Offset>& offsets) {
  const int s = L.num_classes;
  std::vector<Eigen::MatrixXcd> phi(offsets.size(), Eigen::MatrixXcd::Zero(s, s));
  Eigen::MatrixXcd P(s, s);
  for (const auto& nd : mesh.nodes) {
    P.noalias() = nd.eigvec * nd.eigvec.adjoint();
    for (std::size_t q = 0; q < offsets.size(); ++q) {
      double ph = 0.0;
      for (int a = 0; a < L.dim; ++a) ph -= double(offsets[q][static_cast<std::size_t>(a)]) * nd.x[a];
      phi[q] += (nd.mu * std::polar(1.0, ph)) * P;
    }
  }
  return phi;
}

inline GreenLimitResult green_limit_pv(const LatticeSpec& L, double lambda,
                                       const std::vector<Offset>& offsets,
                                       const GreenLimitOptions& opt) {
  if (L.dim != 2 && L.dim != 3)
    fail_domain("MeshUnavailable", "pv_delta needs d in {2,3}, got d=" + std::to_string(L.dim));
  const auto& ctx = resolvent_context(L);
  const auto& guard = guard_info(L);
  double dist = std::numeric_limits<double>::infinity();
  for (double t : guard.critical) dist = std::min(dist, std::abs(lambda - t));
  if (dist < 2.0 * defaults::threshold_exclusion)
    fail_domain("EnergyAtThreshold", "lambda=" + std::to_string(lambda) +
                                         " too close to a critical value (dist=" +
                                         std::to_string(dist) + ")");

  double w = opt.tube_halfwidth > 0 ? opt.tube_halfwidth
                                    : std::clamp(0.45 * dist, 5e-4, 0.05);
  int far_n = opt.far_grid > 0 ? opt.far_grid : (L.dim == 3 ? 64 : 512);
  int mesh_n = opt.mesh_grid > 0 ? opt.mesh_grid : (L.dim == 3 ? 48 : 192);
  double sgn = opt.side == LimitSide::Plus ? 1.0 : -1.0;
  const int s = L.num_classes;
  const std::size_t Q = offsets.size();

  // Far field: matrix function r_w(H(x) - lambda) with the bump window
  // removed from each eigenvalue reciprocal. Smooth through band
  // crossings because it is a fixed scalar function of the matrix.
  auto stencil = CompiledStencil::build(L);
  auto far_fn = [&](const double* xraw, Eigen::MatrixXcd& M) {
    Eigen::MatrixXcd H(s, s);
    stencil.eval(xraw, H);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(H);
    M.setZero();
    for (int b = 0; b < s; ++b) {
      double t = es.eigenvalues()[b] - lambda;
      double psi = smooth_bump(t / w);
      if (psi >= 1.0) continue;
      double r = (1.0 - psi) / t;
      M.noalias() += r * (es.eigenvectors().col(b) * es.eigenvectors().col(b).adjoint());
    }
  };
  auto far_full = torus_block_sum(s, L.dim, offsets, far_n, far_fn);
  auto far_half = torus_block_sum(s, L.dim, offsets, far_n / 2, far_fn);
  double far_err = 0.0;
  for (std::size_t q = 0; q < Q; ++q)
    far_err = std::max(far_err, (far_full[q] - far_half[q]).cwiseAbs().maxCoeff());

  // Near field: PV over the tube via level-set masses Phi(t), each mesh
  // evaluated at two resolutions and Richardson-combined.
  bool any_active = false;
  for (int b = 0; b < s; ++b) {
    const auto& bi = guard.bands.bands[static_cast<std::size_t>(b)];
    if (!bi.flat && bi.lo < lambda && lambda < bi.hi) any_active = true;
  }

  std::vector<Eigen::MatrixXcd> near(Q, Eigen::MatrixXcd::Zero(s, s));
  std::vector<Eigen::MatrixXcd> delta_term(Q, Eigen::MatrixXcd::Zero(s, s));
  double mesh_err = 0.0;
  if (any_active) {
    BandGridSet gs_full = band_grid_set(L, mesh_n);
    BandGridSet gs_half = band_grid_set(L, mesh_n / 2);
    FermiOptions fo;
    fo.check_thresholds = false;
    fo.with_eigvecs = true;

    auto phi_at = [&](double t, double& err_out) {
      FermiSurfaceMesh mf = fermi_surface_on_grids(L, gs_full, lambda + t, fo);
      FermiSurfaceMesh mh = fermi_surface_on_grids(L, gs_half, lambda + t, fo);
      auto pf = level_mass(L, mf, offsets);
      auto ph = level_mass(L, mh, offsets);
      std::vector<Eigen::MatrixXcd> out(Q);
      double e = 0.0;
      for (std::size_t q = 0; q < Q; ++q) {
        Eigen::MatrixXcd corr = (pf[q] - ph[q]) / 3.0;
        out[q] = pf[q] + corr;
        e = std::max(e, corr.cwiseAbs().maxCoeff());
      }
      err_out = std::max(err_out, e);
      return out;
    };

    GaussLegendre gl = gauss_legendre(opt.gl_points, 0.0, 1.0);
    for (int i = 0; i < opt.gl_points; ++i) {
      double si = gl.nodes[static_cast<std::size_t>(i)];
      double psi = smooth_bump(si);
      if (psi == 0.0) continue;
      auto plus = phi_at(w * si, mesh_err);
      auto minus = phi_at(-w * si, mesh_err);
      double coef = gl.weights[static_cast<std::size_t>(i)] * psi / si;
      for (std::size_t q = 0; q < Q; ++q) near[q] += coef * (plus[q] - minus[q]);
    }
    auto phi0 = phi_at(0.0, mesh_err);
    for (std::size_t q = 0; q < Q; ++q) delta_term[q] = cd(0.0, sgn * kPi) * phi0[q];
  }

  GreenLimitResult res;
  res.blocks.resize(Q);
  double scale = std::pow(kTwoPi, -L.dim);
  for (std::size_t q = 0; q < Q; ++q)
    res.blocks[q] = far_full[q] + scale * (near[q] + delta_term[q]);
  res.lambda = lambda;
  res.side = opt.side;
  res.method = LimitMethod::PvDelta;
  res.error_estimate = far_err + scale * mesh_err;
  res.tube_halfwidth = w;
  res.far_grid = far_n;
  res.mesh_grid = mesh_n;
  return res;
}

}  // namespace detail

// Boundary values G(n; lambda +- i0) for a batch of offsets.
inline GreenLimitResult green_limit_blocks(const LatticeSpec& L, double lambda,
                                           const std::vector<Offset>& offsets,
                                           const GreenLimitOptions& opt = {}) {
  const auto& guard = detail::guard_info(L);
  double dist = std::numeric_limits<double>::infinity();
  for (double t : guard.critical) dist = std::min(dist, std::abs(lambda - t));
  if (dist < defaults::threshold_exclusion)
    fail_domain("EnergyAtThreshold",
                "lambda=" + std::to_string(lambda) + " within the threshold exclusion zone");
  if (opt.method == LimitMethod::EpsExtrapolation)
    return detail::green_limit_eps(L, lambda, offsets, opt);
  return detail::green_limit_pv(L, lambda, offsets, opt);
}

// Scalar boundary value G(n; lambda +- i0)_{j j'}.
inline cd green_limit(const LatticeSpec& L, const Offset& n, double lambda,
                      LimitSide side = LimitSide::Plus,
                      LimitMethod method = LimitMethod::PvDelta, int j = 0, int jp = 0,
                      const GreenLimitOptions& base = {}) {
  GreenLimitOptions opt = base;
  opt.side = side;
  opt.method = method;
  auto res = green_limit_blocks(L, lambda, {n}, opt);
  return res.blocks[0](j, jp);
}

// Boundary values applied to a vector: (R0(lambda + side i0) f)(site).
inline LatticeVector green_limit_apply(const LatticeSpec& L, double lambda,
                                       const LatticeVector& f,
                                       const std::vector<LatticeSite>& eval_sites,
                                       const GreenLimitOptions& opt = {}) {
  if (f.empty()) fail_config("EmptyVector", "resolvent input has no support");
  auto fs = f.sorted_entries();
  std::vector<Offset> offsets;
  std::map<Offset, int> seen;
  for (const auto& site : eval_sites)
    for (const auto& [s, v] : fs) {
      (void)v;
      Offset d{site.n[0] - s.n[0], site.n[1] - s.n[1], site.n[2] - s.n[2]};
      if (seen.emplace(d, int(offsets.size())).second) offsets.push_back(d);
    }
  auto res = green_limit_blocks(L, lambda, offsets, opt);
  LatticeVector out;
  for (const auto& site : eval_sites) {
    cd acc(0.0, 0.0);
    for (const auto& [s, v] : fs) {
      Offset d{site.n[0] - s.n[0], site.n[1] - s.n[1], site.n[2] - s.n[2]};
      acc += res.blocks[static_cast<std::size_t>(seen[d])](site.cls, s.cls) * v;
    }
    out.set(site, acc);
  }
  return out;
}

}  // namespace latspec
