#pragma once

// Level sets of Floquet bands ("Fermi surfaces") as quadrature meshes:
// marching squares in 2d, marching tetrahedra in 3d, both followed by
// Newton refinement onto the exact level set. Every node carries an
// arclength/area weight, the band gradient, and the eigenvector, which
// is what the spectral transform and the scattering kernels consume.
// The co-area measure mu_k = weight_k / |grad lambda| turns surface
// sums into spectral integrals; the density of states is
// (2 pi)^-d * sum mu_k.

#include <map>

#include "latspec/bloch.hpp"

namespace latspec {

struct FermiNode {
  VectorXd x;
  int band = 0;
  double weight = 0.0;     // chord length (2d) / triangle area (3d)
  double grad_norm = 0.0;  // |grad lambda_band(x)|
  VectorXd conormal;       // unit gradient
  VectorXcd eigvec;        // gauge-fixed band eigenvector at x
  double mu = 0.0;         // weight / grad_norm
};

struct FermiSurfaceMesh {
  double lambda = 0.0;
  int dim = 0;
  int grid_n = 0;
  std::vector<FermiNode> nodes;
  std::vector<std::pair<int, int>> band_ranges;  // [begin,end) per contributing band
  std::vector<int> band_ids;                     // band index per range
  double measure = 0.0;                          // sum of weights
  double coarea_mass = 0.0;                      // sum of mu
};

struct FermiOptions {
  int grid_n = 0;  // 0 = pinned default (256 in 2d, 64 in 3d)
  double surf_tol = defaults::surf_tol;
  double threshold_exclusion = defaults::threshold_exclusion;
  bool check_thresholds = true;
  bool with_eigvecs = true;
};

namespace detail {

// Guard data per lattice: exact critical values plus flat levels, and
// per-band intervals. Cached because threshold tables are pure.
struct GuardInfo {
  std::vector<double> critical;
  SpectrumBands bands;
};

inline const GuardInfo& guard_info(const LatticeSpec& L) {
  static std::map<std::string, GuardInfo> cache;
  static std::mutex mu;
  std::string key = L.name + "/" + std::to_string(L.dim);
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  GuardInfo info;
  ThresholdSet T = thresholds_catalog(L);
  info.critical = T.t0;
  for (const auto& fb : L.flat_bands) info.critical.push_back(fb.value);
  info.critical = sorted_unique(info.critical);
  info.bands = spectrum_bands(L, L.dim == 3 ? 32 : 64);
  return cache.emplace(key, std::move(info)).first->second;
}

inline double distance_to_thresholds(const LatticeSpec& L, double lambda) {
  double dist = std::numeric_limits<double>::infinity();
  for (double t : guard_info(L).critical) dist = std::min(dist, std::abs(lambda - t));
  return dist;
}

// Newton iteration along the band gradient onto lambda_band(x) = level.
inline bool refine_to_level(const LatticeSpec& L, int band, double level, double tol,
                            VectorXd& x) {
  for (int iter = 0; iter < 30; ++iter) {
    BandEigensystem B = band_eigensystem(L, x);
    double f = B.evals[band] - level;
    if (std::abs(f) < tol) return true;
    if (!B.grad_valid[static_cast<std::size_t>(band)]) return false;
    VectorXd g = B.grads.col(band);
    double g2 = g.squaredNorm();
    if (g2 < 1e-18) return false;
    x -= (f / g2) * g;
  }
  return false;
}

// Periodic scalar field of one band on an n^d grid.
struct BandGrid {
  int n = 0;
  int dim = 0;
  std::vector<double> vals;  // lexicographic, axis 0 slowest
  double at2(int i, int j) const {
    i %= n; if (i < 0) i += n;
    j %= n; if (j < 0) j += n;
    return vals[static_cast<std::size_t>(i) * n + j];
  }
  double at3(int i, int j, int k) const {
    i %= n; if (i < 0) i += n;
    j %= n; if (j < 0) j += n;
    k %= n; if (k < 0) k += n;
    return (vals[(static_cast<std::size_t>(i) * n + j) * n + k]);
  }
};

inline std::vector<BandGrid> band_grids(const LatticeSpec& L, int n) {
  const int s = L.num_classes, d = L.dim;
  std::vector<BandGrid> grids(static_cast<std::size_t>(s));
  std::size_t total = 1;
  for (int k = 0; k < d; ++k) total *= static_cast<std::size_t>(n);
  for (auto& g : grids) {
    g.n = n;
    g.dim = d;
    g.vals.resize(total);
  }
  std::size_t rows = total / static_cast<std::size_t>(n);
  parallel_chunks(rows, [&](std::size_t, std::size_t b, std::size_t e) {
    FastBandEvaluator ev(L);
    std::vector<double> vals(static_cast<std::size_t>(s));
    VectorXd x(d);
    for (std::size_t r = b; r < e; ++r) {
      // Decode the leading d-1 indices from r.
      std::size_t rem = r;
      for (int k = d - 2; k >= 0; --k) {
        x[k] = kTwoPi * double(rem % static_cast<std::size_t>(n)) / n;
        rem /= static_cast<std::size_t>(n);
      }
      for (int i = 0; i < n; ++i) {
        x[d - 1] = kTwoPi * i / n;
        ev.values(x, vals.data());
        for (int j = 0; j < s; ++j)
          grids[static_cast<std::size_t>(j)].vals[r * static_cast<std::size_t>(n) + static_cast<std::size_t>(i)] =
              vals[static_cast<std::size_t>(j)];
      }
    }
  });
  return grids;
}

struct CrossingCache {
  // Refined crossing points keyed by (grid vertex, axis).
  std::map<std::array<long, 4>, VectorXd> pts;
};

inline VectorXd refined_crossing_2d(const LatticeSpec& L, const BandGrid& g, int band,
                                    double level, double tol, int i, int j, int axis,
                                    CrossingCache& cache) {
  int n = g.n;
  // Key on the raw (unwrapped) indices: cells on either side of the
  // torus seam keep their own local representative, so chord lengths
  // never straddle a 2*pi jump.
  std::array<long, 4> key{i, j, axis, 0};
  auto it = cache.pts.find(key);
  if (it != cache.pts.end()) return it->second;
  double f0 = g.at2(i, j) - level;
  double f1 = (axis == 0 ? g.at2(i + 1, j) : g.at2(i, j + 1)) - level;
  double t = f0 / (f0 - f1);
  double h = kTwoPi / n;
  VectorXd x(2);
  x << h * i, h * j;
  x[axis] += t * h;
  refine_to_level(L, band, level, tol, x);
  cache.pts.emplace(key, x);
  return x;
}

inline void march_band_2d(const LatticeSpec& L, const BandGrid& g, int band, double lambda,
                          const FermiOptions& opt, std::vector<FermiNode>& nodes) {
  const int n = g.n;
  const double h = kTwoPi / n;
  CrossingCache cache;
  FastBandEvaluator ev(L);
  std::vector<double> vals(static_cast<std::size_t>(L.num_classes));

  auto emit = [&](const VectorXd& p1, const VectorXd& p2) {
    FermiNode node;
    node.x = 0.5 * (p1 + p2);
    refine_to_level(L, band, lambda, opt.surf_tol, node.x);
    node.band = band;
    node.weight = (p2 - p1).norm();
    BandEigensystem B = band_eigensystem(L, node.x);
    if (!B.grad_valid[static_cast<std::size_t>(band)]) return;  // unresolved crossing on the surface
    VectorXd grad = B.grads.col(band);
    node.grad_norm = grad.norm();
    if (node.grad_norm < 1e-6) return;  // nearly critical point, drop
    node.conormal = grad / node.grad_norm;
    if (opt.with_eigvecs) node.eigvec = B.evecs.col(band);
    node.mu = node.weight / node.grad_norm;
    nodes.push_back(std::move(node));
  };

  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double f00 = g.at2(i, j) - lambda;
      double f10 = g.at2(i + 1, j) - lambda;
      double f11 = g.at2(i + 1, j + 1) - lambda;
      double f01 = g.at2(i, j + 1) - lambda;
      int mask = (f00 < 0 ? 1 : 0) | (f10 < 0 ? 2 : 0) | (f11 < 0 ? 4 : 0) | (f01 < 0 ? 8 : 0);
      if (mask == 0 || mask == 15) continue;

      auto bottom = [&] { return refined_crossing_2d(L, g, band, lambda, opt.surf_tol, i, j, 0, cache); };
      auto top = [&] { return refined_crossing_2d(L, g, band, lambda, opt.surf_tol, i, j + 1, 0, cache); };
      auto left = [&] { return refined_crossing_2d(L, g, band, lambda, opt.surf_tol, i, j, 1, cache); };
      auto right = [&] { return refined_crossing_2d(L, g, band, lambda, opt.surf_tol, i + 1, j, 1, cache); };

      switch (mask) {
        case 1: case 14: emit(left(), bottom()); break;
        case 2: case 13: emit(bottom(), right()); break;
        case 3: case 12: emit(left(), right()); break;
        case 4: case 11: emit(right(), top()); break;
        case 6: case 9: emit(bottom(), top()); break;
        case 7: case 8: emit(left(), top()); break;
        case 5: case 10: {
          // Saddle cell: sample the center to choose the pairing.
          VectorXd c(2);
          c << h * (i + 0.5), h * (j + 0.5);
          ev.values(c, vals.data());
          bool center_in = vals[static_cast<std::size_t>(band)] - lambda < 0;
          bool corners_in_are_00_11 = mask == 5;
          if (corners_in_are_00_11 == center_in) {
            emit(top(), left());
            emit(bottom(), right());
          } else {
            emit(bottom(), left());
            emit(top(), right());
          }
          break;
        }
        default: break;
      }
    }
  }
}

// Kuhn split of the cube into 6 tetrahedra, marching each.
inline void march_band_3d(const LatticeSpec& L, const BandGrid& g, int band, double lambda,
                          const FermiOptions& opt, std::vector<FermiNode>& nodes) {
  const int n = g.n;
  const double h = kTwoPi / n;
  static const int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2},
                                  {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};

  std::map<std::array<long, 4>, VectorXd> edge_cache;
  auto refined_edge_point = [&](const std::array<int, 3>& a, const std::array<int, 3>& b,
                                double fa, double fb) {
    // Key by the ordered raw endpoint pair; raw (unwrapped) coordinates
    // keep triangle geometry local across the torus seam.
    long span = n + 2;
    long ia = (a[0] * span + a[1]) * span + a[2];
    long ib = (b[0] * span + b[1]) * span + b[2];
    std::array<long, 4> key{std::min(ia, ib), std::max(ia, ib), 0, 0};
    auto it = edge_cache.find(key);
    if (it != edge_cache.end()) return it->second;
    double t = fa / (fa - fb);
    VectorXd x(3);
    for (int k = 0; k < 3; ++k) x[k] = h * (a[static_cast<std::size_t>(k)] + t * (b[static_cast<std::size_t>(k)] - a[static_cast<std::size_t>(k)]));
    refine_to_level(L, band, lambda, opt.surf_tol, x);
    edge_cache.emplace(key, x);
    return x;
  };

  auto emit_triangle = [&](const VectorXd& p0, const VectorXd& p1, const VectorXd& p2) {
    FermiNode node;
    node.x = (p0 + p1 + p2) / 3.0;
    refine_to_level(L, band, lambda, opt.surf_tol, node.x);
    Eigen::Vector3d u = p1.head<3>() - p0.head<3>(), v = p2.head<3>() - p0.head<3>();
    node.weight = 0.5 * u.cross(v).norm();
    if (node.weight <= 0) return;
    node.band = band;
    BandEigensystem B = band_eigensystem(L, node.x);
    if (!B.grad_valid[static_cast<std::size_t>(band)]) return;
    VectorXd grad = B.grads.col(band);
    node.grad_norm = grad.norm();
    if (node.grad_norm < 1e-6) return;
    node.conormal = grad / node.grad_norm;
    if (opt.with_eigvecs) node.eigvec = B.evecs.col(band);
    node.mu = node.weight / node.grad_norm;
    nodes.push_back(std::move(node));
  };

  std::array<int, 3> corner{};
  std::array<std::array<int, 3>, 4> tet{};
  std::array<double, 4> f{};
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        // Quick reject: whole cube on one side.
        double lo = std::numeric_limits<double>::infinity(), hi = -lo;
        for (int c = 0; c < 8; ++c) {
          double v = g.at3(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1)) - lambda;
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
        if (lo > 0 || hi < 0) continue;
        corner = {i, j, k};
        for (const auto& perm : perms) {
          tet[0] = corner;
          for (int v = 1; v < 4; ++v) {
            tet[static_cast<std::size_t>(v)] = tet[static_cast<std::size_t>(v - 1)];
            ++tet[static_cast<std::size_t>(v)][static_cast<std::size_t>(perm[v - 1])];
          }
          int mask = 0;
          for (int v = 0; v < 4; ++v) {
            f[static_cast<std::size_t>(v)] =
                g.at3(tet[static_cast<std::size_t>(v)][0], tet[static_cast<std::size_t>(v)][1], tet[static_cast<std::size_t>(v)][2]) - lambda;
            if (f[static_cast<std::size_t>(v)] < 0) mask |= 1 << v;
          }
          if (mask == 0 || mask == 15) continue;
          auto pt = [&](int a, int b) {
            return refined_edge_point(tet[static_cast<std::size_t>(a)], tet[static_cast<std::size_t>(b)],
                                      f[static_cast<std::size_t>(a)], f[static_cast<std::size_t>(b)]);
          };
          // Single-vertex cases give one triangle, two-vertex cases a
          // quad split along one diagonal.
          switch (mask) {
            case 1: case 14: emit_triangle(pt(0, 1), pt(0, 2), pt(0, 3)); break;
            case 2: case 13: emit_triangle(pt(1, 0), pt(1, 2), pt(1, 3)); break;
            case 4: case 11: emit_triangle(pt(2, 0), pt(2, 1), pt(2, 3)); break;
            case 8: case 7: emit_triangle(pt(3, 0), pt(3, 1), pt(3, 2)); break;
            case 3: case 12:
              emit_triangle(pt(0, 2), pt(0, 3), pt(1, 3));
              emit_triangle(pt(0, 2), pt(1, 3), pt(1, 2));
              break;
            case 5: case 10:
              emit_triangle(pt(0, 1), pt(0, 3), pt(2, 3));
              emit_triangle(pt(0, 1), pt(2, 3), pt(2, 1));
              break;
            case 6: case 9:
              emit_triangle(pt(1, 0), pt(1, 3), pt(2, 3));
              emit_triangle(pt(1, 0), pt(2, 3), pt(2, 0));
              break;
            default: break;
          }
        }
      }
}

}  // namespace detail

// Per-band value grids for one resolution, reusable across many level sets.
struct BandGridSet {
  int n = 0;
  std::vector<detail::BandGrid> grids;
};

inline BandGridSet band_grid_set(const LatticeSpec& L, int n) {
  return BandGridSet{n, detail::band_grids(L, n)};
}

inline FermiSurfaceMesh fermi_surface_on_grids(const LatticeSpec& L, const BandGridSet& gs,
                                               double lambda, const FermiOptions& opt = {}) {
  int grid_n = gs.n;
  const auto& guard = detail::guard_info(L);

  if (opt.check_thresholds) {
    double dist = detail::distance_to_thresholds(L, lambda);
    if (dist < opt.threshold_exclusion)
      fail_domain("EnergyAtThreshold",
                  "lambda=" + std::to_string(lambda) + " is within " +
                      std::to_string(opt.threshold_exclusion) + " of a critical value");
  }
  bool inside = false;
  for (const auto& iv : guard.bands.support)
    if (lambda > iv.first && lambda < iv.second) inside = true;
  if (!inside)
    fail_domain("EnergyOutsideBand",
                "lambda=" + std::to_string(lambda) + " lies outside the spectrum");

  FermiSurfaceMesh mesh;
  mesh.lambda = lambda;
  mesh.dim = L.dim;
  mesh.grid_n = grid_n;

  for (int band = 0; band < L.num_classes; ++band) {
    const auto& bi = guard.bands.bands[static_cast<std::size_t>(band)];
    if (bi.flat) continue;
    if (lambda <= bi.lo || lambda >= bi.hi) continue;
    int begin = static_cast<int>(mesh.nodes.size());
    if (L.dim == 2)
      detail::march_band_2d(L, gs.grids[static_cast<std::size_t>(band)], band, lambda, opt, mesh.nodes);
    else
      detail::march_band_3d(L, gs.grids[static_cast<std::size_t>(band)], band, lambda, opt, mesh.nodes);
    int end = static_cast<int>(mesh.nodes.size());
    if (end > begin) {
      mesh.band_ranges.emplace_back(begin, end);
      mesh.band_ids.push_back(band);
    }
  }
  if (mesh.nodes.empty())
    fail_domain("EnergyOutsideBand",
                "no band surface found at lambda=" + std::to_string(lambda));

  std::vector<double> w, m;
  w.reserve(mesh.nodes.size());
  m.reserve(mesh.nodes.size());
  for (const auto& nd : mesh.nodes) {
    w.push_back(nd.weight);
    m.push_back(nd.mu);
  }
  mesh.measure = pairwise_sum(w);
  mesh.coarea_mass = pairwise_sum(m);
  return mesh;
}

inline FermiSurfaceMesh fermi_surface(const LatticeSpec& L, double lambda,
                                      const FermiOptions& opt = {}) {
  int grid_n = opt.grid_n > 0 ? opt.grid_n : (L.dim == 3 ? defaults::grid_n_3d : defaults::grid_n_2d);
  return fermi_surface_on_grids(L, band_grid_set(L, grid_n), lambda, opt);
}

// sum_k F(node_k) * mu_k with pairwise accumulation.
template <class F>
cd surface_integral(const FermiSurfaceMesh& mesh, F&& f) {
  std::vector<cd> terms;
  terms.reserve(mesh.nodes.size());
  for (const auto& nd : mesh.nodes) terms.push_back(f(nd) * nd.mu);
  return pairwise_sum(terms);
}

// ---------------------------------------------------------------------
// Density of states

// rho(lambda) = (2 pi)^-d * integral over the level set of dM/|grad|.
inline double density_of_states(const LatticeSpec& L, double lambda,
                                const FermiOptions& opt = {}) {
  FermiOptions o = opt;
  o.with_eigvecs = false;
  FermiSurfaceMesh mesh = fermi_surface(L, lambda, o);
  double scale = std::pow(kTwoPi, -L.dim);
  return scale * mesh.coarea_mass;
}

struct DosPoint {
  double lambda = 0.0;
  double rho = 0.0;      // 0 where no dispersive band passes
  bool excluded = false; // true within the threshold guard, rho not evaluated
};

inline std::vector<DosPoint> dos_curve(const LatticeSpec& L, double lo, double hi,
                                       int count, const FermiOptions& opt = {}) {
  if (count < 2) fail_config("BadConfig", "dos_curve needs at least 2 points");
  std::vector<DosPoint> out;
  out.reserve(static_cast<std::size_t>(count));
  const auto& guard = detail::guard_info(L);
  FermiOptions o = opt;
  o.with_eigvecs = false;
  o.check_thresholds = false;
  for (int i = 0; i < count; ++i) {
    DosPoint p;
    p.lambda = lo + (hi - lo) * i / (count - 1);
    if (detail::distance_to_thresholds(L, p.lambda) < opt.threshold_exclusion) {
      p.excluded = true;
    } else {
      bool inside = false;
      for (const auto& iv : guard.bands.support)
        if (p.lambda > iv.first && p.lambda < iv.second) inside = true;
      p.rho = inside ? density_of_states(L, p.lambda, o) : 0.0;
    }
    out.push_back(p);
  }
  return out;
}

}  // namespace latspec
