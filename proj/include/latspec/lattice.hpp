#pragma once

// Catalog of periodic graphs with finite fundamental domains, their
// Floquet matrices, and finite real-space windows of the free operator.
//
// A lattice is described by s vertex classes and a set of directed edge
// rules (from, to, shift): vertex (from, n) is adjacent to (to, n+shift)
// for every cell n in Z^dim. Rules come closed under reversal, so the
// adjacency is symmetric. The operator is the negative degree-normalized
// adjacency, conjugated by D = diag(sqrt(deg)) to act on unweighted l2:
// entries are -1/sqrt(deg_from * deg_to). Its Floquet matrix at
// quasimomentum x picks up e^{-i m.x} per shift m, and the spectrum of
// every lattice here is contained in [-1, 1].

#include <map>
#include <set>

#include <Eigen/SparseCore>
#include <json.hpp>

#include "latspec/common.hpp"

namespace latspec {

struct EdgeRule {
  int from = 0;
  int to = 0;
  std::array<int, 3> shift{0, 0, 0};
};

struct FlatBand {
  double value = 0.0;
  int multiplicity = 1;
};

struct LatticeSpec {
  std::string name;
  int dim = 0;         // quasimomentum dimension
  int num_classes = 0; // s
  int embed_dim = 0;   // ambient dimension of the drawing
  std::vector<std::array<double, 3>> basis;   // dim period vectors
  std::vector<std::array<double, 3>> offsets; // s class positions
  std::vector<int> degrees;                   // per class
  std::vector<EdgeRule> edges;                // closed under reversal
  std::vector<FlatBand> flat_bands;           // dispersionless levels, if any

  bool is_flat_value(double lambda, double tol = 1e-10) const {
    for (const auto& fb : flat_bands)
      if (std::abs(lambda - fb.value) < tol) return true;
    return false;
  }
};

namespace detail {

inline std::array<double, 3> vec3(double a, double b = 0.0, double c = 0.0) {
  return {a, b, c};
}

inline std::array<int, 3> shift3(int a, int b = 0, int c = 0) { return {a, b, c}; }

inline void add_edge_pair(LatticeSpec& L, int from, int to, std::array<int, 3> m) {
  L.edges.push_back({from, to, m});
  L.edges.push_back({to, from, {-m[0], -m[1], -m[2]}});
}

}  // namespace detail

void validate_lattice(const LatticeSpec& L);

inline LatticeSpec build_lattice(const std::string& name, int dim) {
  using detail::add_edge_pair;
  using detail::shift3;
  using detail::vec3;
  const double r3 = std::sqrt(3.0);
  LatticeSpec L;
  L.name = name;
  L.dim = dim;

  auto need_dim = [&](int lo, int hi) {
    if (dim < lo || dim > hi)
      fail_config("UnsupportedDimension",
                  name + " supports dim in [" + std::to_string(lo) + "," +
                      std::to_string(hi) + "], got " + std::to_string(dim));
  };

  if (name == "square") {
    need_dim(1, 3);
    L.num_classes = 1;
    L.embed_dim = dim;
    for (int j = 0; j < dim; ++j) {
      std::array<double, 3> e{0, 0, 0};
      e[static_cast<std::size_t>(j)] = 1.0;
      L.basis.push_back(e);
    }
    L.offsets = {vec3(0)};
    L.degrees = {2 * dim};
    for (int j = 0; j < dim; ++j) {
      std::array<int, 3> m{0, 0, 0};
      m[static_cast<std::size_t>(j)] = 1;
      add_edge_pair(L, 0, 0, m);
    }
  } else if (name == "triangular") {
    need_dim(2, 2);
    L.num_classes = 1;
    L.embed_dim = 2;
    L.basis = {vec3(1, 0), vec3(0.5, 0.5 * r3)};
    L.offsets = {vec3(0)};
    L.degrees = {6};
    add_edge_pair(L, 0, 0, shift3(1, 0));
    add_edge_pair(L, 0, 0, shift3(0, 1));
    add_edge_pair(L, 0, 0, shift3(1, -1));
  } else if (name == "hexagonal") {
    need_dim(2, 2);
    L.num_classes = 2;
    L.embed_dim = 2;
    L.basis = {vec3(1.5, 0.5 * r3), vec3(0, r3)};
    L.offsets = {vec3(0.5, -0.5 * r3), vec3(1, 0)};
    L.degrees = {3, 3};
    add_edge_pair(L, 0, 1, shift3(0, 0));
    add_edge_pair(L, 0, 1, shift3(-1, 0));
    add_edge_pair(L, 0, 1, shift3(0, -1));
  } else if (name == "kagome") {
    need_dim(2, 2);
    L.num_classes = 3;
    L.embed_dim = 2;
    L.basis = {vec3(0.5, 0.5 * r3), vec3(-0.5, 0.5 * r3)};
    L.offsets = {vec3(0, 0), vec3(0.5, 0), vec3(0.25, 0.25 * r3)};
    L.degrees = {4, 4, 4};
    add_edge_pair(L, 0, 1, shift3(0, 0));
    add_edge_pair(L, 0, 1, shift3(-1, 1));
    add_edge_pair(L, 0, 2, shift3(0, 0));
    add_edge_pair(L, 0, 2, shift3(-1, 0));
    add_edge_pair(L, 1, 2, shift3(0, 0));
    add_edge_pair(L, 1, 2, shift3(0, -1));
    L.flat_bands = {{0.5, 1}};
  } else if (name == "diamond") {
    need_dim(2, 3);
    L.num_classes = 2;
    L.embed_dim = dim;
    for (int j = 0; j < dim; ++j) {
      std::array<double, 3> e{0, 0, 0};
      e[static_cast<std::size_t>(j)] = 1.0;
      L.basis.push_back(e);
    }
    L.offsets = {vec3(0), vec3(0.5, 0.5, dim == 3 ? 0.5 : 0.0)};
    L.degrees = {dim + 1, dim + 1};
    add_edge_pair(L, 0, 1, shift3(0, 0));
    for (int j = 0; j < dim; ++j) {
      std::array<int, 3> m{0, 0, 0};
      m[static_cast<std::size_t>(j)] = -1;
      add_edge_pair(L, 0, 1, m);
    }
  } else if (name == "subdivision-square") {
    need_dim(2, 3);
    L.num_classes = dim + 1;
    L.embed_dim = dim;
    for (int j = 0; j < dim; ++j) {
      std::array<double, 3> e{0, 0, 0};
      e[static_cast<std::size_t>(j)] = 1.0;
      L.basis.push_back(e);
    }
    L.offsets.push_back(vec3(0));
    for (int j = 0; j < dim; ++j) {
      std::array<double, 3> p{0, 0, 0};
      p[static_cast<std::size_t>(j)] = 0.5;
      L.offsets.push_back(p);
    }
    L.degrees.assign(static_cast<std::size_t>(dim + 1), 2);
    L.degrees[0] = 2 * dim;
    for (int j = 0; j < dim; ++j) {
      std::array<int, 3> m{0, 0, 0};
      add_edge_pair(L, 0, j + 1, m);
      m[static_cast<std::size_t>(j)] = -1;
      add_edge_pair(L, 0, j + 1, m);
    }
    L.flat_bands = {{0.0, dim - 1}};
  } else if (name == "ladder-square") {
    need_dim(2, 3);
    L.num_classes = 2;
    L.embed_dim = dim + 1;
    for (int j = 0; j < dim; ++j) {
      std::array<double, 3> e{0, 0, 0};
      e[static_cast<std::size_t>(j)] = 1.0;
      L.basis.push_back(e);
    }
    std::array<double, 3> p2{0, 0, 0};
    p2[static_cast<std::size_t>(dim)] = -1.0;
    L.offsets = {vec3(0), p2};
    L.degrees = {2 * dim + 1, 2 * dim + 1};
    add_edge_pair(L, 0, 1, shift3(0, 0));
    for (int j = 0; j < dim; ++j) {
      std::array<int, 3> m{0, 0, 0};
      m[static_cast<std::size_t>(j)] = 1;
      add_edge_pair(L, 0, 0, m);
      add_edge_pair(L, 1, 1, m);
    }
  } else if (name == "graphite") {
    need_dim(2, 2);  // two quasimomenta; the drawing lives in R^3
    L.num_classes = 4;
    L.embed_dim = 3;
    L.basis = {vec3(1.5, 0.5 * r3, 0), vec3(0, r3, 0)};
    L.offsets = {vec3(0.5, -0.5 * r3, 0), vec3(1, 0, 0), vec3(0.5, -0.5 * r3, -1),
                 vec3(1, 0, -1)};
    L.degrees = {4, 4, 4, 4};
    add_edge_pair(L, 0, 2, shift3(0, 0));
    add_edge_pair(L, 1, 3, shift3(0, 0));
    add_edge_pair(L, 0, 1, shift3(0, 0));
    add_edge_pair(L, 0, 1, shift3(-1, 0));
    add_edge_pair(L, 0, 1, shift3(0, -1));
    add_edge_pair(L, 2, 3, shift3(0, 0));
    add_edge_pair(L, 2, 3, shift3(-1, 0));
    add_edge_pair(L, 2, 3, shift3(0, -1));
  } else {
    fail_config("UnknownLattice", "no lattice named '" + name + "'");
  }

  validate_lattice(L);
  return L;
}

inline std::vector<std::string> lattice_names() {
  return {"square",  "triangular",         "hexagonal",     "kagome",
          "diamond", "subdivision-square", "ladder-square", "graphite"};
}

inline void validate_lattice(const LatticeSpec& L) {
  const std::size_t s = static_cast<std::size_t>(L.num_classes);
  if (L.dim < 1 || L.dim > 3) fail_config("UnsupportedDimension", L.name);
  if (s == 0 || L.offsets.size() != s || L.degrees.size() != s)
    fail_internal("BadCatalogEntry", L.name + ": class count mismatch");
  if (L.basis.size() != static_cast<std::size_t>(L.dim))
    fail_internal("BadCatalogEntry", L.name + ": basis count mismatch");

  // Reversal closure and degree bookkeeping.
  std::multiset<std::string> keys;
  auto key = [](const EdgeRule& e) {
    return std::to_string(e.from) + "|" + std::to_string(e.to) + "|" +
           std::to_string(e.shift[0]) + "," + std::to_string(e.shift[1]) + "," +
           std::to_string(e.shift[2]);
  };
  std::vector<int> count(s, 0);
  for (const auto& e : L.edges) {
    if (e.from < 0 || e.from >= L.num_classes || e.to < 0 || e.to >= L.num_classes)
      fail_domain("NonSymmetricEdges", L.name + ": rule references unknown class");
    for (int k = L.dim; k < 3; ++k)
      if (e.shift[static_cast<std::size_t>(k)] != 0)
        fail_domain("NonSymmetricEdges", L.name + ": shift beyond lattice dim");
    if (e.from == e.to && e.shift == std::array<int, 3>{0, 0, 0})
      fail_domain("NonSymmetricEdges", L.name + ": self-loop rule");
    keys.insert(key(e));
    ++count[static_cast<std::size_t>(e.from)];
  }
  for (const auto& e : L.edges) {
    EdgeRule rev{e.to, e.from, {-e.shift[0], -e.shift[1], -e.shift[2]}};
    if (keys.count(key(rev)) != keys.count(key(e)))
      fail_domain("NonSymmetricEdges", L.name + ": reversal closure violated");
  }
  for (std::size_t j = 0; j < s; ++j)
    if (count[j] != L.degrees[j])
      fail_internal("BadCatalogEntry", L.name + ": degree table mismatch");
}

// Floquet matrix at quasimomentum x: Hermitian s x s with
// H(j,k) = -sum_rules e^{-i m.x} / sqrt(deg_j deg_k).
inline MatrixXcd bloch_matrix(const LatticeSpec& L, const VectorXd& x) {
  const int s = L.num_classes;
  MatrixXcd H = MatrixXcd::Zero(s, s);
  for (const auto& e : L.edges) {
    double phase = 0.0;
    for (int k = 0; k < L.dim; ++k) phase -= e.shift[static_cast<std::size_t>(k)] * x[k];
    double c = -1.0 / std::sqrt(double(L.degrees[static_cast<std::size_t>(e.from)]) *
                                double(L.degrees[static_cast<std::size_t>(e.to)]));
    H(e.from, e.to) += c * cd(std::cos(phase), std::sin(phase));
  }
  return H;
}

// d/dx_axis of the Floquet matrix: each term picks up -i m_axis.
inline MatrixXcd bloch_matrix_derivative(const LatticeSpec& L, const VectorXd& x,
                                         int axis) {
  const int s = L.num_classes;
  MatrixXcd D = MatrixXcd::Zero(s, s);
  for (const auto& e : L.edges) {
    int m = e.shift[static_cast<std::size_t>(axis)];
    if (m == 0) continue;
    double phase = 0.0;
    for (int k = 0; k < L.dim; ++k) phase -= e.shift[static_cast<std::size_t>(k)] * x[k];
    double c = -1.0 / std::sqrt(double(L.degrees[static_cast<std::size_t>(e.from)]) *
                                double(L.degrees[static_cast<std::size_t>(e.to)]));
    D(e.from, e.to) += c * cd(0, -m) * cd(std::cos(phase), std::sin(phase));
  }
  return D;
}

// ---------------------------------------------------------------------
// Real-space windows

enum class WindowBoundary { Dirichlet, Periodic };

// Finite section of the free operator. Dirichlet windows take cells with
// |n_i| <= radius and simply drop entries to absent neighbours (degrees
// are not renormalized). Periodic windows tile a torus of 2*radius cells
// per axis, whose spectrum is exactly the union of Floquet eigenvalues
// over the discrete momenta 2*pi*k/(2*radius).
struct RealSpaceWindow {
  LatticeSpec lattice;
  int radius = 0;
  WindowBoundary boundary = WindowBoundary::Dirichlet;
  int cells_per_axis = 0;
  long cell_count = 0;
  long num_sites = 0;
  Eigen::SparseMatrix<double> h;

  long cell_index(const std::array<int, 3>& n) const {
    long idx = 0;
    for (int k = 0; k < lattice.dim; ++k) {
      long c = n[static_cast<std::size_t>(k)];
      if (boundary == WindowBoundary::Dirichlet) {
        c += radius;
        if (c < 0 || c >= cells_per_axis) return -1;
      } else {
        c %= cells_per_axis;
        if (c < 0) c += cells_per_axis;
      }
      idx = idx * cells_per_axis + c;
    }
    return idx;
  }

  std::array<int, 3> cell_coords(long cell) const {
    std::array<int, 3> n{0, 0, 0};
    for (int k = lattice.dim - 1; k >= 0; --k) {
      long c = cell % cells_per_axis;
      cell /= cells_per_axis;
      n[static_cast<std::size_t>(k)] =
          static_cast<int>(boundary == WindowBoundary::Dirichlet ? c - radius : c);
    }
    return n;
  }

  long site_index(int cls, const std::array<int, 3>& n) const {
    long c = cell_index(n);
    return c < 0 ? -1 : c * lattice.num_classes + cls;
  }

  bool is_interior(long site) const {
    // Interior = all catalog neighbours are present in the window.
    if (boundary == WindowBoundary::Periodic) return true;
    long cell = site / lattice.num_classes;
    int cls = static_cast<int>(site % lattice.num_classes);
    auto n = cell_coords(cell);
    for (const auto& e : lattice.edges) {
      if (e.from != cls) continue;
      std::array<int, 3> m = n;
      for (int k = 0; k < 3; ++k) m[static_cast<std::size_t>(k)] += e.shift[static_cast<std::size_t>(k)];
      if (cell_index(m) < 0) return false;
    }
    return true;
  }
};

inline RealSpaceWindow realspace_window(const LatticeSpec& L, int radius,
                                        WindowBoundary boundary = WindowBoundary::Dirichlet) {
  if (radius < 1) fail_config("BadWindow", "radius must be >= 1");
  RealSpaceWindow W;
  W.lattice = L;
  W.radius = radius;
  W.boundary = boundary;
  W.cells_per_axis = boundary == WindowBoundary::Dirichlet ? 2 * radius + 1 : 2 * radius;
  W.cell_count = 1;
  for (int k = 0; k < L.dim; ++k) W.cell_count *= W.cells_per_axis;
  W.num_sites = W.cell_count * L.num_classes;

  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(W.num_sites) * L.edges.size() /
                static_cast<std::size_t>(L.num_classes));
  for (long cell = 0; cell < W.cell_count; ++cell) {
    auto n = W.cell_coords(cell);
    for (const auto& e : L.edges) {
      std::array<int, 3> m = n;
      for (int k = 0; k < 3; ++k)
        m[static_cast<std::size_t>(k)] += e.shift[static_cast<std::size_t>(k)];
      long target_cell = W.cell_index(m);
      if (target_cell < 0) continue;
      long row = cell * L.num_classes + e.from;
      long col = target_cell * L.num_classes + e.to;
      double c = -1.0 / std::sqrt(double(L.degrees[static_cast<std::size_t>(e.from)]) *
                                  double(L.degrees[static_cast<std::size_t>(e.to)]));
      trips.emplace_back(static_cast<int>(row), static_cast<int>(col), c);
    }
  }
  W.h.resize(static_cast<int>(W.num_sites), static_cast<int>(W.num_sites));
  W.h.setFromTriplets(trips.begin(), trips.end());
  return W;
}

// ---------------------------------------------------------------------
// Serialization

inline void to_json(nlohmann::ordered_json& j, const LatticeSpec& L) {
  j = nlohmann::ordered_json::object();
  j["name"] = L.name;
  j["dim"] = L.dim;
  j["num_classes"] = L.num_classes;
  j["embed_dim"] = L.embed_dim;
  auto trim = [&](const std::array<double, 3>& v) {
    std::vector<double> out;
    for (int k = 0; k < L.embed_dim; ++k) out.push_back(v[static_cast<std::size_t>(k)]);
    return out;
  };
  for (const auto& b : L.basis) j["basis"].push_back(trim(b));
  for (const auto& p : L.offsets) j["offsets"].push_back(trim(p));
  j["degrees"] = L.degrees;
  for (const auto& e : L.edges) {
    std::vector<int> m;
    for (int k = 0; k < L.dim; ++k) m.push_back(e.shift[static_cast<std::size_t>(k)]);
    j["edges"].push_back({{"from", e.from}, {"to", e.to}, {"shift", m}});
  }
  for (const auto& fb : L.flat_bands)
    j["flat_bands"].push_back({{"value", fb.value}, {"multiplicity", fb.multiplicity}});
  if (L.flat_bands.empty()) j["flat_bands"] = nlohmann::ordered_json::array();
}

}  // namespace latspec
