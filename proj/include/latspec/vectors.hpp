#pragma once

// Finitely supported vectors over the lattice sites (cell index n in Z^d,
// vertex class j) with exact stencil application. These are the real-space
// payloads moved in and out of resolvents, spectral transforms, and
// perturbation solves.

#include <unordered_map>

#include "latspec/lattice.hpp"

namespace latspec {

using Offset = std::array<long, 3>;

struct LatticeSite {
  Offset n{0, 0, 0};
  int cls = 0;

  friend bool operator==(const LatticeSite& a, const LatticeSite& b) {
    return a.n == b.n && a.cls == b.cls;
  }
  friend bool operator<(const LatticeSite& a, const LatticeSite& b) {
    if (a.n != b.n) return a.n < b.n;
    return a.cls < b.cls;
  }
};

struct SiteHash {
  std::size_t operator()(const LatticeSite& s) const {
    // splitmix-style combine; offsets are small in practice.
    std::uint64_t h = 0x9e3779b97f4a7c15ULL;
    auto mix = [&h](std::uint64_t v) {
      h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    };
    mix(static_cast<std::uint64_t>(s.n[0]));
    mix(static_cast<std::uint64_t>(s.n[1]));
    mix(static_cast<std::uint64_t>(s.n[2]));
    mix(static_cast<std::uint64_t>(s.cls));
    return static_cast<std::size_t>(h);
  }
};

// Sparse complex function on the lattice. Duplicate site insertions
// accumulate; zero entries are kept (callers may prune).
struct LatticeVector {
  std::unordered_map<LatticeSite, cd, SiteHash> values;

  void add(const LatticeSite& s, cd v) { values[s] += v; }
  void add(const Offset& n, int cls, cd v) { values[LatticeSite{n, cls}] += v; }
  void set(const LatticeSite& s, cd v) { values[s] = v; }
  void set(const Offset& n, int cls, cd v) { values[LatticeSite{n, cls}] = v; }

  cd at(const LatticeSite& s) const {
    auto it = values.find(s);
    return it == values.end() ? cd(0.0, 0.0) : it->second;
  }
  cd at(const Offset& n, int cls) const { return at(LatticeSite{n, cls}); }

  std::size_t size() const { return values.size(); }
  bool empty() const { return values.empty(); }

  double norm() const {
    std::vector<double> terms;
    terms.reserve(values.size());
    for (const auto& [s, v] : values) terms.push_back(std::norm(v));
    return std::sqrt(pairwise_sum(terms));
  }

  // Deterministic (sorted) traversal order for reductions and output.
  std::vector<std::pair<LatticeSite, cd>> sorted_entries() const {
    std::vector<std::pair<LatticeSite, cd>> out(values.begin(), values.end());
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    return out;
  }
};

inline LatticeVector delta_vector(const Offset& n, int cls) {
  LatticeVector v;
  v.add(n, cls, cd(1.0, 0.0));
  return v;
}

// <u, v> = sum u(s) conj(v(s)), linear in the first argument.
inline cd dot(const LatticeVector& u, const LatticeVector& v) {
  const LatticeVector& small = u.size() <= v.size() ? u : v;
  const LatticeVector& big = u.size() <= v.size() ? v : u;
  std::vector<cd> terms;
  terms.reserve(small.size());
  for (const auto& [s, val] : small.sorted_entries()) {
    cd other = big.at(s);
    if (&small == &u)
      terms.push_back(val * std::conj(other));
    else
      terms.push_back(other * std::conj(val));
  }
  return pairwise_sum(terms);
}

// Exact stencil application u -> H0 u, in gather form: the output support
// is the input support dilated by one reversed rule per edge, and each row
// sums its own stencil. Rule (from, to, m) couples row (n, from) to
// u(n + m, to) with weight -1/sqrt(deg_from deg_to).
inline LatticeVector apply_h0(const LatticeSpec& L, const LatticeVector& u) {
  LatticeVector out;
  std::unordered_map<LatticeSite, char, SiteHash> rows;
  for (const auto& [s, val] : u.values) {
    (void)val;
    for (const auto& e : L.edges) {
      if (e.to != s.cls) continue;
      LatticeSite r;
      r.cls = e.from;
      r.n = s.n;
      for (int a = 0; a < 3; ++a) r.n[a] -= e.shift[a];
      rows[r] = 1;
    }
  }
  for (const auto& [r, tag] : rows) {
    (void)tag;
    cd acc(0.0, 0.0);
    for (const auto& e : L.edges) {
      if (e.from != r.cls) continue;
      LatticeSite s;
      s.cls = e.to;
      s.n = r.n;
      for (int a = 0; a < 3; ++a) s.n[a] += e.shift[a];
      cd v = u.at(s);
      if (v == cd(0.0, 0.0)) continue;
      double coef = -1.0 / std::sqrt(double(L.degrees[static_cast<std::size_t>(e.from)]) *
                                     double(L.degrees[static_cast<std::size_t>(e.to)]));
      acc += coef * v;
    }
    if (acc != cd(0.0, 0.0)) out.set(r, acc);
  }
  return out;
}

}  // namespace latspec
