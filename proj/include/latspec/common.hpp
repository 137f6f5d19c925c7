#pragma once

// Shared aliases, error taxonomy, deterministic RNG, summation and
// parallel helpers used across the library.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

namespace latspec {

using cd = std::complex<double>;
using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXcd;
using Eigen::VectorXd;

inline constexpr double kPi = 3.141592653589793238462643383279502884;
inline constexpr double kTwoPi = 2.0 * kPi;

// Pinned numeric defaults. These are part of the external contract and
// are echoed into reports; change only together with the golden files.
namespace defaults {
inline constexpr double gap_tol = 1e-8;
inline constexpr double surf_tol = 1e-10;
inline constexpr double threshold_exclusion = 1e-3;
inline constexpr int grid_n_2d = 256;
inline constexpr int grid_n_3d = 64;
inline constexpr double sing_tol = 1e-8;
inline constexpr double resid_tol = 1e-8;
inline constexpr double ls_tol = 1e-6;
}  // namespace defaults

// Error kinds map onto process exit codes: config errors exit 2,
// mathematical domain errors exit 3, internal failures exit 4.
enum class ErrorKind : int { Config = 2, Domain = 3, Internal = 4 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string code, const std::string& detail)
      : std::runtime_error(code + ": " + detail), kind_(kind), code_(std::move(code)) {}
  ErrorKind kind() const { return kind_; }
  const std::string& code() const { return code_; }

 private:
  ErrorKind kind_;
  std::string code_;
};

[[noreturn]] inline void fail_config(const std::string& code, const std::string& detail) {
  throw Error(ErrorKind::Config, code, detail);
}
[[noreturn]] inline void fail_domain(const std::string& code, const std::string& detail) {
  throw Error(ErrorKind::Domain, code, detail);
}
[[noreturn]] inline void fail_internal(const std::string& code, const std::string& detail) {
  throw Error(ErrorKind::Internal, code, detail);
}

// Counter-based generator: the k-th draw is a pure function of (seed, k),
// so streams can be split and replayed independently of call order.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed ^ (0x9e3779b97f4a7c15ULL * (stream + 1))) {}

  std::uint64_t next_u64() { return mix(seed_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

  // Uniform in [0,1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  double normal() {
    // Box-Muller; consumes two draws, discards the second variate.
    double u1 = 0.0;
    while (u1 == 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
  }

  cd complex_normal() {
    double u1 = 0.0;
    while (u1 == 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-std::log(u1));
    return {r * std::cos(kTwoPi * u2), r * std::sin(kTwoPi * u2)};
  }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(next_u64() % static_cast<std::uint64_t>(hi - lo + 1));
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ULL;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return z;
  }
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

// Pairwise summation: O(log n) error growth and a fixed association
// order, so results do not depend on accumulation chunking.
template <class T>
T pairwise_sum(const T* data, std::size_t n) {
  if (n == 0) return T(0);
  if (n <= 8) {
    T acc = data[0];
    for (std::size_t i = 1; i < n; ++i) acc += data[i];
    return acc;
  }
  std::size_t half = n / 2;
  return pairwise_sum(data, half) + pairwise_sum(data + half, n - half);
}

template <class T>
T pairwise_sum(const std::vector<T>& v) {
  return pairwise_sum(v.data(), v.size());
}

inline unsigned thread_count() {
  if (const char* env = std::getenv("LATTICE_SPECTRA_THREADS")) {
    long v = std::strtol(env, nullptr, 10);
    if (v >= 1 && v <= 256) return static_cast<unsigned>(v);
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1u : hw;
}

// Splits [0,n) into chunks whose boundaries depend only on n, runs
// fn(chunk_index, begin, end) possibly in parallel, and guarantees the
// same chunk decomposition for every thread count. Callers reduce
// per-chunk results in chunk order to stay deterministic.
template <class F>
void parallel_chunks(std::size_t n, F&& fn, std::size_t* out_num_chunks = nullptr) {
  if (n == 0) {
    if (out_num_chunks) *out_num_chunks = 0;
    return;
  }
  const std::size_t target_chunks = 64;
  std::size_t chunk = std::max<std::size_t>(1, (n + target_chunks - 1) / target_chunks);
  std::size_t num_chunks = (n + chunk - 1) / chunk;
  if (out_num_chunks) *out_num_chunks = num_chunks;

  unsigned workers = std::min<unsigned>(thread_count(), static_cast<unsigned>(num_chunks));
  if (workers <= 1) {
    for (std::size_t c = 0; c < num_chunks; ++c)
      fn(c, c * chunk, std::min(n, (c + 1) * chunk));
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mu;
  auto work = [&] {
    for (;;) {
      std::size_t c = next.fetch_add(1);
      if (c >= num_chunks) return;
      try {
        fn(c, c * chunk, std::min(n, (c + 1) * chunk));
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
        return;
      }
    }
  };
  pool.reserve(workers);
  for (unsigned t = 0; t < workers; ++t) pool.emplace_back(work);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

// Deterministic parallel map-reduce: evaluates element(i) for i in [0,n),
// sums within each chunk in index order, then pairwise-sums the chunk
// totals. The result is bit-identical for any thread count.
template <class T, class F>
T parallel_reduce(std::size_t n, F&& element) {
  std::size_t num_chunks = 0;
  // First pass just to size the partials deterministically.
  const std::size_t target_chunks = 64;
  std::size_t chunk = std::max<std::size_t>(1, (n + target_chunks - 1) / target_chunks);
  num_chunks = n == 0 ? 0 : (n + chunk - 1) / chunk;
  std::vector<T> partials(num_chunks, T(0));
  parallel_chunks(n, [&](std::size_t c, std::size_t b, std::size_t e) {
    T acc(0);
    for (std::size_t i = b; i < e; ++i) acc += element(i);
    partials[c] = acc;
  });
  return pairwise_sum(partials);
}

inline int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

inline double sqr(double x) { return x * x; }

}  // namespace latspec
