#ifndef FEDRANE_RNG_HPP_
#define FEDRANE_RNG_HPP_

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

namespace fedrane {

/// SplitMix64 finalizer; mixes a 64-bit word into a well-distributed one.
std::uint64_t splitmix64(std::uint64_t x);

/// Derives an independent stream seed from a master seed and a tuple of
/// counters (client, round, epoch, ...). Order-sensitive.
std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> counters);

/// Portable random source.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. The standard's distributions are implementation-defined, so every
/// transform below is written out here: uniforms take the top 53 bits, normals
/// use Box-Muller, gammas use Marsaglia-Tsang, shuffles use Fisher-Yates.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1).
  double uniform();
  /// Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  /// Gamma(shape, 1).
  double gamma(double shape);
  /// Dirichlet(alpha, ..., alpha) of dimension k, as normalized gamma draws.
  std::vector<double> dirichlet(std::size_t k, double alpha);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fedrane

#endif  // FEDRANE_RNG_HPP_
