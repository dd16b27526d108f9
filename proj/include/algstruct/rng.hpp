#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace algstruct {

// All randomness flows from one root seed. Each consumer asks for a named
// sub-stream so components can be re-run independently of one another.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream);

// Thin wrapper around mt19937_64 whose distributions are defined here rather
// than by the standard library, so sequences are identical across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t root, std::string_view stream) : engine_(derive_seed(root, stream)) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound);
  // Uniform real in [0, 1) with 53 bits.
  double uniform();
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace algstruct
