#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace vsa {

// Error taxonomy used across the library. The CLI maps these onto exit codes.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
  using Error::Error;
};
// Degenerate or out-of-domain numeric input (fully masked slice, log of a
// negative number, empty valid set).
struct DomainError : Error {
  using Error::Error;
};
// A caller violated an API precondition.
struct ContractError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct ParseError : Error {
  using Error::Error;
};
// Training diverged (non-finite loss).
struct NumericError : Error {
  using Error::Error;
};

using Shape = std::vector<size_t>;

inline size_t numel(const Shape& s) {
  size_t n = 1;
  for (size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? ", " : "") << s[i];
  os << "]";
  return os.str();
}

inline std::vector<size_t> row_major_strides(const Shape& s) {
  std::vector<size_t> st(s.size(), 1);
  for (size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// Named RNG streams. Every source of randomness in a run derives from one
// master seed plus a fixed stream offset, so runs replay bit-identically.
enum class RngStream : uint64_t {
  kParamInit = 1,
  kDropout = 2,
  kDataGen = 3,
  kShuffle = 4,
  kTest = 99,
};

class Rng {
 public:
  explicit Rng(uint64_t seed, RngStream stream = RngStream::kTest)
      : engine_(mix(seed, static_cast<uint64_t>(stream))) {}

  double uniform(double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    std::normal_distribution<double> d(mean, stddev);
    return d(engine_);
  }
  // Inclusive bounds.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    std::uniform_int_distribution<int64_t> d(lo, hi);
    return d(engine_);
  }
  bool bernoulli(double p) {
    std::bernoulli_distribution d(p);
    return d(engine_);
  }
  std::mt19937_64& engine() { return engine_; }

 private:
  // splitmix64 of (seed, stream) so nearby seeds give unrelated streams.
  static uint64_t mix(uint64_t seed, uint64_t stream) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  std::mt19937_64 engine_;
};

}  // namespace vsa
