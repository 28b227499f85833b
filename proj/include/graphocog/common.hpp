#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace graphocog {

inline constexpr const char* kVersion = "graphocog 0.1.0";

enum class ErrorCode {
  ParseError,
  UnknownGroup,
  UnknownTask,
  MissingFile,
  TooShort,
  NonFinite,
  NonMonotoneTime,
  DegenerateTime,
  InvalidLength,
  EmptySignal,
  UnknownChannel,
  LengthMismatch,
  InvalidWindow,
  ShapeMismatch,
  EmptyFrameList,
  EmptySequence,
  TooFewSubjects,
  EmptyTestSet,
  EmptyTaskSubset,
  DuplicateCombination,
  InvalidConfig,
  IoError,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + msg), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

// Process exit codes used by the CLI (documented in README):
// 0 ok, 1 config, 2 io, 3 data, 4 cohort, 5 shape.
int exit_code_for(ErrorCode code);

// Deterministic RNG. All randomness in the project goes through this class so
// that runs reproduce bit-exactly across platforms (mt19937_64 output is
// standardized; the real-valued mappings below avoid libstdc++
// distributions, whose output is implementation-defined).
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // [0, 1) with 53-bit resolution.
  double next_double() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Inclusive bounds.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(gen_() % span);
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    if (has_spare_) {
      has_spare_ = false;
      return mean + stddev * spare_;
    }
    double u1 = 0.0;
    do {
      u1 = next_double();
    } while (u1 <= 0.0);
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return mean + stddev * r * std::cos(theta);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(uniform_int(0, static_cast<int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// splitmix64 finalizer; used to derive independent child seeds
// (per fold, per subject, per task) from a master seed.
uint64_t mix64(uint64_t x);
uint64_t derive_seed(uint64_t master, uint64_t stream, uint64_t index);

// FNV-1a over bytes; used for config hashes in run metadata.
uint64_t fnv1a64(std::string_view bytes);
std::string hex64(uint64_t v);

}  // namespace graphocog
