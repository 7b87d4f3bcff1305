#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace nlh {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};
class DomainError : public Error {
 public:
  using Error::Error;
};
class ValidationError : public Error {
 public:
  using Error::Error;
};
class ResolutionError : public Error {
 public:
  using Error::Error;
};
class SolvabilityError : public Error {
 public:
  using Error::Error;
};
class NonConvergenceError : public Error {
 public:
  using Error::Error;
};
class StepSizeError : public Error {
 public:
  using Error::Error;
};
class ContractError : public Error {
 public:
  using Error::Error;
};
class EstimationError : public Error {
 public:
  using Error::Error;
};
class MixingError : public Error {
 public:
  using Error::Error;
};
class TruncationError : public Error {
 public:
  using Error::Error;
};
class DependencyError : public Error {
 public:
  using Error::Error;
};
class NumericalError : public Error {
 public:
  using Error::Error;
};

enum class Mode { symmetric, nonsymmetric };

inline const char* to_string(Mode m) {
  return m == Mode::symmetric ? "symmetric" : "nonsymmetric";
}

using Rng = std::mt19937_64;

/// Independent generator for a (seed, stream) pair.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x6e6c68u};
  return Rng(seq);
}

/// Uniform draw in [0, 1) built from raw bits so that it is identical across standard libraries.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Standard normal draw via Box-Muller on uniform01.
double standard_normal(Rng& rng);

/// Exponential draw with the given rate.
double exponential(Rng& rng, double rate);

}  // namespace nlh
