#include "histoad/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "histoad/error.hpp"

namespace histoad {

namespace {
constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;
}

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_input: return "invalid-input";
    case ErrorCode::io: return "io";
    case ErrorCode::config: return "config";
    case ErrorCode::bad_magic: return "bad-magic";
    case ErrorCode::unsupported_version: return "unsupported-version";
    case ErrorCode::dim_mismatch: return "dim-mismatch";
    case ErrorCode::truncated_payload: return "truncated-payload";
    case ErrorCode::malformed_metadata: return "malformed-metadata";
    case ErrorCode::undefined_similarity: return "undefined-similarity";
    case ErrorCode::single_class: return "single-class";
    case ErrorCode::numeric: return "numeric";
  }
  return "unknown";
}

std::uint64_t CounterRng::mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t CounterRng::next_u64() {
  ++counter_;
  return mix(key_ + counter_ * kGamma);
}

double CounterRng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double CounterRng::uniform_open_low() {
  return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
}

std::uint64_t CounterRng::uniform_index(std::uint64_t n) {
  require(n > 0, ErrorCode::invalid_input, "uniform_index: empty range");
  // Rejection keeps the draw exactly uniform.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % n;
}

double CounterRng::normal() {
  const double u1 = uniform_open_low();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

CounterRng CounterRng::split(std::uint64_t stream_id) const {
  CounterRng child;
  child.key_ = mix(key_ ^ mix(stream_id + kGamma));
  return child;
}

}  // namespace histoad
