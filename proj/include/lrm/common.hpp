#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace lrm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Precondition violation: bad shapes, out-of-range indices, invalid configs.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// A non-finite value reached a loss or a gradient.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss; carries the offending step.
class DivergenceError : public Error {
 public:
  DivergenceError(std::int64_t step, const std::string& what)
      : Error("diverged at step " + std::to_string(step) + ": " + what), step_(step) {}
  std::int64_t step() const noexcept { return step_; }

 private:
  std::int64_t step_;
};

#define LRM_REQUIRE(cond, msg)                       \
  do {                                               \
    if (!(cond)) throw ::lrm::InvalidArgument(msg);  \
  } while (0)

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent seeds from (seed, tag...).
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) noexcept {
  return mix_seed(seed ^ mix_seed(tag));
}

template <typename... Tags>
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, Tags... rest) noexcept {
  return derive_seed(derive_seed(seed, tag), static_cast<std::uint64_t>(rest)...);
}

/// 64-bit FNV-1a; stable across platforms, used for config digests and string tags.
constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Writes a file through a sibling temporary and renames it into place.
void write_file_atomic(const std::filesystem::path& path,
                       const std::function<void(std::ostream&)>& writer, bool binary = false);

}  // namespace lrm
