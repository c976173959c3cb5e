#pragma once

#include <cstdint>

#include <Eigen/Core>

namespace ldebm {

/// Counter-based splittable random source.
///
/// Every draw is a pure function of (key, counter): the n-th 64-bit output is
/// mix64(key + n * 0x9E3779B97F4A7C15), where mix64 is the SplitMix64
/// finalizer. `split(i)` derives an independent stream whose key is
/// mix64(key ^ mix64(i + 0xD1B54A32D192ED03)). Normal variates use the
/// Box-Muller transform on two 53-bit uniforms, consuming exactly two
/// counter values per variate. See docs/rng.md for the full definition.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : key_(mix64(seed)) {}

  std::uint64_t next_u64() { return mix64(key_ + (++counter_) * kGolden); }

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n);

  double normal();

  /// Fills a rows x cols matrix with independent standard normals,
  /// column-major order.
  Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols);

  /// Independent child stream; does not advance this stream.
  [[nodiscard]] Rng split(std::uint64_t stream) const;

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  static std::uint64_t mix64(std::uint64_t z);

 private:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
  static constexpr std::uint64_t kSplit = 0xD1B54A32D192ED03ULL;

  struct Keyed {};
  Rng(std::uint64_t key, Keyed) : key_(key) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace ldebm
