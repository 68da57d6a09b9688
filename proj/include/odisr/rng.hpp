// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>

namespace odisr {

/// Philox4x32-10 counter-based generator. The state is fully described by
/// (seed, stream, position), where position counts 32-bit words drawn, so
/// a run can be resumed exactly by persisting position().
class Philox {
 public:
  explicit Philox(std::uint64_t seed = 0, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream) {}

  /// The raw 4x32 block for counter (block, stream) under this key.
  std::array<std::uint32_t, 4> block(std::uint64_t index) const;

  std::uint32_t next_u32();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Standard normal (Box-Muller, no cached second value).
  double normal();
  /// Normal with standard deviation `sigma`, redrawn until |x| <= 2 sigma.
  double truncated_normal(double sigma);
  /// Uniform integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::uint64_t position() const { return position_; }
  void seek(std::uint64_t position) { position_ = position; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t position_ = 0;
};

}  // namespace odisr
