// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "odisr/tensor.hpp"

namespace odisr {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
  /// Coordinates whose stencil straddled a kink (see skip_kinks).
  std::size_t skipped = 0;
};

struct GradCheckOptions {
  double step = 1e-5;
  /// Coordinates probed per call; 0 probes every coordinate of every input.
  std::size_t max_coordinates = 0;
  std::uint64_t seed = 0;
  /// Leave out coordinates whose +h and -h evaluations land on different
  /// linear pieces of a ReLU, abs or bilinear sample. Central differences
  /// are no oracle there; such coordinates are counted in `skipped`.
  bool skip_kinks = false;
};

/// Compare reverse-mode gradients of the scalar `f` with central
/// differences, perturbing the 64-bit `inputs` in place (restored after).
/// Error per coordinate is |g_ad - g_fd| / max(1, |g_ad|, |g_fd|); the
/// maximum is returned. Throws NumericError on a non-finite evaluation.
GradCheckResult grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs,
                           GradCheckOptions options = {});

}  // namespace odisr
