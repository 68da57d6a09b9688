// SPDX-License-Identifier: Apache-2.0
#include "odisr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "odisr/rng.hpp"

namespace odisr {

GradCheckResult grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& inputs,
                           GradCheckOptions options) {
  for (const auto& t : inputs) {
    if (t.dtype() != DType::f64) throw ConfigError("grad_check requires 64-bit inputs");
    if (!t.requires_grad()) throw ConfigError("grad_check input does not require grad");
  }
  for (auto t : inputs) t.zero_grad();
  {
    Tensor y = f();
    if (!std::isfinite(y.item())) throw NumericError("grad_check: non-finite value at the base point");
    y.backward();
  }

  // (input, flat index) pairs to probe.
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  std::size_t total = 0;
  for (const auto& t : inputs) total += t.numel();
  if (options.max_coordinates == 0 || options.max_coordinates >= total) {
    for (std::size_t i = 0; i < inputs.size(); ++i)
      for (std::size_t j = 0; j < inputs[i].numel(); ++j) coords.emplace_back(i, j);
  } else {
    Philox rng(options.seed, 0x67726164);
    for (std::size_t n = 0; n < options.max_coordinates; ++n) {
      std::uint64_t flat = rng.below(total);
      std::size_t i = 0;
      while (flat >= inputs[i].numel()) flat -= inputs[i++].numel();
      coords.emplace_back(i, static_cast<std::size_t>(flat));
    }
  }

  GradCheckResult result;
  NoGradGuard no_grad;
  const double h = options.step;
  for (auto [i, j] : coords) {
    Tensor t = inputs[i];
    auto data = t.mutable_data<double>();
    const double analytic = t.has_grad() ? t.grad_buffer().view<double>()[j] : 0.0;
    const double saved = data[j];
    std::optional<PieceLog> plus, minus;
    data[j] = saved + h;
    if (options.skip_kinks) plus.emplace();
    const double fp = f().item();
    data[j] = saved - h;
    if (options.skip_kinks) minus.emplace();
    const double fm = f().item();
    data[j] = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("grad_check: non-finite value perturbing coordinate " +
                         std::to_string(j) + " of input " + std::to_string(i));
    if (options.skip_kinks && plus->pieces() != minus->pieces()) {
      ++result.skipped;
      continue;
    }
    const double numeric = (fp - fm) / (2.0 * h);
    const double err = std::abs(analytic - numeric) /
                       std::max({1.0, std::abs(analytic), std::abs(numeric)});
    if (err >= result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_input = i;
      result.worst_index = j;
    }
  }
  result.coordinates = coords.size();
  return result;
}

}  // namespace odisr
