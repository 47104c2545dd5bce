#include "wmf/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "wmf/ops.hpp"

namespace wmf {

double relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor) {
  double diff = 0, na = 0, nn = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), floor});
}

GradcheckResult gradcheck(const std::function<Tensor(std::span<const Tensor>)>& fn,
                          std::vector<Tensor> inputs, const GradcheckOptions& options) {
  std::vector<bool> saved_flags;
  for (Tensor& t : inputs) {
    saved_flags.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor root = fn(inputs);
    tape.backward(root);
  }

  GradcheckResult result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor& t = inputs[k];
    const Tensor grad = t.grad();
    const auto n = static_cast<std::size_t>(t.numel());
    std::size_t stride = 1;
    if (options.max_coords_per_input && n > options.max_coords_per_input)
      stride = (n + options.max_coords_per_input - 1) / options.max_coords_per_input;

    std::vector<double> analytic, numeric;
    NoGradScope no_grad;
    std::vector<signed char> base_signs;
    if (options.skip_kink_crossings) {
      ops::SignProbe probe;
      fn(inputs);
      base_signs = probe.signs();
    }
    for (std::size_t i = 0; i < n; i += stride) {
      const double x0 = t.at(i);
      ops::SignProbe probe;
      t.set(i, x0 + options.eps);
      const double fp = fn(inputs).item();
      const bool plus_same = probe.signs() == base_signs;
      probe.clear();
      t.set(i, x0 - options.eps);
      const double fm = fn(inputs).item();
      const bool minus_same = probe.signs() == base_signs;
      t.set(i, x0);
      if (options.skip_kink_crossings && !(plus_same && minus_same)) {
        ++result.coords_skipped;
        continue;
      }
      analytic.push_back(grad.at(i));
      numeric.push_back((fp - fm) / (2 * options.eps));
    }
    const double err = relative_error(analytic, numeric, options.norm_floor);
    result.coords_checked += analytic.size();
    if (err > result.max_rel_error) {
      result.max_rel_error = err;
      result.worst_input = k;
    }
  }
  for (std::size_t k = 0; k < inputs.size(); ++k) inputs[k].set_requires_grad(saved_flags[k]);
  return result;
}

}  // namespace wmf
