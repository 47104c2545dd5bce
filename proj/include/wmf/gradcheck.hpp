#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "wmf/tensor.hpp"

namespace wmf {

struct GradcheckOptions {
  double eps = 1e-5;
  // Coordinates checked per input; 0 means all. Sampled coordinates are
  // spread deterministically over the tensor.
  std::size_t max_coords_per_input = 0;
  // Lower bound on the error denominator. Gradients whose norm is below this
  // are compared absolutely; round-off in deep composites needs more than 1e-8.
  double norm_floor = 1e-8;
  // Skip coordinates whose +/-eps evaluations flip the sign of any l1_mean
  // argument; central differences across a kink do not estimate the gradient.
  bool skip_kink_crossings = false;
};

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t coords_checked = 0;
  std::size_t coords_skipped = 0;
};

// ||analytic - numeric||_2 / max(||analytic||_2, ||numeric||_2, floor).
double relative_error(std::span<const double> analytic, std::span<const double> numeric,
                      double floor = 1e-8);

// Compares tape gradients of the scalar fn(inputs) with central differences.
// Inputs must be leaves; they are switched to requires_grad for the analytic
// pass and perturbed in place (then restored) for the numeric pass.
GradcheckResult gradcheck(const std::function<Tensor(std::span<const Tensor>)>& fn,
                          std::vector<Tensor> inputs, const GradcheckOptions& options = {});

}  // namespace wmf
