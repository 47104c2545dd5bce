#pragma once

// Finite-difference verification harness shared by the test suites and the
// `gradcheck` CLI command.

#include <string>
#include <vector>

#include "wmf/tensor.hpp"

namespace wmf::verify {

struct GradcheckRow {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t coords = 0;
  std::size_t skipped = 0;  // coordinates whose step crossed an |x| kink
  bool passed() const { return max_rel_error <= tolerance; }
};

// Every primitive op on at least three randomized shapes. Tolerance 1e-4.
std::vector<GradcheckRow> gradcheck_ops(DType dtype = DType::F64, double eps = 1e-5);
// MDTA, GDFN, and full Transformer block over all parameters. Tolerance 1e-3.
std::vector<GradcheckRow> gradcheck_block(DType dtype = DType::F64, double eps = 1e-5);
// Tiny end-to-end network (C=2, 16x16) through the weighted deep-supervised loss.
std::vector<GradcheckRow> gradcheck_net(DType dtype = DType::F64, double eps = 1e-5);

}  // namespace wmf::verify
