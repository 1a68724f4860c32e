#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "userllm/numerics/autograd.hpp"

namespace userllm {

struct GradCheckOptions {
  /// Coordinates sampled per tensor; 0 checks every coordinate.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
  /// Denominator floor of the relative error, so coordinates whose true
  /// gradient is ~0 are compared on an absolute scale.
  double denominator_floor = 1e-5;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  std::size_t coordinates = 0;
  std::string worst;  // "<tensor index>[row,col] analytic=.. numeric=.."
};

/// Compares reverse-mode gradients against central finite differences
/// (f(p+eps) − f(p−eps)) / 2eps for every (or a sample of) coordinate of the
/// given parameters. Relative error per coordinate is
/// |a − n| / max(|a|, |n|, denominator_floor); pass iff the maximum ≤ tol.
template <typename Scalar>
GradCheckReport grad_check(const std::function<Var<Scalar>(Graph<Scalar>&)>& loss_fn,
                           const std::vector<TensorPtr<Scalar>>& params, double eps, double tol,
                           const GradCheckOptions& options = {});

}  // namespace userllm
