#pragma once

#include <cstdint>
#include <random>

#include "userllm/numerics/tensor.hpp"

namespace userllm {

using Rng = std::mt19937_64;

/// Gaussian-initialized matrix. Samples are drawn in double so float and
/// double models built from the same seed hold the same (rounded) values.
template <typename Scalar>
Matrix<Scalar> normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix<Scalar> out(rows, cols);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = static_cast<Scalar>(dist(rng));
  return out;
}

template <typename Scalar>
Matrix<Scalar> zeros(Eigen::Index rows, Eigen::Index cols) {
  return Matrix<Scalar>::Zero(rows, cols);
}

template <typename Scalar>
Matrix<Scalar> ones(Eigen::Index rows, Eigen::Index cols) {
  return Matrix<Scalar>::Ones(rows, cols);
}

}  // namespace userllm
