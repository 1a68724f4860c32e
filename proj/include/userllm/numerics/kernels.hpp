#pragma once

// Forward-only dense kernels. The autograd ops in autograd.hpp reuse these
// for their forward pass; they are also usable directly on Eigen matrices.

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>

#include "userllm/numerics/tensor.hpp"

namespace userllm {

inline BoolMatrix causal_mask(Eigen::Index n) {
  BoolMatrix mask(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) mask(i, j) = j <= i;
  return mask;
}

/// Row-wise softmax restricted to allowed positions. Masked entries are 0.
template <typename Scalar>
Matrix<Scalar> softmax_rows(const Matrix<Scalar>& scores, const BoolMatrix* allowed = nullptr) {
  if (allowed && (allowed->rows() != scores.rows() || allowed->cols() != scores.cols())) {
    throw std::invalid_argument("softmax_rows: mask shape does not match scores");
  }
  Matrix<Scalar> out(scores.rows(), scores.cols());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Scalar max_value = -std::numeric_limits<Scalar>::infinity();
    bool any = false;
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      if (allowed && !(*allowed)(i, j)) continue;
      any = true;
      max_value = std::max(max_value, scores(i, j));
    }
    if (!any) throw std::invalid_argument("softmax_rows: row " + std::to_string(i) + " is fully masked");
    Scalar total = 0;
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      if (allowed && !(*allowed)(i, j)) {
        out(i, j) = 0;
        continue;
      }
      out(i, j) = std::exp(scores(i, j) - max_value);
      total += out(i, j);
    }
    out.row(i) /= total;
  }
  return out;
}

/// softmax(Q·Kᵀ/√d over allowed keys)·V for a single head.
template <typename Scalar>
Matrix<Scalar> scaled_dot_attention(const Matrix<Scalar>& q, const Matrix<Scalar>& k, const Matrix<Scalar>& v,
                                    const std::optional<BoolMatrix>& mask = std::nullopt) {
  if (q.cols() != k.cols()) throw std::invalid_argument("scaled_dot_attention: Q and K inner dims differ");
  if (k.rows() != v.rows()) throw std::invalid_argument("scaled_dot_attention: K and V row counts differ");
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(q.cols()));
  Matrix<Scalar> scores = (q * k.transpose()) * scale;
  Matrix<Scalar> weights = softmax_rows<Scalar>(scores, mask ? &*mask : nullptr);
  return weights * v;
}

/// Per-row normalization to zero mean / unit (population) variance, then
/// affine gamma/beta.
template <typename Scalar>
Matrix<Scalar> layer_norm(const Matrix<Scalar>& x, const Matrix<Scalar>& gamma, const Matrix<Scalar>& beta,
                          Scalar eps) {
  if (!(eps > 0)) throw std::invalid_argument("layer_norm: eps must be positive");
  if (gamma.size() != x.cols() || beta.size() != x.cols()) {
    throw std::invalid_argument("layer_norm: gamma/beta width does not match input");
  }
  Matrix<Scalar> out(x.rows(), x.cols());
  const Scalar width = static_cast<Scalar>(x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar mean = x.row(i).sum() / width;
    const Scalar var = (x.row(i).array() - mean).square().sum() / width;
    const Scalar inv_std = Scalar(1) / std::sqrt(var + eps);
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      out(i, j) = (x(i, j) - mean) * inv_std * gamma.data()[j] + beta.data()[j];
    }
  }
  return out;
}

template <typename Scalar>
Matrix<Scalar> log_softmax_rows(const Matrix<Scalar>& logits) {
  Matrix<Scalar> out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Scalar max_value = logits.row(i).maxCoeff();
    const Scalar lse = max_value + std::log((logits.row(i).array() - max_value).exp().sum());
    out.row(i) = logits.row(i).array() - lse;
  }
  return out;
}

/// −log softmax(logits)[target] for one row of logits.
template <typename Scalar>
Scalar cross_entropy(const Matrix<Scalar>& logits, int target) {
  if (logits.rows() != 1) throw std::invalid_argument("cross_entropy: expected a single row of logits");
  if (target < 0 || target >= logits.cols()) {
    throw std::out_of_range("cross_entropy: target " + std::to_string(target) + " outside [0, " +
                            std::to_string(logits.cols()) + ")");
  }
  return -log_softmax_rows<Scalar>(logits)(0, target);
}

// tanh approximation of GELU and its derivative.
template <typename Scalar>
Scalar gelu(Scalar x) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  const Scalar inner = static_cast<Scalar>(kC) * (x + Scalar(0.044715) * x * x * x);
  return Scalar(0.5) * x * (Scalar(1) + std::tanh(inner));
}

template <typename Scalar>
Scalar gelu_derivative(Scalar x) {
  constexpr double kC = 0.7978845608028654;
  const Scalar inner = static_cast<Scalar>(kC) * (x + Scalar(0.044715) * x * x * x);
  const Scalar t = std::tanh(inner);
  const Scalar d_inner = static_cast<Scalar>(kC) * (Scalar(1) + Scalar(3 * 0.044715) * x * x);
  return Scalar(0.5) * (Scalar(1) + t) + Scalar(0.5) * x * (Scalar(1) - t * t) * d_inner;
}

}  // namespace userllm
