#pragma once

// Tape-based reverse-mode differentiation over row-major matrices.
//
// A Graph owns every intermediate produced while evaluating one loss. Ops are
// free functions taking and returning Var handles; each records its value and
// a closure that pushes the output gradient back to its inputs. Parameters
// enter the graph through Graph::parameter(), which returns the same node for
// the same Tensor, so a tied weight accumulates gradient from every use.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "userllm/numerics/kernels.hpp"
#include "userllm/numerics/tensor.hpp"

namespace userllm {

template <typename Scalar>
class Graph;

template <typename Scalar>
struct Var {
  Graph<Scalar>* graph = nullptr;
  std::size_t id = 0;

  const Matrix<Scalar>& value() const { return graph->value(*this); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Scalar item() const;
};

template <typename Scalar>
class Graph {
 public:
  using Mat = Matrix<Scalar>;
  using Backward = std::function<void(std::size_t out)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var<Scalar> constant(Mat value);
  Var<Scalar> parameter(const TensorPtr<Scalar>& tensor);

  /// Appends a node computed from `inputs`. The backward closure is kept
  /// only when some input requires a gradient.
  Var<Scalar> record(Mat value, std::initializer_list<Var<Scalar>> inputs, Backward backward);
  Var<Scalar> record(Mat value, std::span<const Var<Scalar>> inputs, Backward backward);

  const Mat& value(Var<Scalar> v) const { return value(v.id); }
  const Mat& value(std::size_t id) const {
    const auto& node = nodes_[id];
    return node.external ? *node.external : node.value;
  }
  bool needs_grad(Var<Scalar> v) const { return nodes_[v.id].needs_grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  const Mat& grad(Var<Scalar> v) const { return nodes_[v.id].grad; }
  const Mat& grad(std::size_t id) const { return nodes_[id].grad; }
  Mat& grad_accumulator(std::size_t id);

  /// Reverse sweep from a 1x1 loss, seeding d(loss) = seed.
  void backward(Var<Scalar> loss, Scalar seed = Scalar(1));

  /// Calls fn(tensor, gradient) for every parameter that received a gradient.
  template <typename Fn>
  void for_each_parameter_gradient(Fn&& fn) const {
    for (const auto& [tensor, id] : parameter_nodes_) {
      const auto& node = nodes_[id];
      if (node.grad.size() != 0) fn(*tensor, node.grad);
    }
  }

  /// Adds every parameter gradient into Tensor::grad.
  void accumulate_into_parameters() const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    Backward backward;
    bool needs_grad = false;
    const Mat* external = nullptr;  // parameter storage, read in place
  };

  std::vector<Node> nodes_;
  std::unordered_map<Tensor<Scalar>*, std::size_t> parameter_nodes_;
  bool grad_enabled_;
};

template <typename Scalar>
Scalar Var<Scalar>::item() const {
  const auto& v = value();
  if (v.size() != 1) throw std::logic_error("Var::item on a non-scalar value");
  return v(0, 0);
}

// ---- ops ------------------------------------------------------------------

template <typename Scalar> Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b);
/// a · bᵀ
template <typename Scalar> Var<Scalar> matmul_transposed(Var<Scalar> a, Var<Scalar> b);
template <typename Scalar> Var<Scalar> add(Var<Scalar> a, Var<Scalar> b);
/// Adds a [1, n] row to every row of a.
template <typename Scalar> Var<Scalar> add_row(Var<Scalar> a, Var<Scalar> row);
template <typename Scalar> Var<Scalar> scale(Var<Scalar> a, Scalar factor);
/// a multiplied by a 1x1 variable.
template <typename Scalar> Var<Scalar> scale_by(Var<Scalar> a, Var<Scalar> factor);
/// a divided by a 1x1 variable.
template <typename Scalar> Var<Scalar> divide_by(Var<Scalar> a, Var<Scalar> divisor);
template <typename Scalar> Var<Scalar> tanh(Var<Scalar> a);
template <typename Scalar> Var<Scalar> exp(Var<Scalar> a);
template <typename Scalar> Var<Scalar> gelu(Var<Scalar> a);
template <typename Scalar>
Var<Scalar> layer_norm(Var<Scalar> x, Var<Scalar> gamma, Var<Scalar> beta, Scalar eps);

/// Multi-head scaled dot-product attention. q: [n, d], k: [m, d], v: [m, d];
/// heads split the channel dim evenly. mask is [n, m], true = allowed.
template <typename Scalar>
Var<Scalar> attention(Var<Scalar> q, Var<Scalar> k, Var<Scalar> v, int heads,
                      const std::optional<BoolMatrix>& mask = std::nullopt);

/// Rows of `table` selected by ids (embedding lookup).
template <typename Scalar> Var<Scalar> gather_rows(Var<Scalar> table, std::span<const int> ids);
template <typename Scalar> Var<Scalar> concat_cols(std::span<const Var<Scalar>> parts);
template <typename Scalar> Var<Scalar> concat_rows(std::span<const Var<Scalar>> parts);
template <typename Scalar> Var<Scalar> slice_cols(Var<Scalar> x, Eigen::Index start, Eigen::Index width);
template <typename Scalar> Var<Scalar> slice_rows(Var<Scalar> x, Eigen::Index start, Eigen::Index count);
/// Column means: [n, d] -> [1, d].
template <typename Scalar> Var<Scalar> mean_rows(Var<Scalar> x);
/// Row-major reshape preserving element order.
template <typename Scalar> Var<Scalar> reshape(Var<Scalar> x, Eigen::Index rows, Eigen::Index cols);

inline constexpr int kIgnoreTarget = -1;

/// Mean over rows of −log softmax(logits_row)[target]; rows whose target is
/// kIgnoreTarget are skipped. Returns a 1x1 value.
template <typename Scalar> Var<Scalar> cross_entropy(Var<Scalar> logits, std::span<const int> targets);

/// Mean of 1x1 values.
template <typename Scalar> Var<Scalar> mean(std::span<const Var<Scalar>> scalars);

template <typename Scalar>
Var<Scalar> operator+(Var<Scalar> a, Var<Scalar> b) {
  return add(a, b);
}

}  // namespace userllm
