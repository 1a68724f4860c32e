#pragma once

#include <cstddef>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace userllm {

/// Row-major dense matrix. Every activation and parameter in the project is
/// two-dimensional; vectors are stored as single rows.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Attention mask: true means the query row may attend to the key column.
using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A named model parameter: values, an optional gradient accumulator of the
/// same shape, and a flag telling the autograd graph whether to track it.
template <typename Scalar>
struct Tensor {
  Matrix<Scalar> data;
  Matrix<Scalar> grad;  // empty when no gradient has been accumulated
  bool trainable = true;

  Eigen::Index rows() const { return data.rows(); }
  Eigen::Index cols() const { return data.cols(); }
  Eigen::Index size() const { return data.size(); }
  bool has_grad() const { return grad.size() != 0; }
  void zero_grad() { grad.setZero(data.rows(), data.cols()); }
  void clear_grad() { grad.resize(0, 0); }
};

template <typename Scalar>
using TensorPtr = std::shared_ptr<Tensor<Scalar>>;

/// Ordered registry of named parameters. A tensor registered once and used in
/// several places (tied embeddings) is one storage location.
template <typename Scalar>
class ParameterSet {
 public:
  using Entry = std::pair<std::string, TensorPtr<Scalar>>;

  TensorPtr<Scalar> add(std::string name, Matrix<Scalar> init) {
    if (find(name)) {
      throw std::invalid_argument("duplicate parameter name: " + name);
    }
    auto tensor = std::make_shared<Tensor<Scalar>>();
    tensor->data = std::move(init);
    entries_.emplace_back(std::move(name), tensor);
    return tensor;
  }

  TensorPtr<Scalar> find(std::string_view name) const {
    for (const auto& [key, tensor] : entries_) {
      if (key == name) return tensor;
    }
    return nullptr;
  }

  TensorPtr<Scalar> get(std::string_view name) const {
    auto tensor = find(name);
    if (!tensor) throw std::out_of_range("unknown parameter: " + std::string(name));
    return tensor;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t total = 0;
    for (const auto& entry : entries_) total += static_cast<std::size_t>(entry.second->size());
    return total;
  }

  void zero_grad() {
    for (auto& entry : entries_) entry.second->clear_grad();
  }

 private:
  std::vector<Entry> entries_;
};

}  // namespace userllm
