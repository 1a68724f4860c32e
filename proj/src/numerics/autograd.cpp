#include "userllm/numerics/autograd.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>

namespace userllm {

namespace {

std::string shape_of(Eigen::Index rows, Eigen::Index cols) {
  return "[" + std::to_string(rows) + "," + std::to_string(cols) + "]";
}

template <typename Scalar>
void require_same_graph(Var<Scalar> a, Var<Scalar> b, const char* op) {
  if (a.graph != b.graph) throw std::logic_error(std::string(op) + ": operands belong to different graphs");
}

template <typename Scalar>
void require_scalar(Var<Scalar> v, const char* op) {
  if (v.rows() != 1 || v.cols() != 1) {
    throw std::invalid_argument(std::string(op) + ": expected a 1x1 operand, got " + shape_of(v.rows(), v.cols()));
  }
}

}  // namespace

// ---- Graph ----------------------------------------------------------------

template <typename Scalar>
Var<Scalar> Graph<Scalar>::constant(Mat value) {
  if (!value.allFinite()) throw std::domain_error("non-finite value entered the graph");
  nodes_.push_back(Node{std::move(value), Mat(), nullptr, false, nullptr});
  return Var<Scalar>{this, nodes_.size() - 1};
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::parameter(const TensorPtr<Scalar>& tensor) {
  auto it = parameter_nodes_.find(tensor.get());
  if (it != parameter_nodes_.end()) return Var<Scalar>{this, it->second};
  if (!tensor->data.allFinite()) throw std::domain_error("parameter holds a non-finite value");
  nodes_.push_back(Node{Mat(), Mat(), nullptr, grad_enabled_ && tensor->trainable, &tensor->data});
  const std::size_t id = nodes_.size() - 1;
  parameter_nodes_.emplace(tensor.get(), id);
  return Var<Scalar>{this, id};
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::record(Mat value, std::initializer_list<Var<Scalar>> inputs, Backward backward) {
  return record(std::move(value), std::span<const Var<Scalar>>(inputs.begin(), inputs.size()), std::move(backward));
}

template <typename Scalar>
Var<Scalar> Graph<Scalar>::record(Mat value, std::span<const Var<Scalar>> inputs, Backward backward) {
  if (!value.allFinite()) throw std::domain_error("operation produced a non-finite value");
  bool needs = false;
  if (grad_enabled_) {
    for (const auto& input : inputs) {
      if (input.graph != this) throw std::logic_error("operand belongs to a different graph");
      needs = needs || nodes_[input.id].needs_grad;
    }
  }
  nodes_.push_back(Node{std::move(value), Mat(), needs ? std::move(backward) : nullptr, needs, nullptr});
  return Var<Scalar>{this, nodes_.size() - 1};
}

template <typename Scalar>
typename Graph<Scalar>::Mat& Graph<Scalar>::grad_accumulator(std::size_t id) {
  auto& node = nodes_[id];
  if (node.grad.size() == 0) {
    const Mat& v = value(id);
    node.grad.setZero(v.rows(), v.cols());
  }
  return node.grad;
}

template <typename Scalar>
void Graph<Scalar>::backward(Var<Scalar> loss, Scalar seed) {
  if (loss.graph != this) throw std::logic_error("backward: loss belongs to a different graph");
  require_scalar(loss, "backward");
  if (!nodes_[loss.id].needs_grad) return;
  grad_accumulator(loss.id)(0, 0) += seed;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    auto& node = nodes_[id];
    if (node.backward && node.grad.size() != 0) node.backward(id);
  }
}

template <typename Scalar>
void Graph<Scalar>::accumulate_into_parameters() const {
  for_each_parameter_gradient([](Tensor<Scalar>& tensor, const Mat& grad) {
    if (!tensor.has_grad()) tensor.zero_grad();
    tensor.grad += grad;
  });
}

// ---- linear algebra -------------------------------------------------------

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  require_same_graph(a, b, "matmul");
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: shapes " + shape_of(a.rows(), a.cols()) + " and " +
                                shape_of(b.rows(), b.cols()) + " do not chain");
  }
  Graph<Scalar>* g = a.graph;
  Matrix<Scalar> out = a.value() * b.value();
  const std::size_t ia = a.id, ib = b.id;
  return g->record(std::move(out), {a, b}, [g, ia, ib](std::size_t o) {
    const auto& go = g->grad(o);
    if (g->needs_grad(ia)) g->grad_accumulator(ia).noalias() += go * g->value(ib).transpose();
    if (g->needs_grad(ib)) g->grad_accumulator(ib).noalias() += g->value(ia).transpose() * go;
  });
}

template <typename Scalar>
Var<Scalar> matmul_transposed(Var<Scalar> a, Var<Scalar> b) {
  require_same_graph(a, b, "matmul_transposed");
  if (a.cols() != b.cols()) {
    throw std::invalid_argument("matmul_transposed: shapes " + shape_of(a.rows(), a.cols()) + " and " +
                                shape_of(b.rows(), b.cols()) + " have different widths");
  }
  Graph<Scalar>* g = a.graph;
  Matrix<Scalar> out = a.value() * b.value().transpose();
  const std::size_t ia = a.id, ib = b.id;
  return g->record(std::move(out), {a, b}, [g, ia, ib](std::size_t o) {
    const auto& go = g->grad(o);
    if (g->needs_grad(ia)) g->grad_accumulator(ia).noalias() += go * g->value(ib);
    if (g->needs_grad(ib)) g->grad_accumulator(ib).noalias() += go.transpose() * g->value(ia);
  });
}

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  require_same_graph(a, b, "add");
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("add: shape mismatch " + shape_of(a.rows(), a.cols()) + " vs " +
                                shape_of(b.rows(), b.cols()));
  }
  Graph<Scalar>* g = a.graph;
  Matrix<Scalar> out = a.value() + b.value();
  const std::size_t ia = a.id, ib = b.id;
  return g->record(std::move(out), {a, b}, [g, ia, ib](std::size_t o) {
    if (g->needs_grad(ia)) g->grad_accumulator(ia) += g->grad(o);
    if (g->needs_grad(ib)) g->grad_accumulator(ib) += g->grad(o);
  });
}

template <typename Scalar>
Var<Scalar> add_row(Var<Scalar> a, Var<Scalar> row) {
  require_same_graph(a, row, "add_row");
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw std::invalid_argument("add_row: row " + shape_of(row.rows(), row.cols()) + " does not match width " +
                                std::to_string(a.cols()));
  }
  Graph<Scalar>* g = a.graph;
  Matrix<Scalar> out = a.value().rowwise() + row.value().row(0);
  const std::size_t ia = a.id, ir = row.id;
  return g->record(std::move(out), {a, row}, [g, ia, ir](std::size_t o) {
    if (g->needs_grad(ia)) g->grad_accumulator(ia) += g->grad(o);
    if (g->needs_grad(ir)) g->grad_accumulator(ir) += g->grad(o).colwise().sum();
  });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar factor) {
  Graph<Scalar>* g = a.graph;
  Matrix<Scalar> out = a.value() * factor;
  const std::size_t ia = a.id;
  return g->record(std::move(out), {a}, [g, ia, factor](std::size_t o) {
    g->grad_accumulator(ia) += g->grad(o) * factor;
  });
}

template <typename Scalar>
Var<Scalar> scale_by(Var<Scalar> a, Var<Scalar> factor) {
  require_same_graph(a, factor, "scale_by");
  require_scalar(factor, "scale_by");
  Graph<Scalar>* g = a.graph;
  Matrix<Scalar> out = a.value() * factor.item();
  const std::size_t ia = a.id, is = factor.id;
  return g->record(std::move(out), {a, factor}, [g, ia, is](std::size_t o) {
    const auto& go = g->grad(o);
    if (g->needs_grad(ia)) g->grad_accumulator(ia) += go * g->value(is)(0, 0);
    if (g->needs_grad(is)) g->grad_accumulator(is)(0, 0) += go.cwiseProduct(g->value(ia)).sum();
  });
}

template <typename Scalar>
Var<Scalar> divide_by(Var<Scalar> a, Var<Scalar> divisor) {
  require_same_graph(a, divisor, "divide_by");
  require_scalar(divisor, "divide_by");
  const Scalar d = divisor.item();
  if (d == Scalar(0)) throw std::domain_error("divide_by: zero divisor");
  Graph<Scalar>* g = a.graph;
  Matrix<Scalar> out = a.value() / d;
  const std::size_t ia = a.id, is = divisor.id;
  return g->record(std::move(out), {a, divisor}, [g, ia, is](std::size_t o) {
    const auto& go = g->grad(o);
    const Scalar dv = g->value(is)(0, 0);
    if (g->needs_grad(ia)) g->grad_accumulator(ia) += go / dv;
    if (g->needs_grad(is)) g->grad_accumulator(is)(0, 0) -= go.cwiseProduct(g->value(ia)).sum() / (dv * dv);
  });
}

// ---- elementwise ----------------------------------------------------------

template <typename Scalar>
Var<Scalar> tanh(Var<Scalar> a) {
  Graph<Scalar>* g = a.graph;
  Matrix<Scalar> out = a.value().array().tanh().matrix();
  const std::size_t ia = a.id;
  return g->record(std::move(out), {a}, [g, ia](std::size_t o) {
    const auto& y = g->value(o);
    g->grad_accumulator(ia).array() += g->grad(o).array() * (Scalar(1) - y.array().square());
  });
}

template <typename Scalar>
Var<Scalar> exp(Var<Scalar> a) {
  Graph<Scalar>* g = a.graph;
  Matrix<Scalar> out = a.value().array().exp().matrix();
  const std::size_t ia = a.id;
  return g->record(std::move(out), {a}, [g, ia](std::size_t o) {
    g->grad_accumulator(ia).array() += g->grad(o).array() * g->value(o).array();
  });
}

template <typename Scalar>
Var<Scalar> gelu(Var<Scalar> a) {
  Graph<Scalar>* g = a.graph;
  Matrix<Scalar> out = a.value().unaryExpr([](Scalar x) { return userllm::gelu(x); });
  const std::size_t ia = a.id;
  return g->record(std::move(out), {a}, [g, ia](std::size_t o) {
    g->grad_accumulator(ia).array() +=
        g->grad(o).array() * g->value(ia).unaryExpr([](Scalar x) { return gelu_derivative(x); }).array();
  });
}

template <typename Scalar>
Var<Scalar> layer_norm(Var<Scalar> x, Var<Scalar> gamma, Var<Scalar> beta, Scalar eps) {
  require_same_graph(x, gamma, "layer_norm");
  require_same_graph(x, beta, "layer_norm");
  if (!(eps > 0)) throw std::invalid_argument("layer_norm: eps must be positive");
  const Eigen::Index d = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d) {
    throw std::invalid_argument("layer_norm: gamma/beta must be [1," + std::to_string(d) + "]");
  }
  Graph<Scalar>* g = x.graph;
  const auto& xv = x.value();
  auto normalized = std::make_shared<Matrix<Scalar>>(xv.rows(), d);
  auto inv_std = std::make_shared<Matrix<Scalar>>(xv.rows(), 1);
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    const Scalar mu = xv.row(i).sum() / static_cast<Scalar>(d);
    const Scalar var = (xv.row(i).array() - mu).square().sum() / static_cast<Scalar>(d);
    const Scalar s = Scalar(1) / std::sqrt(var + eps);
    (*inv_std)(i, 0) = s;
    normalized->row(i) = (xv.row(i).array() - mu) * s;
  }
  Matrix<Scalar> out =
      (normalized->array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  const std::size_t ix = x.id, ig = gamma.id, ib = beta.id;
  return g->record(std::move(out), {x, gamma, beta}, [g, ix, ig, ib, normalized, inv_std, d](std::size_t o) {
    const auto& go = g->grad(o);
    if (g->needs_grad(ig)) g->grad_accumulator(ig) += go.cwiseProduct(*normalized).colwise().sum();
    if (g->needs_grad(ib)) g->grad_accumulator(ib) += go.colwise().sum();
    if (g->needs_grad(ix)) {
      Matrix<Scalar> dxhat = go.array().rowwise() * g->value(ig).row(0).array();
      auto& gx = g->grad_accumulator(ix);
      for (Eigen::Index i = 0; i < go.rows(); ++i) {
        const Scalar mean_d = dxhat.row(i).sum() / static_cast<Scalar>(d);
        const Scalar mean_dx = dxhat.row(i).cwiseProduct(normalized->row(i)).sum() / static_cast<Scalar>(d);
        gx.row(i).array() +=
            (*inv_std)(i, 0) * (dxhat.row(i).array() - mean_d - normalized->row(i).array() * mean_dx);
      }
    }
  });
}

// ---- attention ------------------------------------------------------------

template <typename Scalar>
Var<Scalar> attention(Var<Scalar> q, Var<Scalar> k, Var<Scalar> v, int heads, const std::optional<BoolMatrix>& mask) {
  require_same_graph(q, k, "attention");
  require_same_graph(q, v, "attention");
  if (heads < 1) throw std::invalid_argument("attention: heads must be >= 1");
  if (q.cols() != k.cols() || k.cols() != v.cols()) {
    throw std::invalid_argument("attention: Q/K/V widths differ (" + std::to_string(q.cols()) + ", " +
                                std::to_string(k.cols()) + ", " + std::to_string(v.cols()) + ")");
  }
  if (k.rows() != v.rows()) throw std::invalid_argument("attention: K and V row counts differ");
  if (k.rows() == 0) throw std::invalid_argument("attention: no keys to attend to");
  if (q.cols() % heads != 0) throw std::invalid_argument("attention: width not divisible by heads");
  if (mask && (mask->rows() != q.rows() || mask->cols() != k.rows())) {
    throw std::invalid_argument("attention: mask must be " + shape_of(q.rows(), k.rows()));
  }
  const Eigen::Index n = q.rows(), m = k.rows(), width = q.cols() / heads;
  const Scalar scale_factor = Scalar(1) / std::sqrt(static_cast<Scalar>(width));
  const BoolMatrix* allowed = mask ? &*mask : nullptr;

  Graph<Scalar>* g = q.graph;
  auto probs = std::make_shared<std::vector<Matrix<Scalar>>>(heads);
  Matrix<Scalar> out(n, q.cols());
  for (int h = 0; h < heads; ++h) {
    const auto qh = q.value().middleCols(h * width, width);
    const auto kh = k.value().middleCols(h * width, width);
    Matrix<Scalar> scores = (qh * kh.transpose()) * scale_factor;
    (*probs)[h] = softmax_rows<Scalar>(scores, allowed);
    out.middleCols(h * width, width).noalias() = (*probs)[h] * v.value().middleCols(h * width, width);
  }
  const std::size_t iq = q.id, ik = k.id, iv = v.id;
  return g->record(std::move(out), {q, k, v}, [g, iq, ik, iv, probs, heads, width, scale_factor, m](std::size_t o) {
    const auto& go = g->grad(o);
    const bool need_q = g->needs_grad(iq), need_k = g->needs_grad(ik), need_v = g->needs_grad(iv);
    for (int h = 0; h < heads; ++h) {
      const auto& p = (*probs)[h];
      const auto goh = go.middleCols(h * width, width);
      if (need_v) g->grad_accumulator(iv).middleCols(h * width, width).noalias() += p.transpose() * goh;
      if (!need_q && !need_k) continue;
      Matrix<Scalar> dp = goh * g->value(iv).middleCols(h * width, width).transpose();
      // softmax backward: dS = P ⊙ (dP − rowsum(dP ⊙ P))
      Eigen::Matrix<Scalar, Eigen::Dynamic, 1> row_dot = dp.cwiseProduct(p).rowwise().sum();
      Matrix<Scalar> ds = p.cwiseProduct(dp - row_dot.replicate(1, m)) * scale_factor;
      if (need_q) g->grad_accumulator(iq).middleCols(h * width, width).noalias() +=
          ds * g->value(ik).middleCols(h * width, width);
      if (need_k) g->grad_accumulator(ik).middleCols(h * width, width).noalias() +=
          ds.transpose() * g->value(iq).middleCols(h * width, width);
    }
  });
}

// ---- structural -----------------------------------------------------------

template <typename Scalar>
Var<Scalar> gather_rows(Var<Scalar> table, std::span<const int> ids) {
  Graph<Scalar>* g = table.graph;
  const auto& tv = table.value();
  Matrix<Scalar> out(static_cast<Eigen::Index>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) {
      throw std::out_of_range("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                              std::to_string(tv.rows()) + " rows");
    }
    out.row(static_cast<Eigen::Index>(i)) = tv.row(ids[i]);
  }
  std::vector<int> index(ids.begin(), ids.end());
  const std::size_t it = table.id;
  return g->record(std::move(out), {table}, [g, it, index = std::move(index)](std::size_t o) {
    auto& gt = g->grad_accumulator(it);
    const auto& go = g->grad(o);
    for (std::size_t i = 0; i < index.size(); ++i) gt.row(index[i]) += go.row(static_cast<Eigen::Index>(i));
  });
}

template <typename Scalar>
Var<Scalar> concat_cols(std::span<const Var<Scalar>> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Graph<Scalar>* g = parts.front().graph;
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix<Scalar> out(rows, cols);
  std::vector<std::pair<std::size_t, Eigen::Index>> layout;
  Eigen::Index offset = 0;
  for (const auto& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    layout.emplace_back(p.id, offset);
    offset += p.cols();
  }
  return g->record(std::move(out), parts, [g, layout = std::move(layout)](std::size_t o) {
    for (const auto& [id, start] : layout) {
      if (g->needs_grad(id)) g->grad_accumulator(id) += g->grad(o).middleCols(start, g->value(id).cols());
    }
  });
}

template <typename Scalar>
Var<Scalar> concat_rows(std::span<const Var<Scalar>> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Graph<Scalar>* g = parts.front().graph;
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: widths differ");
    rows += p.rows();
  }
  Matrix<Scalar> out(rows, cols);
  std::vector<std::pair<std::size_t, Eigen::Index>> layout;
  Eigen::Index offset = 0;
  for (const auto& p : parts) {
    out.middleRows(offset, p.rows()) = p.value();
    layout.emplace_back(p.id, offset);
    offset += p.rows();
  }
  return g->record(std::move(out), parts, [g, layout = std::move(layout)](std::size_t o) {
    for (const auto& [id, start] : layout) {
      if (g->needs_grad(id)) g->grad_accumulator(id) += g->grad(o).middleRows(start, g->value(id).rows());
    }
  });
}

template <typename Scalar>
Var<Scalar> slice_cols(Var<Scalar> x, Eigen::Index start, Eigen::Index width) {
  if (start < 0 || width < 0 || start + width > x.cols()) throw std::out_of_range("slice_cols: range outside input");
  Graph<Scalar>* g = x.graph;
  Matrix<Scalar> out = x.value().middleCols(start, width);
  const std::size_t ix = x.id;
  return g->record(std::move(out), {x}, [g, ix, start, width](std::size_t o) {
    g->grad_accumulator(ix).middleCols(start, width) += g->grad(o);
  });
}

template <typename Scalar>
Var<Scalar> slice_rows(Var<Scalar> x, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > x.rows()) throw std::out_of_range("slice_rows: range outside input");
  Graph<Scalar>* g = x.graph;
  Matrix<Scalar> out = x.value().middleRows(start, count);
  const std::size_t ix = x.id;
  return g->record(std::move(out), {x}, [g, ix, start, count](std::size_t o) {
    g->grad_accumulator(ix).middleRows(start, count) += g->grad(o);
  });
}

template <typename Scalar>
Var<Scalar> mean_rows(Var<Scalar> x) {
  if (x.rows() == 0) throw std::invalid_argument("mean_rows: empty input");
  Graph<Scalar>* g = x.graph;
  Matrix<Scalar> out = x.value().colwise().mean();
  const std::size_t ix = x.id;
  const Scalar inv = Scalar(1) / static_cast<Scalar>(x.rows());
  return g->record(std::move(out), {x}, [g, ix, inv](std::size_t o) {
    auto& gx = g->grad_accumulator(ix);
    gx.rowwise() += g->grad(o).row(0) * inv;
  });
}

template <typename Scalar>
Var<Scalar> reshape(Var<Scalar> x, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != x.value().size()) throw std::invalid_argument("reshape: element count changes");
  Graph<Scalar>* g = x.graph;
  Matrix<Scalar> out = Eigen::Map<const Matrix<Scalar>>(x.value().data(), rows, cols);
  const std::size_t ix = x.id;
  const Eigen::Index src_rows = x.rows(), src_cols = x.cols();
  return g->record(std::move(out), {x}, [g, ix, src_rows, src_cols](std::size_t o) {
    g->grad_accumulator(ix) += Eigen::Map<const Matrix<Scalar>>(g->grad(o).data(), src_rows, src_cols);
  });
}

// ---- losses ---------------------------------------------------------------

template <typename Scalar>
Var<Scalar> cross_entropy(Var<Scalar> logits, std::span<const int> targets) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows()) {
    throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                                std::to_string(logits.rows()) + " rows");
  }
  const Eigen::Index vocab = logits.cols();
  std::size_t counted = 0;
  for (int t : targets) {
    if (t == kIgnoreTarget) continue;
    if (t < 0 || t >= vocab) {
      throw std::out_of_range("cross_entropy: target " + std::to_string(t) + " outside [0, " + std::to_string(vocab) +
                              ")");
    }
    ++counted;
  }
  if (counted == 0) throw std::invalid_argument("cross_entropy: every target is ignored");
  Graph<Scalar>* g = logits.graph;
  auto log_probs = std::make_shared<Matrix<Scalar>>(log_softmax_rows<Scalar>(logits.value()));
  Scalar total = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] != kIgnoreTarget) total -= (*log_probs)(static_cast<Eigen::Index>(i), targets[i]);
  }
  const Scalar inv = Scalar(1) / static_cast<Scalar>(counted);
  Matrix<Scalar> out(1, 1);
  out(0, 0) = total * inv;
  std::vector<int> index(targets.begin(), targets.end());
  const std::size_t il = logits.id;
  return g->record(std::move(out), {logits}, [g, il, log_probs, index = std::move(index), inv](std::size_t o) {
    const Scalar go = g->grad(o)(0, 0) * inv;
    auto& gl = g->grad_accumulator(il);
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (index[i] == kIgnoreTarget) continue;
      const auto r = static_cast<Eigen::Index>(i);
      gl.row(r).array() += go * log_probs->row(r).array().exp();
      gl(r, index[i]) -= go;
    }
  });
}

template <typename Scalar>
Var<Scalar> mean(std::span<const Var<Scalar>> scalars) {
  if (scalars.empty()) throw std::invalid_argument("mean: no inputs");
  Graph<Scalar>* g = scalars.front().graph;
  Scalar total = 0;
  std::vector<std::size_t> ids;
  for (const auto& s : scalars) {
    require_scalar(s, "mean");
    total += s.item();
    ids.push_back(s.id);
  }
  const Scalar inv = Scalar(1) / static_cast<Scalar>(scalars.size());
  Matrix<Scalar> out(1, 1);
  out(0, 0) = total * inv;
  return g->record(std::move(out), scalars, [g, ids = std::move(ids), inv](std::size_t o) {
    for (std::size_t id : ids) {
      if (g->needs_grad(id)) g->grad_accumulator(id)(0, 0) += g->grad(o)(0, 0) * inv;
    }
  });
}

// ---- instantiation --------------------------------------------------------

#define USERLLM_INSTANTIATE_AUTOGRAD(S)                                                                   \
  template class Graph<S>;                                                                              \
  template Var<S> matmul(Var<S>, Var<S>);                                                               \
  template Var<S> matmul_transposed(Var<S>, Var<S>);                                                    \
  template Var<S> add(Var<S>, Var<S>);                                                                  \
  template Var<S> add_row(Var<S>, Var<S>);                                                              \
  template Var<S> scale(Var<S>, S);                                                                     \
  template Var<S> scale_by(Var<S>, Var<S>);                                                             \
  template Var<S> divide_by(Var<S>, Var<S>);                                                            \
  template Var<S> tanh(Var<S>);                                                                         \
  template Var<S> exp(Var<S>);                                                                          \
  template Var<S> gelu(Var<S>);                                                                         \
  template Var<S> layer_norm(Var<S>, Var<S>, Var<S>, S);                                                \
  template Var<S> attention(Var<S>, Var<S>, Var<S>, int, const std::optional<BoolMatrix>&);             \
  template Var<S> gather_rows(Var<S>, std::span<const int>);                                            \
  template Var<S> concat_cols(std::span<const Var<S>>);                                                 \
  template Var<S> concat_rows(std::span<const Var<S>>);                                                 \
  template Var<S> slice_cols(Var<S>, Eigen::Index, Eigen::Index);                                       \
  template Var<S> slice_rows(Var<S>, Eigen::Index, Eigen::Index);                                       \
  template Var<S> mean_rows(Var<S>);                                                                    \
  template Var<S> reshape(Var<S>, Eigen::Index, Eigen::Index);                                          \
  template Var<S> cross_entropy(Var<S>, std::span<const int>);                                          \
  template Var<S> mean(std::span<const Var<S>>);

USERLLM_INSTANTIATE_AUTOGRAD(float)
USERLLM_INSTANTIATE_AUTOGRAD(double)

#undef USERLLM_INSTANTIATE_AUTOGRAD

}  // namespace userllm
