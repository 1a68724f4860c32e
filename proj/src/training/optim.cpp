#include "userllm/training/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <thread>

namespace userllm {

int warmup_steps(const ScheduleConfig& s) { return static_cast<int>(std::lround(s.warmup_fraction * s.total_steps)); }

double lr_at(int step, const ScheduleConfig& s) {
  if (s.total_steps < 1) throw std::invalid_argument("schedule total_steps must be >= 1");
  if (step < 0 || step > s.total_steps) {
    throw std::out_of_range("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(s.total_steps) + "]");
  }
  const int warmup = warmup_steps(s);
  if (step <= warmup && warmup > 0) return s.peak_lr * step / warmup;
  const double progress = static_cast<double>(step - warmup) / (s.total_steps - warmup);
  return s.peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double lr_scale_for(const AdamWConfig& config, const std::string& name) {
  double scale = 1.0;
  std::size_t best = 0;
  for (const auto& [prefix, value] : config.lr_scales) {
    if (!(value >= 0.0) || !std::isfinite(value)) throw std::invalid_argument("lr scale for '" + prefix + "' must be >= 0");
    if (name.starts_with(prefix) && prefix.size() >= best) {
      best = prefix.size();
      scale = value;
    }
  }
  return scale;
}

template <typename Scalar>
AdamW<Scalar>::AdamW(ParameterSet<Scalar>& params, const AdamWConfig& config) : config_(config) {
  for (const auto& [name, tensor] : params.entries()) {
    if (!tensor->trainable) continue;
    state_.push_back({tensor, {Matrix<Scalar>::Zero(tensor->rows(), tensor->cols()),
                               Matrix<Scalar>::Zero(tensor->rows(), tensor->cols()), lr_scale_for(config, name)}});
  }
}

template <typename Scalar>
double AdamW<Scalar>::step(double lr) {
  double squared = 0.0;
  for (const auto& [tensor, moments] : state_) {
    if (tensor->has_grad()) squared += tensor->grad.template cast<double>().squaredNorm();
  }
  const double norm = std::sqrt(squared);
  if (!std::isfinite(norm)) throw std::domain_error("non-finite gradient norm");
  const double clip = config_.grad_clip > 0 && norm > config_.grad_clip ? config_.grad_clip / norm : 1.0;

  ++steps_;
  const auto b1 = static_cast<Scalar>(config_.beta1), b2 = static_cast<Scalar>(config_.beta2);
  const auto c1 = static_cast<Scalar>(1.0 - std::pow(config_.beta1, steps_));
  const auto c2 = static_cast<Scalar>(1.0 - std::pow(config_.beta2, steps_));
  const auto eps = static_cast<Scalar>(config_.eps);
  for (auto& [tensor, moments] : state_) {
    if (!tensor->has_grad()) continue;
    const Matrix<Scalar> g = tensor->grad * static_cast<Scalar>(clip);
    moments.m = b1 * moments.m + (Scalar(1) - b1) * g;
    moments.v = b2 * moments.v + (Scalar(1) - b2) * g.cwiseProduct(g);
    auto update = (moments.m.array() / c1) / ((moments.v.array() / c2).sqrt() + eps);
    const auto rate = static_cast<Scalar>(lr * moments.lr_scale);
    const auto decay = static_cast<Scalar>(lr * moments.lr_scale * config_.weight_decay);
    if (config_.weight_decay != 0.0) tensor->data.array() -= decay * tensor->data.array();
    tensor->data.array() -= rate * update;
  }
  return norm;
}

template <typename Scalar>
double batch_gradient(ParameterSet<Scalar>& params, std::size_t batch_size, const ShardLoss<Scalar>& shard_loss,
                      int shards, int threads) {
  if (batch_size == 0) throw std::invalid_argument("batch_gradient: empty batch");
  shards = std::max(1, std::min<int>(shards, static_cast<int>(batch_size)));
  threads = std::max(1, std::min(threads, shards));
  using GradMap = std::unordered_map<Tensor<Scalar>*, Matrix<Scalar>>;
  std::vector<GradMap> grads(static_cast<std::size_t>(shards));
  std::vector<double> losses(batch_size, 0.0);
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(shards));

  // One graph per shard: parameter nodes are shared by the shard's
  // examples, so their gradients accumulate in place.
  auto run_shard = [&](int s) {
    try {
      const std::size_t begin = batch_size * static_cast<std::size_t>(s) / static_cast<std::size_t>(shards);
      const std::size_t end = batch_size * static_cast<std::size_t>(s + 1) / static_cast<std::size_t>(shards);
      if (begin == end) return;
      Graph<Scalar> g;
      const std::vector<Var<Scalar>> shard_losses = shard_loss(g, begin, end);
      if (shard_losses.size() != end - begin) throw std::logic_error("shard loss returned the wrong count");
      for (std::size_t i = begin; i < end; ++i) losses[i] = static_cast<double>(shard_losses[i - begin].item());
      Var<Scalar> total = mean(std::span<const Var<Scalar>>(shard_losses));
      g.backward(total, static_cast<Scalar>(end - begin) / static_cast<Scalar>(batch_size));
      auto& acc = grads[static_cast<std::size_t>(s)];
      g.for_each_parameter_gradient([&](Tensor<Scalar>& t, const Matrix<Scalar>& grad) { acc.emplace(&t, grad); });
    } catch (...) {
      errors[static_cast<std::size_t>(s)] = std::current_exception();
    }
  };

  if (threads == 1) {
    for (int s = 0; s < shards; ++s) run_shard(s);
  } else {
    for (int first = 0; first < shards; first += threads) {
      std::vector<std::thread> pool;
      for (int s = first; s < std::min(shards, first + threads); ++s) pool.emplace_back(run_shard, s);
      for (auto& t : pool) t.join();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  // Fixed reduction order: parameter registry order, then shard order.
  for (const auto& [name, tensor] : params.entries()) {
    for (const auto& acc : grads) {
      auto it = acc.find(tensor.get());
      if (it == acc.end()) continue;
      if (!tensor->has_grad()) tensor->zero_grad();
      tensor->grad += it->second;
    }
  }
  double total = 0.0;
  for (double l : losses) total += l;
  return total / static_cast<double>(batch_size);
}

template class AdamW<float>;
template class AdamW<double>;
template double batch_gradient<float>(ParameterSet<float>&, std::size_t, const ShardLoss<float>&, int, int);
template double batch_gradient<double>(ParameterSet<double>&, std::size_t, const ShardLoss<double>&, int, int);

}  // namespace userllm
