#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>

#include "userllm/numerics/autograd.hpp"

namespace userllm {

struct ScheduleConfig {
  double peak_lr = 1e-3;
  int total_steps = 1000;
  double warmup_fraction = 0.1;
};

int warmup_steps(const ScheduleConfig& schedule);

/// Linear ramp 0 -> peak over the warmup steps, then cosine decay to 0 at
/// total_steps. Update i (0-based) of a run uses lr_at(i + 1).
double lr_at(int step, const ScheduleConfig& schedule);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 0.0;
  /// Learning-rate multipliers by parameter-name prefix; the longest
  /// matching prefix wins, unmatched parameters use 1.
  std::vector<std::pair<std::string, double>> lr_scales;
};

double lr_scale_for(const AdamWConfig& config, const std::string& name);

/// Adam with decoupled weight decay. Moments exist only for parameters that
/// were trainable at construction; parameters without a gradient in a step
/// are left untouched.
template <typename Scalar>
class AdamW {
 public:
  AdamW(ParameterSet<Scalar>& params, const AdamWConfig& config);

  /// Applies one update from Tensor::grad and returns the gradient norm
  /// before clipping.
  double step(double lr);

  std::size_t state_size() const { return state_.size(); }
  int steps_taken() const { return steps_; }

 private:
  struct Moments {
    Matrix<Scalar> m, v;
    double lr_scale = 1.0;
  };
  std::vector<std::pair<TensorPtr<Scalar>, Moments>> state_;
  AdamWConfig config_;
  int steps_ = 0;
};

/// Per-example losses for examples [begin, end) of a batch, all recorded
/// in one graph.
template <typename Scalar>
using ShardLoss = std::function<std::vector<Var<Scalar>>(Graph<Scalar>&, std::size_t begin, std::size_t end)>;

/// Gradient of the batch mean of per-example losses, accumulated into
/// Tensor::grad. Examples are split into `shards` contiguous blocks whose
/// gradients are summed in shard order, so the result does not depend on
/// `threads`. Returns the mean loss.
template <typename Scalar>
double batch_gradient(ParameterSet<Scalar>& params, std::size_t batch_size, const ShardLoss<Scalar>& shard_loss,
                      int shards = 4, int threads = 1);

}  // namespace userllm
