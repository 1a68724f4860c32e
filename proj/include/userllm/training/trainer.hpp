#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "userllm/encoder/encoder.hpp"
#include "userllm/fusion/fusion.hpp"
#include "userllm/training/optim.hpp"
#include "userllm/training/strategy.hpp"

namespace userllm {

struct StepRecord {
  int step = 0;  // 1-based
  double loss = 0.0;
  double lr = 0.0;
  std::string strategy;
};

/// {"step":..,"loss":..,"lr":..,"strategy":..} on one line.
void write_metrics_line(std::ostream& out, const StepRecord& record);

struct TrainOptions {
  ScheduleConfig schedule;
  AdamWConfig optim;
  int batch_size = 32;
  std::uint64_t seed = 0;
  int shards = 4;
  int threads = 1;
  std::function<void(const StepRecord&)> on_step;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int step, const std::string& what)
      : std::runtime_error("training diverged at step " + std::to_string(step) + ": " + what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

/// Seeded stream of example indices: a fresh permutation every epoch.
class BatchSampler {
 public:
  BatchSampler(std::size_t examples, std::uint64_t seed);
  std::vector<std::size_t> next(std::size_t batch_size);

 private:
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  Rng rng_;
};

/// Per-example losses of the given dataset indices, recorded in one graph.
template <typename Scalar>
using IndexedLoss = std::function<std::vector<Var<Scalar>>(Graph<Scalar>&, std::span<const std::size_t> indices)>;

/// Runs schedule.total_steps AdamW updates over the trainable parameters;
/// each step averages the per-example losses of a sampled batch. Returns the
/// loss of every step. A non-finite loss or gradient throws TrainingDiverged.
template <typename Scalar>
std::vector<double> train_loop(ParameterSet<Scalar>& params, std::size_t examples, const IndexedLoss<Scalar>& loss,
                               const TrainOptions& options, const std::string& label);

template <typename Scalar>
std::vector<double> pretrain_ar(const ArEncoder<Scalar>& encoder, ParameterSet<Scalar>& params,
                                const std::vector<std::vector<FeatureIds>>& sequences, const TrainOptions& options);

/// In-batch softmax pretraining; a step's batch is batch_size distinct
/// examples (fewer when the dataset is smaller).
template <typename Scalar>
std::vector<double> pretrain_dual(const DualEncoder<Scalar>& encoder, ParameterSet<Scalar>& params,
                                  const std::vector<typename DualEncoder<Scalar>::Example>& examples,
                                  const TrainOptions& options);

/// One cotraining example: the user's event window and a token sequence
/// whose tokens from target_start on are the prediction target.
struct TextExample {
  std::vector<FeatureIds> events;
  std::vector<int> ids;
  int target_start = 1;
};

/// Mean next-token cross-entropy over the target tokens of each example;
/// the examples share one packed LM pass.
template <typename Scalar>
std::vector<Var<Scalar>> text_example_losses(const ContextualLM<Scalar>& model, Graph<Scalar>& g,
                                             std::span<const TextExample* const> examples);

/// Applies the strategy's trainable set and trains on the examples.
template <typename Scalar>
std::vector<double> cotrain(ContextualLM<Scalar>& model, const std::vector<TextExample>& examples, Strategy strategy,
                            const TrainOptions& options);

}  // namespace userllm
