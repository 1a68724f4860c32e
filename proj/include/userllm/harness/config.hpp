#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "userllm/efficiency/efficiency.hpp"
#include "userllm/eval/eval.hpp"
#include "userllm/events/synthetic.hpp"
#include "userllm/fusion/fusion.hpp"
#include "userllm/training/strategy.hpp"

namespace userllm {

struct DataSection {
  /// JSONL events to ingest; when unset the synthetic generator runs.
  std::optional<std::string> path;
  SyntheticConfig synthetic;
  int window = 50;
};

struct EncoderSection {
  EncoderKind kind = EncoderKind::kAutoregressive;
  int layers = 6;
  int d_model = 128;
  int heads = 8;
  DualFusion dual_fusion = DualFusion::kMean;
  int num_outputs = 1;
  int fusion_hidden = 256;
};

struct PhaseSection {
  ScheduleConfig schedule;
  int batch_size = 32;
};

struct TrainingSection {
  Strategy strategy = Strategy::kEnc;
  /// Cotraining starts from the pretrained encoder or from random weights.
  bool pretrained_encoder = true;
  PhaseSection pretrain;
  PhaseSection cotrain;
  double weight_decay = 0.0;
  double grad_clip = 0.0;
  /// Multiplies the cotraining learning rate of encoder.* parameters.
  double encoder_lr_scale = 1.0;
  /// Rank and scale of the adapters attached when the strategy is LoRA.
  LoraConfig lora;
  std::vector<TaskKind> tasks = {TaskKind::kFavoriteCategory};
  int threads = 1;
};

struct EvalSection {
  TaskKind task = TaskKind::kFavoriteCategory;
  std::vector<int> ks = {1, 5, 10};
  /// Test windows to evaluate; 0 means all.
  int max_examples = 0;
  int max_new_tokens = 24;
  PromptTemplates prompts;
};

struct FlopsSection {
  double n_params = 1e9;
  double batch = 8192;
  double steps = 10000;
  TokenBudgets budgets;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  DataSection data;
  EncoderSection encoder;
  LMConfig lm;
  FusionConfig fusion;
  /// Most recent events also given to the LM as text (0 = none).
  int short_term_events = 0;
  TrainingSection training;
  EvalSection eval;
  FlopsSection flops;
  /// Every field with defaults expanded, as written to run.json.
  nlohmann::ordered_json resolved;
};

struct Violation {
  std::string field;
  std::string value;
  std::string constraint;
  std::string to_string() const;
};

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<Violation> violations);
  const std::vector<Violation>& violations() const { return violations_; }

 private:
  std::vector<Violation> violations_;
};

/// The full schema with every default filled in.
nlohmann::ordered_json default_config_json();

/// Unknown fields, wrong types and broken constraints, each naming its
/// field. Empty iff the config is valid.
std::vector<Violation> validate_config(const nlohmann::json& config);

/// Overlays `config` on the defaults. Throws ConfigError listing every
/// violation.
ExperimentConfig parse_config(const nlohmann::json& config);
/// Throws ConfigError for unreadable or malformed files too.
ExperimentConfig load_config(const std::filesystem::path& path);

/// Applies a seed override and refreshes `resolved`.
void set_seed(ExperimentConfig& config, std::uint64_t seed);

}  // namespace userllm
