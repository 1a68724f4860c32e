#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "userllm/harness/config.hpp"
#include "userllm/training/checkpoint.hpp"

namespace userllm {

/// Users, vocabularies and the windowed split behind every command.
struct Dataset {
  std::vector<UserSequence> users;
  VocabularySet vocab;
  WindowSplit split;
  /// Candidate labels, taken from the name and category vocabularies.
  std::vector<std::string> item_names;
  std::vector<std::string> category_names;
};

/// Ingests data.path when set, otherwise runs the synthetic generator with
/// the experiment seed.
Dataset load_dataset(const ExperimentConfig& config);

/// Seed of an independent random stream derived from the experiment seed.
enum class SeedStream : std::uint64_t { kEncoderInit = 1, kPretrainBatches = 2, kModelInit = 3, kCotrainBatches = 4 };
std::uint64_t derive_seed(std::uint64_t seed, SeedStream stream);

Tokenizer task_tokenizer(const ExperimentConfig& config, const Dataset& data);
ModelSpec model_spec(const ExperimentConfig& config, const Dataset& data, int text_vocab);
TaskSpec task_spec(const ExperimentConfig& config, const Dataset& data, TaskKind kind);

/// One example per training window and configured task; review windows
/// without a review are skipped.
std::vector<TextExample> cotrain_examples(const ExperimentConfig& config, const Dataset& data,
                                          const Tokenizer& tokenizer);

TrainOptions pretrain_options(const ExperimentConfig& config);
/// Adds the encoder learning-rate multiplier.
TrainOptions cotrain_options(const ExperimentConfig& config);

/// Config fields a checkpoint must agree with before it is loaded.
nlohmann::json encoder_fingerprint(const ExperimentConfig& config, const Dataset& data);
nlohmann::json model_fingerprint(const ExperimentConfig& config, const Dataset& data, int text_vocab);

/// Pretrains the configured encoder on the training windows; tensors are
/// named encoder.* like the fused model's. Returns per-step losses.
std::vector<double> pretrain_encoder(const ExperimentConfig& config, const Dataset& data,
                                     ParameterSet<float>& params);

/// Writes `contents` to a temporary sibling and renames it into place.
void write_atomic(const std::filesystem::path& path, std::string_view contents);

inline constexpr std::string_view kCommands[] = {"datagen", "pretrain", "cotrain", "eval", "flops"};

/// Executes one pipeline command, writing its artifacts and run.json to
/// `out_dir`. Returns the exit status; on failure a one-line cause goes to
/// `err`.
///
///   datagen  events.jsonl, manifest.json
///   pretrain encoder.ckpt, pretrain_metrics.jsonl
///   cotrain  model.ckpt, tokenizer.json, cotrain_metrics.jsonl
///            (reads encoder.ckpt when training.encoder_init is pretrained)
///   eval     metrics.json (reads model.ckpt and tokenizer.json)
///   flops    flops.txt, flops.json
int run(std::string_view command, const ExperimentConfig& config, const std::filesystem::path& out_dir,
        std::ostream& err);

}  // namespace userllm
