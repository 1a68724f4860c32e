#include "userllm/harness/harness.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>
#include <random>
#include <sstream>

#include "userllm/events/synthetic.hpp"

namespace userllm {

namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

std::vector<std::string> labels_of(const Vocabulary& vocab) {
  const auto& tokens = vocab.tokens();
  return {tokens.begin() + 2, tokens.end()};
}

std::string_view fusion_mode_name(FusionMode mode) {
  return mode == FusionMode::kCrossAttention ? "cross_attention" : "soft_prompt";
}

class MissingInput : public std::runtime_error {
 public:
  MissingInput(const std::string& what, const fs::path& path)
      : std::runtime_error("missing " + what + ": " + path.string()) {}
};

void require_file(const std::string& what, const fs::path& path) {
  if (!fs::is_regular_file(path)) throw MissingInput(what, path);
}

std::string metrics_log(const std::vector<double>& losses, const ScheduleConfig& schedule, const std::string& label) {
  std::ostringstream out;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    const int step = static_cast<int>(i) + 1;
    write_metrics_line(out, {step, losses[i], lr_at(step, schedule), label});
  }
  return out.str();
}

std::string pretty(const ojson& j) { return j.dump(2) + "\n"; }

void datagen(const ExperimentConfig& config, const fs::path& out) {
  const Dataset data = load_dataset(config);
  std::ostringstream events;
  write_jsonl(events, data.users);
  const std::string bytes = events.str();
  write_atomic(out / "events.jsonl", bytes);

  std::size_t n_events = 0;
  for (const auto& u : data.users) n_events += u.events.size();
  ojson manifest;
  manifest["source"] = config.data.path ? *config.data.path : "synthetic";
  manifest["seed"] = config.seed;
  manifest["n_users"] = data.users.size();
  manifest["n_events"] = n_events;
  manifest["vocab_sizes"] = data.vocab.sizes();
  manifest["n_train_windows"] = data.split.train.size();
  manifest["n_test_windows"] = data.split.test.size();
  manifest["events_sha256"] = sha256_hex(bytes.data(), bytes.size());
  write_atomic(out / "manifest.json", pretty(manifest));
}

void pretrain(const ExperimentConfig& config, const fs::path& out) {
  const Dataset data = load_dataset(config);
  ParameterSet<float> params;
  const auto losses = pretrain_encoder(config, data, params);
  save_checkpoint(out / "encoder.ckpt", make_checkpoint(encoder_fingerprint(config, data), params));
  write_atomic(out / "pretrain_metrics.jsonl", metrics_log(losses, config.training.pretrain.schedule, "pretrain"));
}

void cotrain_command(const ExperimentConfig& config, const fs::path& out) {
  const fs::path encoder_path = out / "encoder.ckpt";
  if (config.training.pretrained_encoder) require_file("pretrained encoder checkpoint", encoder_path);

  const Dataset data = load_dataset(config);
  const Tokenizer tokenizer = task_tokenizer(config, data);
  FusedModel<float> model(model_spec(config, data, tokenizer.size()), derive_seed(config.seed, SeedStream::kModelInit));
  if (config.training.pretrained_encoder) {
    const Checkpoint encoder = load_checkpoint(encoder_path);
    require_config_match(encoder.config, encoder_fingerprint(config, data));
    load_parameters(encoder, model.params(), "encoder.");
  }
  const TrainOptions options = cotrain_options(config);
  const auto losses = cotrain<float>(model, cotrain_examples(config, data, tokenizer), config.training.strategy, options);

  write_atomic(out / "tokenizer.json", tokenizer.to_json().dump(1) + "\n");
  save_checkpoint(out / "model.ckpt",
                  make_checkpoint(model_fingerprint(config, data, tokenizer.size()), model.params()));
  write_atomic(out / "cotrain_metrics.jsonl",
               metrics_log(losses, options.schedule, std::string(strategy_name(config.training.strategy))));
}

void eval_command(const ExperimentConfig& config, const fs::path& out) {
  const fs::path model_path = out / "model.ckpt", tokenizer_path = out / "tokenizer.json";
  require_file("cotrain checkpoint", model_path);
  require_file("tokenizer", tokenizer_path);

  const Dataset data = load_dataset(config);
  const Tokenizer tokenizer = Tokenizer::load(tokenizer_path);
  const Checkpoint checkpoint = load_checkpoint(model_path);
  require_config_match(checkpoint.config, model_fingerprint(config, data, tokenizer.size()));
  FusedModel<float> model(model_spec(config, data, tokenizer.size()), derive_seed(config.seed, SeedStream::kModelInit));
  load_parameters(checkpoint, model.params());

  std::vector<ExampleWindow> test = data.split.test;
  if (config.eval.max_examples > 0 && test.size() > static_cast<std::size_t>(config.eval.max_examples)) {
    test.resize(static_cast<std::size_t>(config.eval.max_examples));
  }
  const Metrics metrics =
      evaluate<float>(model, task_spec(config, data, config.eval.task), test, tokenizer, data.vocab,
                      config.training.threads);
  write_atomic(out / "metrics.json", pretty(metrics_json(metrics, config.eval.task,
                                                         strategy_name(config.training.strategy),
                                                         fusion_mode_name(config.fusion.mode))));
}

void flops_command(const ExperimentConfig& config, const fs::path& out) {
  const auto& f = config.flops;
  const auto rows = flops_table(f.n_params, f.batch, f.steps, f.budgets);
  write_atomic(out / "flops.txt", render_flops_text(rows, f.budgets));
  write_atomic(out / "flops.json", pretty(render_flops_json(rows, f.budgets)));
}

std::string one_line(std::string text) {
  for (char& c : text) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return text;
}

}  // namespace

Dataset load_dataset(const ExperimentConfig& config) {
  Dataset data;
  if (config.data.path) {
    data.users = ingest_jsonl(*config.data.path);
  } else {
    SyntheticConfig synthetic = config.data.synthetic;
    synthetic.seed = config.seed;
    data.users = synth_generate(synthetic).users;
  }
  data.vocab = build_vocab(data.users);
  data.split = make_split(data.users, config.data.window);
  if (data.split.train.empty() || data.split.test.empty()) {
    throw DataError("no user has more than data.window = " + std::to_string(config.data.window) + " events");
  }
  data.item_names = labels_of(data.vocab.name);
  data.category_names = labels_of(data.vocab.category);
  return data;
}

std::uint64_t derive_seed(std::uint64_t seed, SeedStream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), 0x5eedu};
  std::uint32_t words[2];
  seq.generate(words, words + 2);
  return (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
}

Tokenizer task_tokenizer(const ExperimentConfig& config, const Dataset& data) {
  return build_tokenizer(task_corpus(data.users, config.eval.prompts));
}

ModelSpec model_spec(const ExperimentConfig& config, const Dataset& data, int text_vocab) {
  const EncoderSection& e = config.encoder;
  ModelSpec spec;
  spec.encoder = e.kind;
  spec.ar = {e.layers, e.d_model, e.heads, data.vocab.sizes(), config.data.window};
  spec.dual = {e.layers, e.d_model, e.heads, data.vocab.sizes(), config.data.window,
               e.dual_fusion, e.num_outputs, e.fusion_hidden};
  spec.lm = config.lm;
  spec.lm.vocab = text_vocab;
  spec.fusion = config.fusion;
  if (config.training.strategy == Strategy::kLora) spec.lora = config.training.lora;
  return spec;
}

TaskSpec task_spec(const ExperimentConfig& config, const Dataset& data, TaskKind kind) {
  TaskSpec task;
  task.kind = kind;
  if (kind == TaskKind::kNextItem) task.candidates = data.item_names;
  if (kind == TaskKind::kFavoriteCategory) task.candidates = data.category_names;
  task.prompts = config.eval.prompts;
  task.short_term_events = config.short_term_events;
  task.ks = config.eval.ks;
  task.max_new_tokens = config.eval.max_new_tokens;
  return task;
}

std::vector<TextExample> cotrain_examples(const ExperimentConfig& config, const Dataset& data,
                                          const Tokenizer& tokenizer) {
  std::vector<TaskSpec> tasks;
  for (TaskKind kind : config.training.tasks) tasks.push_back(task_spec(config, data, kind));
  std::vector<TextExample> examples;
  for (const auto& window : data.split.train) {
    for (const auto& task : tasks) {
      if (task.kind == TaskKind::kReviewGeneration && task_target(task, window).empty()) continue;
      examples.push_back(make_text_example(task, window, tokenizer, data.vocab));
    }
  }
  if (examples.empty()) throw DataError("no cotraining examples for the configured tasks");
  return examples;
}

TrainOptions pretrain_options(const ExperimentConfig& config) {
  TrainOptions options;
  options.schedule = config.training.pretrain.schedule;
  options.batch_size = config.training.pretrain.batch_size;
  options.optim.weight_decay = config.training.weight_decay;
  options.optim.grad_clip = config.training.grad_clip;
  options.seed = derive_seed(config.seed, SeedStream::kPretrainBatches);
  options.threads = config.training.threads;
  return options;
}

TrainOptions cotrain_options(const ExperimentConfig& config) {
  TrainOptions options = pretrain_options(config);
  options.schedule = config.training.cotrain.schedule;
  options.batch_size = config.training.cotrain.batch_size;
  options.seed = derive_seed(config.seed, SeedStream::kCotrainBatches);
  if (config.training.encoder_lr_scale != 1.0) options.optim.lr_scales = {{"encoder.", config.training.encoder_lr_scale}};
  return options;
}

nlohmann::json encoder_fingerprint(const ExperimentConfig& config, const Dataset& data) {
  nlohmann::json j;
  j["encoder"] = config.resolved["encoder"];
  j["data"]["window"] = config.data.window;
  j["vocab_sizes"] = data.vocab.sizes();
  return j;
}

nlohmann::json model_fingerprint(const ExperimentConfig& config, const Dataset& data, int text_vocab) {
  nlohmann::json j = encoder_fingerprint(config, data);
  j["lm"] = config.resolved["lm"];
  j["lm"]["vocab"] = text_vocab;
  j["fusion"] = config.resolved["fusion"];
  j["training"]["strategy"] = strategy_name(config.training.strategy);
  if (config.training.strategy == Strategy::kLora) j["training"]["lora"] = config.resolved["training"]["lora"];
  return j;
}

std::vector<double> pretrain_encoder(const ExperimentConfig& config, const Dataset& data,
                                     ParameterSet<float>& params) {
  const ModelSpec spec = model_spec(config, data, 1);
  Rng rng(derive_seed(config.seed, SeedStream::kEncoderInit));
  const TrainOptions options = pretrain_options(config);
  if (spec.encoder == EncoderKind::kAutoregressive) {
    const ArEncoder<float> encoder(spec.ar, params, rng);
    std::vector<std::vector<FeatureIds>> sequences;
    for (const auto& window : data.split.train) sequences.push_back(encode_events(data.vocab, window.inputs));
    return pretrain_ar(encoder, params, sequences, options);
  }
  const DualEncoder<float> encoder(spec.dual, params, rng);
  std::vector<DualEncoder<float>::Example> examples;
  for (const auto& window : data.split.train) {
    examples.push_back({encode_events(data.vocab, window.inputs), data.vocab.name.encode(window.label.name)});
  }
  return pretrain_dual(encoder, params, examples, options);
}

void write_atomic(const fs::path& path, std::string_view contents) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

int run(std::string_view command, const ExperimentConfig& config, const fs::path& out_dir, std::ostream& err) {
  const std::string prefix = "userllm " + std::string(command) + ": ";
  if (std::find(std::begin(kCommands), std::end(kCommands), command) == std::end(kCommands)) {
    err << prefix << "unknown command\n";
    return 2;
  }
  try {
    fs::create_directories(out_dir);
    ojson record;
    record["command"] = command;
    record["seed"] = config.seed;
    record["config"] = config.resolved;
    write_atomic(out_dir / "run.json", pretty(record));

    if (command == "datagen") {
      datagen(config, out_dir);
    } else if (command == "pretrain") {
      pretrain(config, out_dir);
    } else if (command == "cotrain") {
      cotrain_command(config, out_dir);
    } else if (command == "eval") {
      eval_command(config, out_dir);
    } else {
      flops_command(config, out_dir);
    }
  } catch (const std::exception& e) {
    err << prefix << one_line(e.what()) << '\n';
    return 1;
  }
  return 0;
}

}  // namespace userllm
