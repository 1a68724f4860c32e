#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "userllm/harness/harness.hpp"

using namespace userllm;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = USERLLM_CONFIG_DIR;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("userllm_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

bool has(const std::vector<Violation>& vs, const std::string& field, const std::string& constraint) {
  for (const auto& v : vs) {
    if (v.field == field && v.constraint.find(constraint) != std::string::npos) return true;
  }
  return false;
}

}  // namespace

TEST_CASE("defaults validate and carry the documented values") {
  CHECK(validate_config(nlohmann::json::object()).empty());
  CHECK(validate_config(nlohmann::json(default_config_json())).empty());
  const ExperimentConfig c = parse_config(nlohmann::json::object());
  CHECK(c.encoder.layers == 6);
  CHECK(c.encoder.d_model == 128);
  CHECK(c.encoder.heads == 8);
  CHECK(c.fusion.perceiver.layers == 6);
  CHECK(c.fusion.perceiver.latents == 16);
  CHECK(c.training.lora.rank == 8);
  CHECK(c.training.pretrain.schedule.warmup_fraction == 0.1);
  CHECK(c.fusion.task_prompt_len == 10);
  CHECK(c.data.window == 50);
  CHECK(c.resolved == default_config_json());
}

TEST_CASE("violations name field, value and constraint") {
  auto vs = validate_config(nlohmann::json::parse(R"({"training": {"lora": {"rank": 0}}})"));
  REQUIRE(vs.size() == 1);
  CHECK(vs[0].field == "training.lora.rank");
  CHECK(vs[0].value == "0");
  CHECK(vs[0].constraint == "training.lora.rank ≥ 1");

  vs = validate_config(nlohmann::json::parse(R"({"fusion": {"mode": "both"}})"));
  REQUIRE(vs.size() == 1);
  CHECK(vs[0].field == "fusion.mode");
  CHECK(vs[0].value == "\"both\"");
  CHECK(vs[0].constraint.find("exactly one fusion mode") != std::string::npos);

  vs = validate_config(nlohmann::json::parse(R"({"encoder": {"depth": 3}, "lm": {"layers": "four"}})"));
  CHECK(has(vs, "encoder.depth", "unknown field"));
  CHECK(has(vs, "lm.layers", "must be an integer"));

  vs = validate_config(nlohmann::json::parse(
      R"({"encoder": {"d_model": 100, "heads": 8}, "data": {"window": 60}, "training": {"strategy": "Adapters"}})"));
  CHECK(has(vs, "encoder.d_model", "divisible by encoder.heads"));
  CHECK(has(vs, "data.synthetic.events_per_user", "data.window + 1"));
  CHECK(has(vs, "training.strategy", "must be one of"));

  vs = validate_config(nlohmann::json::parse(R"({"flops": {"text_prompt_tokens": {"fifty": 700}}})"));
  CHECK(has(vs, "flops.text_prompt_tokens.fifty", "positive integer"));

  try {
    parse_config(nlohmann::json::parse(R"({"training": {"lora": {"rank": 0}}})"));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.violations().size() == 1);
    CHECK(std::string(e.what()).find("training.lora.rank") != std::string::npos);
  }
}

TEST_CASE("overrides keep unrelated defaults") {
  const auto c = parse_config(nlohmann::json::parse(
      R"({"fusion": {"perceiver": {"enabled": true}}, "flops": {"text_prompt_tokens": {"75": 1000}}})"));
  CHECK(c.fusion.perceiver.enabled);
  CHECK(c.fusion.perceiver.latents == 16);
  CHECK(c.flops.budgets.text_prompt == std::map<int, int>{{75, 1000}});
  CHECK(c.resolved["fusion"]["mode"] == "cross_attention");
}

TEST_CASE("seed override reaches the resolved config") {
  ExperimentConfig c = load_config(kConfigs / "smoke.json");
  set_seed(c, 42);
  CHECK(c.seed == 42);
  CHECK(c.resolved["seed"] == 42);
  CHECK(derive_seed(42, SeedStream::kModelInit) == derive_seed(42, SeedStream::kModelInit));
  CHECK(derive_seed(42, SeedStream::kModelInit) != derive_seed(43, SeedStream::kModelInit));
  CHECK(derive_seed(42, SeedStream::kModelInit) != derive_seed(42, SeedStream::kEncoderInit));
}

TEST_CASE("load_config reports unreadable and malformed files") {
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
  const fs::path dir = scratch("malformed");
  std::ofstream(dir / "bad.json") << "{\"seed\": ";
  CHECK_THROWS_AS(load_config(dir / "bad.json"), ConfigError);
}

TEST_CASE("datagen is deterministic") {
  const ExperimentConfig c = load_config(kConfigs / "smoke.json");
  const fs::path a = scratch("datagen_a"), b = scratch("datagen_b");
  std::ostringstream err;
  REQUIRE(run("datagen", c, a, err) == 0);
  REQUIRE(run("datagen", c, b, err) == 0);
  CHECK(slurp(a / "events.jsonl") == slurp(b / "events.jsonl"));
  CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
  CHECK(!slurp(a / "events.jsonl").empty());
  const auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
  CHECK(manifest["n_users"] == 200);
  CHECK(manifest["n_events"] == 200 * 24);

  // The written dataset can be ingested as the data source of a later run.
  ExperimentConfig from_file = c;
  from_file.data.path = (a / "events.jsonl").string();
  const Dataset original = load_dataset(c), ingested = load_dataset(from_file);
  CHECK(ingested.users == original.users);
}

TEST_CASE("eval without a cotrain checkpoint names the missing path") {
  const ExperimentConfig c = load_config(kConfigs / "smoke.json");
  const fs::path dir = scratch("eval_missing");
  std::ostringstream err;
  CHECK(run("eval", c, dir, err) != 0);
  const std::string message = err.str();
  CHECK(message.find((dir / "model.ckpt").string()) != std::string::npos);
  CHECK(std::count(message.begin(), message.end(), '\n') == 1);

  ExperimentConfig pretrained = c;
  CHECK(run("cotrain", pretrained, scratch("cotrain_missing"), err) != 0);
  CHECK(err.str().find("encoder.ckpt") != std::string::npos);
}

TEST_CASE("smoke pipeline emits every artifact kind") {
  const ExperimentConfig c = load_config(kConfigs / "smoke.json");
  const fs::path dir = scratch("smoke");
  std::ostringstream err;
  for (const char* command : {"datagen", "pretrain", "cotrain", "eval", "flops"}) {
    INFO(command << ": " << err.str());
    REQUIRE(run(command, c, dir, err) == 0);
    const auto record = nlohmann::json::parse(slurp(dir / "run.json"));
    CHECK(record["command"] == command);
    CHECK(record["seed"] == c.seed);
    CHECK(record["config"] == nlohmann::json(c.resolved));
  }
  // JSONL dataset, checkpoints, metrics JSON and the FLOPs table.
  for (const char* file : {"events.jsonl", "manifest.json", "encoder.ckpt", "pretrain_metrics.jsonl", "model.ckpt",
                           "tokenizer.json", "cotrain_metrics.jsonl", "metrics.json", "flops.txt", "flops.json"}) {
    CHECK_MESSAGE(fs::is_regular_file(dir / file), file);
  }
  for (const auto& entry : fs::directory_iterator(dir)) CHECK(entry.path().extension() != ".tmp");

  const auto metrics = nlohmann::json::parse(slurp(dir / "metrics.json"));
  CHECK(metrics["task"] == "favorite_category");
  CHECK(metrics["n"] == 50);
  for (const char* k : {"recall@1", "recall@5", "recall@10"}) {
    CHECK(metrics[k].get<double>() >= 0.0);
    CHECK(metrics[k].get<double>() <= 1.0);
  }
  CHECK(metrics["recall@1"].get<double>() <= metrics["recall@5"].get<double>());

  std::ifstream log(dir / "cotrain_metrics.jsonl");
  int lines = 0;
  for (std::string line; std::getline(log, line); ++lines) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j["step"] == lines + 1);
    CHECK(j["strategy"] == "Enc");
  }
  CHECK(lines == 20);
  CHECK(slurp(dir / "flops.txt").find("42.2X") != std::string::npos);

  // Eval refuses a checkpoint trained under different dimensions.
  ExperimentConfig other = c;
  other.resolved["lm"]["heads"] = 2;
  other.lm.heads = 2;
  CHECK(run("eval", other, dir, err) != 0);
  CHECK(err.str().find("lm.heads") != std::string::npos);
}

TEST_CASE("cotrain from a random encoder needs no pretraining") {
  ExperimentConfig c = parse_config(nlohmann::json::parse(slurp(kConfigs / "smoke.json")));
  c.training.pretrained_encoder = false;
  c.training.strategy = Strategy::kLora;
  c.training.cotrain.schedule.total_steps = 3;
  c.fusion.mode = FusionMode::kSoftPrompt;
  const fs::path dir = scratch("random_lora");
  std::ostringstream err;
  CHECK(run("cotrain", c, dir, err) == 0);
  CHECK(err.str().empty());
  const Checkpoint ckpt = load_checkpoint(dir / "model.ckpt");
  CHECK(ckpt.find("lm.layers.0.attn.q.lora_a") != nullptr);
  CHECK(ckpt.find("fusion.soft_prompt.proj.weight") != nullptr);
}

TEST_CASE("the CLI maps failures to nonzero exits") {
  const std::string cli = USERLLM_CLI;
  const fs::path dir = scratch("cli");
  const std::string flops = cli + " flops --config " + (kConfigs / "smoke.json").string() + " --seed 3 --out " +
                            dir.string() + " 2>" + (dir / "err.txt").string();
  CHECK(std::system(flops.c_str()) == 0);
  CHECK(fs::is_regular_file(dir / "flops.json"));
  CHECK(nlohmann::json::parse(slurp(dir / "run.json"))["seed"] == 3);

  std::ofstream(dir / "bad.json") << R"({"fusion": {"mode": "both"}})";
  const std::string bad = cli + " flops --config " + (dir / "bad.json").string() + " --out " + dir.string() + " 2>" +
                          (dir / "err.txt").string();
  CHECK(std::system(bad.c_str()) != 0);
  CHECK(slurp(dir / "err.txt").find("fusion.mode") != std::string::npos);

  const std::string unknown = cli + " train --config " + (kConfigs / "smoke.json").string() + " 2>/dev/null";
  CHECK(std::system(unknown.c_str()) != 0);
}
