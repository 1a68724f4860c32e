#include "userllm/harness/config.hpp"

#include <fstream>
#include <sstream>

namespace userllm {

namespace {

using ojson = nlohmann::ordered_json;

const char* const kTextPromptTokens = "flops.text_prompt_tokens";

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

// Structural check of user input against the defaults: every key must exist
// there and carry a value of the same JSON type.
void check_shape(const nlohmann::json& user, const ojson& schema, const std::string& path,
                 std::vector<Violation>& out) {
  const std::string value = user.dump();
  if (path == kTextPromptTokens) {
    if (!user.is_object()) {
      out.push_back({path, value, "must be an object mapping history length to token count"});
      return;
    }
    for (const auto& [key, tokens] : user.items()) {
      int len = 0;
      std::istringstream in(key);
      if (!(in >> len) || !in.eof() || len < 1) out.push_back({join(path, key), key, "key must be a positive integer length"});
      if (!tokens.is_number_integer() || tokens.get<long long>() < 1) {
        out.push_back({join(path, key), tokens.dump(), "must be a positive integer token count"});
      }
    }
    return;
  }
  switch (schema.type()) {
    case nlohmann::json::value_t::object:
      if (!user.is_object()) {
        out.push_back({path.empty() ? "<root>" : path, value, "must be an object"});
        return;
      }
      for (const auto& [key, child] : user.items()) {
        const auto it = schema.find(key);
        if (it == schema.end()) {
          out.push_back({join(path, key), child.dump(), "unknown field"});
        } else {
          check_shape(child, *it, join(path, key), out);
        }
      }
      return;
    case nlohmann::json::value_t::null:
      if (!user.is_null() && !user.is_string()) out.push_back({path, value, "must be a string or null"});
      return;
    case nlohmann::json::value_t::number_integer:
    case nlohmann::json::value_t::number_unsigned:
      if (!user.is_number_integer()) out.push_back({path, value, "must be an integer"});
      return;
    case nlohmann::json::value_t::number_float:
      if (!user.is_number()) out.push_back({path, value, "must be a number"});
      return;
    case nlohmann::json::value_t::boolean:
      if (!user.is_boolean()) out.push_back({path, value, "must be true or false"});
      return;
    case nlohmann::json::value_t::string:
      if (!user.is_string()) out.push_back({path, value, "must be a string"});
      return;
    case nlohmann::json::value_t::array:
      if (!user.is_array()) {
        out.push_back({path, value, "must be an array"});
        return;
      }
      for (std::size_t i = 0; i < user.size(); ++i) {
        check_shape(user[i], schema.front(), path + "[" + std::to_string(i) + "]", out);
      }
      return;
    default:
      return;
  }
}

void overlay(ojson& dst, const nlohmann::json& src, const std::string& path) {
  if (dst.is_object() && src.is_object() && path != kTextPromptTokens) {
    for (const auto& [key, value] : src.items()) overlay(dst[key], value, join(path, key));
  } else {
    dst = ojson::parse(src.dump());
  }
}

ScheduleConfig read_schedule(const ojson& j) {
  return {j["peak_lr"].get<double>(), j["steps"].get<int>(), j["warmup_fraction"].get<double>()};
}

// Builds the typed config from a fully resolved JSON document, recording
// enum and range violations.
ExperimentConfig build(const ojson& r, std::vector<Violation>& out) {
  auto bad = [&](const std::string& field, const ojson& value, const std::string& constraint) {
    out.push_back({field, value.dump(), constraint});
  };
  auto at_least = [&](const std::string& field, const ojson& value, int min) {
    if (value.get<double>() < min) bad(field, value, field + " ≥ " + std::to_string(min));
  };

  ExperimentConfig c;
  c.resolved = r;
  c.seed = r["seed"].get<std::uint64_t>();

  const ojson& data = r["data"];
  if (data["path"].is_string()) c.data.path = data["path"].get<std::string>();
  c.data.window = data["window"].get<int>();
  at_least("data.window", data["window"], 1);
  const ojson& syn = data["synthetic"];
  c.data.synthetic.num_users = syn["num_users"].get<int>();
  c.data.synthetic.num_items = syn["num_items"].get<int>();
  c.data.synthetic.num_categories = syn["num_categories"].get<int>();
  c.data.synthetic.events_per_user = syn["events_per_user"].get<int>();
  c.data.synthetic.preference_concentration = syn["preference_concentration"].get<double>();
  c.data.synthetic.single_category_users = syn["single_category_users"].get<bool>();
  c.data.synthetic.seed = c.seed;
  at_least("data.synthetic.num_users", syn["num_users"], 1);
  at_least("data.synthetic.num_categories", syn["num_categories"], 1);
  if (c.data.synthetic.num_items < c.data.synthetic.num_categories) {
    bad("data.synthetic.num_items", syn["num_items"], "data.synthetic.num_items ≥ data.synthetic.num_categories");
  }
  if (c.data.synthetic.events_per_user < c.data.window + 1) {
    bad("data.synthetic.events_per_user", syn["events_per_user"], "data.synthetic.events_per_user ≥ data.window + 1");
  }
  if (!(c.data.synthetic.preference_concentration > 0)) {
    bad("data.synthetic.preference_concentration", syn["preference_concentration"], "data.synthetic.preference_concentration > 0");
  }

  const ojson& enc = r["encoder"];
  const std::string kind = enc["kind"].get<std::string>();
  if (kind == "ar") {
    c.encoder.kind = EncoderKind::kAutoregressive;
  } else if (kind == "dual") {
    c.encoder.kind = EncoderKind::kDual;
  } else {
    bad("encoder.kind", enc["kind"], "must be one of \"ar\", \"dual\"");
  }
  c.encoder.layers = enc["layers"].get<int>();
  c.encoder.d_model = enc["d_model"].get<int>();
  c.encoder.heads = enc["heads"].get<int>();
  c.encoder.num_outputs = enc["num_outputs"].get<int>();
  c.encoder.fusion_hidden = enc["fusion_hidden"].get<int>();
  const std::string dual_fusion = enc["dual_fusion"].get<std::string>();
  if (dual_fusion == "mean") {
    c.encoder.dual_fusion = DualFusion::kMean;
  } else if (dual_fusion == "concat_mlp") {
    c.encoder.dual_fusion = DualFusion::kConcatMlp;
  } else {
    bad("encoder.dual_fusion", enc["dual_fusion"], "must be one of \"mean\", \"concat_mlp\"");
  }
  at_least("encoder.layers", enc["layers"], 1);
  at_least("encoder.heads", enc["heads"], 1);
  at_least("encoder.d_model", enc["d_model"], kNumModalities);
  at_least("encoder.num_outputs", enc["num_outputs"], 1);
  at_least("encoder.fusion_hidden", enc["fusion_hidden"], 1);
  if (c.encoder.heads > 0 && c.encoder.d_model % c.encoder.heads != 0) {
    bad("encoder.d_model", enc["d_model"], "encoder.d_model divisible by encoder.heads");
  }

  const ojson& lm = r["lm"];
  c.lm.layers = lm["layers"].get<int>();
  c.lm.d_lm = lm["d_lm"].get<int>();
  c.lm.heads = lm["heads"].get<int>();
  c.lm.max_context = lm["max_context"].get<int>();
  at_least("lm.layers", lm["layers"], 1);
  at_least("lm.heads", lm["heads"], 1);
  at_least("lm.max_context", lm["max_context"], 2);
  if (c.lm.heads > 0 && c.lm.d_lm % c.lm.heads != 0) bad("lm.d_lm", lm["d_lm"], "lm.d_lm divisible by lm.heads");
  if (c.lm.d_lm < c.encoder.d_model) bad("lm.d_lm", lm["d_lm"], "lm.d_lm ≥ encoder.d_model");

  const ojson& fusion = r["fusion"];
  const std::string mode = fusion["mode"].get<std::string>();
  if (mode == "cross_attention") {
    c.fusion.mode = FusionMode::kCrossAttention;
  } else if (mode == "soft_prompt") {
    c.fusion.mode = FusionMode::kSoftPrompt;
  } else {
    bad("fusion.mode", fusion["mode"], "exactly one fusion mode (\"cross_attention\" or \"soft_prompt\")");
  }
  const ojson& perceiver = fusion["perceiver"];
  c.fusion.perceiver.enabled = perceiver["enabled"].get<bool>();
  c.fusion.perceiver.layers = perceiver["layers"].get<int>();
  c.fusion.perceiver.latents = perceiver["latents"].get<int>();
  c.fusion.perceiver.heads = perceiver["heads"].get<int>();
  at_least("fusion.perceiver.layers", perceiver["layers"], 1);
  at_least("fusion.perceiver.latents", perceiver["latents"], 1);
  at_least("fusion.perceiver.heads", perceiver["heads"], 1);
  if (c.fusion.perceiver.enabled && c.fusion.perceiver.heads > 0 && c.encoder.d_model % c.fusion.perceiver.heads != 0) {
    bad("fusion.perceiver.heads", perceiver["heads"], "encoder.d_model divisible by fusion.perceiver.heads");
  }
  c.fusion.task_prompt_len = fusion["task_prompt_len"].get<int>();
  at_least("fusion.task_prompt_len", fusion["task_prompt_len"], 1);
  c.short_term_events = fusion["short_term_events"].get<int>();
  at_least("fusion.short_term_events", fusion["short_term_events"], 0);
  if (c.short_term_events > c.data.window) {
    bad("fusion.short_term_events", fusion["short_term_events"], "fusion.short_term_events ≤ data.window");
  }

  const ojson& tr = r["training"];
  try {
    c.training.strategy = parse_strategy(tr["strategy"].get<std::string>());
  } catch (const std::invalid_argument&) {
    bad("training.strategy", tr["strategy"], "must be one of \"Full\", \"Enc\", \"LoRA\", \"Proj\"");
  }
  const std::string init = tr["encoder_init"].get<std::string>();
  if (init == "pretrained" || init == "random") {
    c.training.pretrained_encoder = init == "pretrained";
  } else {
    bad("training.encoder_init", tr["encoder_init"], "must be one of \"pretrained\", \"random\"");
  }
  for (const char* phase : {"pretrain", "cotrain"}) {
    const ojson& p = tr[phase];
    PhaseSection& section = std::string(phase) == "pretrain" ? c.training.pretrain : c.training.cotrain;
    section.schedule = read_schedule(p);
    section.batch_size = p["batch_size"].get<int>();
    const std::string prefix = std::string("training.") + phase + ".";
    at_least(prefix + "steps", p["steps"], 0);
    at_least(prefix + "batch_size", p["batch_size"], 1);
    if (!(section.schedule.peak_lr > 0)) bad(prefix + "peak_lr", p["peak_lr"], prefix + "peak_lr > 0");
    if (!(section.schedule.warmup_fraction >= 0 && section.schedule.warmup_fraction < 1)) {
      bad(prefix + "warmup_fraction", p["warmup_fraction"], "0 ≤ " + prefix + "warmup_fraction < 1");
    }
  }
  c.training.weight_decay = tr["weight_decay"].get<double>();
  c.training.grad_clip = tr["grad_clip"].get<double>();
  c.training.encoder_lr_scale = tr["encoder_lr_scale"].get<double>();
  at_least("training.weight_decay", tr["weight_decay"], 0);
  at_least("training.grad_clip", tr["grad_clip"], 0);
  at_least("training.encoder_lr_scale", tr["encoder_lr_scale"], 0);
  c.training.lora.rank = tr["lora"]["rank"].get<int>();
  c.training.lora.alpha = tr["lora"]["alpha"].get<double>();
  at_least("training.lora.rank", tr["lora"]["rank"], 1);
  if (!(c.training.lora.alpha > 0)) bad("training.lora.alpha", tr["lora"]["alpha"], "training.lora.alpha > 0");
  c.training.tasks.clear();
  for (std::size_t i = 0; i < tr["tasks"].size(); ++i) {
    try {
      c.training.tasks.push_back(parse_task(tr["tasks"][i].get<std::string>()));
    } catch (const std::invalid_argument&) {
      bad("training.tasks[" + std::to_string(i) + "]", tr["tasks"][i],
          "must be one of \"next_item\", \"favorite_category\", \"review_generation\"");
    }
  }
  if (tr["tasks"].empty()) bad("training.tasks", tr["tasks"], "must list at least one task");
  c.training.threads = tr["threads"].get<int>();
  at_least("training.threads", tr["threads"], 1);

  const ojson& ev = r["eval"];
  try {
    c.eval.task = parse_task(ev["task"].get<std::string>());
  } catch (const std::invalid_argument&) {
    bad("eval.task", ev["task"], "must be one of \"next_item\", \"favorite_category\", \"review_generation\"");
  }
  c.eval.ks = ev["ks"].get<std::vector<int>>();
  if (c.eval.ks.empty()) bad("eval.ks", ev["ks"], "must list at least one k");
  for (std::size_t i = 0; i < c.eval.ks.size(); ++i) at_least("eval.ks[" + std::to_string(i) + "]", ev["ks"][i], 1);
  c.eval.max_examples = ev["max_examples"].get<int>();
  c.eval.max_new_tokens = ev["max_new_tokens"].get<int>();
  at_least("eval.max_examples", ev["max_examples"], 0);
  at_least("eval.max_new_tokens", ev["max_new_tokens"], 1);
  c.eval.prompts.next_item = ev["prompts"]["next_item"].get<std::string>();
  c.eval.prompts.favorite_category = ev["prompts"]["favorite_category"].get<std::string>();
  c.eval.prompts.review = ev["prompts"]["review"].get<std::string>();

  const ojson& fl = r["flops"];
  c.flops.n_params = fl["n_params"].get<double>();
  c.flops.batch = fl["batch"].get<double>();
  c.flops.steps = fl["steps"].get<double>();
  for (const char* key : {"n_params", "batch", "steps"}) {
    if (!(fl[key].get<double>() > 0)) bad(std::string("flops.") + key, fl[key], std::string("flops.") + key + " > 0");
  }
  c.flops.budgets.text_prompt.clear();
  for (const auto& [len, tokens] : fl["text_prompt_tokens"].items()) {
    c.flops.budgets.text_prompt[std::stoi(len)] = tokens.get<int>();
  }
  if (c.flops.budgets.text_prompt.empty()) bad(kTextPromptTokens, fl["text_prompt_tokens"], "must list at least one length");
  c.flops.budgets.user_llm_text = fl["user_llm_tokens"].get<int>();
  c.flops.budgets.perceiver_latents = c.fusion.perceiver.latents;
  at_least("flops.user_llm_tokens", fl["user_llm_tokens"], 1);
  return c;
}

}  // namespace

std::string Violation::to_string() const { return field + " = " + value + ": " + constraint; }

namespace {

std::string describe(const std::vector<Violation>& violations) {
  std::string text = "invalid config";
  for (const auto& v : violations) text += "; " + v.to_string();
  return text;
}

}  // namespace

ConfigError::ConfigError(std::vector<Violation> violations)
    : std::runtime_error(describe(violations)), violations_(std::move(violations)) {}

ojson default_config_json() {
  const PromptTemplates prompts;
  return ojson{
      {"seed", 0},
      {"data",
       {{"path", nullptr},
        {"window", 50},
        {"synthetic",
         {{"num_users", 2000},
          {"num_items", 500},
          {"num_categories", 20},
          {"events_per_user", 55},
          {"preference_concentration", 0.3},
          {"single_category_users", false}}}}},
      {"encoder",
       {{"kind", "ar"},
        {"layers", 6},
        {"d_model", 128},
        {"heads", 8},
        {"dual_fusion", "mean"},
        {"num_outputs", 1},
        {"fusion_hidden", 256}}},
      {"lm", {{"layers", 4}, {"d_lm", 256}, {"heads", 8}, {"max_context", 256}}},
      {"fusion",
       {{"mode", "cross_attention"},
        {"perceiver", {{"enabled", false}, {"layers", 6}, {"latents", 16}, {"heads", 8}}},
        {"task_prompt_len", 10},
        {"short_term_events", 0}}},
      {"training",
       {{"strategy", "Enc"},
        {"encoder_init", "pretrained"},
        {"pretrain", {{"steps", 1000}, {"batch_size", 32}, {"peak_lr", 1e-3}, {"warmup_fraction", 0.1}}},
        {"cotrain", {{"steps", 2000}, {"batch_size", 32}, {"peak_lr", 1e-3}, {"warmup_fraction", 0.1}}},
        {"weight_decay", 0.0},
        {"grad_clip", 0.0},
        {"encoder_lr_scale", 1.0},
        {"lora", {{"rank", 8}, {"alpha", 16.0}}},
        {"tasks", {"favorite_category"}},
        {"threads", 1}}},
      {"eval",
       {{"task", "favorite_category"},
        {"ks", {1, 5, 10}},
        {"max_examples", 0},
        {"max_new_tokens", 24},
        {"prompts",
         {{"next_item", prompts.next_item},
          {"favorite_category", prompts.favorite_category},
          {"review", prompts.review}}}}},
      {"flops",
       {{"n_params", 1e9},
        {"batch", 8192.0},
        {"steps", 10000.0},
        {"text_prompt_tokens", {{"50", 700}, {"100", 1350}, {"200", 2500}}},
        {"user_llm_tokens", 32}}},
  };
}

std::vector<Violation> validate_config(const nlohmann::json& config) {
  std::vector<Violation> out;
  const ojson defaults = default_config_json();
  check_shape(config, defaults, "", out);
  if (config.contains("seed") && config["seed"].is_number_integer() && config["seed"].get<long long>() < 0) {
    out.push_back({"seed", config["seed"].dump(), "seed >= 0"});
  }
  if (!out.empty()) return out;
  ojson resolved = defaults;
  overlay(resolved, config, "");
  build(resolved, out);
  return out;
}

ExperimentConfig parse_config(const nlohmann::json& config) {
  std::vector<Violation> violations = validate_config(config);
  if (!violations.empty()) throw ConfigError(std::move(violations));
  ojson resolved = default_config_json();
  overlay(resolved, config, "");
  return build(resolved, violations);
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({{"<file>", path.string(), "must be a readable config file"}});
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError({{"<file>", path.string(), std::string("must be valid JSON (") + e.what() + ")"}});
  }
  return parse_config(j);
}

void set_seed(ExperimentConfig& config, std::uint64_t seed) {
  config.seed = seed;
  config.data.synthetic.seed = seed;
  config.resolved["seed"] = seed;
}

}  // namespace userllm
