// Acceptance suite: one PASS/FAIL line per criterion. Exits nonzero when any
// criterion fails. Criteria 7 and 8 train on configs/acceptance.json and take
// several minutes on one core.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "userllm/harness/harness.hpp"
#include "userllm/numerics/grad_check.hpp"

using namespace userllm;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x, int digits = 4) {
  std::ostringstream s;
  s.precision(digits);
  s << x;
  return s.str();
}

const std::filesystem::path kConfigs = USERLLM_CONFIG_DIR;

// ---- shared small-model fixtures --------------------------------------------

const std::vector<int> kVocab = {14, 8, 12};

ModelSpec small_spec() {
  ModelSpec s;
  s.ar = {1, 12, 2, kVocab, 50};
  s.dual = {1, 12, 2, kVocab, 50, DualFusion::kMean, 1, 16};
  s.lm = {2, 16, 2, 25, 96};
  s.fusion.perceiver = {false, 2, 16, 2};
  return s;
}

std::vector<FeatureIds> random_events(int length, Rng& rng) {
  std::vector<FeatureIds> out;
  for (int t = 0; t < length; ++t) {
    FeatureIds ids;
    for (int v : kVocab) ids.push_back(std::uniform_int_distribution<int>(2, v - 1)(rng));
    out.push_back(ids);
  }
  return out;
}

std::vector<int> random_ids(int n, Rng& rng) {
  std::vector<int> ids;
  for (int i = 0; i < n; ++i) ids.push_back(std::uniform_int_distribution<int>(4, 24)(rng));
  return ids;
}

// ---- 1 ----------------------------------------------------------------------

Outcome efficiency_arithmetic() {
  const double a = flops_reduction(700, 32), b = flops_reduction(1350, 32), c = flops_reduction(2500, 32);
  return {a == 21.9 && b == 42.2 && c == 78.1, fmt(a) + "X " + fmt(b) + "X " + fmt(c) + "X"};
}

// ---- 2 ----------------------------------------------------------------------

Outcome perceiver_compression() {
  std::string detail;
  bool pass = true;
  for (EncoderKind kind : {EncoderKind::kAutoregressive, EncoderKind::kDual}) {
    ModelSpec s = small_spec();
    s.encoder = kind;
    s.fusion.perceiver.enabled = true;
    FusedModel<double> model(s, 4);
    Rng rng(5);
    Graph<double> g(false);
    const auto embs = *model.context(g, random_events(50, rng));
    const long rows = static_cast<long>(embs.vectors.rows());
    pass = pass && rows == 16 && embs.provenance == Provenance::kPerceiverCompressed;
    detail += std::string(kind == EncoderKind::kAutoregressive ? "ar" : "dual") + " 50->" + std::to_string(rows) + " ";
  }
  const int compressed = token_count(PromptMode::kUserLlm, 50, true, {}, TokenSide::kEmbedding);
  const auto json = render_flops_json(flops_table(1e9, 8192, 1e4), {});
  const int pct = json["perceiver"][0]["reduction_pct"].get<int>();
  pass = pass && compressed == 16 && pct == 68;
  return {pass, detail + "reduction " + std::to_string(pct) + "%"};
}

// ---- 3 ----------------------------------------------------------------------

template <typename Scalar>
double gate_zero_gap(const FusedModel<Scalar>& model, const std::vector<FeatureIds>& events,
                     const std::vector<int>& ids) {
  Graph<Scalar> g(false);
  const std::optional<Var<Scalar>> ctx = model.context(g, events)->vectors;
  const Matrix<Scalar> fused = model.decode(g, ctx, ids).text_logits().value();
  const Matrix<Scalar> base = model.lm().forward(g, ids).value();
  return static_cast<double>((fused - base).cwiseAbs().maxCoeff());
}

Outcome gate_zero_identity() {
  ModelSpec s = small_spec();
  s.lora = LoraConfig{4, 8.0};
  double worst64 = 0, worst32 = 0;
  for (bool perceiver : {false, true}) {
    s.fusion.perceiver.enabled = perceiver;
    FusedModel<double> exact(s, 1);
    FusedModel<float> single(s, 1);
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      Rng rng(seed);
      const auto events = random_events(20 + static_cast<int>(seed), rng);
      const auto ids = random_ids(12, rng);
      worst64 = std::max(worst64, gate_zero_gap(exact, events, ids));
      worst32 = std::max(worst32, gate_zero_gap(single, events, ids));
    }
  }
  return {worst64 == 0.0 && worst32 <= 1e-6,
          "10 windows, max |diff| 64-bit " + fmt(worst64) + ", 32-bit " + fmt(worst32)};
}

// ---- 4 ----------------------------------------------------------------------

Outcome gradient_verification() {
  ModelSpec s = small_spec();
  s.lora = LoraConfig{2, 4.0};
  Rng rng(10);
  const auto events = random_events(6, rng);
  const auto ids = random_ids(7, rng);
  const std::vector<int> targets(ids.begin() + 1, ids.end());
  auto text_loss = [&](const ContextualLM<double>& model) {
    return std::function<Var<double>(Graph<double>&)>([&](Graph<double>& g) {
      std::optional<Var<double>> ctx = model.context(g, events)->vectors;
      Var<double> logits = model.decode(g, ctx, ids).text_logits();
      return cross_entropy(slice_rows(logits, 0, logits.rows() - 1), std::span<const int>(targets));
    });
  };
  const GradCheckOptions sample{24, 1};

  std::vector<std::pair<std::string, GradCheckReport>> reports;
  {
    // Zero gates switch the fusion path off; open them so every layer sees gradient.
    FusedModel<double> model(s, 11);
    for (const auto& block : model.cross_blocks()) block.gate()->data(0, 0) = 0.3;
    Rng init(14);
    for (const auto& [name, t] : model.params().entries()) {
      if (name.ends_with(".lora_a")) t->data = normal_matrix<double>(t->rows(), t->cols(), 0.1, init);
    }
    auto& p = model.params();
    const auto loss = text_loss(model);
    reports.emplace_back("tied embedding logits", grad_check<double>(loss, {p.get("lm.embed")}, 1e-5, 1e-4, sample));
    reports.emplace_back("attention", grad_check<double>(loss,
                                                         {p.get("lm.layers.0.attn.q.weight"),
                                                          p.get("lm.layers.1.attn.k.weight"),
                                                          p.get("fusion.cross.0.attn.v.weight")},
                                                         1e-5, 1e-4, sample));
    reports.emplace_back("layer norm", grad_check<double>(loss,
                                                          {p.get("lm.layers.0.ln_attn.gamma"),
                                                           p.get("lm.layers.1.ln_mlp.beta"), p.get("lm.ln_final.gamma")},
                                                          1e-5, 1e-4, sample));
    reports.emplace_back("cross-attention gate",
                         grad_check<double>(loss, {p.get("fusion.cross.0.gate"), p.get("fusion.cross.1.gate")}, 1e-5,
                                            1e-4));
    reports.emplace_back("lora factors", grad_check<double>(loss,
                                                            {p.get("lm.layers.0.attn.q.lora_a"),
                                                             p.get("lm.layers.0.attn.q.lora_b"),
                                                             p.get("lm.layers.1.attn.v.lora_b")},
                                                            1e-5, 1e-4, sample));
  }
  {
    // The encoder's tied tables under its own pretraining loss.
    ParameterSet<double> params;
    Rng init(16);
    ArEncoder<double> encoder(s.ar, params, init);
    const auto loss = std::function<Var<double>(Graph<double>&)>(
        [&](Graph<double>& g) { return encoder.pretrain_loss(g, events); });
    reports.emplace_back("tied encoder tables",
                         grad_check<double>(loss, {encoder.embedding_table(0), encoder.embedding_table(2)}, 1e-5, 1e-4,
                                            sample));
  }
  {
    ModelSpec sp = s;
    sp.fusion.perceiver.enabled = true;
    FusedModel<double> model(sp, 12);
    for (const auto& block : model.cross_blocks()) block.gate()->data(0, 0) = 0.5;
    reports.emplace_back("perceiver latents",
                         grad_check<double>(text_loss(model), {model.perceiver()->latents()}, 1e-5, 1e-4, sample));
  }
  {
    ModelSpec sp = s;
    sp.fusion.mode = FusionMode::kSoftPrompt;
    FusedModel<double> model(sp, 15);
    reports.emplace_back("soft-prompt projection",
                         grad_check<double>(text_loss(model),
                                            {model.params().get("fusion.soft_prompt.proj.weight"),
                                             model.params().get("fusion.soft_prompt.proj.bias"),
                                             model.params().get("fusion.soft_prompt.task_prompt")},
                                            1e-5, 1e-4, sample));
  }

  bool pass = true;
  double worst = 0;
  std::string failed;
  for (const auto& [name, report] : reports) {
    pass = pass && report.pass;
    worst = std::max(worst, report.max_rel_err);
    if (!report.pass) failed += " [" + name + ": " + report.worst + "]";
  }
  return {pass, std::to_string(reports.size()) + " layer types, max rel err " + fmt(worst) + failed};
}

// ---- 5 ----------------------------------------------------------------------

Outcome freezing_contracts() {
  SyntheticConfig sc;
  sc.num_users = 40;
  sc.num_categories = 4;
  sc.num_items = 12;
  sc.events_per_user = 14;
  sc.seed = 5;
  const auto corpus = synth_generate(sc);
  const VocabularySet vocab = build_vocab(corpus.users);
  const WindowSplit split = make_split(corpus.users, 10);
  const Tokenizer tokenizer = build_tokenizer(task_corpus(corpus.users, {}));
  TaskSpec task;
  task.kind = TaskKind::kFavoriteCategory;
  task.candidates = corpus.category_names;
  std::vector<TextExample> examples;
  for (const auto& w : split.train) examples.push_back(make_text_example(task, w, tokenizer, vocab));

  ModelSpec spec = small_spec();
  spec.ar.vocab_sizes = vocab.sizes();
  spec.ar.max_seq_len = 10;
  spec.lm.vocab = tokenizer.size();
  spec.lm.max_context = 32;
  spec.lora = LoraConfig{2, 4.0};

  bool pass = true;
  std::string detail;
  for (Strategy strategy : {Strategy::kFull, Strategy::kEnc, Strategy::kLora, Strategy::kProj}) {
    FusedModel<float> model(spec, 7);
    std::map<std::string, std::string> before;
    for (const auto& [name, t] : model.params().entries()) before[name] = tensor_sha256(*t);
    TrainOptions options;
    options.schedule = {3e-3, 10, 0.1};
    options.batch_size = 8;
    options.seed = 1;
    cotrain<float>(model, examples, strategy, options);
    int frozen_changed = 0, trained_changed = 0;
    for (const auto& [name, t] : model.params().entries()) {
      const bool changed = tensor_sha256(*t) != before[name];
      if (in_strategy(name, strategy)) {
        trained_changed += changed;
      } else {
        frozen_changed += changed;
      }
    }
    pass = pass && frozen_changed == 0 && trained_changed > 0;
    detail += std::string(strategy_name(strategy)) + " " + std::to_string(trained_changed) + " changed/" +
              std::to_string(frozen_changed) + " frozen-changed; ";
  }
  return {pass, detail};
}

// ---- 6 ----------------------------------------------------------------------

Outcome schedule() {
  const ScheduleConfig s{1e-3, 1000, 0.1};
  const std::vector<std::pair<int, double>> expected = {{50, 5e-4}, {100, 1e-3}, {550, 5e-4}, {1000, 0.0}};
  double worst = 0;
  for (const auto& [step, lr] : expected) worst = std::max(worst, std::abs(lr_at(step, s) - lr));
  return {worst <= 1e-12, "max |error| " + fmt(worst)};
}

// ---- 7 and 8 ----------------------------------------------------------------

struct DeskRuns {
  bool ok = false;
  std::string error;
  double majority = 0, fav_r1 = 0, next_r10 = 0, plain_next_r10 = 0;
  int pt_reach = -1, rd_reach = -1;
  double rd_final = 0;
  double minutes_7 = 0, minutes_8 = 0;
};

double mean(const std::vector<double>& v, std::size_t from, std::size_t to) {
  double sum = 0;
  for (std::size_t i = from; i < to; ++i) sum += v[i];
  return sum / static_cast<double>(to - from);
}

// First step whose trailing moving average (window w) is at or below target.
int reach(const std::vector<double>& losses, double target, std::size_t w) {
  for (std::size_t i = 0; i < losses.size(); ++i) {
    const std::size_t from = i + 1 >= w ? i + 1 - w : 0;
    if (mean(losses, from, i + 1) <= target) return static_cast<int>(i) + 1;
  }
  return -1;
}

DeskRuns desk_runs() {
  using Clock = std::chrono::steady_clock;
  auto minutes = [](Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count() / 60; };
  DeskRuns r;
  try {
    const ExperimentConfig config = load_config(kConfigs / "acceptance.json");
    auto t = Clock::now();
    const Dataset data = load_dataset(config);
    const Tokenizer tokenizer = task_tokenizer(config, data);
    const ModelSpec spec = model_spec(config, data, tokenizer.size());
    const auto examples = cotrain_examples(config, data, tokenizer);
    const TrainOptions options = cotrain_options(config);
    const std::uint64_t model_seed = derive_seed(config.seed, SeedStream::kModelInit);

    std::vector<ExampleWindow> test = data.split.test;
    test.resize(std::min<std::size_t>(test.size(), static_cast<std::size_t>(config.eval.max_examples)));
    std::map<std::string, int> counts;
    for (const auto& w : test) ++counts[favorite_label(w.inputs)];
    int top = 0;
    for (const auto& [label, n] : counts) top = std::max(top, n);
    r.majority = static_cast<double>(top) / static_cast<double>(test.size());

    ParameterSet<float> encoder;
    pretrain_encoder(config, data, encoder);
    FusedModel<float> pt(spec, model_seed);
    load_parameters(make_checkpoint(nlohmann::json::object(), encoder), pt.params(), "encoder.");
    const auto pt_losses = cotrain<float>(pt, examples, Strategy::kEnc, options);
    const TaskSpec fav = task_spec(config, data, TaskKind::kFavoriteCategory);
    const TaskSpec next = task_spec(config, data, TaskKind::kNextItem);
    r.fav_r1 = evaluate<float>(pt, fav, test, tokenizer, data.vocab).recall.at(1);
    r.next_r10 = evaluate<float>(pt, next, test, tokenizer, data.vocab).recall.at(10);

    // Enc would leave a context-free model nothing to train, so the baseline
    // updates its whole LM on the same examples, schedule and batches.
    PlainModel<float> plain(spec.lm, model_seed);
    cotrain<float>(plain, examples, Strategy::kFull, options);
    r.plain_next_r10 = evaluate<float>(plain, next, test, tokenizer, data.vocab).recall.at(10);
    r.minutes_7 = minutes(t);

    t = Clock::now();
    FusedModel<float> rd(spec, model_seed);
    const auto rd_losses = cotrain<float>(rd, examples, Strategy::kEnc, options);
    const std::size_t w = 50;
    r.rd_final = mean(rd_losses, rd_losses.size() - w, rd_losses.size());
    r.rd_reach = reach(rd_losses, r.rd_final, w);
    r.pt_reach = reach(pt_losses, r.rd_final, w);
    r.minutes_8 = minutes(t);
    r.ok = true;
  } catch (const std::exception& e) {
    r.error = e.what();
  }
  return r;
}

Outcome contextualization_gain(const DeskRuns& r) {
  if (!r.ok) return {false, r.error};
  const bool pass = r.fav_r1 >= 2 * r.majority && r.next_r10 >= 1.2 * r.plain_next_r10 && r.minutes_7 <= 30;
  return {pass, "favorite R@1 " + fmt(r.fav_r1) + " vs majority " + fmt(r.majority) + "; next-item R@10 " +
                    fmt(r.next_r10) + " vs no-context " + fmt(r.plain_next_r10) + "; " + fmt(r.minutes_7, 3) +
                    " min"};
}

Outcome pretraining_benefit(const DeskRuns& r) {
  if (!r.ok) return {false, r.error};
  const bool pass = r.pt_reach > 0 && r.rd_reach > 0 && r.pt_reach <= 0.8 * r.rd_reach;
  return {pass, "RD final loss " + fmt(r.rd_final) + " reached at step " + std::to_string(r.rd_reach) +
                    " (RD) vs " + std::to_string(r.pt_reach) + " (PT); " + fmt(r.minutes_8, 3) + " min"};
}

// ---- 9 ----------------------------------------------------------------------

std::vector<std::string> words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

double lcs_f1(const std::string& prediction, const std::string& reference) {
  const auto a = words(prediction), b = words(reference);
  std::vector<std::vector<int>> dp(a.size() + 1, std::vector<int>(b.size() + 1, 0));
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      dp[i][j] = a[i - 1] == b[j - 1] ? dp[i - 1][j - 1] + 1 : std::max(dp[i - 1][j], dp[i][j - 1]);
    }
  }
  const double lcs = dp[a.size()][b.size()];
  if (lcs == 0) return 0;
  const double p = lcs / static_cast<double>(a.size()), r = lcs / static_cast<double>(b.size());
  return 2 * p * r / (p + r);
}

Outcome rouge_oracle() {
  const double same = rouge_lsum("the cat sat on the mat", "the cat sat on the mat");
  const double disjoint = rouge_lsum("dogs bark loudly", "the cat sat");
  const double partial = rouge_lsum("the cat sat", "the cat ate");
  const double oracle = lcs_f1("the cat sat", "the cat ate");
  const bool pass = same == 1.0 && disjoint == 0.0 && std::abs(partial - 0.667) <= 1e-3 &&
                    std::abs(partial - oracle) <= 1e-12;
  return {pass, "identical " + fmt(same) + ", disjoint " + fmt(disjoint) + ", partial " + fmt(partial) +
                    " (oracle " + fmt(oracle) + ")"};
}

// ---- 10 ---------------------------------------------------------------------

std::string to_jsonl(const std::vector<UserSequence>& users) {
  std::ostringstream out;
  write_jsonl(out, users);
  return out.str();
}

Outcome data_pipeline() {
  UserSequence u{"u", {}};
  for (int i = 0; i < 7; ++i) u.events.push_back({"u", i, "item_" + std::to_string(i), "c", 3.0, std::nullopt});
  const std::size_t windows = sliding_windows(u, 5).size();

  const ExperimentConfig config = load_config(kConfigs / "acceptance.json");
  SyntheticConfig sc = config.data.synthetic;
  sc.seed = config.seed;
  const auto users = synth_generate(sc).users;
  const WindowSplit split = make_split(users, config.data.window);
  std::set<std::pair<std::string, std::int64_t>> train_labels;
  for (const auto& w : split.train) train_labels.insert({w.user_id, w.label.timestamp});
  std::size_t overlap = 0;
  for (const auto& w : split.test) overlap += train_labels.count({w.user_id, w.label.timestamp});

  const std::string bytes = to_jsonl(users);
  std::istringstream in(bytes);
  const bool round_trip = to_jsonl(ingest_jsonl(in)) == bytes;
  const bool regenerated = to_jsonl(synth_generate(sc).users) == bytes;

  const bool pass = windows == 2 && overlap == 0 && split.test.size() == users.size() && round_trip && regenerated;
  return {pass, "E=7,N=5 -> " + std::to_string(windows) + " windows; " + std::to_string(split.test.size()) +
                    " test / " + std::to_string(split.train.size()) + " train windows, overlap " +
                    std::to_string(overlap) + "; JSONL round trip " + (round_trip ? "equal" : "differs") +
                    "; regeneration " + (regenerated ? "equal" : "differs")};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const std::string& name, const Outcome& o) {
    failures += !o.pass;
    std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << "  " << name << ": " << o.detail
              << std::endl;
  };
  auto guarded = [](const std::function<Outcome()>& f) {
    try {
      return f();
    } catch (const std::exception& e) {
      return Outcome{false, std::string("exception: ") + e.what()};
    }
  };
  report(1, "efficiency arithmetic", guarded(efficiency_arithmetic));
  report(2, "perceiver compression", guarded(perceiver_compression));
  report(3, "gate-zero identity", guarded(gate_zero_identity));
  report(4, "gradient verification", guarded(gradient_verification));
  report(5, "freezing contracts", guarded(freezing_contracts));
  report(6, "schedule", guarded(schedule));
  const DeskRuns runs = desk_runs();
  report(7, "contextualization gain", contextualization_gain(runs));
  report(8, "pretraining benefit", pretraining_benefit(runs));
  report(9, "rouge oracle", guarded(rouge_oracle));
  report(10, "data pipeline", guarded(data_pipeline));
  std::cout << (10 - failures) << "/10 criteria passed" << std::endl;
  return failures == 0 ? 0 : 1;
}
