#include <doctest.h>

#include <cmath>

#include "userllm/eval/eval.hpp"
#include "userllm/events/synthetic.hpp"
#include "userllm/fusion/fusion.hpp"
#include "userllm/numerics/grad_check.hpp"

using namespace userllm;

namespace {

const std::vector<int> kVocab = {14, 8, 12};

ModelSpec small_spec() {
  ModelSpec s;
  s.ar.layers = 1;
  s.ar.d_model = 12;
  s.ar.heads = 2;
  s.ar.vocab_sizes = kVocab;
  s.ar.max_seq_len = 50;
  s.dual.layers = 1;
  s.dual.d_model = 12;
  s.dual.heads = 2;
  s.dual.vocab_sizes = kVocab;
  s.dual.max_seq_len = 50;
  s.dual.fusion_hidden = 16;
  s.lm.layers = 2;
  s.lm.d_lm = 16;
  s.lm.heads = 2;
  s.lm.vocab = 25;
  s.lm.max_context = 96;
  s.fusion.perceiver.layers = 2;
  s.fusion.perceiver.heads = 2;
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

template <typename Scalar>
double gate_zero_gap(const FusedModel<Scalar>& model, std::uint64_t seed) {
  Rng rng(seed);
  const auto events = random_events(20, rng);
  const auto ids = random_ids(12, rng);
  Graph<Scalar> g(false);
  const std::optional<Var<Scalar>> ctx = model.context(g, events)->vectors;
  const Matrix<Scalar> fused = model.decode(g, ctx, ids).text_logits().value();
  const Matrix<Scalar> base = model.lm().forward(g, ids).value();
  return static_cast<double>((fused - base).cwiseAbs().maxCoeff());
}

}  // namespace

TEST_CASE("zero gates and zero lora factors leave the base lm untouched") {
  ModelSpec s = small_spec();
  s.lora = LoraConfig{4, 8.0};
  FusedModel<double> exact(s, 1);
  FusedModel<float> single(s, 1);
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    CHECK(gate_zero_gap(exact, seed) == 0.0);
    CHECK(gate_zero_gap(single, seed) <= 1e-6);
  }
  s.fusion.perceiver.enabled = true;
  CHECK(gate_zero_gap(FusedModel<double>(s, 2), 6) == 0.0);
}

TEST_CASE("perceiver output length is fixed") {
  ParameterSet<double> params;
  Rng rng(3);
  const PerceiverConfig config{true, 2, 16, 2};
  Perceiver<double> perceiver(params, "p", config, 12, rng);
  Graph<double> g(false);
  for (int t : {1, 10, 50, 200}) {
    CAPTURE(t);
    const Var<double> out = perceiver(g, g.constant(normal_matrix<double>(t, 12, 1.0, rng)));
    CHECK(out.rows() == 16);
    CHECK(out.cols() == 12);
  }

  // Identical input rows: any permutation is the same input.
  Matrix<double> row = normal_matrix<double>(1, 12, 1.0, rng);
  const Matrix<double> same = row.replicate(7, 1);
  const Matrix<double> forward = perceiver(g, g.constant(same)).value();
  CHECK(forward == perceiver(g, g.constant(same.colwise().reverse())).value());
  CHECK_THROWS_AS(perceiver(g, g.constant(Matrix<double>(0, 12))), std::invalid_argument);
}

TEST_CASE("perceiver compresses both encoder kinds to 16 latents") {
  for (EncoderKind kind : {EncoderKind::kAutoregressive, EncoderKind::kDual}) {
    ModelSpec s = small_spec();
    s.encoder = kind;
    s.fusion.perceiver.enabled = true;
    FusedModel<double> model(s, 4);
    Rng rng(5);
    Graph<double> g(false);
    const auto embs = *model.context(g, random_events(50, rng));
    CHECK(embs.vectors.rows() == 16);
    CHECK(embs.provenance == Provenance::kPerceiverCompressed);

    s.fusion.perceiver.enabled = false;
    FusedModel<double> raw(s, 4);
    const auto plain = *raw.context(g, random_events(50, rng));
    CHECK(plain.vectors.rows() == (kind == EncoderKind::kAutoregressive ? 50 : 1));
  }
}

TEST_CASE("soft prompt occupies user plus task prompt positions") {
  ModelSpec s = small_spec();
  s.fusion.mode = FusionMode::kSoftPrompt;
  FusedModel<double> model(s, 6);
  REQUIRE(model.soft_prompt());
  CHECK(model.cross_blocks().empty());
  Rng rng(7);
  Graph<double> g(false);
  const auto ids = random_ids(20, rng);
  std::optional<Var<double>> ctx = model.context(g, random_events(50, rng))->vectors;
  const Decoded<double> out = model.decode(g, ctx, ids);
  CHECK(out.logits.rows() == 80);
  CHECK(out.offset == 60);
  CHECK(out.text_logits().rows() == 20);

  s.fusion.perceiver.enabled = true;
  FusedModel<double> compressed(s, 6);
  ctx = compressed.context(g, random_events(50, rng))->vectors;
  CHECK(compressed.decode(g, ctx, ids).logits.rows() == 46);

  // 50 + 10 + 40 > 96 positions.
  ctx = model.context(g, random_events(50, rng))->vectors;
  CHECK_THROWS_AS(model.decode(g, ctx, random_ids(40, rng)), ContextOverflow);

  // Zero user embeddings through a zero projection leave only the task prompt.
  for (const auto& [name, t] : model.params().entries()) {
    if (name.starts_with("fusion.soft_prompt.proj")) t->data.setZero();
  }
  const Var<double> assembled =
      model.soft_prompt()->assemble(g, g.constant(Matrix<double>::Zero(50, 12)), model.lm().embed_tokens(g, ids));
  CHECK(assembled.rows() == 80);
  CHECK(assembled.value().topRows(50).cwiseAbs().maxCoeff() == 0.0);
  CHECK(assembled.value().middleRows(50, 10) == model.params().get("fusion.soft_prompt.task_prompt")->data);
}

TEST_CASE("cross-attention mode has no d_e to d_lm projection outside keys and values") {
  const ModelSpec s = small_spec();
  FusedModel<double> model(s, 8);
  CHECK_FALSE(model.soft_prompt());
  REQUIRE(model.cross_blocks().size() == 2);
  int kv = 0;
  for (const auto& [name, t] : model.params().entries()) {
    if (!name.starts_with("fusion.")) continue;
    CHECK(name.starts_with("fusion.cross."));
    if (t->rows() == s.ar.d_model && t->cols() == s.lm.d_lm) {
      CHECK_MESSAGE((name.ends_with(".attn.k.weight") || name.ends_with(".attn.v.weight")), name);
      ++kv;
    }
  }
  CHECK(kv == 4);
  for (const auto& block : model.cross_blocks()) {
    CHECK(block.attention().key().in_features() == s.ar.d_model);
    CHECK(block.gate()->data(0, 0) == 0.0);
  }
}

TEST_CASE("a single user embedding is attended with weight one") {
  ParameterSet<double> params;
  Rng rng(9);
  CrossAttnBlock<double> block(params, "x", 16, 12, 2, rng);
  block.gate()->data(0, 0) = 0.8;
  Graph<double> g(false);
  const Matrix<double> text = normal_matrix<double>(5, 16, 1.0, rng);
  const Matrix<double> user = normal_matrix<double>(1, 12, 1.0, rng);
  const Matrix<double> out = block(g, g.constant(text), g.constant(user)).value();
  // Every query sees the same value row, so the residual delta is one row
  // repeated.
  const Matrix<double> delta = out - text;
  for (int r = 1; r < 5; ++r) CHECK((delta.row(r) - delta.row(0)).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(delta.cwiseAbs().maxCoeff() > 0);
  CHECK_THROWS_AS(block(g, g.constant(text), g.constant(Matrix<double>(0, 12))), std::invalid_argument);
}

TEST_CASE("gradients of the fusion parameters") {
  ModelSpec s = small_spec();
  s.lora = LoraConfig{2, 4.0};
  Rng rng(10);
  const auto events = random_events(6, rng);
  const auto ids = random_ids(7, rng);
  const std::vector<int> targets(ids.begin() + 1, ids.end());
  auto text_loss = [&](const ContextualLM<double>& model) {
    return [&](Graph<double>& g) {
      std::optional<Var<double>> ctx = model.context(g, events)->vectors;
      Var<double> logits = model.decode(g, ctx, ids).text_logits();
      return cross_entropy(slice_rows(logits, 0, logits.rows() - 1), std::span<const int>(targets));
    };
  };

  SUBCASE("cross-attention gate, also at zero") {
    FusedModel<double> model(s, 11);
    const auto gate = model.params().get("fusion.cross.0.gate");
    Graph<double> g;
    g.backward(text_loss(model)(g));
    g.accumulate_into_parameters();
    REQUIRE(gate->has_grad());
    CHECK(std::abs(gate->grad(0, 0)) > 0);
    for (const auto& block : model.cross_blocks()) block.gate()->data(0, 0) = 0.3;
    const auto report = grad_check<double>(text_loss(model), {gate, model.params().get("fusion.cross.1.gate")}, 1e-5, 1e-4);
    CHECK_MESSAGE(report.pass, report.worst);
  }
  SUBCASE("perceiver latents") {
    s.fusion.perceiver.enabled = true;
    FusedModel<double> model(s, 12);
    for (const auto& block : model.cross_blocks()) block.gate()->data(0, 0) = 0.5;
    const auto report = grad_check<double>(text_loss(model), {model.perceiver()->latents()}, 1e-5, 1e-4);
    CHECK_MESSAGE(report.pass, report.worst);
  }
  SUBCASE("lora factors") {
    FusedModel<double> model(s, 13);
    const auto a = model.params().get("lm.layers.0.attn.q.lora_a");
    const auto b = model.params().get("lm.layers.1.attn.v.lora_b");
    Rng init(14);
    a->data = normal_matrix<double>(a->rows(), a->cols(), 0.1, init);
    model.params().get("lm.layers.1.attn.v.lora_a")->data = normal_matrix<double>(a->rows(), a->cols(), 0.1, init);
    const auto report = grad_check<double>(text_loss(model), {a, b}, 1e-5, 1e-4);
    CHECK_MESSAGE(report.pass, report.worst);
  }
  SUBCASE("soft-prompt projection and task prompt") {
    s.fusion.mode = FusionMode::kSoftPrompt;
    FusedModel<double> model(s, 15);
    const auto report = grad_check<double>(text_loss(model),
                                           {model.params().get("fusion.soft_prompt.proj.weight"),
                                            model.params().get("fusion.soft_prompt.task_prompt")},
                                           1e-5, 1e-4, {40, 1});
    CHECK_MESSAGE(report.pass, report.worst);
  }
}

TEST_CASE("packed decoding matches one-at-a-time decoding") {
  for (FusionMode mode : {FusionMode::kCrossAttention, FusionMode::kSoftPrompt}) {
    ModelSpec s = small_spec();
    s.fusion.mode = mode;
    FusedModel<double> model(s, 16);
    for (const auto& block : model.cross_blocks()) block.gate()->data(0, 0) = 0.7;
    Rng rng(17);
    Graph<double> g(false);
    const std::vector<std::optional<Var<double>>> ctx = {model.context(g, random_events(5, rng))->vectors,
                                                         model.context(g, random_events(9, rng))->vectors};
    const auto a = random_ids(4, rng), b = random_ids(11, rng);
    const std::span<const int> ids[] = {a, b};
    const auto packed = model.decode_batch(g, ctx, ids);
    for (std::size_t i = 0; i < 2; ++i) {
      const auto one = model.decode(g, ctx[i], ids[i]);
      CHECK(packed[i].offset == one.offset);
      CHECK((packed[i].logits.value() - one.logits.value()).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
}

TEST_CASE("fused model config errors") {
  ModelSpec s = small_spec();
  s.lm.d_lm = 8;
  s.lm.heads = 2;
  CHECK_THROWS_AS(FusedModel<double>(s, 1), std::invalid_argument);
  s = small_spec();
  s.fusion.perceiver.enabled = true;
  s.fusion.perceiver.heads = 5;
  CHECK_THROWS_AS(FusedModel<double>(s, 1), std::invalid_argument);
  s = small_spec();
  Graph<double> g(false);
  FusedModel<double> model(s, 1);
  const int ids[] = {4, 5};
  CHECK_THROWS_AS(model.decode(g, std::nullopt, ids), std::invalid_argument);
}

TEST_CASE("after training, different users give different logits") {
  SyntheticConfig sc;
  sc.num_users = 40;
  sc.num_categories = 4;
  sc.num_items = 12;
  sc.events_per_user = 14;
  sc.single_category_users = true;
  sc.seed = 3;
  const SyntheticCorpus corpus = synth_generate(sc);
  const VocabularySet vocab = build_vocab(corpus.users);
  const WindowSplit split = make_split(corpus.users, 10);
  const Tokenizer tok = build_tokenizer(task_corpus(corpus.users, {}));

  ModelSpec s = small_spec();
  s.ar.vocab_sizes = s.dual.vocab_sizes = vocab.sizes();
  s.ar.max_seq_len = 10;
  s.lm.vocab = tok.size();
  s.lm.max_context = 32;
  FusedModel<float> model(s, 18);

  TaskSpec task;
  task.kind = TaskKind::kFavoriteCategory;
  task.candidates = corpus.category_names;
  std::vector<TextExample> examples;
  for (const auto& w : split.train) examples.push_back(make_text_example(task, w, tok, vocab));

  // Two users with different favorites, same prompt.
  const ExampleWindow& first = split.test[0];
  std::size_t other = 1;
  while (favorite_label(split.test[other].inputs) == favorite_label(first.inputs)) ++other;
  const std::vector<int> prompt = make_text_example(task, first, tok, vocab).ids;
  auto gap = [&] {
    const Matrix<float> a = model.logits_fn(encode_events(vocab, first.inputs))(prompt);
    const Matrix<float> b = model.logits_fn(encode_events(vocab, split.test[other].inputs))(prompt);
    return (a - b).cwiseAbs().maxCoeff();
  };
  CHECK(gap() == 0.0f);

  TrainOptions options;
  options.schedule = {3e-3, 40, 0.1};
  options.batch_size = 8;
  cotrain<float>(model, examples, Strategy::kFull, options);
  CHECK(gap() > 1e-4f);
}
