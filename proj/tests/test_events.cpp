#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "userllm/events/events.hpp"
#include "userllm/events/synthetic.hpp"

using namespace userllm;

namespace {

UserSequence make_user(const std::string& id, int n) {
  UserSequence u{id, {}};
  for (int i = 0; i < n; ++i) {
    u.events.push_back(Event{id, 1000 + i, "item" + std::to_string(i), "cat" + std::to_string(i % 2), 3.5, std::nullopt});
  }
  return u;
}

std::string to_jsonl(const std::vector<UserSequence>& users) {
  std::ostringstream os;
  write_jsonl(os, users);
  return os.str();
}

SyntheticConfig acceptance_corpus() {
  SyntheticConfig c;
  c.num_users = 2000;
  c.num_categories = 20;
  c.num_items = 500;
  c.events_per_user = 55;
  c.seed = 7;
  return c;
}

}  // namespace

TEST_CASE("vocabulary sizes include the reserved ids") {
  std::vector<Event> events = {{"u", 1, "A", "x", 4.0, {}}, {"u", 2, "B", "x", 2.5, {}}};
  VocabularySet v = build_vocab(events);
  CHECK(v.name.size() == 4);
  CHECK(v.category.size() == 3);
  CHECK(v.rating.size() == 12);
  CHECK(v.name.encode("never-seen") == Vocabulary::kUnk);
  for (int id = 0; id < v.name.size(); ++id) CHECK(v.name.encode(v.name.decode(id)) == id);
  CHECK_THROWS_AS(build_vocab(std::vector<Event>{}), DataError);
  CHECK_THROWS_AS(Vocabulary(Modality::kName, {"a", "a"}), std::invalid_argument);
}

TEST_CASE("rating grid") {
  CHECK(on_half_star_grid(0.5));
  CHECK(on_half_star_grid(5.0));
  CHECK_FALSE(on_half_star_grid(4.3));
  CHECK_FALSE(on_half_star_grid(0.0));
  CHECK_FALSE(on_half_star_grid(5.5));
  CHECK(rating_key(4.5) == "4.5");
  CHECK_THROWS_AS(rating_key(4.3), DataError);
}

TEST_CASE("sliding windows are stride one") {
  const UserSequence u = make_user("u", 7);
  auto w = sliding_windows(u, 5);
  REQUIRE(w.size() == 2);
  CHECK(w[0].inputs.front() == u.events[0]);
  CHECK(w[0].inputs.back() == u.events[4]);
  CHECK(w[0].label == u.events[5]);
  CHECK(w[1].inputs.front() == u.events[1]);
  CHECK(w[1].label == u.events[6]);
  CHECK(sliding_windows(make_user("u", 5), 5).empty());
  CHECK(sliding_windows(make_user("u", 51), 50).size() == 1);
  CHECK_THROWS_AS(sliding_windows(u, 0), std::invalid_argument);
}

TEST_CASE("last window per user is held out") {
  auto two = sliding_windows(make_user("a", 7), 5);
  auto one = sliding_windows(make_user("b", 6), 5);
  WindowSplit s = split_train_test({two, one});
  CHECK(s.train.size() == 1);
  CHECK(s.test.size() == 2);
  CHECK(s.test[0].label == two.back().label);
  CHECK(s.test[1].user_id == "b");
}

TEST_CASE("holdout is disjoint from training on the full synthetic corpus") {
  const SyntheticCorpus corpus = synth_generate(acceptance_corpus());
  const WindowSplit s = make_split(corpus.users, 50);
  std::size_t total = 0;
  for (const auto& u : corpus.users) total += sliding_windows(u, 50).size();
  CHECK(s.train.size() + s.test.size() == total);
  std::set<std::pair<std::string, std::int64_t>> train_keys;
  for (const auto& w : s.train) train_keys.insert({w.user_id, w.label.timestamp});
  for (const auto& w : s.test) CHECK(train_keys.count({w.user_id, w.label.timestamp}) == 0);
  // The test window is each user's final window.
  std::map<std::string, std::int64_t> last;
  for (const auto& u : corpus.users) last[u.user_id] = u.events.back().timestamp;
  for (const auto& w : s.test) CHECK(w.label.timestamp == last[w.user_id]);
}

TEST_CASE("JSONL ingestion groups, sorts and reports bad lines") {
  std::istringstream in(
      "{\"user_id\":\"u1\",\"timestamp\":5,\"name\":\"a\",\"category\":\"c\",\"rating\":4.0}\n"
      "{\"user_id\":\"u2\",\"timestamp\":1,\"name\":\"b\",\"category\":\"c\",\"rating\":2.5,\"review\":\"ok\"}\n"
      "\n"
      "{\"user_id\":\"u1\",\"timestamp\":2,\"name\":\"c\",\"category\":\"d\",\"rating\":1.0}\n");
  auto users = ingest_jsonl(in);
  REQUIRE(users.size() == 2);
  CHECK(users[0].user_id == "u1");
  REQUIRE(users[0].events.size() == 2);
  CHECK(users[0].events[0].timestamp == 2);
  CHECK(users[0].events[1].timestamp == 5);
  CHECK(users[1].events[0].review == "ok");

  std::istringstream bad(
      "{\"user_id\":\"u1\",\"timestamp\":5,\"name\":\"a\",\"category\":\"c\",\"rating\":4.0}\n"
      "{\"user_id\":\"u1\",\"timestamp\":6,\"name\":\"a\",\"category\":\"c\",\"rating\":4.3}\n"
      "{\"user_id\":\"u1\",\"timestamp\":7,\"name\":\"a\",\"rating\":4.0}\n");
  try {
    ingest_jsonl(bad);
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("line 2") != std::string::npos);
    CHECK(msg.find("half-star") != std::string::npos);
    CHECK(msg.find("line 3") != std::string::npos);
    CHECK(msg.find("'category'") != std::string::npos);
  }
  CHECK_THROWS_AS(ingest_jsonl(std::filesystem::path("/nonexistent/events.jsonl")), DataError);
}

TEST_CASE("JSONL round trip is byte-identical") {
  const SyntheticCorpus corpus = synth_generate(acceptance_corpus());
  const std::string first = to_jsonl(corpus.users);
  std::istringstream in(first);
  const auto reread = ingest_jsonl(in);
  CHECK(reread == corpus.users);
  CHECK(to_jsonl(reread) == first);
}

TEST_CASE("seeded generation is byte-identical and seed-sensitive") {
  SyntheticConfig c = acceptance_corpus();
  c.num_users = 300;
  const std::string a = to_jsonl(synth_generate(c).users);
  CHECK(a == to_jsonl(synth_generate(c).users));
  c.seed = 8;
  CHECK(a != to_jsonl(synth_generate(c).users));
}

TEST_CASE("synthetic corpus shape and vocabularies") {
  SyntheticConfig c = acceptance_corpus();
  c.num_users = 100;
  const SyntheticCorpus corpus = synth_generate(c);
  CHECK(corpus.users.size() == 100);
  CHECK(corpus.item_names.size() == 500);
  CHECK(corpus.category_names.size() == 20);
  for (const auto& u : corpus.users) {
    CHECK(u.events.size() == 55);
    CHECK(std::is_sorted(u.events.begin(), u.events.end(),
                         [](const Event& a, const Event& b) { return a.timestamp < b.timestamp; }));
  }
  const VocabularySet v = build_vocab(corpus.users);
  const auto sizes = v.sizes();
  for (const auto& u : corpus.users) {
    for (const auto& e : u.events) {
      const FeatureIds ids = v.encode(e);
      for (std::size_t m = 0; m < ids.size(); ++m) {
        CHECK(ids[m] >= 2);
        CHECK(ids[m] < sizes[m]);
      }
      // Item names start with their category.
      CHECK(e.name.rfind(e.category + " ", 0) == 0);
      CHECK(e.review.has_value());
      CHECK(e.review->find(e.category) != std::string::npos);
    }
  }
}

TEST_CASE("favorites stay spread across categories") {
  const SyntheticCorpus corpus = synth_generate(acceptance_corpus());
  std::map<std::string, int> counts;
  for (const auto& f : corpus.favorites) ++counts[f];
  int top = 0;
  for (const auto& [name, n] : counts) top = std::max(top, n);
  CHECK(static_cast<double>(top) / corpus.favorites.size() < 0.25);
}

TEST_CASE("single-category users keep to one category") {
  SyntheticConfig c = acceptance_corpus();
  c.num_users = 50;
  c.single_category_users = true;
  const SyntheticCorpus corpus = synth_generate(c);
  for (std::size_t u = 0; u < corpus.users.size(); ++u) {
    for (const auto& e : corpus.users[u].events) CHECK(e.category == corpus.favorites[u]);
  }
}

TEST_CASE("preferred categories get higher ratings") {
  SyntheticConfig c = acceptance_corpus();
  c.num_users = 200;
  const SyntheticCorpus corpus = synth_generate(c);
  double fav_sum = 0, other_sum = 0;
  int fav_n = 0, other_n = 0;
  for (std::size_t u = 0; u < corpus.users.size(); ++u) {
    for (const auto& e : corpus.users[u].events) {
      if (e.category == corpus.favorites[u]) {
        fav_sum += e.rating;
        ++fav_n;
      } else {
        other_sum += e.rating;
        ++other_n;
      }
    }
  }
  CHECK(fav_sum / fav_n > other_sum / other_n + 0.5);
}

TEST_CASE("invalid synthetic configs are rejected") {
  SyntheticConfig c;
  c.num_items = c.num_categories - 1;
  CHECK_THROWS_AS(synth_generate(c), std::invalid_argument);
  c = {};
  c.preference_concentration = 0.0;
  CHECK_THROWS_AS(synth_generate(c), std::invalid_argument);
}
