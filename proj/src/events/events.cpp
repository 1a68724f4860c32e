#include "userllm/events/events.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace userllm {

bool on_half_star_grid(double rating) {
  if (!std::isfinite(rating) || rating < 0.5 || rating > 5.0) return false;
  const double doubled = rating * 2.0;
  return doubled == std::round(doubled);
}

std::string rating_key(double rating) {
  if (!on_half_star_grid(rating)) throw DataError("rating " + std::to_string(rating) + " is not on the half-star grid");
  char buffer[8];
  std::snprintf(buffer, sizeof buffer, "%.1f", rating);
  return buffer;
}

std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::kName: return "name";
    case Modality::kCategory: return "category";
    case Modality::kRating: return "rating";
  }
  return "unknown";
}

// ---- Vocabulary -----------------------------------------------------------

Vocabulary::Vocabulary(Modality modality, std::vector<std::string> entries) : modality_(modality) {
  tokens_ = {"<pad>", "<unk>"};
  tokens_.insert(tokens_.end(), std::make_move_iterator(entries.begin()), std::make_move_iterator(entries.end()));
  for (int id = 0; id < static_cast<int>(tokens_.size()); ++id) {
    if (!index_.emplace(tokens_[id], id).second) {
      throw std::invalid_argument("vocabulary entry repeated: " + tokens_[id]);
    }
  }
}

int Vocabulary::encode(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::decode(int id) const {
  if (id < 0 || id >= size()) throw std::out_of_range("vocabulary id " + std::to_string(id) + " out of range");
  return tokens_[id];
}

const Vocabulary& VocabularySet::operator[](Modality m) const {
  switch (m) {
    case Modality::kName: return name;
    case Modality::kCategory: return category;
    case Modality::kRating: return rating;
  }
  throw std::out_of_range("unknown modality");
}

FeatureIds VocabularySet::encode(const Event& event) const {
  return {name.encode(event.name), category.encode(event.category), rating.encode(rating_key(event.rating))};
}

std::vector<int> VocabularySet::sizes() const { return {name.size(), category.size(), rating.size()}; }

namespace {

std::vector<std::string> rating_buckets() {
  std::vector<std::string> buckets;
  for (int half = 1; half <= 10; ++half) buckets.push_back(rating_key(half * 0.5));
  return buckets;
}

template <typename Range>
VocabularySet build_vocab_from(const Range& events) {
  std::set<std::string> names, categories;
  std::size_t count = 0;
  for (const Event& e : events) {
    names.insert(e.name);
    categories.insert(e.category);
    ++count;
  }
  if (count == 0) throw DataError("build_vocab: no events");
  return VocabularySet{Vocabulary(Modality::kName, {names.begin(), names.end()}),
                       Vocabulary(Modality::kCategory, {categories.begin(), categories.end()}),
                       Vocabulary(Modality::kRating, rating_buckets())};
}

}  // namespace

VocabularySet build_vocab(const std::vector<Event>& events) { return build_vocab_from(events); }

VocabularySet build_vocab(const std::vector<UserSequence>& users) {
  std::vector<Event> flat;
  for (const auto& u : users) flat.insert(flat.end(), u.events.begin(), u.events.end());
  return build_vocab_from(flat);
}

// ---- windows --------------------------------------------------------------

std::vector<ExampleWindow> sliding_windows(const UserSequence& user, int window) {
  if (window < 1) throw std::invalid_argument("sliding_windows: window must be >= 1");
  std::vector<ExampleWindow> out;
  const auto n = static_cast<std::size_t>(window);
  for (std::size_t start = 0; start + n < user.events.size(); ++start) {
    ExampleWindow w;
    w.user_id = user.user_id;
    w.inputs.assign(user.events.begin() + static_cast<std::ptrdiff_t>(start),
                    user.events.begin() + static_cast<std::ptrdiff_t>(start + n));
    w.label = user.events[start + n];
    out.push_back(std::move(w));
  }
  return out;
}

WindowSplit split_train_test(const std::vector<std::vector<ExampleWindow>>& windows_per_user) {
  WindowSplit split;
  for (const auto& windows : windows_per_user) {
    if (windows.empty()) continue;
    split.train.insert(split.train.end(), windows.begin(), windows.end() - 1);
    split.test.push_back(windows.back());
  }
  return split;
}

WindowSplit make_split(const std::vector<UserSequence>& users, int window) {
  std::vector<std::vector<ExampleWindow>> per_user;
  per_user.reserve(users.size());
  for (const auto& u : users) per_user.push_back(sliding_windows(u, window));
  return split_train_test(per_user);
}

// ---- JSONL ----------------------------------------------------------------

Event parse_event_json(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw DataError("expected a JSON object");
  auto require = [&](const char* key) -> const nlohmann::json& {
    auto it = j.find(key);
    if (it == j.end()) throw DataError(std::string("missing required field '") + key + "'");
    return *it;
  };
  Event e;
  const auto& user = require("user_id");
  const auto& ts = require("timestamp");
  const auto& name = require("name");
  const auto& category = require("category");
  const auto& rating = require("rating");
  if (!user.is_string()) throw DataError("field 'user_id' must be a string");
  if (!ts.is_number_integer()) throw DataError("field 'timestamp' must be an integer");
  if (!name.is_string()) throw DataError("field 'name' must be a string");
  if (!category.is_string()) throw DataError("field 'category' must be a string");
  if (!rating.is_number()) throw DataError("field 'rating' must be a number");
  e.user_id = user.get<std::string>();
  e.timestamp = ts.get<std::int64_t>();
  e.name = name.get<std::string>();
  e.category = category.get<std::string>();
  e.rating = rating.get<double>();
  if (!on_half_star_grid(e.rating)) {
    std::ostringstream os;
    os << "rating " << e.rating << " is not on the half-star grid";
    throw DataError(os.str());
  }
  if (auto it = j.find("review"); it != j.end() && !it->is_null()) {
    if (!it->is_string()) throw DataError("field 'review' must be a string");
    e.review = it->get<std::string>();
  }
  return e;
}

std::string event_to_json(const Event& event) {
  nlohmann::ordered_json j;
  j["user_id"] = event.user_id;
  j["timestamp"] = event.timestamp;
  j["name"] = event.name;
  j["category"] = event.category;
  j["rating"] = event.rating;
  if (event.review) j["review"] = *event.review;
  return j.dump();
}

std::vector<UserSequence> group_by_user(std::vector<Event> events) {
  std::vector<UserSequence> users;
  std::unordered_map<std::string, std::size_t> slot;
  for (auto& e : events) {
    auto [it, inserted] = slot.emplace(e.user_id, users.size());
    if (inserted) users.push_back(UserSequence{e.user_id, {}});
    users[it->second].events.push_back(std::move(e));
  }
  for (auto& u : users) {
    std::stable_sort(u.events.begin(), u.events.end(),
                     [](const Event& a, const Event& b) { return a.timestamp < b.timestamp; });
  }
  return users;
}

std::vector<UserSequence> ingest_jsonl(std::istream& in) {
  std::vector<Event> events;
  std::vector<std::string> problems;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      events.push_back(parse_event_json(line));
    } catch (const DataError& e) {
      problems.push_back("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!problems.empty()) {
    std::string message = "malformed JSONL input:";
    for (const auto& p : problems) message += "\n  " + p;
    throw DataError(message);
  }
  return group_by_user(std::move(events));
}

std::vector<UserSequence> ingest_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  return ingest_jsonl(in);
}

void write_jsonl(std::ostream& out, const std::vector<UserSequence>& users) {
  for (const auto& u : users) {
    for (const auto& e : u.events) out << event_to_json(e) << '\n';
  }
}

void write_jsonl(const std::filesystem::path& path, const std::vector<UserSequence>& users) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_jsonl(out, users);
}

}  // namespace userllm
