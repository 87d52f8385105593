#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <set>
#include <numeric>

#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "teachgen/error.hpp"
#include "teachgen/hashing.hpp"
#include "teachgen/retrieval.hpp"

using namespace teachgen;

namespace {

// Gaussian vector seeded by the text itself; unrelated to the hashing provider.
class GaussianStub final : public EmbeddingProvider {
 public:
  explicit GaussianStub(std::size_t dim = 16) : dim_(dim) {}
  std::string provider_id() const override { return "gaussian-stub"; }
  std::vector<double> embed(std::string_view text) override {
    ++calls;
    std::mt19937_64 rng(fnv1a64(text));
    std::normal_distribution<double> n;
    std::vector<double> v(dim_);
    for (auto& x : v) x = n(rng);
    return v;
  }
  std::atomic<int> calls{0};

 private:
  std::size_t dim_;
};

class FixedStub final : public EmbeddingProvider {
 public:
  std::map<std::string, std::vector<double>> table;
  std::string provider_id() const override { return "fixed"; }
  std::vector<double> embed(std::string_view text) override {
    return table.at(std::string(text));
  }
};

double oracle_cosine(const std::vector<double>& a, const std::vector<double>& b) {
  long double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += static_cast<long double>(a[i]) * b[i];
    aa += static_cast<long double>(a[i]) * a[i];
    bb += static_cast<long double>(b[i]) * b[i];
  }
  if (aa == 0 || bb == 0) return 0.0;
  return static_cast<double>(ab / std::sqrt(aa * bb));
}

std::vector<DialogueSample> random_pool(std::mt19937_64& rng, std::size_t n) {
  const std::vector<std::string> vocab = {"cat", "dog", "verb", "tense", "plural",
                                          "good", "try", "again", "what", "is"};
  std::vector<DialogueSample> pool;
  for (std::size_t i = 0; i < n; ++i)
    pool.push_back(th::sample("s" + std::to_string(i),
                              {{"student", th::random_words(rng, 1 + rng() % 6, vocab)},
                               {"teacher", th::random_words(rng, 1 + rng() % 6, vocab)}},
                              "ok"));
  return pool;
}

const DialogueSample kFigure = th::sample(
    "fig", {{"student", "someone plugged the charger in"},
            {"teacher", "that's bad, charger must be ___?"},
            {"student", "umm unplugged"}});

}  // namespace

TEST_CASE("cosine similarity") {
  const std::vector<double> a = {1, 2, 3}, b = {2, 4, 6}, c = {-3, 0, 1}, z = {0, 0, 0};
  CHECK(cosine_similarity(a, b) == doctest::Approx(1.0));
  CHECK(cosine_similarity(a, c) == doctest::Approx(0.0));
  CHECK(cosine_similarity(a, z) == 0.0);
  std::vector<double> n = {-1, -2, -3};
  CHECK(cosine_similarity(a, n) == doctest::Approx(-1.0));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  for (int t = 0; t < 100; ++t) {
    std::vector<double> u(8), v(8);
    for (auto& x : u) x = g(rng);
    for (auto& x : v) x = g(rng);
    const auto s = cosine_similarity(u, v);
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
    CHECK(s == doctest::Approx(oracle_cosine(u, v)).epsilon(1e-12));
    CHECK(cosine_similarity(u, u) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("rendering is speaker tagged and invertible") {
  CHECK(render_context(kFigure) ==
        "[student] someone plugged the charger in\n"
        "[teacher] that's bad, charger must be ___?\n[student] umm unplugged");
  CHECK(render_dialogue(th::sample("x", {{"student", "hi"}})) == "[student] hi");
  CHECK(render_dialogue(th::sample("x", {{"student", "hi"}}, "hello")) ==
        "[student] hi\n[teacher] hello");

  std::mt19937_64 rng(4);
  const auto pool = random_pool(rng, 50);
  std::set<std::string> seen;
  for (const auto& s : pool) {
    const auto text = render_dialogue(s);
    std::istringstream in(text);
    std::string line;
    std::vector<std::string> speakers;
    while (std::getline(in, line)) {
      REQUIRE(line.front() == '[');
      speakers.push_back(line.substr(1, line.find(']') - 1));
    }
    std::vector<std::string> expected;
    for (const auto& u : s.turns()) expected.push_back(u.speaker);
    CHECK(speakers == expected);
    seen.insert(text);
  }
  std::set<std::string> distinct;
  for (const auto& s : pool) distinct.insert(sample_to_json(s).dump());
  CHECK(seen.size() == distinct.size());
}

TEST_CASE("identical and orthogonal contexts") {
  FixedStub stub;
  const auto q = th::sample("q", {{"student", "a"}});
  const auto same = th::sample("p0", {{"student", "a"}});
  const auto orth = th::sample("p1", {{"student", "b"}});
  stub.table["[student] a"] = {1, 0};
  stub.table["[student] b"] = {0, 1};
  const auto r = top_k_similar(q, {orth, same}, stub);
  REQUIRE(r.items.size() == 2);
  CHECK(r.items[0].sample.id == "p0");
  CHECK(r.items[0].similarity == doctest::Approx(1.0));
  CHECK(r.items[1].similarity == 0.0);
  CHECK(r.warnings.empty());

  stub.table["[student] b"] = {0, 0};
  const auto w = top_k_similar(q, {orth, same}, stub);
  CHECK(w.warnings.size() == 1);
  CHECK(w.items[1].similarity == 0.0);
}

TEST_CASE("ties keep pool order and size is min(k, pool)") {
  FixedStub stub;
  stub.table["[student] q"] = {1, 1};
  stub.table["[student] a"] = {1, 0};
  stub.table["[student] b"] = {0, 1};
  const auto q = th::sample("q", {{"student", "q"}});
  const auto r = top_k_similar(
      q, {th::sample("x", {{"student", "b"}}), th::sample("y", {{"student", "a"}})}, stub);
  REQUIRE(r.items.size() == 2);
  CHECK(r.items[0].sample.id == "x");
  CHECK(r.items[1].sample.id == "y");
  CHECK_THROWS_AS(top_k_similar(q, {}, stub), Error);
}

TEST_CASE("top-k matches the brute-force sort on seeded pools") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    auto pool = random_pool(rng, 50);
    auto query = random_pool(rng, 1)[0];
    query.id = "query";
    GaussianStub stub;
    RetrievalOptions opt;
    opt.max_in_flight = 1 + trial % 4;
    const auto r = top_k_similar(query, pool, stub, opt);

    const auto qv = stub.embed(render_context(query));
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t i = 0; i < pool.size(); ++i)
      all.push_back({oracle_cosine(qv, stub.embed(render_context(pool[i]))), i});
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    REQUIRE(r.items.size() == 5);
    for (std::size_t j = 0; j < 5; ++j) {
      CHECK(r.items[j].pool_index == all[j].second);
      CHECK(r.items[j].similarity == doctest::Approx(all[j].first).epsilon(1e-12));
      if (j) CHECK(r.items[j].similarity <= r.items[j - 1].similarity);
    }
  }
}

TEST_CASE("query id is excluded from the pool") {
  std::mt19937_64 rng(2);
  auto pool = random_pool(rng, 6);
  GaussianStub stub;
  const auto r = top_k_similar(pool[0], pool, stub);
  for (const auto& item : r.items) CHECK(item.sample.id != pool[0].id);
}

TEST_CASE("default system prompt matches the golden file") {
  CHECK(std::string(kDefaultSystemPrompt) == th::read_file(th::data_path("system_prompt.txt")));
  const std::string sp = kDefaultSystemPrompt;
  CHECK(sp.ends_with("Now, join the following conversation:"));
}

TEST_CASE("prompt layout") {
  std::mt19937_64 rng(8);
  const auto pool = random_pool(rng, 7);
  std::vector<ScoredSample> ranked;
  for (std::size_t i = 0; i < pool.size(); ++i) ranked.push_back({i, pool[i], 1.0 - 0.1 * i});

  const auto zero = build_fewshot_prompt(kFigure, {});
  CHECK(zero.exemplars.empty());
  CHECK(zero.flat() == std::string(kDefaultSystemPrompt) + "\n\n" + render_context(kFigure));

  const auto b = build_fewshot_prompt(kFigure, ranked);
  REQUIRE(b.exemplars.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(b.exemplars[i] == render_dialogue(pool[i]));
  const auto user = b.user_text();
  std::size_t begins = 0, ends = 0, pos = 0;
  while ((pos = user.find("<<<BEGIN SAMPLE CONVERSATION>>>", pos)) != std::string::npos) ++begins, ++pos;
  pos = 0;
  while ((pos = user.find("<<<END SAMPLE CONVERSATION>>>", pos)) != std::string::npos) ++ends, ++pos;
  CHECK(begins == 5);
  CHECK(ends == 5);
  CHECK(user.ends_with(render_context(kFigure)));
  std::size_t last = 0;
  for (const auto& e : b.exemplars) {
    const auto at = user.find(e);
    CHECK(at != std::string::npos);
    CHECK(at >= last);
    last = at;
  }
  const auto msgs = b.messages();
  REQUIRE(msgs.size() == 2);
  CHECK(msgs[0]["role"] == "system");
  CHECK(msgs[0]["content"] == kDefaultSystemPrompt);
  CHECK(msgs[1]["role"] == "user");
  CHECK(PromptBundle::from_json(b.to_json()).flat() == b.flat());
  CHECK(build_fewshot_prompt(kFigure, ranked).to_json().dump() == b.to_json().dump());
  CHECK_THROWS_AS(build_fewshot_prompt(kFigure, ranked, ""), ConfigError);
}

TEST_CASE("embedding cache persists and counts") {
  th::TempDir dir("cache");
  const auto path = dir.str("cache.json");
  auto inner = std::make_shared<GaussianStub>();
  std::vector<double> first;
  {
    CachedEmbeddingProvider cache(inner, path);
    first = cache.embed("hello there");
    CHECK(cache.embed("hello there") == first);
    CHECK(cache.hits() == 1);
    CHECK(cache.misses() == 1);
  }
  CHECK(inner->calls == 1);
  CachedEmbeddingProvider reloaded(inner, path);
  CHECK(reloaded.embed("hello there") == first);
  CHECK(inner->calls == 1);
  CHECK(reloaded.hits() == 1);
}

TEST_CASE("hashing provider is deterministic and case insensitive") {
  HashingEmbeddingProvider h(64, 3);
  CHECK(h.embed("The Cat") == h.embed("the cat"));
  CHECK(h.embed("a b c").size() == 64);
  CHECK(HashingEmbeddingProvider(64, 3).embed("x y") == h.embed("x y"));
}
