#include "teachgen/retrieval.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <exception>
#include <fstream>
#include <map>
#include <thread>

#include "teachgen/error.hpp"
#include "teachgen/hashing.hpp"

namespace teachgen {

using nlohmann::json;

const char* const kDefaultSystemPrompt =
    "You are acting as a teacher, and you are helping a student learn. Be "
    "patient, helpful, and kind. Don't be superimposing; give short responses "
    "to encourage learning. Make the student feel comfortable and confident, "
    "and help them learn. Now, join the following conversation:";
const char* const kDefaultExemplarBegin = "<<<BEGIN SAMPLE CONVERSATION>>>";
const char* const kDefaultExemplarEnd = "<<<END SAMPLE CONVERSATION>>>";

HashingEmbeddingProvider::HashingEmbeddingProvider(std::size_t dimension,
                                                   std::uint64_t seed)
    : dimension_(dimension), seed_(seed) {
  if (dimension_ == 0) throw ConfigError("embedding dimension must be positive");
}

std::string HashingEmbeddingProvider::provider_id() const {
  return "hashing-" + std::to_string(dimension_) + "-" + std::to_string(seed_);
}

std::vector<double> HashingEmbeddingProvider::embed(std::string_view text) {
  std::vector<double> v(dimension_, 0.0);
  for (const auto& token : default_tokenizer().tokenize(text)) {
    std::string lower;
    for (char c : token)
      if (std::isalnum(static_cast<unsigned char>(c)) || (c & 0x80))
        lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (lower.empty()) continue;
    const auto h = splitmix64(fnv1a64(lower) ^ seed_);
    v[h % dimension_] += (h >> 63) ? -1.0 : 1.0;
  }
  return v;
}

HttpEmbeddingProvider::HttpEmbeddingProvider(std::shared_ptr<HttpTransport> transport,
                                             std::string model, std::string api_key,
                                             RetryPolicy retry, SleepFn sleep)
    : transport_(std::move(transport)),
      model_(std::move(model)),
      api_key_(std::move(api_key)),
      retry_(retry),
      sleep_(std::move(sleep)) {}

std::vector<double> HttpEmbeddingProvider::embed(std::string_view text) {
  const json request = {{"model", model_}, {"input", std::string(text)}};
  HttpHeaders headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

  for (int attempt = 0;; ++attempt) {
    HttpResponse res;
    bool retryable = false;
    std::string failure;
    try {
      res = transport_->post_json("/v1/embeddings", request.dump(), headers);
      if (res.status >= 200 && res.status < 300) {
        const auto body = json::parse(res.body);
        return body.at("data").at(0).at("embedding").get<std::vector<double>>();
      }
      retryable = is_retryable_status(res.status);
      failure = "embedding service returned HTTP " + std::to_string(res.status);
    } catch (const BackendError& e) {
      retryable = e.retryable();
      failure = e.what();
    } catch (const json::exception& e) {
      throw BackendError(std::string("malformed embedding response: ") + e.what(),
                         false);
    }
    if (!retryable || attempt + 1 >= retry_.max_attempts)
      throw BackendError(failure, false);
    sleep_(retry_.delay_for_retry(attempt));
  }
}

CachedEmbeddingProvider::CachedEmbeddingProvider(
    std::shared_ptr<EmbeddingProvider> inner, std::string cache_path)
    : inner_(std::move(inner)), cache_path_(std::move(cache_path)) {
  if (cache_path_.empty()) return;
  std::ifstream in(cache_path_);
  if (!in) return;
  try {
    const auto doc = json::parse(in);
    for (const auto& [k, v] : doc.items()) cache_[k] = v.get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw Error("corrupt embedding cache '" + cache_path_ + "': " + e.what());
  }
}

CachedEmbeddingProvider::~CachedEmbeddingProvider() {
  try {
    flush();
  } catch (...) {
  }
}

std::string CachedEmbeddingProvider::key(std::string_view text) const {
  return inner_->provider_id() + ":" + hex64(fnv1a64(text));
}

std::vector<double> CachedEmbeddingProvider::embed(std::string_view text) {
  const auto k = key(text);
  {
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(k); it != cache_.end()) {
      ++hits_;
      return it->second;
    }
  }
  auto v = inner_->embed(text);
  std::lock_guard lock(mutex_);
  ++misses_;
  dirty_ = true;
  return cache_.try_emplace(k, std::move(v)).first->second;
}

void CachedEmbeddingProvider::flush() {
  std::lock_guard lock(mutex_);
  if (cache_path_.empty() || !dirty_) return;
  // Sorted keys keep the file byte-stable across runs.
  json doc(std::map<std::string, std::vector<double>>(cache_.begin(), cache_.end()));
  std::ofstream out(cache_path_);
  if (!out) throw Error("cannot write embedding cache '" + cache_path_ + "'");
  out << doc.dump();
  dirty_ = false;
}

std::size_t CachedEmbeddingProvider::hits() const {
  std::lock_guard lock(mutex_);
  return hits_;
}

std::size_t CachedEmbeddingProvider::misses() const {
  std::lock_guard lock(mutex_);
  return misses_;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw Error("cosine_similarity: dimension mismatch (" + std::to_string(a.size()) +
                " vs " + std::to_string(b.size()) + ")");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

std::string render_context(const DialogueSample& sample) {
  std::string out;
  for (const auto& u : sample.context) {
    if (!out.empty()) out += '\n';
    out += "[" + u.speaker + "] " + u.text;
  }
  return out;
}

std::string render_dialogue(const DialogueSample& sample) {
  auto out = render_context(sample);
  if (sample.response)
    out += "\n[" + sample.response->speaker + "] " + sample.response->text;
  return out;
}

namespace {

bool is_zero(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

// Embeds texts with at most `max_in_flight` concurrent calls; results keep
// input order. The first provider failure is rethrown.
std::vector<std::vector<double>> embed_all(const std::vector<std::string>& texts,
                                           EmbeddingProvider& provider,
                                           std::size_t max_in_flight) {
  std::vector<std::vector<double>> out(texts.size());
  const std::size_t workers =
      std::max<std::size_t>(1, std::min(max_in_flight, texts.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < texts.size(); ++i) out[i] = provider.embed(texts[i]);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < texts.size(); i = next++) {
        try {
          out[i] = provider.embed(texts[i]);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = texts.size();
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace

Ranking top_k_similar(const DialogueSample& query,
                      const std::vector<DialogueSample>& pool,
                      EmbeddingProvider& provider, const RetrievalOptions& options) {
  if (pool.empty()) throw Error("top_k_similar: empty pool");

  std::vector<std::size_t> candidates;
  std::vector<std::string> texts;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (options.exclude_query_id && pool[i].id == query.id) continue;
    candidates.push_back(i);
    texts.push_back(render_context(pool[i]));
  }
  texts.push_back(render_context(query));
  const auto vectors = embed_all(texts, provider, options.max_in_flight);
  const auto& q = vectors.back();

  Ranking ranking;
  if (is_zero(q))
    ranking.warnings.push_back("query '" + query.id +
                               "' has a zero-norm embedding; all similarities are 0");
  std::vector<ScoredSample> scored;
  scored.reserve(candidates.size());
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const auto& v = vectors[c];
    if (v.size() != q.size())
      throw Error("embedding dimension mismatch: " + std::to_string(v.size()) +
                  " vs " + std::to_string(q.size()));
    if (is_zero(v))
      ranking.warnings.push_back("pool sample '" + pool[candidates[c]].id +
                                 "' has a zero-norm embedding");
    scored.push_back({candidates[c], pool[candidates[c]], cosine_similarity(q, v)});
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const ScoredSample& a, const ScoredSample& b) {
                     return a.similarity > b.similarity;
                   });
  if (scored.size() > options.k) scored.resize(options.k);
  ranking.items = std::move(scored);
  return ranking;
}

std::string PromptBundle::user_text() const {
  std::string out;
  for (const auto& e : exemplars) out += delimiter_begin + "\n" + e + "\n" + delimiter_end + "\n";
  if (!exemplars.empty()) out += "\n";
  out += query_conversation;
  return out;
}

std::string PromptBundle::flat() const {
  if (system_text.empty()) return user_text();
  return system_text + "\n\n" + user_text();
}

json PromptBundle::messages() const {
  return json::array({{{"role", "system"}, {"content", system_text}},
                      {{"role", "user"}, {"content", user_text()}}});
}

json PromptBundle::to_json() const {
  return {{"system_text", system_text},
          {"exemplars", exemplars},
          {"query_conversation", query_conversation},
          {"delimiter_begin", delimiter_begin},
          {"delimiter_end", delimiter_end}};
}

PromptBundle PromptBundle::from_json(const json& node) {
  PromptBundle b;
  b.system_text = node.at("system_text").get<std::string>();
  b.exemplars = node.at("exemplars").get<std::vector<std::string>>();
  b.query_conversation = node.at("query_conversation").get<std::string>();
  b.delimiter_begin = node.value("delimiter_begin", std::string(kDefaultExemplarBegin));
  b.delimiter_end = node.value("delimiter_end", std::string(kDefaultExemplarEnd));
  return b;
}

PromptBundle build_fewshot_prompt(const DialogueSample& query,
                                  const std::vector<ScoredSample>& ranked,
                                  const std::string& system_text,
                                  const PromptOptions& options) {
  if (system_text.empty()) throw ConfigError("system prompt text must be non-empty");
  PromptBundle bundle;
  bundle.system_text = system_text;
  bundle.delimiter_begin = options.delimiter_begin;
  bundle.delimiter_end = options.delimiter_end;
  const auto n = std::min(options.max_exemplars, ranked.size());
  for (std::size_t i = 0; i < n; ++i)
    bundle.exemplars.push_back(render_dialogue(ranked[i].sample));
  bundle.query_conversation = render_context(query);
  return bundle;
}

}  // namespace teachgen
