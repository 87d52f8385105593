#pragma once

#include <cstddef>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "teachgen/corpus.hpp"
#include "teachgen/http.hpp"

namespace teachgen {

/// Maps text to a fixed-dimension real vector. Implementations used with
/// parallel retrieval must be safe for concurrent `embed` calls.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string provider_id() const = 0;
  virtual std::vector<double> embed(std::string_view text) = 0;
};

/// Deterministic bag-of-words feature hashing. Stand-in for a hosted
/// embedding model in tests and offline runs.
class HashingEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit HashingEmbeddingProvider(std::size_t dimension = 256,
                                    std::uint64_t seed = 0);
  std::string provider_id() const override;
  std::vector<double> embed(std::string_view text) override;

 private:
  std::size_t dimension_;
  std::uint64_t seed_;
};

/// OpenAI-compatible `/v1/embeddings` client.
class HttpEmbeddingProvider final : public EmbeddingProvider {
 public:
  HttpEmbeddingProvider(std::shared_ptr<HttpTransport> transport,
                        std::string model = "text-embedding-ada-002",
                        std::string api_key = {}, RetryPolicy retry = {},
                        SleepFn sleep = real_sleep());
  std::string provider_id() const override { return model_; }
  std::vector<double> embed(std::string_view text) override;

 private:
  std::shared_ptr<HttpTransport> transport_;
  std::string model_;
  std::string api_key_;
  RetryPolicy retry_;
  SleepFn sleep_;
};

/// Memoizes an inner provider by (provider_id, text hash). When `cache_path`
/// is non-empty the cache is loaded from and flushed to that JSON file.
class CachedEmbeddingProvider final : public EmbeddingProvider {
 public:
  CachedEmbeddingProvider(std::shared_ptr<EmbeddingProvider> inner,
                          std::string cache_path = {});
  ~CachedEmbeddingProvider() override;

  std::string provider_id() const override { return inner_->provider_id(); }
  std::vector<double> embed(std::string_view text) override;

  void flush();
  std::size_t hits() const;
  std::size_t misses() const;

 private:
  std::string key(std::string_view text) const;

  std::shared_ptr<EmbeddingProvider> inner_;
  std::string cache_path_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::vector<double>> cache_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
  bool dirty_ = false;
};

/// <u, v> / (|u| |v|); 0 when either vector has zero norm.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// "[speaker] text" per turn, newline-joined; the response comes last.
std::string render_dialogue(const DialogueSample& sample);
/// Same rendering without the response.
std::string render_context(const DialogueSample& sample);

struct ScoredSample {
  std::size_t pool_index = 0;
  DialogueSample sample;
  double similarity = 0.0;
};

struct RetrievalOptions {
  std::size_t k = 5;
  std::size_t max_in_flight = 4;
  /// Skip pool entries whose id equals the query id.
  bool exclude_query_id = true;
};

struct Ranking {
  std::vector<ScoredSample> items;
  std::vector<std::string> warnings;
};

/// Ranks pool samples by cosine similarity of their rendered contexts to the
/// query context. Descending similarity, ties by pool order.
Ranking top_k_similar(const DialogueSample& query,
                      const std::vector<DialogueSample>& pool,
                      EmbeddingProvider& provider, const RetrievalOptions& options = {});

extern const char* const kDefaultSystemPrompt;
extern const char* const kDefaultExemplarBegin;
extern const char* const kDefaultExemplarEnd;

struct PromptBundle {
  std::string system_text;
  std::vector<std::string> exemplars;
  std::string query_conversation;
  std::string delimiter_begin = kDefaultExemplarBegin;
  std::string delimiter_end = kDefaultExemplarEnd;

  /// Exemplar blocks followed by the query conversation.
  std::string user_text() const;
  /// system_text, a blank line, then user_text().
  std::string flat() const;
  /// Chat message list: one system message and one user message.
  nlohmann::json messages() const;
  nlohmann::json to_json() const;
  static PromptBundle from_json(const nlohmann::json& node);
};

struct PromptOptions {
  std::size_t max_exemplars = 5;
  std::string delimiter_begin = kDefaultExemplarBegin;
  std::string delimiter_end = kDefaultExemplarEnd;
};

PromptBundle build_fewshot_prompt(const DialogueSample& query,
                                  const std::vector<ScoredSample>& ranked,
                                  const std::string& system_text = kDefaultSystemPrompt,
                                  const PromptOptions& options = {});

}  // namespace teachgen
