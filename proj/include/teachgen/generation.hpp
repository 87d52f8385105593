#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "teachgen/http.hpp"
#include "teachgen/retrieval.hpp"

namespace teachgen {

/// Sampling parameters. Defaults are the external teacher baseline settings.
struct GenerationParams {
  std::string model_id = "gpt-4-0314";
  double temperature = 1.0;
  std::size_t max_new_tokens = 100;
  double top_p = 1.0;
  std::optional<std::uint64_t> seed;

  void validate() const;
};

enum class FinishReason { kStop, kLength, kError };

std::string to_string(FinishReason reason);
FinishReason finish_reason_from_string(std::string_view text);

struct TokenUsage {
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
};

struct GeneratedResponse {
  std::string text;
  FinishReason finish_reason = FinishReason::kStop;
  TokenUsage usage;
};

class TextGenerator {
 public:
  virtual ~TextGenerator() = default;
  virtual std::string backend_id() const = 0;
  virtual GeneratedResponse generate(const PromptBundle& prompt,
                                     const GenerationParams& params) = 0;

  GeneratedResponse generate(std::string_view prompt, const GenerationParams& params);
};

/// Cuts `text` to its first `max_tokens` whitespace tokens. Returns kLength
/// when anything was dropped.
GeneratedResponse truncate_to_tokens(std::string_view text, std::size_t max_tokens,
                                     std::size_t prompt_tokens);

/// Mock: answers with the last line of the query conversation.
class EchoGenerator final : public TextGenerator {
 public:
  std::string backend_id() const override { return "mock-echo"; }
  GeneratedResponse generate(const PromptBundle& prompt,
                             const GenerationParams& params) override;
};

/// Mock: always answers with the same canned text.
class CannedGenerator final : public TextGenerator {
 public:
  explicit CannedGenerator(std::string text) : text_(std::move(text)) {}
  std::string backend_id() const override { return "mock-canned"; }
  GeneratedResponse generate(const PromptBundle& prompt,
                             const GenerationParams& params) override;

 private:
  std::string text_;
};

/// Mock: picks a teacher-like reply as a pure function of (seed, prompt).
class SeededMockGenerator final : public TextGenerator {
 public:
  explicit SeededMockGenerator(std::uint64_t seed = 0) : seed_(seed) {}
  std::string backend_id() const override { return "mock-seeded"; }
  GeneratedResponse generate(const PromptBundle& prompt,
                             const GenerationParams& params) override;

 private:
  std::uint64_t seed_;
};

/// Request body for an OpenAI-compatible chat-completions endpoint.
nlohmann::json build_chat_request(const PromptBundle& prompt,
                                  const GenerationParams& params);

/// Single-attempt chat-completions client. Retries are the caller's job
/// (see generate_response). Safe for concurrent use when the transport is.
class ChatCompletionClient final : public TextGenerator {
 public:
  ChatCompletionClient(std::shared_ptr<HttpTransport> transport, std::string api_key,
                       std::string path = "/v1/chat/completions");
  std::string backend_id() const override { return "chat-completions"; }
  GeneratedResponse generate(const PromptBundle& prompt,
                             const GenerationParams& params) override;

 private:
  std::shared_ptr<HttpTransport> transport_;
  std::string api_key_;
  std::string path_;
};

using WallClockFn = std::function<std::string()>;

/// ISO-8601 UTC timestamp of the current time.
std::string utc_timestamp();

/// Append-only JSON-lines audit sink. Thread-safe.
class AuditLog {
 public:
  /// Empty path keeps records in memory only.
  explicit AuditLog(std::string path = {}, WallClockFn clock = utc_timestamp);

  void append(const nlohmann::json& record);
  std::string now() const { return clock_(); }
  std::vector<nlohmann::json> records() const;
  std::uint64_t next_request_id();

 private:
  std::string path_;
  WallClockFn clock_;
  mutable std::mutex mutex_;
  std::vector<nlohmann::json> records_;
  std::uint64_t next_id_ = 1;
};

struct GenerateOptions {
  RetryPolicy retry;
  SleepFn sleep = real_sleep();
  AuditLog* audit = nullptr;
  TokenBucket* rate_limiter = nullptr;
};

/// One logical request: rate-limited, retried on retryable backend errors
/// with exponential backoff, and written to the audit log exactly once.
GeneratedResponse generate_response(TextGenerator& backend, const PromptBundle& prompt,
                                    const GenerationParams& params,
                                    const GenerateOptions& options = {});

}  // namespace teachgen
