#include "teachgen/generation.hpp"

#include <array>
#include <ctime>
#include <fstream>

#include "teachgen/error.hpp"
#include "teachgen/hashing.hpp"

namespace teachgen {

using nlohmann::json;

void GenerationParams::validate() const {
  if (model_id.empty()) throw ConfigError("generation: model_id must be set");
  if (!(temperature >= 0.0)) throw ConfigError("generation: temperature must be >= 0");
  if (!(top_p > 0.0 && top_p <= 1.0))
    throw ConfigError("generation: top_p must be in (0, 1]");
  if (max_new_tokens == 0) throw ConfigError("generation: max_new_tokens must be > 0");
}

std::string to_string(FinishReason reason) {
  switch (reason) {
    case FinishReason::kStop: return "stop";
    case FinishReason::kLength: return "length";
    case FinishReason::kError: return "error";
  }
  return "error";
}

FinishReason finish_reason_from_string(std::string_view text) {
  if (text == "stop") return FinishReason::kStop;
  if (text == "length") return FinishReason::kLength;
  return FinishReason::kError;
}

GeneratedResponse TextGenerator::generate(std::string_view prompt,
                                          const GenerationParams& params) {
  PromptBundle bundle;
  bundle.query_conversation = std::string(prompt);
  return generate(bundle, params);
}

GeneratedResponse truncate_to_tokens(std::string_view text, std::size_t max_tokens,
                                     std::size_t prompt_tokens) {
  const auto pieces = default_tokenizer().split(text);
  GeneratedResponse out;
  out.usage.prompt_tokens = prompt_tokens;
  if (pieces.size() <= max_tokens) {
    out.text = std::string(trim(text));
    out.usage.completion_tokens = pieces.size();
    out.finish_reason = FinishReason::kStop;
    return out;
  }
  const auto& last = pieces[max_tokens - 1];
  out.text = std::string(text.substr(pieces.front().begin, last.end - pieces.front().begin));
  out.usage.completion_tokens = max_tokens;
  out.finish_reason = FinishReason::kLength;
  return out;
}

GeneratedResponse EchoGenerator::generate(const PromptBundle& prompt,
                                          const GenerationParams& params) {
  params.validate();
  std::string_view q = prompt.query_conversation;
  const auto nl = q.rfind('\n');
  const auto last = nl == std::string_view::npos ? q : q.substr(nl + 1);
  return truncate_to_tokens(last, params.max_new_tokens,
                            default_tokenizer().count(prompt.flat()));
}

GeneratedResponse CannedGenerator::generate(const PromptBundle& prompt,
                                            const GenerationParams& params) {
  params.validate();
  return truncate_to_tokens(text_, params.max_new_tokens,
                            default_tokenizer().count(prompt.flat()));
}

GeneratedResponse SeededMockGenerator::generate(const PromptBundle& prompt,
                                                const GenerationParams& params) {
  params.validate();
  static constexpr std::array<const char*, 8> kReplies = {
      "Good job! Can you try another one?",
      "Almost, have another look at the verb tense.",
      "That's right, well done.",
      "What do you think the answer is?",
      "Nice, can you use it in a sentence?",
      "Not quite, think about the plural form.",
      "Yes, exactly. Shall we move on?",
      "Take your time, there is no rush.",
  };
  const auto flat = prompt.flat();
  const auto h = splitmix64(fnv1a64(flat) ^ splitmix64(seed_ ^ params.seed.value_or(0)));
  return truncate_to_tokens(kReplies[h % kReplies.size()], params.max_new_tokens,
                            default_tokenizer().count(flat));
}

json build_chat_request(const PromptBundle& prompt, const GenerationParams& params) {
  json request = {{"model", params.model_id},
                  {"messages", prompt.messages()},
                  {"temperature", params.temperature},
                  {"max_tokens", params.max_new_tokens},
                  {"top_p", params.top_p}};
  if (params.seed) request["seed"] = *params.seed;
  return request;
}

ChatCompletionClient::ChatCompletionClient(std::shared_ptr<HttpTransport> transport,
                                           std::string api_key, std::string path)
    : transport_(std::move(transport)),
      api_key_(std::move(api_key)),
      path_(std::move(path)) {}

GeneratedResponse ChatCompletionClient::generate(const PromptBundle& prompt,
                                                 const GenerationParams& params) {
  params.validate();
  HttpHeaders headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
  const auto res =
      transport_->post_json(path_, build_chat_request(prompt, params).dump(), headers);
  if (res.status < 200 || res.status >= 300)
    throw BackendError("chat completion returned HTTP " + std::to_string(res.status),
                       is_retryable_status(res.status));
  try {
    const auto body = json::parse(res.body);
    const auto& choice = body.at("choices").at(0);
    GeneratedResponse out;
    const auto& content = choice.at("message").at("content");
    out.text = content.is_string() ? content.get<std::string>() : std::string();
    out.finish_reason =
        finish_reason_from_string(choice.value("finish_reason", std::string("stop")));
    if (auto usage = body.find("usage"); usage != body.end()) {
      out.usage.prompt_tokens = usage->value("prompt_tokens", std::size_t{0});
      out.usage.completion_tokens = usage->value("completion_tokens", std::size_t{0});
    }
    return out;
  } catch (const json::exception& e) {
    throw BackendError(std::string("malformed chat completion response: ") + e.what(),
                       false);
  }
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      now.time_since_epoch()) % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[40];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms.count()));
  return out;
}

AuditLog::AuditLog(std::string path, WallClockFn clock)
    : path_(std::move(path)), clock_(std::move(clock)) {}

void AuditLog::append(const json& record) {
  std::lock_guard lock(mutex_);
  records_.push_back(record);
  if (path_.empty()) return;
  std::ofstream out(path_, std::ios::app);
  if (!out) throw Error("cannot append to audit log '" + path_ + "'");
  out << record.dump() << '\n';
}

std::vector<json> AuditLog::records() const {
  std::lock_guard lock(mutex_);
  return records_;
}

std::uint64_t AuditLog::next_request_id() {
  std::lock_guard lock(mutex_);
  return next_id_++;
}

GeneratedResponse generate_response(TextGenerator& backend, const PromptBundle& prompt,
                                    const GenerationParams& params,
                                    const GenerateOptions& options) {
  params.validate();
  json record;
  if (options.audit) {
    record = {{"request_id", options.audit->next_request_id()},
              {"backend", backend.backend_id()},
              {"started_at", options.audit->now()},
              {"request", build_chat_request(prompt, params)}};
  }

  int attempts = 0;
  auto finish = [&](const char* status) {
    if (!options.audit) return;
    record["attempts"] = attempts;
    record["status"] = status;
    record["finished_at"] = options.audit->now();
    options.audit->append(record);
  };

  for (;;) {
    if (options.rate_limiter) options.rate_limiter->acquire();
    ++attempts;
    try {
      auto response = backend.generate(prompt, params);
      if (trim(response.text).empty()) {
        response.text.clear();
        response.finish_reason = FinishReason::kError;
      }
      record["response"] = {{"text", response.text},
                            {"finish_reason", to_string(response.finish_reason)},
                            {"usage",
                             {{"prompt_tokens", response.usage.prompt_tokens},
                              {"completion_tokens", response.usage.completion_tokens}}}};
      finish("ok");
      return response;
    } catch (const BackendError& e) {
      if (!e.retryable() || attempts >= options.retry.max_attempts) {
        record["error"] = e.what();
        finish("failed");
        throw BackendError(std::string(e.what()) + " (after " +
                               std::to_string(attempts) + " attempt(s))",
                           false);
      }
    }
    options.sleep(options.retry.delay_for_retry(attempts - 1));
  }
}

}  // namespace teachgen
