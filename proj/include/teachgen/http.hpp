#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>

namespace teachgen {

struct HttpResponse {
  int status = 0;
  std::string body;
};

using HttpHeaders = std::multimap<std::string, std::string>;

/// Minimal JSON-over-HTTP POST abstraction so clients can be driven by an
/// in-process fake in tests.
class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  /// Throws BackendError(retryable=true) on connection failure.
  virtual HttpResponse post_json(const std::string& path, const std::string& body,
                                 const HttpHeaders& headers) = 0;
};

/// cpp-httplib backed transport. `base_url` is scheme://host[:port].
std::unique_ptr<HttpTransport> make_http_transport(
    const std::string& base_url,
    std::chrono::seconds timeout = std::chrono::seconds(60));

/// 429 and 5xx are worth retrying; other non-2xx codes are not.
bool is_retryable_status(int status);

using SleepFn = std::function<void(std::chrono::milliseconds)>;
using NowFn = std::function<std::chrono::steady_clock::time_point()>;

SleepFn real_sleep();
NowFn steady_now();

/// Exponential backoff: delay(n) = min(initial * multiplier^n, max_delay),
/// for at most `max_attempts` attempts in total.
struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds initial_delay{500};
  double multiplier = 2.0;
  std::chrono::milliseconds max_delay{20000};

  std::chrono::milliseconds delay_for_retry(int retry_index) const;
};

/// Token bucket limiter: `requests_per_minute` refill rate, `burst` capacity.
/// Thread-safe.
class TokenBucket {
 public:
  TokenBucket(double requests_per_minute, double burst, NowFn now = steady_now(),
              SleepFn sleep = real_sleep());

  bool try_acquire();
  /// Blocks (via the sleep function) until a token is available.
  void acquire();

 private:
  void refill_locked();

  double rate_per_ms_;
  double capacity_;
  double tokens_;
  NowFn now_;
  SleepFn sleep_;
  std::chrono::steady_clock::time_point last_;
  std::mutex mutex_;
};

}  // namespace teachgen
