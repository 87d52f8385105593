#include "teachgen/http.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include <httplib.h>

#include "teachgen/error.hpp"

namespace teachgen {
namespace {

class HttplibTransport final : public HttpTransport {
 public:
  HttplibTransport(std::string base_url, std::chrono::seconds timeout)
      : base_url_(std::move(base_url)), timeout_(timeout) {}

  HttpResponse post_json(const std::string& path, const std::string& body,
                         const HttpHeaders& headers) override {
    // httplib::Client is not safe for concurrent use; one per request.
    httplib::Client client(base_url_);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    httplib::Headers h(headers.begin(), headers.end());
    auto res = client.Post(path, h, body, "application/json");
    if (!res)
      throw BackendError("HTTP transport error: " + httplib::to_string(res.error()),
                         /*retryable=*/true);
    return {res->status, res->body};
  }

 private:
  std::string base_url_;
  std::chrono::seconds timeout_;
};

}  // namespace

std::unique_ptr<HttpTransport> make_http_transport(const std::string& base_url,
                                                   std::chrono::seconds timeout) {
  return std::make_unique<HttplibTransport>(base_url, timeout);
}

bool is_retryable_status(int status) { return status == 429 || status >= 500; }

SleepFn real_sleep() {
  return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

NowFn steady_now() {
  return [] { return std::chrono::steady_clock::now(); };
}

std::chrono::milliseconds RetryPolicy::delay_for_retry(int retry_index) const {
  const double raw = static_cast<double>(initial_delay.count()) *
                     std::pow(multiplier, static_cast<double>(retry_index));
  const double capped = std::min(raw, static_cast<double>(max_delay.count()));
  return std::chrono::milliseconds(static_cast<long long>(capped));
}

TokenBucket::TokenBucket(double requests_per_minute, double burst, NowFn now,
                         SleepFn sleep)
    : rate_per_ms_(requests_per_minute / 60000.0),
      capacity_(std::max(1.0, burst)),
      tokens_(std::max(1.0, burst)),
      now_(std::move(now)),
      sleep_(std::move(sleep)),
      last_(now_()) {}

void TokenBucket::refill_locked() {
  const auto t = now_();
  const double elapsed_ms =
      std::chrono::duration<double, std::milli>(t - last_).count();
  last_ = t;
  tokens_ = std::min(capacity_, tokens_ + elapsed_ms * rate_per_ms_);
}

bool TokenBucket::try_acquire() {
  std::lock_guard lock(mutex_);
  refill_locked();
  if (tokens_ < 1.0) return false;
  tokens_ -= 1.0;
  return true;
}

void TokenBucket::acquire() {
  while (true) {
    std::chrono::milliseconds wait{0};
    {
      std::lock_guard lock(mutex_);
      refill_locked();
      if (tokens_ >= 1.0) {
        tokens_ -= 1.0;
        return;
      }
      const double missing = 1.0 - tokens_;
      wait = std::chrono::milliseconds(
          static_cast<long long>(std::ceil(missing / rate_per_ms_)));
    }
    sleep_(std::max(wait, std::chrono::milliseconds(1)));
  }
}

}  // namespace teachgen
