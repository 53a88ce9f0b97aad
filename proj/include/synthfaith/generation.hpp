#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "synthfaith/common.hpp"
#include "synthfaith/prompting.hpp"

namespace synthfaith {

/// Decoding parameters. The defaults favour diverse, high-perplexity output.
struct GenerationParams {
  double temperature = 1.0;
  double top_p = 1.0;
  double frequency_penalty = 0.5;
  double presence_penalty = 0.4;
  int max_tokens = 700;

  void validate() const;
  bool operator==(const GenerationParams&) const = default;
};

/// Transient provider failure (network error, HTTP 429/5xx); retried.
class TransientError : public Error {
 public:
  using Error::Error;
};

/// Authentication or authorization failure; never retried.
class AuthError : public Error {
 public:
  using Error::Error;
};

struct ChatRequest {
  std::string prompt_id;
  std::string prompt;
  GenerationParams params;
};

struct ProviderReply {
  std::string text;
  std::string model_name;
  std::string finish_reason = "stop";
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  double latency_ms = 0.0;
};

/// One chat-completions backend. Implementations must be safe to call from several threads.
class CompletionProvider {
 public:
  virtual ~CompletionProvider() = default;
  virtual ProviderReply send(const ChatRequest& request) = 0;
  virtual std::string kind() const = 0;
  virtual std::string model_name() const = 0;
};

class Clock {
 public:
  using duration = std::chrono::milliseconds;
  using time_point = std::chrono::time_point<std::chrono::steady_clock, duration>;

  virtual ~Clock() = default;
  virtual time_point now() = 0;
  virtual void sleep_for(duration d) = 0;
};

class SteadyClock final : public Clock {
 public:
  time_point now() override;
  void sleep_for(duration d) override;
};

/// Time only moves when someone sleeps. Used to test rate limiting and backoff.
class ManualClock final : public Clock {
 public:
  time_point now() override;
  void sleep_for(duration d) override;
  void advance(duration d);
  duration total_slept() const;

 private:
  mutable std::mutex mutex_;
  time_point now_{};
  duration slept_{0};
};

/// Sliding 60-second window: at most `requests_per_minute` acquisitions in any window.
class RateLimiter {
 public:
  /// A non-positive limit disables limiting.
  RateLimiter(int requests_per_minute, std::shared_ptr<Clock> clock);

  void acquire();
  int limit() const { return limit_; }

 private:
  int limit_;
  std::shared_ptr<Clock> clock_;
  std::mutex mutex_;
  std::deque<Clock::time_point> issued_;
};

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds initial_backoff{1000};
  double multiplier = 2.0;
  std::chrono::milliseconds max_backoff{30000};

  /// Wait before retry number `attempt` (1-based count of failures so far).
  std::chrono::milliseconds backoff(int attempt) const;
};

struct RawCompletion {
  std::string prompt_id;
  std::string raw_text;
  std::string model_name;
  std::string finish_reason;
  double latency_ms = 0.0;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  GenerationParams request_params;
  int attempts = 1;
  bool refusal = false;
};

nlohmann::ordered_json to_json(const RawCompletion& completion);
RawCompletion raw_completion_from_json(const nlohmann::ordered_json& j);

/// Shared per run: one provider, one rate limiter, one retry policy.
class CompletionClient {
 public:
  CompletionClient(std::shared_ptr<CompletionProvider> provider, RetryPolicy retry, int requests_per_minute,
                   std::shared_ptr<Clock> clock = std::make_shared<SteadyClock>());

  /// Retries TransientError per policy; AuthError and exhausted retries propagate.
  RawCompletion complete(std::string_view prompt_id, const PromptInstance& prompt, const GenerationParams& params);
  RawCompletion complete_text(std::string_view prompt_id, std::string_view prompt_text, const GenerationParams& params);

  CompletionProvider& provider() { return *provider_; }

 private:
  std::shared_ptr<CompletionProvider> provider_;
  RetryPolicy retry_;
  std::shared_ptr<Clock> clock_;
  RateLimiter limiter_;
};

/// Matches the usual "I'm sorry, I can't ..." style refusals.
bool looks_like_refusal(std::string_view text);

struct GenerationFailure {
  std::string prompt_id;
  std::string message;
};

struct GenerationBatch {
  std::vector<RawCompletion> completions;  // in job order, failed jobs omitted
  std::vector<GenerationFailure> failures;
};

/// Runs every job with up to `parallelism` requests in flight. `on_complete`
/// is invoked (serialized) as each completion arrives so callers can archive
/// it before cleaning. AuthError aborts the batch.
GenerationBatch generate_all(std::span<const GenerationJob> jobs, CompletionClient& client,
                             const GenerationParams& params, int parallelism,
                             const std::function<void(const RawCompletion&)>& on_complete = {});

/// Yes/no classification of one text. Retries once on an unparseable answer,
/// then throws ParseError.
Polarity zero_shot_annotate(std::string_view text, CompletionClient& client, std::string_view construct_name,
                            const GenerationParams& params = {});

/// nullopt when the answer cannot be mapped to yes/no.
std::optional<Polarity> parse_yes_no(std::string_view answer);

struct ProviderConfig {
  std::string kind = "mock";  // "mock" or "remote"
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string model_name = "gpt-3.5-turbo";
  std::string api_key_env = "OPENAI_API_KEY";
  int rate_limit_per_minute = 60;
  RetryPolicy retry;
  int parallelism = 4;
  int timeout_seconds = 60;
  std::uint64_t mock_seed = 42;
  std::optional<std::filesystem::path> mock_fixture;
};

/// Throws AuthError when a remote provider's secret is missing.
std::shared_ptr<CompletionProvider> make_provider(const ProviderConfig& config);

}  // namespace synthfaith
