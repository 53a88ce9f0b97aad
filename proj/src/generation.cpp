#include "synthfaith/generation.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "synthfaith/providers.hpp"

namespace synthfaith {

void GenerationParams::validate() const {
  if (!(temperature >= 0.0)) throw Error("temperature must be non-negative");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw Error("top_p must lie in (0,1]");
  if (max_tokens < 1) throw Error("max_tokens must be positive");
}

Clock::time_point SteadyClock::now() {
  return std::chrono::time_point_cast<duration>(std::chrono::steady_clock::now());
}

void SteadyClock::sleep_for(duration d) { std::this_thread::sleep_for(d); }

Clock::time_point ManualClock::now() {
  std::lock_guard lock(mutex_);
  return now_;
}

void ManualClock::sleep_for(duration d) {
  std::lock_guard lock(mutex_);
  now_ += d;
  slept_ += d;
}

void ManualClock::advance(duration d) {
  std::lock_guard lock(mutex_);
  now_ += d;
}

Clock::duration ManualClock::total_slept() const {
  std::lock_guard lock(mutex_);
  return slept_;
}

RateLimiter::RateLimiter(int requests_per_minute, std::shared_ptr<Clock> clock)
    : limit_(requests_per_minute), clock_(std::move(clock)) {}

void RateLimiter::acquire() {
  if (limit_ <= 0) return;
  constexpr Clock::duration window = std::chrono::minutes(1);
  std::unique_lock lock(mutex_);
  for (;;) {
    const auto now = clock_->now();
    while (!issued_.empty() && issued_.front() + window <= now) issued_.pop_front();
    if (static_cast<int>(issued_.size()) < limit_) {
      issued_.push_back(now);
      return;
    }
    const auto wait = issued_.front() + window - now;
    lock.unlock();
    clock_->sleep_for(wait);
    lock.lock();
  }
}

std::chrono::milliseconds RetryPolicy::backoff(int attempt) const {
  const double scaled = static_cast<double>(initial_backoff.count()) * std::pow(multiplier, attempt - 1);
  const double capped = std::min(scaled, static_cast<double>(max_backoff.count()));
  return std::chrono::milliseconds(static_cast<std::int64_t>(capped));
}

nlohmann::ordered_json to_json(const RawCompletion& c) {
  nlohmann::ordered_json j;
  j["prompt_id"] = c.prompt_id;
  j["raw_text"] = c.raw_text;
  j["refusal"] = c.refusal;
  j["finish_reason"] = c.finish_reason;
  j["attempts"] = c.attempts;
  j["provider_metadata"] = {{"model_name", c.model_name},
                            {"latency_ms", c.latency_ms},
                            {"prompt_tokens", c.prompt_tokens},
                            {"completion_tokens", c.completion_tokens}};
  j["request_params"] = {{"temperature", c.request_params.temperature},
                         {"top_p", c.request_params.top_p},
                         {"frequency_penalty", c.request_params.frequency_penalty},
                         {"presence_penalty", c.request_params.presence_penalty},
                         {"max_tokens", c.request_params.max_tokens}};
  return j;
}

RawCompletion raw_completion_from_json(const nlohmann::ordered_json& j) {
  RawCompletion c;
  c.prompt_id = j.at("prompt_id").get<std::string>();
  c.raw_text = j.at("raw_text").get<std::string>();
  c.refusal = j.value("refusal", false);
  c.finish_reason = j.value("finish_reason", std::string{});
  c.attempts = j.value("attempts", 1);
  const auto& meta = j.at("provider_metadata");
  c.model_name = meta.value("model_name", std::string{});
  c.latency_ms = meta.value("latency_ms", 0.0);
  c.prompt_tokens = meta.value("prompt_tokens", std::int64_t{0});
  c.completion_tokens = meta.value("completion_tokens", std::int64_t{0});
  const auto& params = j.at("request_params");
  c.request_params.temperature = params.at("temperature").get<double>();
  c.request_params.top_p = params.at("top_p").get<double>();
  c.request_params.frequency_penalty = params.at("frequency_penalty").get<double>();
  c.request_params.presence_penalty = params.at("presence_penalty").get<double>();
  c.request_params.max_tokens = params.at("max_tokens").get<int>();
  return c;
}

bool looks_like_refusal(std::string_view text) {
  const std::string lowered = to_lower_ascii(trim(text));
  static constexpr std::string_view openers[] = {
      "i'm sorry", "i am sorry", "sorry, but", "sorry, i", "i can't", "i cannot", "i can not",
      "i won't",   "i will not", "as an ai",   "i'm unable", "i am unable", "i’m sorry", "i can’t"};
  return std::any_of(std::begin(openers), std::end(openers),
                     [&](std::string_view opener) { return lowered.starts_with(opener); });
}

CompletionClient::CompletionClient(std::shared_ptr<CompletionProvider> provider, RetryPolicy retry,
                                   int requests_per_minute, std::shared_ptr<Clock> clock)
    : provider_(std::move(provider)),
      retry_(retry),
      clock_(std::move(clock)),
      limiter_(requests_per_minute, clock_) {
  if (!provider_) throw Error("completion client needs a provider");
  if (retry_.max_attempts < 1) throw Error("retry policy needs at least one attempt");
}

RawCompletion CompletionClient::complete(std::string_view prompt_id, const PromptInstance& prompt,
                                         const GenerationParams& params) {
  return complete_text(prompt_id, prompt.rendered_text, params);
}

RawCompletion CompletionClient::complete_text(std::string_view prompt_id, std::string_view prompt_text,
                                              const GenerationParams& params) {
  params.validate();
  if (trim(prompt_text).empty()) throw Error("refusing to send an empty prompt");
  const ChatRequest request{std::string(prompt_id), std::string(prompt_text), params};

  for (int attempt = 1;; ++attempt) {
    limiter_.acquire();
    try {
      ProviderReply reply = provider_->send(request);
      RawCompletion completion;
      completion.prompt_id = request.prompt_id;
      completion.raw_text = std::move(reply.text);
      completion.model_name = std::move(reply.model_name);
      completion.finish_reason = std::move(reply.finish_reason);
      completion.latency_ms = reply.latency_ms;
      completion.prompt_tokens = reply.prompt_tokens;
      completion.completion_tokens = reply.completion_tokens;
      completion.request_params = params;
      completion.attempts = attempt;
      completion.refusal = completion.finish_reason == "content_filter" || looks_like_refusal(completion.raw_text);
      if (completion.raw_text.empty()) spdlog::warn("provider returned an empty completion for {}", prompt_id);
      return completion;
    } catch (const TransientError& e) {
      if (attempt >= retry_.max_attempts) {
        throw TransientError(fmt::format("{}: giving up after {} attempts: {}", prompt_id, attempt, e.what()));
      }
      const auto wait = retry_.backoff(attempt);
      spdlog::debug("{}: transient failure ({}), retrying in {} ms", prompt_id, e.what(), wait.count());
      clock_->sleep_for(wait);
    }
  }
}

GenerationBatch generate_all(std::span<const GenerationJob> jobs, CompletionClient& client,
                             const GenerationParams& params, int parallelism,
                             const std::function<void(const RawCompletion&)>& on_complete) {
  std::vector<std::optional<RawCompletion>> results(jobs.size());
  std::vector<std::optional<std::string>> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::mutex callback_mutex;
  std::exception_ptr fatal;
  std::mutex fatal_mutex;

  auto worker = [&] {
    for (;;) {
      if (abort.load()) return;
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      try {
        auto prompt = render_prompt(jobs[i].spec);
        auto completion = client.complete(jobs[i].prompt_id, prompt, params);
        if (on_complete) {
          std::lock_guard lock(callback_mutex);
          on_complete(completion);
        }
        results[i] = std::move(completion);
      } catch (const AuthError&) {
        std::lock_guard lock(fatal_mutex);
        if (!fatal) fatal = std::current_exception();
        abort.store(true);
        return;
      } catch (const std::exception& e) {
        errors[i] = e.what();
        spdlog::error("generation failed for {}: {}", jobs[i].prompt_id, e.what());
      }
    }
  };

  const int threads = std::clamp(parallelism, 1, static_cast<int>(std::max<std::size_t>(jobs.size(), 1)));
  {
    std::vector<std::jthread> pool;
    for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
  }
  if (fatal) std::rethrow_exception(fatal);

  GenerationBatch batch;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (results[i]) {
      batch.completions.push_back(std::move(*results[i]));
    } else {
      batch.failures.push_back({jobs[i].prompt_id, errors[i].value_or("not attempted")});
    }
  }
  return batch;
}

std::optional<Polarity> parse_yes_no(std::string_view answer) {
  std::string word;
  for (char c : to_lower_ascii(trim(answer))) {
    if (c >= 'a' && c <= 'z') {
      word.push_back(c);
    } else if (!word.empty()) {
      break;
    }
  }
  if (word == "yes") return Polarity::positive_construct;
  if (word == "no") return Polarity::negative_construct;
  return std::nullopt;
}

Polarity zero_shot_annotate(std::string_view text, CompletionClient& client, std::string_view construct_name,
                            const GenerationParams& params) {
  if (trim(text).empty()) throw Error("zero-shot annotation needs non-empty text");
  const std::string prompt = render_zero_shot_prompt(text, construct_name);
  const std::string prompt_id = fmt::format("zero-shot-{:016x}", fnv1a(text));
  std::string last_answer;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const auto completion = client.complete_text(prompt_id, prompt, params);
    if (auto answer = parse_yes_no(completion.raw_text)) return *answer;
    last_answer = completion.raw_text;
  }
  throw ParseError("ambiguous zero-shot answer: '" + last_answer + "'");
}

std::shared_ptr<CompletionProvider> make_provider(const ProviderConfig& config) {
  if (config.kind == "mock") {
    if (config.mock_fixture) {
      return std::make_shared<MockProvider>(MockProvider::from_fixture_file(config.mock_seed, *config.mock_fixture));
    }
    return std::make_shared<MockProvider>(config.mock_seed);
  }
  if (config.kind == "remote") {
    if (config.endpoint.empty()) throw Error("remote provider needs an endpoint");
    const char* secret = std::getenv(config.api_key_env.c_str());
    if (secret == nullptr || *secret == '\0') {
      throw AuthError("remote provider needs the secret in environment variable " + config.api_key_env);
    }
    return std::make_shared<RemoteChatProvider>(config.endpoint, config.model_name, secret, config.timeout_seconds);
  }
  throw Error("unknown provider kind '" + config.kind + "' (expected mock or remote)");
}

}  // namespace synthfaith
