#include <fmt/format.h>

#include <chrono>
#include <regex>

#include "httplib.h"
#include "synthfaith/providers.hpp"

namespace synthfaith {

namespace {

std::pair<std::string, std::string> split_endpoint(const std::string& endpoint) {
  static const std::regex url(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch match;
  if (!std::regex_match(endpoint, match, url)) throw Error("malformed provider endpoint '" + endpoint + "'");
  return {match[1].str(), match[2].matched ? match[2].str() : std::string("/")};
}

}  // namespace

RemoteChatProvider::RemoteChatProvider(std::string endpoint, std::string model_name, std::string api_key,
                                       int timeout_seconds)
    : model_name_(std::move(model_name)), api_key_(std::move(api_key)), timeout_seconds_(timeout_seconds) {
  std::tie(scheme_host_port_, path_) = split_endpoint(endpoint);
  if (api_key_.empty()) throw AuthError("remote provider needs an API key");
}

nlohmann::ordered_json RemoteChatProvider::request_body(const ChatRequest& request, std::string_view model_name) {
  nlohmann::ordered_json body;
  body["model"] = model_name;
  body["messages"] = nlohmann::ordered_json::array({{{"role", "user"}, {"content", request.prompt}}});
  body["temperature"] = request.params.temperature;
  body["top_p"] = request.params.top_p;
  body["frequency_penalty"] = request.params.frequency_penalty;
  body["presence_penalty"] = request.params.presence_penalty;
  body["max_tokens"] = request.params.max_tokens;
  return body;
}

ProviderReply RemoteChatProvider::parse_response(std::string_view body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw TransientError(std::string("unparseable provider response: ") + e.what());
  }
  if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty()) {
    throw Error("provider response has no choices");
  }
  const auto& choice = j["choices"][0];
  ProviderReply reply;
  const auto& message = choice.value("message", nlohmann::json::object());
  if (message.contains("content") && message["content"].is_string()) reply.text = message["content"].get<std::string>();
  if (choice.contains("finish_reason") && choice["finish_reason"].is_string()) {
    reply.finish_reason = choice["finish_reason"].get<std::string>();
  }
  reply.model_name = j.value("model", std::string{});
  if (j.contains("usage") && j["usage"].is_object()) {
    reply.prompt_tokens = j["usage"].value("prompt_tokens", std::int64_t{0});
    reply.completion_tokens = j["usage"].value("completion_tokens", std::int64_t{0});
  }
  return reply;
}

ProviderReply RemoteChatProvider::send(const ChatRequest& request) {
  httplib::Client client(scheme_host_port_);
  client.set_connection_timeout(timeout_seconds_, 0);
  client.set_read_timeout(timeout_seconds_, 0);
  client.set_write_timeout(timeout_seconds_, 0);
  client.set_bearer_token_auth(api_key_);

  const auto body = request_body(request, model_name_).dump();
  const auto start = std::chrono::steady_clock::now();
  auto result = client.Post(path_, body, "application/json");
  const auto elapsed = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

  if (!result) throw TransientError("request failed: " + httplib::to_string(result.error()));
  const int status = result->status;
  if (status == 401 || status == 403) throw AuthError(fmt::format("provider rejected credentials (HTTP {})", status));
  if (status == 429 || status >= 500) throw TransientError(fmt::format("HTTP {}", status));
  if (status != 200) throw Error(fmt::format("provider returned HTTP {}: {}", status, result->body));

  ProviderReply reply = parse_response(result->body);
  if (reply.model_name.empty()) reply.model_name = model_name_;
  reply.latency_ms = elapsed;
  return reply;
}

}  // namespace synthfaith
