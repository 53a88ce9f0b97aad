#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "synthfaith/generation.hpp"

namespace synthfaith {

/// Offline backend. Replies are a pure function of (seed, prompt text): it
/// recognizes the generation, taxonomy-elicitation and zero-shot prompts and
/// answers in the shape a chat model would, preamble artifacts included.
class MockProvider final : public CompletionProvider {
 public:
  explicit MockProvider(std::uint64_t seed);

  /// Always replies with `response`.
  static MockProvider fixed(std::string response);
  /// Picks a reply from `responses` by (seed, prompt) hash.
  static MockProvider from_fixture(std::uint64_t seed, std::vector<std::string> responses);
  static MockProvider from_fixture_file(std::uint64_t seed, const std::filesystem::path& path);

  ProviderReply send(const ChatRequest& request) override;
  std::string kind() const override { return "mock"; }
  std::string model_name() const override { return "mock-chat"; }

 private:
  std::string generate(const std::string& prompt) const;

  std::uint64_t seed_;
  std::vector<std::string> fixture_;
};

/// Chat-completions over HTTP(S) with a bearer token.
class RemoteChatProvider final : public CompletionProvider {
 public:
  RemoteChatProvider(std::string endpoint, std::string model_name, std::string api_key, int timeout_seconds);

  ProviderReply send(const ChatRequest& request) override;
  std::string kind() const override { return "remote_chat_api"; }
  std::string model_name() const override { return model_name_; }

  /// Request body for a single-user-message chat completion.
  static nlohmann::ordered_json request_body(const ChatRequest& request, std::string_view model_name);
  static ProviderReply parse_response(std::string_view body);

 private:
  std::string scheme_host_port_;
  std::string path_;
  std::string model_name_;
  std::string api_key_;
  int timeout_seconds_;
};

}  // namespace synthfaith
