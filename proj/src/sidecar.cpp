#include "synthfaith/sidecar.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spdlog/spdlog.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fmt/format.h>

#include "synthfaith/json_io.hpp"

namespace synthfaith {

nlohmann::ordered_json SidecarSettings::to_json() const {
  return {{"learning_rate", learning_rate}, {"batch_size", batch_size}, {"epochs", epochs}, {"model_name", model_name}};
}

nlohmann::ordered_json make_sidecar_request(std::string_view id, std::string_view op,
                                            const std::filesystem::path& model_dir, nlohmann::ordered_json payload,
                                            const SidecarSettings& settings) {
  nlohmann::ordered_json request;
  request["protocol"] = kSidecarProtocol;
  request["id"] = id;
  request["op"] = op;
  request["model_dir"] = model_dir.string();
  request["payload"] = std::move(payload);
  request["settings"] = settings.to_json();
  return request;
}

nlohmann::ordered_json unwrap_sidecar_response(const nlohmann::ordered_json& response, std::string_view id) {
  if (!response.is_object() || !response.contains("ok")) throw SidecarError("protocol", "response without 'ok'");
  if (!response.contains("id") || !response["id"].is_string() || response["id"].get<std::string>() != id) {
    throw SidecarError("protocol", fmt::format("response does not echo request id {}", id));
  }
  if (!response["ok"].get<bool>()) {
    const auto& error = response.value("error", nlohmann::ordered_json::object());
    throw SidecarError(error.value("code", std::string("unknown")), error.value("message", std::string{}));
  }
  return response.value("result", nlohmann::ordered_json::object());
}

SidecarClient::SidecarClient(SidecarConfig config) : config_(std::move(config)) {
  if (config_.command.empty()) throw SidecarUnavailable("no sidecar command configured");
  ::signal(SIGPIPE, SIG_IGN);
  start();
}

SidecarClient::~SidecarClient() { stop(); }

void SidecarClient::start() {
  int in_pipe[2];
  int out_pipe[2];
  if (::pipe(in_pipe) != 0) throw SidecarUnavailable(std::string("pipe: ") + std::strerror(errno));
  if (::pipe(out_pipe) != 0) {
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    throw SidecarUnavailable(std::string("pipe: ") + std::strerror(errno));
  }
  const pid_t pid = ::fork();
  if (pid < 0) throw SidecarUnavailable(std::string("fork: ") + std::strerror(errno));
  if (pid == 0) {
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    ::close(out_pipe[0]);
    ::close(out_pipe[1]);
    ::execl("/bin/sh", "sh", "-c", config_.command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  pid_ = pid;
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
  ::fcntl(to_child_, F_SETFD, FD_CLOEXEC);
  ::fcntl(from_child_, F_SETFD, FD_CLOEXEC);
}

void SidecarClient::stop() {
  if (to_child_ >= 0) ::close(to_child_);
  if (from_child_ >= 0) ::close(from_child_);
  to_child_ = from_child_ = -1;
  if (pid_ > 0) {
    int status = 0;
    // Closing stdin asks the sidecar to exit; give it a moment before killing.
    for (int i = 0; i < 50; ++i) {
      if (::waitpid(pid_, &status, WNOHANG) == pid_) {
        pid_ = -1;
        return;
      }
      ::usleep(10000);
    }
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, &status, 0);
    pid_ = -1;
  }
}

std::string SidecarClient::read_line(std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    if (const auto newline = buffer_.find('\n'); newline != std::string::npos) {
      std::string line = buffer_.substr(0, newline);
      buffer_.erase(0, newline + 1);
      return line;
    }
    const auto remaining =
        std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (remaining.count() <= 0) throw SidecarUnavailable("sidecar timed out");
    pollfd fd{from_child_, POLLIN, 0};
    const int ready = ::poll(&fd, 1, static_cast<int>(std::min<std::int64_t>(remaining.count(), 1000)));
    if (ready < 0 && errno != EINTR) throw SidecarUnavailable(std::string("poll: ") + std::strerror(errno));
    if (ready <= 0) continue;
    char chunk[4096];
    const ssize_t got = ::read(from_child_, chunk, sizeof chunk);
    if (got <= 0) throw SidecarUnavailable("sidecar closed its output");
    buffer_.append(chunk, static_cast<std::size_t>(got));
  }
}

nlohmann::ordered_json SidecarClient::call(std::string_view op, const std::filesystem::path& model_dir,
                                           nlohmann::ordered_json payload) {
  std::lock_guard lock(mutex_);
  if (to_child_ < 0) throw SidecarUnavailable("sidecar is not running");
  const std::string id = fmt::format("req-{:06}", next_id_++);
  const std::string line = make_sidecar_request(id, op, model_dir, std::move(payload), config_.settings).dump() + "\n";
  std::size_t written = 0;
  while (written < line.size()) {
    const ssize_t n = ::write(to_child_, line.data() + written, line.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw SidecarUnavailable(std::string("write to sidecar failed: ") + std::strerror(errno));
    }
    written += static_cast<std::size_t>(n);
  }
  const std::string reply = read_line(config_.timeout);
  nlohmann::ordered_json response;
  try {
    response = nlohmann::ordered_json::parse(reply);
  } catch (const nlohmann::json::exception& e) {
    throw SidecarError("protocol", std::string("unparseable response: ") + e.what());
  }
  return unwrap_sidecar_response(response, id);
}

nlohmann::ordered_json SidecarClient::health() { return call("health", {}, nlohmann::ordered_json::object()); }

SidecarClassifier::SidecarClassifier(std::shared_ptr<SidecarClient> client, std::filesystem::path model_dir,
                                     std::array<std::string, 2> classes, std::string digest)
    : client_(std::move(client)),
      model_dir_(std::move(model_dir)),
      classes_(std::move(classes)),
      digest_(std::move(digest)) {}

std::vector<double> SidecarClassifier::predict_proba(std::span<const std::string> texts) const {
  nlohmann::ordered_json payload;
  payload["texts"] = std::vector<std::string>(texts.begin(), texts.end());
  const auto result = client_->call("predict_proba", model_dir_, std::move(payload));
  auto probabilities = result.at("probabilities").get<std::vector<double>>();
  if (probabilities.size() != texts.size()) throw SidecarError("protocol", "probability count mismatch");
  for (double p : probabilities) {
    if (!(p >= 0.0 && p <= 1.0)) throw SidecarError("protocol", "probability outside [0,1]");
  }
  return probabilities;
}

double SidecarClassifier::predict_proba(std::string_view text) const {
  const std::string owned(text);
  return predict_proba(std::span<const std::string>(&owned, 1)).front();
}

SidecarClassifier sidecar_train(std::shared_ptr<SidecarClient> client, std::span<const LabeledText> corpus,
                                const std::filesystem::path& model_dir, std::uint64_t seed) {
  nlohmann::ordered_json payload;
  payload["corpus_jsonl"] = to_jsonl(corpus);
  payload["classes"] = kConstructClasses;
  payload["seed"] = seed;
  const auto result = client->call("train", model_dir, std::move(payload));
  const auto dir = result.value("model_dir", model_dir.string());
  return SidecarClassifier(std::move(client), dir, kConstructClasses, sha256_hex(to_jsonl(corpus) + dir));
}

TrainedClassifier train_with_backend(std::span<const LabeledText> data, const TrainConfig& config,
                                     const std::optional<SidecarConfig>& sidecar,
                                     const std::filesystem::path& model_dir) {
  TrainedClassifier trained;
  if (sidecar) {
    try {
      auto client = std::make_shared<SidecarClient>(*sidecar);
      client->health();
      trained.model = std::make_shared<SidecarClassifier>(sidecar_train(client, data, model_dir, config.seed));
      trained.backend = "sidecar";
      return trained;
    } catch (const SidecarUnavailable& e) {
      spdlog::warn("sidecar unreachable ({}); falling back to the built-in classifier", e.what());
      trained.warning = std::string("sidecar_unreachable_fallback: ") + e.what();
    }
  }
  trained.model = std::make_shared<ClassifierModel>(train(data, config));
  trained.backend = "primary";
  return trained;
}

}  // namespace synthfaith
