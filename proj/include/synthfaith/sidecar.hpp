#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "synthfaith/classifier.hpp"

namespace synthfaith {

// Wire format: one JSON object per line in each direction.
//
//   request  {"protocol": "synthfaith-sidecar/1", "id": "...", "op": "health" | "train" | "predict_proba",
//             "model_dir": "...", "payload": {...}, "settings": {...}}
//   response {"id": "...", "ok": true, "result": {...}}
//          | {"id": "..." | null, "ok": false, "error": {"code": "...", "message": "..."}}
//
// train payload:         {"corpus_jsonl": "<LabeledText JSONL>", "classes": [neg, pos], "seed": n}
// train result:          {"model_dir": "...", "train_accuracy": x}
// predict_proba payload: {"texts": [...]}
// predict_proba result:  {"probabilities": [...]}   probability of class index 1
// health result:         {"version": "...", "model_name": "..."}
inline constexpr std::string_view kSidecarProtocol = "synthfaith-sidecar/1";

struct SidecarSettings {
  double learning_rate = 2e-5;
  int batch_size = 32;
  int epochs = 10;
  std::string model_name = "intfloat/e5-base";

  nlohmann::ordered_json to_json() const;
};

struct SidecarConfig {
  std::string command;  // run through /bin/sh -c
  std::filesystem::path model_root;
  SidecarSettings settings;
  std::chrono::milliseconds timeout{std::chrono::minutes(30)};
};

/// Raised when the sidecar process cannot be started or stops answering.
class SidecarUnavailable : public Error {
 public:
  using Error::Error;
};

/// A structured error the sidecar reported for one request.
class SidecarError : public Error {
 public:
  SidecarError(std::string code, const std::string& message) : Error(code + ": " + message), code_(std::move(code)) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

nlohmann::ordered_json make_sidecar_request(std::string_view id, std::string_view op,
                                            const std::filesystem::path& model_dir, nlohmann::ordered_json payload,
                                            const SidecarSettings& settings);

/// Validates that `response` answers request `id`; returns its result object.
nlohmann::ordered_json unwrap_sidecar_response(const nlohmann::ordered_json& response, std::string_view id);

/// Owns the child process. Calls are serialized; one request in flight at a time.
class SidecarClient {
 public:
  explicit SidecarClient(SidecarConfig config);
  ~SidecarClient();
  SidecarClient(const SidecarClient&) = delete;
  SidecarClient& operator=(const SidecarClient&) = delete;

  nlohmann::ordered_json call(std::string_view op, const std::filesystem::path& model_dir,
                              nlohmann::ordered_json payload);
  nlohmann::ordered_json health();

  const SidecarConfig& config() const { return config_; }

 private:
  void start();
  void stop();
  std::string read_line(std::chrono::milliseconds timeout);

  SidecarConfig config_;
  std::mutex mutex_;
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
  std::uint64_t next_id_ = 1;
};

/// TextClassifier backed by a model that lives on the sidecar's side.
class SidecarClassifier final : public TextClassifier {
 public:
  SidecarClassifier(std::shared_ptr<SidecarClient> client, std::filesystem::path model_dir,
                    std::array<std::string, 2> classes, std::string digest);

  double predict_proba(std::string_view text) const override;
  std::vector<double> predict_proba(std::span<const std::string> texts) const;
  const std::array<std::string, 2>& classes() const override { return classes_; }
  std::string digest() const override { return digest_; }
  const std::filesystem::path& model_dir() const { return model_dir_; }

 private:
  std::shared_ptr<SidecarClient> client_;
  std::filesystem::path model_dir_;
  std::array<std::string, 2> classes_;
  std::string digest_;
};

SidecarClassifier sidecar_train(std::shared_ptr<SidecarClient> client, std::span<const LabeledText> corpus,
                                const std::filesystem::path& model_dir, std::uint64_t seed);

/// Either backend behind the common interface, plus what happened choosing it.
struct TrainedClassifier {
  std::shared_ptr<const TextClassifier> model;
  std::string backend;                 // "primary" or "sidecar"
  std::optional<std::string> warning;  // set when the sidecar was requested but unusable
};

/// Trains on the sidecar when one is configured and reachable, otherwise on
/// the built-in classifier (recording a fallback warning if a sidecar was requested).
TrainedClassifier train_with_backend(std::span<const LabeledText> data, const TrainConfig& config,
                                     const std::optional<SidecarConfig>& sidecar, const std::filesystem::path& model_dir);

}  // namespace synthfaith
