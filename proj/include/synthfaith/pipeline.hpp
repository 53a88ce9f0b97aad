#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "synthfaith/classifier.hpp"
#include "synthfaith/generation.hpp"
#include "synthfaith/sidecar.hpp"

namespace synthfaith {

/// Declarative run configuration; see README for the schema.
struct PipelineConfig {
  std::string dataset_path;
  std::string dataset_format = "auto";  // csv, jsonl or auto (by extension)
  std::string construct_name = "sarcastic";
  std::uint64_t seed = 7;
  double train_fraction = kDefaultTrainFraction;
  std::vector<Strategy> strategies{std::begin(kAllStrategies), std::end(kAllStrategies)};

  int n_generations = kDefaultGenerations;
  int simple_repetitions = kDefaultSimpleRepetitions;
  int taxonomy_k = kDefaultTaxonomySize;
  GenerationParams generation_params;
  ProviderConfig provider;

  bool filtering_enabled = true;
  Strategy filter_source = Strategy::grounding;
  double cull_threshold = 0.5;
  double believability_threshold = 0.5;

  TrainConfig classifier;
  TrainConfig discriminator;

  bool baseline_groundtruth = true;
  bool baseline_all_negative = true;
  bool baseline_zero_shot = true;

  std::optional<SidecarConfig> sidecar;

  nlohmann::ordered_json to_json() const;
  static PipelineConfig from_json(const nlohmann::ordered_json& j);
  static PipelineConfig load(const std::filesystem::path& path);
  std::string digest() const;
  void validate() const;
};

enum class StageStatus { pending, done, failed };

struct StageRecord {
  StageStatus status = StageStatus::pending;
  std::vector<std::string> artifacts;  // relative to the run directory
  std::string started_at;
  std::string finished_at;
  std::string error;
  nlohmann::ordered_json params = nlohmann::ordered_json::object();
};

/// Persisted at <run>/manifest.json; rewritten atomically after every change.
struct RunManifest {
  std::string run_id;
  std::string config_digest;
  std::uint64_t seed = 0;
  std::string provider_kind;
  std::string provider_model;
  std::string dataset_source;  // dataset path as resolved when the run was created
  std::string created_at;
  std::string updated_at;
  std::map<std::string, StageRecord> stages;

  nlohmann::ordered_json to_json() const;
  static RunManifest from_json(const nlohmann::ordered_json& j);
};

/// Exclusive ownership of a run directory through an O_EXCL lock file.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& run_dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

std::string stage_key(std::string_view stage, std::optional<Strategy> strategy = std::nullopt);

struct GenerateOptions {
  Strategy strategy = Strategy::grounding;
  std::optional<int> n_generations;
  std::optional<int> repetitions;
};

/// One run directory. Every stage reads its inputs from upstream artifacts on
/// disk and refuses to start until those stages are done.
class Pipeline {
 public:
  /// Opens (or creates, when `config` is given) the run in `run_dir`. A config
  /// that differs from the one the run was created with is rejected.
  Pipeline(std::filesystem::path run_dir, std::optional<PipelineConfig> config,
           std::optional<std::filesystem::path> config_source = std::nullopt);

  void split();
  void taxonomy();
  void generate(const GenerateOptions& options);
  void clean(Strategy strategy);
  void discriminator();
  void filter();
  void train();
  void evaluate();
  /// Returns false when a requested report row failed.
  bool report(std::string* table = nullptr);

  /// Every stage in order; returns report()'s result.
  bool run_all(std::string* table = nullptr);

  /// Injects the client used for generation and zero-shot stages (tests use a ManualClock).
  void set_client(std::shared_ptr<CompletionClient> client) { client_ = std::move(client); }

  const PipelineConfig& config() const { return config_; }
  const RunManifest& manifest() const { return manifest_; }
  const std::filesystem::path& run_dir() const { return run_dir_; }
  std::filesystem::path path(std::string_view relative) const { return run_dir_ / std::filesystem::path(relative); }

 private:
  std::vector<std::string> upstream_of(const std::string& key) const;
  void require_done(const std::string& key);
  void begin(const std::string& key, nlohmann::ordered_json params = nlohmann::ordered_json::object());
  void finish(const std::string& key, std::vector<std::string> artifacts);
  void fail(const std::string& key, const std::string& error);
  void invalidate_dependents(const std::string& key);
  void save_manifest();
  CompletionClient& client();
  CorpusSplit load_split() const;
  bool has_strategy(Strategy strategy) const;
  bool uses_discriminator() const;

  struct TrainingRow {
    std::string key;
    std::string corpus;  // relative to the run directory
  };
  std::vector<TrainingRow> training_rows() const;

  template <typename Fn>
  void run_stage(const std::string& key, nlohmann::ordered_json params, Fn&& body);

  std::filesystem::path run_dir_;
  RunLock lock_;
  PipelineConfig config_;
  RunManifest manifest_;
  std::optional<std::filesystem::path> dataset_resolved_;
  std::shared_ptr<CompletionClient> client_;
};

}  // namespace synthfaith
