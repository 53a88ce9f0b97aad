#include "synthfaith/pipeline.hpp"

#include <fcntl.h>
#include <fmt/chrono.h>
#include <fmt/format.h>
#include <spdlog/spdlog.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <fstream>
#include <set>
#include <unordered_set>

#include "synthfaith/cleaning.hpp"
#include "synthfaith/evaluation.hpp"
#include "synthfaith/filtering.hpp"
#include "synthfaith/json_io.hpp"
#include "synthfaith/prompting.hpp"

namespace synthfaith {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

std::string now_utc() {
  const auto now = std::chrono::time_point_cast<std::chrono::seconds>(std::chrono::system_clock::now());
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", now);
}

std::string_view to_string(StageStatus status) {
  switch (status) {
    case StageStatus::pending:
      return "pending";
    case StageStatus::done:
      return "done";
    case StageStatus::failed:
      return "failed";
  }
  return "pending";
}

StageStatus parse_status(std::string_view text) {
  if (text == "done") return StageStatus::done;
  if (text == "failed") return StageStatus::failed;
  if (text == "pending") return StageStatus::pending;
  throw ParseError("unknown stage status '" + std::string(text) + "'");
}

// "generate:grounding" -> "generate --strategy grounding"
std::string command_for(const std::string& key) {
  const auto colon = key.find(':');
  if (colon == std::string::npos) return key;
  const std::string stage = key.substr(0, colon);
  const std::string strategy = key.substr(colon + 1);
  return stage == "generate" ? "generate --strategy " + strategy : stage + " --strategy " + strategy;
}

ojson retry_to_json(const RetryPolicy& retry) {
  ojson j;
  j["max_attempts"] = retry.max_attempts;
  j["initial_backoff_ms"] = retry.initial_backoff.count();
  j["multiplier"] = retry.multiplier;
  j["max_backoff_ms"] = retry.max_backoff.count();
  return j;
}

RetryPolicy retry_from_json(const ojson& j) {
  RetryPolicy retry;
  retry.max_attempts = j.value("max_attempts", retry.max_attempts);
  retry.initial_backoff = std::chrono::milliseconds(j.value("initial_backoff_ms", retry.initial_backoff.count()));
  retry.multiplier = j.value("multiplier", retry.multiplier);
  retry.max_backoff = std::chrono::milliseconds(j.value("max_backoff_ms", retry.max_backoff.count()));
  return retry;
}

ojson params_to_json(const GenerationParams& params) {
  ojson j;
  j["temperature"] = params.temperature;
  j["top_p"] = params.top_p;
  j["frequency_penalty"] = params.frequency_penalty;
  j["presence_penalty"] = params.presence_penalty;
  j["max_tokens"] = params.max_tokens;
  return j;
}

GenerationParams params_from_json(const ojson& j) {
  GenerationParams params;
  params.temperature = j.value("temperature", params.temperature);
  params.top_p = j.value("top_p", params.top_p);
  params.frequency_penalty = j.value("frequency_penalty", params.frequency_penalty);
  params.presence_penalty = j.value("presence_penalty", params.presence_penalty);
  params.max_tokens = j.value("max_tokens", params.max_tokens);
  return params;
}

void check_keys(const ojson& j, std::initializer_list<std::string_view> allowed, std::string_view where) {
  if (!j.is_object()) throw ParseError(fmt::format("config: '{}' must be an object", where));
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ParseError(fmt::format("config: unknown key '{}' in {}", key, where));
    }
  }
}

ojson job_to_json(const GenerationJob& job) {
  ojson j;
  j["prompt_id"] = job.prompt_id;
  j["strategy"] = to_string(job.spec.strategy);
  j["polarity"] = to_string(job.spec.polarity);
  j["n_generations"] = job.spec.n_generations;
  j["construct_name"] = job.spec.construct_name;
  j["grounding_example"] = job.spec.grounding_example ? to_json(*job.spec.grounding_example) : ojson(nullptr);
  j["taxonomy_size"] = job.spec.taxonomy ? ojson(job.spec.taxonomy->size()) : ojson(nullptr);
  j["template_version"] = kTemplateVersion;
  j["prompt"] = render_prompt(job.spec).rendered_text;
  return j;
}

GenerationJob job_from_json(const ojson& j, const std::optional<Taxonomy>& taxonomy) {
  GenerationJob job;
  job.prompt_id = j.at("prompt_id").get<std::string>();
  job.spec.strategy = parse_strategy(j.at("strategy").get<std::string>());
  const auto polarity = parse_label(j.at("polarity").get<std::string>());
  if (!polarity) throw ParseError("job " + job.prompt_id + " has no polarity");
  job.spec.polarity = *polarity;
  job.spec.n_generations = j.at("n_generations").get<int>();
  job.spec.construct_name = j.at("construct_name").get<std::string>();
  if (!j.at("grounding_example").is_null()) job.spec.grounding_example = labeled_text_from_json(j["grounding_example"]);
  if (!j.at("taxonomy_size").is_null()) {
    if (!taxonomy) throw StateError("job " + job.prompt_id + " needs the run's taxonomy");
    if (j["taxonomy_size"].get<std::size_t>() != taxonomy->size()) {
      throw StateError("job " + job.prompt_id + " was planned with a different taxonomy");
    }
    job.spec.taxonomy = taxonomy;
  }
  return job;
}

std::string jobs_to_jsonl(std::span<const GenerationJob> jobs) {
  std::string out;
  for (const auto& job : jobs) {
    out += job_to_json(job).dump();
    out.push_back('\n');
  }
  return out;
}

std::string completions_to_jsonl(std::span<const RawCompletion> completions) {
  std::string out;
  for (const auto& completion : completions) {
    out += to_json(completion).dump();
    out.push_back('\n');
  }
  return out;
}

// Reads an archive that may end in a partially written line.
std::vector<RawCompletion> read_completion_archive(const fs::path& path) {
  std::vector<RawCompletion> completions;
  if (!fs::exists(path)) return completions;
  for_each_line(read_file(path), [&](std::string_view line) {
    if (trim(line).empty()) return;
    try {
      completions.push_back(raw_completion_from_json(ojson::parse(line)));
    } catch (const std::exception& e) {
      spdlog::warn("{}: skipping unreadable archive line ({})", path.string(), e.what());
    }
  });
  return completions;
}

std::optional<Taxonomy> load_taxonomy_if_present(const fs::path& path) {
  if (!fs::exists(path)) return std::nullopt;
  return taxonomy_from_jsonl(read_file(path));
}

}  // namespace

ojson PipelineConfig::to_json() const {
  ojson j;
  j["dataset"] = {{"path", dataset_path}, {"format", dataset_format}};
  j["construct_name"] = construct_name;
  j["seed"] = seed;
  j["split"] = {{"train_fraction", train_fraction}};
  ojson names = ojson::array();
  for (auto s : strategies) names.push_back(synthfaith::to_string(s));
  j["strategies"] = names;

  ojson generation;
  generation["n_generations"] = n_generations;
  generation["simple_repetitions"] = simple_repetitions;
  generation["taxonomy_k"] = taxonomy_k;
  generation["params"] = params_to_json(generation_params);
  j["generation"] = generation;

  ojson p;
  p["kind"] = provider.kind;
  p["endpoint"] = provider.endpoint;
  p["model_name"] = provider.model_name;
  p["api_key_env"] = provider.api_key_env;
  p["rate_limit_per_minute"] = provider.rate_limit_per_minute;
  p["parallelism"] = provider.parallelism;
  p["timeout_seconds"] = provider.timeout_seconds;
  p["retry"] = retry_to_json(provider.retry);
  p["mock_seed"] = provider.mock_seed;
  p["mock_fixture"] = provider.mock_fixture ? ojson(provider.mock_fixture->string()) : ojson(nullptr);
  j["provider"] = p;

  ojson filtering;
  filtering["enabled"] = filtering_enabled;
  filtering["source_strategy"] = synthfaith::to_string(filter_source);
  filtering["cull_threshold"] = cull_threshold;
  filtering["believability_threshold"] = believability_threshold;
  j["filtering"] = filtering;

  j["classifier"] = synthfaith::to_json(classifier);
  j["discriminator"] = synthfaith::to_json(discriminator);
  j["baselines"] = {{"groundtruth", baseline_groundtruth},
                    {"all_negative", baseline_all_negative},
                    {"zero_shot", baseline_zero_shot}};

  if (sidecar) {
    ojson s;
    s["command"] = sidecar->command;
    s["model_root"] = sidecar->model_root.string();
    s["settings"] = sidecar->settings.to_json();
    s["timeout_seconds"] = std::chrono::duration_cast<std::chrono::seconds>(sidecar->timeout).count();
    j["sidecar"] = s;
  } else {
    j["sidecar"] = nullptr;
  }
  return j;
}

PipelineConfig PipelineConfig::from_json(const ojson& j) {
  check_keys(j,
             {"dataset", "construct_name", "seed", "split", "strategies", "generation", "provider", "filtering",
              "classifier", "discriminator", "baselines", "sidecar"},
             "the top level");
  PipelineConfig config;
  const auto& dataset = j.at("dataset");
  check_keys(dataset, {"path", "format"}, "dataset");
  config.dataset_path = dataset.at("path").get<std::string>();
  config.dataset_format = dataset.value("format", config.dataset_format);
  config.construct_name = j.value("construct_name", config.construct_name);
  config.seed = j.value("seed", config.seed);
  if (j.contains("split")) {
    check_keys(j["split"], {"train_fraction"}, "split");
    config.train_fraction = j["split"].value("train_fraction", config.train_fraction);
  }
  if (j.contains("strategies")) {
    config.strategies.clear();
    for (const auto& name : j["strategies"]) config.strategies.push_back(parse_strategy(name.get<std::string>()));
  }
  if (j.contains("generation")) {
    const auto& g = j["generation"];
    check_keys(g, {"n_generations", "simple_repetitions", "taxonomy_k", "params"}, "generation");
    config.n_generations = g.value("n_generations", config.n_generations);
    config.simple_repetitions = g.value("simple_repetitions", config.simple_repetitions);
    config.taxonomy_k = g.value("taxonomy_k", config.taxonomy_k);
    if (g.contains("params")) config.generation_params = params_from_json(g["params"]);
  }
  if (j.contains("provider")) {
    const auto& p = j["provider"];
    check_keys(p,
               {"kind", "endpoint", "model_name", "api_key_env", "rate_limit_per_minute", "parallelism",
                "timeout_seconds", "retry", "mock_seed", "mock_fixture"},
               "provider");
    auto& provider = config.provider;
    provider.kind = p.value("kind", provider.kind);
    provider.endpoint = p.value("endpoint", provider.endpoint);
    provider.model_name = p.value("model_name", provider.model_name);
    provider.api_key_env = p.value("api_key_env", provider.api_key_env);
    provider.rate_limit_per_minute = p.value("rate_limit_per_minute", provider.rate_limit_per_minute);
    provider.parallelism = p.value("parallelism", provider.parallelism);
    provider.timeout_seconds = p.value("timeout_seconds", provider.timeout_seconds);
    if (p.contains("retry")) provider.retry = retry_from_json(p["retry"]);
    provider.mock_seed = p.value("mock_seed", provider.mock_seed);
    if (p.contains("mock_fixture") && !p["mock_fixture"].is_null()) {
      provider.mock_fixture = fs::path(p["mock_fixture"].get<std::string>());
    }
  }
  if (j.contains("filtering")) {
    const auto& f = j["filtering"];
    check_keys(f, {"enabled", "source_strategy", "cull_threshold", "believability_threshold"}, "filtering");
    config.filtering_enabled = f.value("enabled", config.filtering_enabled);
    if (f.contains("source_strategy")) config.filter_source = parse_strategy(f["source_strategy"].get<std::string>());
    config.cull_threshold = f.value("cull_threshold", config.cull_threshold);
    config.believability_threshold = f.value("believability_threshold", config.believability_threshold);
  }
  if (j.contains("classifier")) config.classifier = train_config_from_json(j["classifier"]);
  if (j.contains("discriminator")) config.discriminator = train_config_from_json(j["discriminator"]);
  if (j.contains("baselines")) {
    const auto& b = j["baselines"];
    check_keys(b, {"groundtruth", "all_negative", "zero_shot"}, "baselines");
    config.baseline_groundtruth = b.value("groundtruth", config.baseline_groundtruth);
    config.baseline_all_negative = b.value("all_negative", config.baseline_all_negative);
    config.baseline_zero_shot = b.value("zero_shot", config.baseline_zero_shot);
  }
  if (j.contains("sidecar") && !j["sidecar"].is_null()) {
    const auto& s = j["sidecar"];
    check_keys(s, {"command", "model_root", "settings", "timeout_seconds"}, "sidecar");
    SidecarConfig sidecar;
    sidecar.command = s.at("command").get<std::string>();
    sidecar.model_root = s.value("model_root", std::string{});
    if (s.contains("settings")) {
      const auto& st = s["settings"];
      sidecar.settings.learning_rate = st.value("learning_rate", sidecar.settings.learning_rate);
      sidecar.settings.batch_size = st.value("batch_size", sidecar.settings.batch_size);
      sidecar.settings.epochs = st.value("epochs", sidecar.settings.epochs);
      sidecar.settings.model_name = st.value("model_name", sidecar.settings.model_name);
    }
    if (s.contains("timeout_seconds")) sidecar.timeout = std::chrono::seconds(s["timeout_seconds"].get<long long>());
    config.sidecar = std::move(sidecar);
  }
  config.validate();
  return config;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  try {
    return from_json(ojson::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
  } catch (const Error& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::string PipelineConfig::digest() const { return sha256_hex(to_json().dump()); }

void PipelineConfig::validate() const {
  if (dataset_path.empty()) throw Error("config: dataset.path is required");
  if (dataset_format != "auto" && dataset_format != "csv" && dataset_format != "jsonl") {
    throw Error("config: dataset.format must be auto, csv or jsonl");
  }
  if (construct_name.empty()) throw Error("config: construct_name is empty");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw Error("config: split.train_fraction must be in (0, 1)");
  if (strategies.empty()) throw Error("config: at least one strategy is required");
  if (std::set<Strategy>(strategies.begin(), strategies.end()).size() != strategies.size()) {
    throw Error("config: duplicate strategy");
  }
  if (n_generations < 1) throw Error("config: generation.n_generations must be >= 1");
  if (simple_repetitions < 1) throw Error("config: generation.simple_repetitions must be >= 1");
  if (taxonomy_k < 1) throw Error("config: generation.taxonomy_k must be >= 1");
  generation_params.validate();
  if (provider.kind != "mock" && provider.kind != "remote") throw Error("config: provider.kind must be mock or remote");
  if (provider.parallelism < 1) throw Error("config: provider.parallelism must be >= 1");
  if (provider.retry.max_attempts < 1) throw Error("config: provider.retry.max_attempts must be >= 1");
  if (filtering_enabled && std::find(strategies.begin(), strategies.end(), filter_source) == strategies.end()) {
    throw Error(fmt::format("config: filtering.source_strategy '{}' is not among the strategies",
                            synthfaith::to_string(filter_source)));
  }
  if (!(cull_threshold >= 0.0 && cull_threshold <= 1.0)) throw Error("config: cull_threshold must be in [0, 1]");
  if (!(believability_threshold >= 0.0 && believability_threshold <= 1.0)) {
    throw Error("config: believability_threshold must be in [0, 1]");
  }
  classifier.validate();
  discriminator.validate();
  if (sidecar && sidecar->command.empty()) throw Error("config: sidecar.command is empty");
}

ojson RunManifest::to_json() const {
  ojson j;
  j["run_id"] = run_id;
  j["config_digest"] = config_digest;
  j["seed"] = seed;
  j["provider"] = {{"kind", provider_kind}, {"model_name", provider_model}};
  j["dataset_source"] = dataset_source;
  j["created_at"] = created_at;
  j["updated_at"] = updated_at;
  ojson stage_json = ojson::object();
  for (const auto& [key, record] : stages) {
    ojson s;
    s["status"] = to_string(record.status);
    s["artifacts"] = record.artifacts;
    s["started_at"] = record.started_at;
    s["finished_at"] = record.finished_at;
    s["error"] = record.error.empty() ? ojson(nullptr) : ojson(record.error);
    s["params"] = record.params;
    stage_json[key] = s;
  }
  j["stages"] = stage_json;
  return j;
}

RunManifest RunManifest::from_json(const ojson& j) {
  RunManifest manifest;
  manifest.run_id = j.at("run_id").get<std::string>();
  manifest.config_digest = j.at("config_digest").get<std::string>();
  manifest.seed = j.at("seed").get<std::uint64_t>();
  manifest.provider_kind = j.at("provider").at("kind").get<std::string>();
  manifest.provider_model = j.at("provider").at("model_name").get<std::string>();
  manifest.dataset_source = j.value("dataset_source", std::string{});
  manifest.created_at = j.value("created_at", std::string{});
  manifest.updated_at = j.value("updated_at", std::string{});
  for (const auto& [key, s] : j.at("stages").items()) {
    StageRecord record;
    record.status = parse_status(s.at("status").get<std::string>());
    record.artifacts = s.value("artifacts", std::vector<std::string>{});
    record.started_at = s.value("started_at", std::string{});
    record.finished_at = s.value("finished_at", std::string{});
    if (s.contains("error") && !s["error"].is_null()) record.error = s["error"].get<std::string>();
    if (s.contains("params")) record.params = s["params"];
    manifest.stages[key] = std::move(record);
  }
  return manifest;
}

RunLock::RunLock(const fs::path& run_dir) : path_(run_dir / "run.lock") {
  fs::create_directories(run_dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST) {
      std::string holder;
      try {
        holder = std::string(trim(read_file(path_)));
      } catch (const Error&) {
      }
      throw StateError(fmt::format("run directory {} is locked (pid {}); remove {} if that process is gone",
                                   run_dir.string(), holder.empty() ? "unknown" : holder, path_.string()));
    }
    throw Error(fmt::format("cannot create {}: {}", path_.string(), std::strerror(errno)));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto written = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

std::string stage_key(std::string_view stage, std::optional<Strategy> strategy) {
  if (!strategy) return std::string(stage);
  return fmt::format("{}:{}", stage, synthfaith::to_string(*strategy));
}

Pipeline::Pipeline(fs::path run_dir, std::optional<PipelineConfig> config,
                   std::optional<fs::path> config_source)
    : run_dir_(std::move(run_dir)), lock_(run_dir_) {
  const fs::path stored = run_dir_ / "config.json";
  const fs::path manifest_path = run_dir_ / "manifest.json";
  if (fs::exists(stored)) {
    const PipelineConfig existing = PipelineConfig::load(stored);
    if (config && config->digest() != existing.digest()) {
      throw StateError(fmt::format("config mismatch: {} differs from the config this run was created with ({})",
                                   config_source ? config_source->string() : std::string("the given config"),
                                   stored.string()));
    }
    config_ = existing;
  } else {
    if (!config) throw StateError(fmt::format("{} has no config.json yet; pass --config to start a run", run_dir_.string()));
    config_ = *config;
    config_.validate();
    write_file_atomic(stored, config_.to_json().dump(2) + "\n");
  }
  // Relative dataset paths are resolved against the config file's directory.
  if (config_source && fs::path(config_.dataset_path).is_relative()) {
    dataset_resolved_ = fs::absolute(config_source->parent_path() / config_.dataset_path).lexically_normal();
  }

  const std::string digest = config_.digest();
  if (fs::exists(manifest_path)) {
    manifest_ = RunManifest::from_json(ojson::parse(read_file(manifest_path)));
    if (manifest_.config_digest != digest) {
      throw StateError(fmt::format("{} records config digest {} but {} has {}", manifest_path.string(),
                                   manifest_.config_digest, stored.string(), digest));
    }
  } else {
    manifest_.run_id = "run-" + digest.substr(0, 12);
    manifest_.config_digest = digest;
    manifest_.seed = config_.seed;
    manifest_.provider_kind = config_.provider.kind;
    manifest_.provider_model = config_.provider.model_name;
    manifest_.dataset_source = fs::absolute(dataset_resolved_.value_or(fs::path(config_.dataset_path))).string();
    manifest_.created_at = now_utc();
    save_manifest();
  }
}

void Pipeline::save_manifest() {
  manifest_.updated_at = now_utc();
  write_file_atomic(run_dir_ / "manifest.json", manifest_.to_json().dump(2) + "\n");
}

bool Pipeline::has_strategy(Strategy strategy) const {
  return std::find(config_.strategies.begin(), config_.strategies.end(), strategy) != config_.strategies.end();
}

bool Pipeline::uses_discriminator() const { return has_strategy(config_.filter_source); }

std::vector<std::string> Pipeline::upstream_of(const std::string& key) const {
  if (key == "split" || key == "taxonomy") return {};
  if (key.starts_with("generate:")) {
    std::vector<std::string> up{"split"};
    if (key == "generate:taxonomy") up.push_back("taxonomy");
    return up;
  }
  if (key.starts_with("clean:")) return {"generate:" + key.substr(6)};
  const std::string source = stage_key("clean", config_.filter_source);
  if (key == "discriminator") return {"split", source};
  if (key == "filter") return {"discriminator", source};
  if (key == "train") {
    std::vector<std::string> up{"split"};
    for (auto s : config_.strategies) up.push_back(stage_key("clean", s));
    if (config_.filtering_enabled) up.push_back("filter");
    return up;
  }
  if (key == "evaluate") {
    std::vector<std::string> up{"train"};
    if (uses_discriminator()) up.push_back("discriminator");
    return up;
  }
  if (key == "report") return {"evaluate"};
  throw Error("unknown stage '" + key + "'");
}

void Pipeline::require_done(const std::string& key) {
  for (const auto& up : upstream_of(key)) {
    const auto it = manifest_.stages.find(up);
    if (it == manifest_.stages.end() || it->second.status != StageStatus::done) {
      throw StateError(fmt::format("stage '{}' needs '{}' first: run `synthfaith {}`", key, up, command_for(up)));
    }
    for (const auto& artifact : it->second.artifacts) {
      if (!fs::exists(run_dir_ / artifact)) {
        throw StateError(fmt::format("stage '{}' needs {} from '{}', which is missing: rerun `synthfaith {}`", key,
                                     (run_dir_ / artifact).string(), up, command_for(up)));
      }
    }
  }
}

void Pipeline::invalidate_dependents(const std::string& key) {
  std::vector<std::string> frontier{key};
  std::set<std::string> seen;
  while (!frontier.empty()) {
    const std::string current = frontier.back();
    frontier.pop_back();
    for (auto& [other, record] : manifest_.stages) {
      if (seen.contains(other) || other == key) continue;
      const auto up = upstream_of(other);
      if (std::find(up.begin(), up.end(), current) == up.end()) continue;
      seen.insert(other);
      if (record.status == StageStatus::done) {
        record.status = StageStatus::pending;
        record.error = "upstream stage '" + key + "' was rerun";
      }
      frontier.push_back(other);
    }
  }
}

void Pipeline::begin(const std::string& key, ojson params) {
  require_done(key);
  auto& record = manifest_.stages[key];
  record.status = StageStatus::pending;
  record.artifacts.clear();
  record.started_at = now_utc();
  record.finished_at.clear();
  record.error.clear();
  record.params = std::move(params);
  invalidate_dependents(key);
  save_manifest();
  spdlog::info("stage {} started", key);
}

void Pipeline::finish(const std::string& key, std::vector<std::string> artifacts) {
  auto& record = manifest_.stages[key];
  record.status = StageStatus::done;
  record.artifacts = std::move(artifacts);
  record.finished_at = now_utc();
  save_manifest();
  spdlog::info("stage {} done", key);
}

void Pipeline::fail(const std::string& key, const std::string& error) {
  auto& record = manifest_.stages[key];
  record.status = StageStatus::failed;
  record.error = error;
  record.finished_at = now_utc();
  save_manifest();
  spdlog::error("stage {} failed: {}", key, error);
}

template <typename Fn>
void Pipeline::run_stage(const std::string& key, ojson params, Fn&& body) {
  begin(key, std::move(params));
  std::vector<std::string> artifacts;
  try {
    artifacts = body();
  } catch (const std::exception& e) {
    fail(key, e.what());
    throw;
  }
  finish(key, std::move(artifacts));
}

CompletionClient& Pipeline::client() {
  if (!client_) {
    const auto& p = config_.provider;
    const int rpm = p.kind == "mock" ? 0 : p.rate_limit_per_minute;
    client_ = std::make_shared<CompletionClient>(make_provider(p), p.retry, rpm);
  }
  return *client_;
}

CorpusSplit Pipeline::load_split() const { return read_split(run_dir_ / "split"); }

void Pipeline::split() {
  run_stage("split", {{"train_fraction", config_.train_fraction}, {"seed", config_.seed}}, [&] {
    const fs::path source = dataset_resolved_.value_or(fs::path(manifest_.dataset_source));
    CorpusFormat format;
    if (config_.dataset_format == "csv") {
      format = CorpusFormat::csv;
    } else if (config_.dataset_format == "jsonl") {
      format = CorpusFormat::jsonl;
    } else {
      format = format_from_extension(source);
    }
    const Corpus corpus = load_corpus(source, format);
    validate_corpus(corpus);
    manifest_.stages["split"].params["dataset_sha256"] = sha256_hex(read_file(source));
    manifest_.stages["split"].params["dataset_path"] = source.string();
    write_corpus(run_dir_ / "corpus.jsonl", corpus);
    const CorpusSplit result = split_corpus(corpus, config_.train_fraction, config_.seed);
    write_split(run_dir_ / "split", result);
    spdlog::info("split: {} train texts, {} test items", result.train_texts.size(), result.test.size());
    return std::vector<std::string>{"corpus.jsonl", "split/train.jsonl", "split/test.jsonl", "split/split.json"};
  });
}

void Pipeline::taxonomy() {
  run_stage("taxonomy", {{"k", config_.taxonomy_k}}, [&] {
    const PromptInstance prompt = render_taxonomy_elicitation(config_.construct_name, config_.taxonomy_k);
    const RawCompletion completion =
        client().complete("taxonomy-elicitation", prompt, config_.generation_params);
    fs::create_directories(run_dir_ / "taxonomy");
    write_file_atomic(run_dir_ / "taxonomy/elicitation.jsonl", to_json(completion).dump() + "\n");
    if (completion.refusal) throw Error("taxonomy elicitation was refused");
    const Taxonomy taxonomy = parse_taxonomy(completion.raw_text, config_.taxonomy_k, config_.construct_name);
    write_file_atomic(run_dir_ / "taxonomy/taxonomy.jsonl", taxonomy_to_jsonl(taxonomy));
    return std::vector<std::string>{"taxonomy/elicitation.jsonl", "taxonomy/taxonomy.jsonl"};
  });
}

void Pipeline::generate(const GenerateOptions& options) {
  if (!has_strategy(options.strategy)) {
    throw Error(fmt::format("strategy '{}' is not configured for this run", synthfaith::to_string(options.strategy)));
  }
  const int n = options.n_generations.value_or(config_.n_generations);
  const int repetitions = options.repetitions.value_or(config_.simple_repetitions);
  const std::string key = stage_key("generate", options.strategy);
  const std::string name(synthfaith::to_string(options.strategy));
  ojson params{{"n_generations", n}, {"simple_repetitions", repetitions}, {"template_version", kTemplateVersion}};
  params["generation_params"] = params_to_json(config_.generation_params);
  params["model_name"] = config_.provider.model_name;

  run_stage(key, params, [&] {
    PlanOptions plan;
    plan.strategy = options.strategy;
    plan.n_generations = n;
    plan.simple_repetitions = repetitions;
    plan.construct_name = config_.construct_name;
    if (options.strategy == Strategy::taxonomy) plan.taxonomy = load_taxonomy_if_present(run_dir_ / "taxonomy/taxonomy.jsonl");
    const auto jobs = plan_generation_jobs(load_split(), plan);

    const fs::path dir = run_dir_ / "generate" / name;
    fs::create_directories(dir);
    const fs::path jobs_path = dir / "jobs.jsonl";
    const fs::path archive_path = dir / "completions.jsonl";
    const std::string jobs_text = jobs_to_jsonl(jobs);
    if (fs::exists(jobs_path) && read_file(jobs_path) != jobs_text) {
      spdlog::warn("generate {}: job plan changed; discarding archived completions", name);
      fs::remove(archive_path);
    }
    write_file_atomic(jobs_path, jobs_text);

    std::map<std::string, RawCompletion, std::less<>> done;
    for (auto& completion : read_completion_archive(archive_path)) {
      done.insert_or_assign(completion.prompt_id, std::move(completion));
    }
    std::vector<GenerationJob> missing;
    for (const auto& job : jobs) {
      if (!done.contains(job.prompt_id)) missing.push_back(job);
    }
    if (!done.empty()) spdlog::info("generate {}: resuming, {} of {} jobs archived", name, jobs.size() - missing.size(), jobs.size());

    GenerationBatch batch;
    {
      std::ofstream archive(archive_path, std::ios::app | std::ios::binary);
      if (!archive) throw Error("cannot open " + archive_path.string());
      batch = generate_all(missing, client(), config_.generation_params, config_.provider.parallelism,
                           [&](const RawCompletion& completion) {
                             archive << to_json(completion).dump() << '\n';
                             archive.flush();
                           });
    }
    for (auto& completion : batch.completions) done.insert_or_assign(completion.prompt_id, std::move(completion));

    std::vector<RawCompletion> ordered;
    for (const auto& job : jobs) {
      if (const auto it = done.find(job.prompt_id); it != done.end()) ordered.push_back(it->second);
    }
    write_file_atomic(archive_path, completions_to_jsonl(ordered));

    std::string failures;
    for (const auto& failure : batch.failures) {
      failures += ojson{{"prompt_id", failure.prompt_id}, {"message", failure.message}}.dump() + "\n";
    }
    write_file_atomic(dir / "failures.jsonl", failures);
    auto& record = manifest_.stages[key].params;
    record["requests"] = jobs.size();
    record["persisted"] = ordered.size();
    record["failures"] = batch.failures.size();
    if (!batch.failures.empty()) {
      spdlog::warn("generate {}: {} jobs failed; rerun the stage to retry them", name, batch.failures.size());
    }
    const std::string rel = "generate/" + name + "/";
    return std::vector<std::string>{rel + "jobs.jsonl", rel + "completions.jsonl", rel + "failures.jsonl"};
  });
}

void Pipeline::clean(Strategy strategy) {
  const std::string key = stage_key("clean", strategy);
  const std::string name(synthfaith::to_string(strategy));
  run_stage(key, ojson::object(), [&] {
    const fs::path dir = run_dir_ / "generate" / name;
    const auto taxonomy = load_taxonomy_if_present(run_dir_ / "taxonomy/taxonomy.jsonl");
    std::vector<GenerationJob> jobs;
    for (const auto& row : read_jsonl(dir / "jobs.jsonl")) jobs.push_back(job_from_json(row, taxonomy));
    const auto completions = read_completion_archive(dir / "completions.jsonl");
    const AssembledCorpus assembled = assemble_synthetic_corpus(completions, index_jobs(jobs), manifest_.run_id);
    if (assembled.samples.empty()) throw Error("cleaning produced no samples");

    fs::create_directories(run_dir_ / "clean");
    write_corpus(run_dir_ / "clean" / (name + ".jsonl"), assembled.samples);
    const auto& s = assembled.stats;
    const LabelCounts counts = count_labels(assembled.samples);
    ojson stats;
    stats["completions"] = s.completions;
    stats["refusals"] = s.refusals;
    stats["parse_errors"] = s.parse_errors;
    stats["items_before_dedup"] = s.items_before_dedup;
    stats["positive_before_dedup"] = s.positive_before_dedup;
    stats["negative_before_dedup"] = s.negative_before_dedup;
    stats["duplicates_removed"] = s.duplicates_removed;
    stats["dropped_empty"] = s.dropped_empty;
    stats["shortfall"] = s.shortfall;
    stats["samples"] = assembled.samples.size();
    stats["positive"] = counts.positive;
    stats["negative"] = counts.negative;
    stats["errors"] = s.errors;
    write_file_atomic(run_dir_ / "clean" / (name + ".stats.json"), stats.dump(2) + "\n");
    return std::vector<std::string>{"clean/" + name + ".jsonl", "clean/" + name + ".stats.json"};
  });
}

void Pipeline::discriminator() {
  run_stage("discriminator", {{"source_strategy", synthfaith::to_string(config_.filter_source)}}, [&] {
    const std::string source(synthfaith::to_string(config_.filter_source));
    const Corpus synthetic = read_jsonl_corpus(run_dir_ / "clean" / (source + ".jsonl"));
    const DiscriminatorDataset dataset =
        build_discriminator_dataset(load_split(), synthetic, config_.seed, manifest_.run_id);
    fs::create_directories(run_dir_ / "discriminator");
    write_file_atomic(run_dir_ / "discriminator/dataset.jsonl", to_jsonl(dataset));
    const ClassifierModel model = train_discriminator(dataset, config_.discriminator);
    model.save(run_dir_ / "discriminator/model.json");
    auto& params = manifest_.stages["discriminator"].params;
    params["n_real"] = dataset.count(Origin::real);
    params["n_synthetic"] = dataset.count(Origin::synthetic_first_decode);
    params["digest"] = model.digest();
    return std::vector<std::string>{"discriminator/dataset.jsonl", "discriminator/model.json"};
  });
}

void Pipeline::filter() {
  run_stage("filter", {{"cull_threshold", config_.cull_threshold}}, [&] {
    const std::string source(synthfaith::to_string(config_.filter_source));
    const Corpus synthetic = read_jsonl_corpus(run_dir_ / "clean" / (source + ".jsonl"));
    const ClassifierModel model = ClassifierModel::load(run_dir_ / "discriminator/model.json");
    const FilterResult result = filter_synthetic(synthetic, model, config_.cull_threshold);

    fs::create_directories(run_dir_ / "filter");
    write_corpus(run_dir_ / "filter/filtered.jsonl", result.kept);
    std::string scores;
    for (const auto& score : result.scores) scores += score.to_json().dump() + "\n";
    write_file_atomic(run_dir_ / "filter/scores.jsonl", scores);
    ojson summary = ojson::object();
    for (const auto& [group, counts] : result.per_group) {
      summary[group] = {{"kept", counts.kept}, {"culled", counts.culled}};
    }
    write_file_atomic(run_dir_ / "filter/summary.json", summary.dump(2) + "\n");
    const auto& all = result.per_group.at("all");
    spdlog::info("filter: kept {} culled {}", all.kept, all.culled);
    return std::vector<std::string>{"filter/filtered.jsonl", "filter/scores.jsonl", "filter/summary.json"};
  });
}

std::vector<Pipeline::TrainingRow> Pipeline::training_rows() const {
  std::vector<TrainingRow> rows;
  for (auto s : config_.strategies) {
    rows.push_back({std::string(row_key(s)), "clean/" + std::string(synthfaith::to_string(s)) + ".jsonl"});
  }
  if (config_.filtering_enabled) rows.push_back({"grounding_filtering", "filter/filtered.jsonl"});
  if (config_.baseline_groundtruth) rows.push_back({"groundtruth", "train/groundtruth.corpus.jsonl"});
  return rows;
}

void Pipeline::train() {
  run_stage("train", ojson{{"sidecar", config_.sidecar.has_value()}}, [&] {
    fs::create_directories(run_dir_ / "train");
    std::vector<std::string> artifacts;
    if (config_.baseline_groundtruth) {
      const CorpusSplit split = load_split();
      const Corpus original = read_jsonl_corpus(run_dir_ / "corpus.jsonl");
      write_corpus(run_dir_ / "train/groundtruth.corpus.jsonl", relabel_from(split.train_texts, original));
      artifacts.push_back("train/groundtruth.corpus.jsonl");
    }
    for (const auto& row : training_rows()) {
      const Corpus data = read_jsonl_corpus(run_dir_ / row.corpus);
      ojson meta;
      meta["key"] = row.key;
      meta["corpus"] = row.corpus;
      meta["n_train"] = data.size();
      try {
        std::optional<SidecarConfig> sidecar = config_.sidecar;
        fs::path model_dir = run_dir_ / "train" / (row.key + ".sidecar");
        if (sidecar && !sidecar->model_root.empty()) model_dir = sidecar->model_root / manifest_.run_id / row.key;
        const TrainedClassifier trained = train_with_backend(data, config_.classifier, sidecar, model_dir);
        meta["ok"] = true;
        meta["error"] = nullptr;
        meta["backend"] = trained.backend;
        meta["warnings"] = trained.warning ? std::vector<std::string>{*trained.warning} : std::vector<std::string>{};
        meta["digest"] = trained.model->digest();
        if (const auto* primary = dynamic_cast<const ClassifierModel*>(trained.model.get())) {
          primary->save(run_dir_ / "train" / (row.key + ".model.json"));
          meta["model"] = "train/" + row.key + ".model.json";
          artifacts.push_back("train/" + row.key + ".model.json");
        } else {
          meta["model_dir"] = dynamic_cast<const SidecarClassifier&>(*trained.model).model_dir().string();
        }
      } catch (const SidecarError& e) {
        meta["ok"] = false;
        meta["error"] = e.what();
        meta["backend"] = "sidecar";
        meta["warnings"] = ojson::array();
      } catch (const Error& e) {
        meta["ok"] = false;
        meta["error"] = e.what();
        meta["backend"] = "primary";
        meta["warnings"] = ojson::array();
      }
      if (!meta["ok"].get<bool>()) spdlog::error("train {}: {}", row.key, meta["error"].get<std::string>());
      write_file_atomic(run_dir_ / "train" / (row.key + ".meta.json"), meta.dump(2) + "\n");
      artifacts.push_back("train/" + row.key + ".meta.json");
    }
    return artifacts;
  });
}

void Pipeline::evaluate() {
  run_stage("evaluate", ojson{{"believability_threshold", config_.believability_threshold}}, [&] {
    const CorpusSplit split = load_split();
    std::optional<ClassifierModel> discriminator;
    std::unordered_set<std::string> discriminator_ids;
    if (uses_discriminator()) {
      discriminator = ClassifierModel::load(run_dir_ / "discriminator/model.json");
      for (const auto& item : discriminator_dataset_from_jsonl(read_file(run_dir_ / "discriminator/dataset.jsonl")).items) {
        discriminator_ids.insert(item.id);
      }
    }
    std::shared_ptr<SidecarClient> sidecar_client;

    std::vector<ReportRow> rows;
    auto failed_row = [&](const std::string& key, const std::string& error, const std::string& backend) {
      ReportRow row;
      row.key = key;
      row.name = row_display_name(key, config_.construct_name);
      row.ok = false;
      row.error = error;
      row.backend = backend;
      return row;
    };

    for (const auto& training_row : training_rows()) {
      const auto meta = ojson::parse(read_file(run_dir_ / "train" / (training_row.key + ".meta.json")));
      const std::string backend = meta.at("backend").get<std::string>();
      if (!meta.at("ok").get<bool>()) {
        rows.push_back(failed_row(training_row.key, meta.at("error").get<std::string>(), backend));
        continue;
      }
      try {
        std::shared_ptr<const TextClassifier> model;
        if (backend == "sidecar") {
          if (!config_.sidecar) throw StateError("row was trained on a sidecar that is no longer configured");
          if (!sidecar_client) sidecar_client = std::make_shared<SidecarClient>(*config_.sidecar);
          model = std::make_shared<SidecarClassifier>(sidecar_client, meta.at("model_dir").get<std::string>(),
                                                      kConstructClasses, meta.at("digest").get<std::string>());
        } else {
          model = std::make_shared<ClassifierModel>(ClassifierModel::load(run_dir_ / meta.at("model").get<std::string>()));
        }

        const Corpus training = read_jsonl_corpus(run_dir_ / training_row.corpus);
        std::optional<BelievabilityInput> input;
        if (discriminator) {
          input = BelievabilityInput{&*discriminator, training, {config_.believability_threshold, &discriminator_ids,
                                                                 training_row.key == "grounding_filtering"}};
          if (training_row.key == "groundtruth") input->dataset = split.test;
        }
        ReportRow row = evaluate_model(training_row.key, *model, split.test, meta.at("n_train").get<std::size_t>(), input);
        row.name = row_display_name(training_row.key, config_.construct_name);
        row.backend = backend;
        row.warnings = meta.value("warnings", std::vector<std::string>{});
        rows.push_back(std::move(row));
      } catch (const Error& e) {
        rows.push_back(failed_row(training_row.key, e.what(), backend));
      }
    }

    if (config_.baseline_all_negative) {
      try {
        ReportRow row = baseline_all_negative(split);
        row.name = row_display_name(row.key, config_.construct_name);
        rows.push_back(std::move(row));
      } catch (const Error& e) {
        rows.push_back(failed_row("all_negative", e.what(), "none"));
      }
    }
    if (config_.baseline_zero_shot) {
      try {
        rows.push_back(baseline_zero_shot(split, client(), config_.construct_name, config_.generation_params));
      } catch (const Error& e) {
        rows.push_back(failed_row("zero_shot", e.what(), config_.provider.kind));
      }
    }

    EvaluationReport report{manifest_.run_id, manifest_.config_digest, std::move(rows)};
    report.sort_rows();
    fs::create_directories(run_dir_ / "evaluate");
    std::string out;
    for (const auto& row : report.rows) out += row.to_json().dump() + "\n";
    write_file_atomic(run_dir_ / "evaluate/rows.jsonl", out);
    return std::vector<std::string>{"evaluate/rows.jsonl"};
  });
}

bool Pipeline::report(std::string* table) {
  bool ok = true;
  run_stage("report", ojson::object(), [&] {
    EvaluationReport report{manifest_.run_id, manifest_.config_digest, {}};
    for (const auto& row : read_jsonl(run_dir_ / "evaluate/rows.jsonl")) report.rows.push_back(ReportRow::from_json(row));
    report.sort_rows();
    fs::create_directories(run_dir_ / "report");
    write_file_atomic(run_dir_ / "report/report.jsonl", report.to_jsonl());
    const std::string text = report.to_table();
    write_file_atomic(run_dir_ / "report/report.txt", text);
    if (table) *table = text;
    ok = report.all_ok();
    return std::vector<std::string>{"report/report.jsonl", "report/report.txt"};
  });
  return ok;
}

bool Pipeline::run_all(std::string* table) {
  split();
  if (has_strategy(Strategy::taxonomy)) taxonomy();
  for (auto s : config_.strategies) generate({s, std::nullopt, std::nullopt});
  for (auto s : config_.strategies) clean(s);
  if (uses_discriminator()) discriminator();
  if (config_.filtering_enabled) filter();
  train();
  evaluate();
  return report(table);
}

}  // namespace synthfaith
