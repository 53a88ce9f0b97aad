#pragma once

#include <Eigen/Core>

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "synthfaith/classifier.hpp"
#include "synthfaith/corpus.hpp"
#include "synthfaith/filtering.hpp"
#include "synthfaith/generation.hpp"

namespace synthfaith {

/// Rows are true labels, columns predictions; index 1 is positive_construct.
using ConfusionMatrix = Eigen::Matrix<long long, 2, 2>;

ConfusionMatrix confusion_matrix(std::span<const Label> predictions, std::span<const Label> truths);

/// Fraction correct. Throws on empty input or length mismatch.
double accuracy(std::span<const Label> predictions, std::span<const Label> truths);

/// Per-class F1 from a confusion matrix; 0 when the class never appears in
/// either predictions or truths.
double class_f1(const ConfusionMatrix& matrix, int cls);

/// Unweighted mean of the two per-class F1 scores. Truths must contain both classes.
double macro_f1(std::span<const Label> predictions, std::span<const Label> truths);

/// Canonical row keys, in report order.
inline constexpr std::string_view kRowOrder[] = {"simple",      "grounding",    "grounding_rewrite", "taxonomy",
                                                 "grounding_filtering", "groundtruth", "all_negative", "zero_shot"};

std::string row_display_name(std::string_view key, std::string_view construct_name = "sarcastic");
std::string_view row_key(Strategy strategy);

struct ReportRow {
  std::string key;
  std::string name;
  bool ok = true;
  std::string error;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::optional<double> believability;
  bool circularity_warning = false;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::size_t excluded = 0;
  std::string backend = "none";
  std::vector<std::string> warnings;

  nlohmann::ordered_json to_json() const;
  static ReportRow from_json(const nlohmann::ordered_json& j);
};

struct EvaluationReport {
  std::string run_id;
  std::string config_digest;
  std::vector<ReportRow> rows;

  /// Sorts rows by kRowOrder.
  void sort_rows();
  std::string to_jsonl() const;
  /// Aligned text table; missing values print as "---".
  std::string to_table() const;
  bool all_ok() const;
};

struct BelievabilityInput {
  const TextClassifier* discriminator = nullptr;
  std::span<const LabeledText> dataset;
  BelievabilityOptions options;
};

/// Scores an already trained construct model on the labeled test split.
ReportRow evaluate_model(std::string_view key, const TextClassifier& model, std::span<const LabeledText> test,
                         std::size_t n_train, const std::optional<BelievabilityInput>& believability_input = {});

/// Trains a fresh built-in classifier on `synthetic_train` and evaluates it on split.test.
ReportRow evaluate_strategy(std::string_view key, std::span<const LabeledText> synthetic_train,
                            const CorpusSplit& split, const TrainConfig& config,
                            const TextClassifier* discriminator = nullptr,
                            const std::unordered_set<std::string>* discriminator_training_ids = nullptr);

ReportRow baseline_all_negative(const CorpusSplit& split);

/// Items whose answer stays unparseable are excluded and counted.
ReportRow baseline_zero_shot(const CorpusSplit& split, CompletionClient& client, std::string_view construct_name,
                             const GenerationParams& params = {});

std::vector<Label> truths_of(std::span<const LabeledText> labeled);

}  // namespace synthfaith
