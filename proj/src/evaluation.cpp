#include "synthfaith/evaluation.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>

namespace synthfaith {

namespace {

int index_of(Label label) { return label == Label::positive_construct ? 1 : 0; }

void check_lengths(std::span<const Label> predictions, std::span<const Label> truths) {
  if (predictions.size() != truths.size()) {
    throw Error(fmt::format("length mismatch: {} predictions vs {} truths", predictions.size(), truths.size()));
  }
  if (truths.empty()) throw Error("metrics need at least one item");
}

}  // namespace

ConfusionMatrix confusion_matrix(std::span<const Label> predictions, std::span<const Label> truths) {
  check_lengths(predictions, truths);
  ConfusionMatrix matrix = ConfusionMatrix::Zero();
  for (std::size_t i = 0; i < truths.size(); ++i) ++matrix(index_of(truths[i]), index_of(predictions[i]));
  return matrix;
}

double accuracy(std::span<const Label> predictions, std::span<const Label> truths) {
  const ConfusionMatrix matrix = confusion_matrix(predictions, truths);
  return static_cast<double>(matrix.trace()) / static_cast<double>(matrix.sum());
}

double class_f1(const ConfusionMatrix& matrix, int cls) {
  const long long tp = matrix(cls, cls);
  const long long fp = matrix.col(cls).sum() - tp;
  const long long fn = matrix.row(cls).sum() - tp;
  const long long denominator = 2 * tp + fp + fn;
  return denominator == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denominator);
}

double macro_f1(std::span<const Label> predictions, std::span<const Label> truths) {
  const ConfusionMatrix matrix = confusion_matrix(predictions, truths);
  if (matrix.row(0).sum() == 0 || matrix.row(1).sum() == 0) {
    throw Error("macro-F1 needs both classes among the truths");
  }
  return (class_f1(matrix, 0) + class_f1(matrix, 1)) / 2.0;
}

std::string row_display_name(std::string_view key, std::string_view construct_name) {
  if (key == "simple") return "Simple";
  if (key == "grounding") return "Grounding";
  if (key == "grounding_rewrite") return "Grounding (rewrite)";
  if (key == "taxonomy") return "Grounding + Taxonomy";
  if (key == "grounding_filtering") return "Grounding + Filtering";
  if (key == "groundtruth") return "Groundtruth annotations";
  if (key == "all_negative") return fmt::format("All non-{}", construct_name);
  if (key == "zero_shot") return "Zero-shot LLM";
  return std::string(key);
}

std::string_view row_key(Strategy strategy) {
  switch (strategy) {
    case Strategy::simple:
      return "simple";
    case Strategy::grounding:
      return "grounding";
    case Strategy::grounding_rewrite:
      return "grounding_rewrite";
    case Strategy::taxonomy:
      return "taxonomy";
  }
  return "unknown";
}

nlohmann::ordered_json ReportRow::to_json() const {
  nlohmann::ordered_json j;
  j["key"] = key;
  j["name"] = name;
  j["ok"] = ok;
  j["error"] = error.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(error);
  j["accuracy"] = ok ? nlohmann::ordered_json(accuracy) : nlohmann::ordered_json(nullptr);
  j["macro_f1"] = ok ? nlohmann::ordered_json(macro_f1) : nlohmann::ordered_json(nullptr);
  j["believability"] = believability ? nlohmann::ordered_json(*believability) : nlohmann::ordered_json(nullptr);
  j["circularity_warning"] = circularity_warning;
  j["n_train"] = n_train;
  j["n_test"] = n_test;
  j["excluded"] = excluded;
  j["backend"] = backend;
  j["warnings"] = warnings;
  return j;
}

ReportRow ReportRow::from_json(const nlohmann::ordered_json& j) {
  ReportRow row;
  row.key = j.at("key").get<std::string>();
  row.name = j.at("name").get<std::string>();
  row.ok = j.at("ok").get<bool>();
  if (!j["error"].is_null()) row.error = j["error"].get<std::string>();
  if (!j["accuracy"].is_null()) row.accuracy = j["accuracy"].get<double>();
  if (!j["macro_f1"].is_null()) row.macro_f1 = j["macro_f1"].get<double>();
  if (!j["believability"].is_null()) row.believability = j["believability"].get<double>();
  row.circularity_warning = j.value("circularity_warning", false);
  row.n_train = j.at("n_train").get<std::size_t>();
  row.n_test = j.at("n_test").get<std::size_t>();
  row.excluded = j.at("excluded").get<std::size_t>();
  row.backend = j.value("backend", std::string("none"));
  row.warnings = j.value("warnings", std::vector<std::string>{});
  return row;
}

void EvaluationReport::sort_rows() {
  auto rank = [](const std::string& key) {
    const auto it = std::find(std::begin(kRowOrder), std::end(kRowOrder), key);
    return static_cast<std::size_t>(it - std::begin(kRowOrder));
  };
  std::stable_sort(rows.begin(), rows.end(), [&](const ReportRow& a, const ReportRow& b) { return rank(a.key) < rank(b.key); });
}

std::string EvaluationReport::to_jsonl() const {
  std::string out;
  for (const auto& row : rows) {
    auto j = row.to_json();
    j["run_id"] = run_id;
    j["config_digest"] = config_digest;
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

std::string EvaluationReport::to_table() const {
  std::size_t width = std::string_view("Prompting strategy").size();
  for (const auto& row : rows) width = std::max(width, row.name.size() + (row.circularity_warning ? 1 : 0));
  auto cell = [](bool present, double value) { return present ? fmt::format("{:.2f}", value) : std::string("---"); };

  std::string out = fmt::format("{:<{}}  {:>8}  {:>8}  {:>13}  {:>7}  {:>6}\n", "Prompting strategy", width, "Accuracy",
                                "Macro-F1", "Believability", "n_train", "n_test");
  out += std::string(width + 2 + 8 + 2 + 8 + 2 + 13 + 2 + 7 + 2 + 6, '-') + "\n";
  bool any_circular = false;
  for (const auto& row : rows) {
    const std::string name = row.name + (row.circularity_warning ? "*" : "");
    any_circular = any_circular || row.circularity_warning;
    if (!row.ok) {
      out += fmt::format("{:<{}}  FAILED: {}\n", name, width, row.error);
      continue;
    }
    out += fmt::format("{:<{}}  {:>8}  {:>8}  {:>13}  {:>7}  {:>6}\n", name, width, cell(true, row.accuracy),
                       cell(true, row.macro_f1), cell(row.believability.has_value(), row.believability.value_or(0.0)),
                       row.n_train, row.n_test);
  }
  if (any_circular) out += "* believability measured with the discriminator that filtered this dataset\n";
  return out;
}

bool EvaluationReport::all_ok() const {
  return std::all_of(rows.begin(), rows.end(), [](const ReportRow& row) { return row.ok; });
}

std::vector<Label> truths_of(std::span<const LabeledText> labeled) {
  std::vector<Label> truths;
  truths.reserve(labeled.size());
  for (const auto& item : labeled) {
    if (!item.label) throw Error("test item '" + item.id + "' has no label");
    truths.push_back(*item.label);
  }
  return truths;
}

ReportRow evaluate_model(std::string_view key, const TextClassifier& model, std::span<const LabeledText> test,
                         std::size_t n_train, const std::optional<BelievabilityInput>& believability_input) {
  ReportRow row;
  row.key = std::string(key);
  row.name = row_display_name(key);
  const auto truths = truths_of(test);
  std::vector<Label> predictions;
  predictions.reserve(test.size());
  for (const auto& item : test) predictions.push_back(predict_label(model, item.text));
  row.accuracy = accuracy(predictions, truths);
  row.macro_f1 = macro_f1(predictions, truths);
  row.n_train = n_train;
  row.n_test = test.size();
  if (believability_input && believability_input->discriminator) {
    const auto report = believability(key, believability_input->dataset, *believability_input->discriminator,
                                      believability_input->options);
    row.believability = report.fraction_predicted_real;
    row.circularity_warning = report.circularity_warning;
  }
  return row;
}

ReportRow evaluate_strategy(std::string_view key, std::span<const LabeledText> synthetic_train,
                            const CorpusSplit& split, const TrainConfig& config, const TextClassifier* discriminator,
                            const std::unordered_set<std::string>* discriminator_training_ids) {
  const ClassifierModel model = train(synthetic_train, config);
  std::optional<BelievabilityInput> input;
  if (discriminator) {
    input = BelievabilityInput{discriminator, synthetic_train, {0.5, discriminator_training_ids, false}};
  }
  ReportRow row = evaluate_model(key, model, split.test, synthetic_train.size(), input);
  row.backend = "primary";
  return row;
}

ReportRow baseline_all_negative(const CorpusSplit& split) {
  ReportRow row;
  row.key = "all_negative";
  row.name = row_display_name(row.key);
  const auto truths = truths_of(split.test);
  const std::vector<Label> predictions(truths.size(), Label::negative_construct);
  row.accuracy = accuracy(predictions, truths);
  row.macro_f1 = macro_f1(predictions, truths);
  row.n_test = truths.size();
  return row;
}

ReportRow baseline_zero_shot(const CorpusSplit& split, CompletionClient& client, std::string_view construct_name,
                             const GenerationParams& params) {
  ReportRow row;
  row.key = "zero_shot";
  row.name = row_display_name(row.key);
  row.backend = client.provider().kind();
  std::vector<Label> predictions;
  std::vector<Label> truths;
  for (const auto& item : split.test) {
    if (!item.label) throw Error("test item '" + item.id + "' has no label");
    try {
      predictions.push_back(zero_shot_annotate(item.text, client, construct_name, params));
      truths.push_back(*item.label);
    } catch (const ParseError& e) {
      ++row.excluded;
      spdlog::warn("zero-shot: excluding {}: {}", item.id, e.what());
    }
  }
  if (row.excluded > 0) row.warnings.push_back(fmt::format("{} items excluded (unparseable answers)", row.excluded));
  row.accuracy = accuracy(predictions, truths);
  row.macro_f1 = macro_f1(predictions, truths);
  row.n_test = truths.size();
  return row;
}

}  // namespace synthfaith
