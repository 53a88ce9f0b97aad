#include <gtest/gtest.h>

#include <atomic>

#include "synthfaith/evaluation.hpp"
#include "synthfaith/json_io.hpp"
#include "test_support.hpp"

using namespace synthfaith;
using synthfaith::testing::oracle_metrics;

namespace {

std::vector<Label> labels_from_bits(unsigned bits, int n) {
  std::vector<Label> out;
  for (int i = 0; i < n; ++i) out.push_back((bits >> i) & 1u ? Label::positive_construct : Label::negative_construct);
  return out;
}

CorpusSplit split_with_test(std::size_t n, std::size_t n_positive) {
  CorpusSplit split;
  split.test = synthfaith::testing::make_labeled_corpus(n, n_positive, 11);
  return split;
}

class AnswerProvider final : public CompletionProvider {
 public:
  explicit AnswerProvider(std::string answer) : answer_(std::move(answer)) {}
  ProviderReply send(const ChatRequest&) override {
    ++calls;
    return {answer_, "answer-model"};
  }
  std::string kind() const override { return "scripted"; }
  std::string model_name() const override { return "answer-model"; }
  std::atomic<int> calls{0};

 private:
  std::string answer_;
};

class ConstantModel final : public TextClassifier {
 public:
  explicit ConstantModel(double p) : p_(p) {}
  double predict_proba(std::string_view) const override { return p_; }
  const std::array<std::string, 2>& classes() const override { return kConstructClasses; }
  std::string digest() const override { return "constant"; }

 private:
  double p_;
};

}  // namespace

// Every prediction/truth assignment for n = 1..8 against the counting oracle.
TEST(MetricsOracle, ExhaustiveSmallInstancesMatchExactly) {
  for (int n = 1; n <= 8; ++n) {
    for (unsigned t = 0; t < (1u << n); ++t) {
      const auto truths = labels_from_bits(t, n);
      for (unsigned p = 0; p < (1u << n); ++p) {
        const auto predictions = labels_from_bits(p, n);
        const auto expected = oracle_metrics(predictions, truths);
        ASSERT_EQ(accuracy(predictions, truths), expected.accuracy) << n << " " << t << " " << p;
        if (expected.macro_defined) {
          ASSERT_EQ(macro_f1(predictions, truths), expected.macro_f1) << n << " " << t << " " << p;
        } else {
          ASSERT_THROW(macro_f1(predictions, truths), Error);
        }
      }
    }
  }
}

TEST(Metrics, WorkedExamples) {
  const auto pos = Label::positive_construct;
  const auto neg = Label::negative_construct;
  const std::vector<Label> truths = {pos, neg, pos, neg};
  EXPECT_EQ(accuracy(truths, truths), 1.0);
  EXPECT_EQ(macro_f1(truths, truths), 1.0);
  EXPECT_EQ(accuracy(std::vector<Label>{pos, pos, neg, neg}, std::vector<Label>{pos, neg, neg, pos}), 0.5);
  EXPECT_THROW(accuracy(std::vector<Label>{pos}, truths), Error);
  EXPECT_THROW(accuracy(std::vector<Label>{}, std::vector<Label>{}), Error);
  EXPECT_THROW(macro_f1(std::vector<Label>{pos, neg}, std::vector<Label>{neg, neg}), Error);
}

TEST(Metrics, ConfusionMatrixLayout) {
  const auto pos = Label::positive_construct;
  const auto neg = Label::negative_construct;
  const auto m = confusion_matrix(std::vector<Label>{pos, pos, neg}, std::vector<Label>{pos, neg, neg});
  EXPECT_EQ(m(1, 1), 1);
  EXPECT_EQ(m(0, 1), 1);
  EXPECT_EQ(m(0, 0), 1);
  EXPECT_EQ(m(1, 0), 0);
  EXPECT_EQ(class_f1(ConfusionMatrix::Zero(), 1), 0.0);
}

TEST(AllNegative, SeventySevenPercentNegativeClosedForm) {
  const auto row = baseline_all_negative(split_with_test(100, 23));
  EXPECT_EQ(row.accuracy, 0.77);
  EXPECT_DOUBLE_EQ(row.macro_f1, (0.0 + 2.0 * 77.0 / 177.0) / 2.0);
  EXPECT_NEAR(row.macro_f1, 0.435, 1e-3);
}

TEST(AllNegative, MatchesReportedPair) {
  const auto row = baseline_all_negative(split_with_test(1000, 231));
  EXPECT_NEAR(row.accuracy, 0.77, 0.005);
  EXPECT_NEAR(row.macro_f1, 0.43, 0.005);
  EXPECT_EQ(row.n_test, 1000u);
  EXPECT_EQ(row.name, "All non-sarcastic");
}

TEST(AllNegative, BalancedSet) {
  const auto row = baseline_all_negative(split_with_test(10, 5));
  EXPECT_EQ(row.accuracy, 0.5);
  EXPECT_DOUBLE_EQ(row.macro_f1, 1.0 / 3.0);
}

TEST(ZeroShot, AlwaysYesOnBalancedSet) {
  auto provider = std::make_shared<AnswerProvider>("Yes");
  CompletionClient client(provider, RetryPolicy{}, 0);
  const auto row = baseline_zero_shot(split_with_test(10, 5), client, "sarcastic");
  EXPECT_EQ(row.accuracy, 0.5);
  EXPECT_DOUBLE_EQ(row.macro_f1, 1.0 / 3.0);
  EXPECT_EQ(row.excluded, 0u);
  EXPECT_EQ(provider->calls, 10);
  EXPECT_EQ(row.backend, "scripted");
}

TEST(ZeroShot, UnparseableAnswersAreExcluded) {
  auto provider = std::make_shared<AnswerProvider>("Hard to say.");
  CompletionClient client(provider, RetryPolicy{}, 0);
  EXPECT_THROW(baseline_zero_shot(split_with_test(4, 2), client, "sarcastic"), Error);
  EXPECT_EQ(provider->calls, 8);
}

TEST(EvaluateModel, BelievabilityAttached) {
  const auto split = split_with_test(20, 10);
  const ConstantModel model(0.9);
  class AlwaysReal final : public TextClassifier {
   public:
    double predict_proba(std::string_view) const override { return 0.8; }
    const std::array<std::string, 2>& classes() const override { return kDiscriminatorClasses; }
    std::string digest() const override { return "d"; }
  } discriminator;
  const auto row = evaluate_model("grounding", model, split.test, 7,
                                  BelievabilityInput{&discriminator, split.test, {.threshold = 0.5, .circular = true}});
  EXPECT_EQ(row.accuracy, 0.5);
  ASSERT_TRUE(row.believability);
  EXPECT_EQ(*row.believability, 1.0);
  EXPECT_TRUE(row.circularity_warning);
  EXPECT_EQ(row.n_train, 7u);
  EXPECT_EQ(row.n_test, 20u);
}

TEST(EvaluateStrategy, TrainsFreshModelAndIsReproducible) {
  const auto split = split_with_test(40, 20);
  const auto train_set = synthfaith::testing::make_labeled_corpus(60, 30, 5);
  const auto a = evaluate_strategy("grounding", train_set, split, TrainConfig{});
  const auto b = evaluate_strategy("grounding", train_set, split, TrainConfig{});
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
  EXPECT_EQ(a.n_train, 60u);
  EXPECT_EQ(a.backend, "primary");
  EXPECT_GE(a.accuracy, 0.0);
  EXPECT_LE(a.macro_f1, 1.0);
}

TEST(Report, RowsSortedAndRendered) {
  EvaluationReport report;
  report.run_id = "run-abc";
  report.config_digest = "digest";
  ReportRow zero;
  zero.key = "zero_shot";
  zero.name = row_display_name(zero.key);
  zero.accuracy = 0.5;
  zero.macro_f1 = 0.25;
  ReportRow simple;
  simple.key = "simple";
  simple.name = row_display_name(simple.key);
  simple.accuracy = 0.625;
  simple.macro_f1 = 0.5;
  simple.believability = 0.125;
  ReportRow filtered;
  filtered.key = "grounding_filtering";
  filtered.name = row_display_name(filtered.key);
  filtered.ok = false;
  filtered.error = "filter removed entire dataset";
  report.rows = {zero, filtered, simple};
  report.sort_rows();
  EXPECT_EQ(report.rows[0].key, "simple");
  EXPECT_EQ(report.rows[1].key, "grounding_filtering");
  EXPECT_EQ(report.rows[2].key, "zero_shot");
  EXPECT_FALSE(report.all_ok());

  const auto table = report.to_table();
  EXPECT_NE(table.find("Simple"), std::string::npos);
  EXPECT_NE(table.find("0.62"), std::string::npos);
  EXPECT_NE(table.find("0.12"), std::string::npos);
  EXPECT_NE(table.find("FAILED: filter removed entire dataset"), std::string::npos);
  EXPECT_NE(table.find("---"), std::string::npos);

  std::vector<nlohmann::ordered_json> lines;
  for_each_line(report.to_jsonl(), [&](std::string_view line) {
    if (!line.empty()) lines.push_back(nlohmann::ordered_json::parse(line));
  });
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0]["run_id"], "run-abc");
  EXPECT_EQ(lines[1]["accuracy"], nullptr);
  EXPECT_EQ(lines[1]["error"], "filter removed entire dataset");
  EXPECT_EQ(lines[2]["believability"], nullptr);
  EXPECT_EQ(ReportRow::from_json(lines[0]).to_json().dump(), report.rows[0].to_json().dump());
}

TEST(Report, DisplayNamesUseConstruct) {
  EXPECT_EQ(row_display_name("all_negative", "ironic"), "All non-ironic");
  EXPECT_EQ(row_display_name("groundtruth"), "Groundtruth annotations");
  EXPECT_EQ(row_key(Strategy::taxonomy), "taxonomy");
}
