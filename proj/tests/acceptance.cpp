// Acceptance checks: one PASS/FAIL line per criterion, each with a time budget.
#include <fmt/format.h>

#include <chrono>
#include <cstdlib>
#include <functional>
#include <set>

#include "synthfaith/cleaning.hpp"
#include "synthfaith/evaluation.hpp"
#include "synthfaith/filtering.hpp"
#include "synthfaith/json_io.hpp"
#include "synthfaith/prompting.hpp"
#include "synthfaith/providers.hpp"
#include "test_support.hpp"

using namespace synthfaith;
namespace st = synthfaith::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

Outcome metric_oracle() {
  long long compared = 0;
  for (int n = 1; n <= 8; ++n) {
    for (unsigned t = 0; t < (1u << n); ++t) {
      std::vector<Label> truths;
      for (int i = 0; i < n; ++i) truths.push_back((t >> i) & 1u ? Label::positive_construct : Label::negative_construct);
      for (unsigned p = 0; p < (1u << n); ++p) {
        std::vector<Label> predictions;
        for (int i = 0; i < n; ++i) {
          predictions.push_back((p >> i) & 1u ? Label::positive_construct : Label::negative_construct);
        }
        const auto expected = st::oracle_metrics(predictions, truths);
        if (accuracy(predictions, truths) != expected.accuracy) {
          return {false, fmt::format("accuracy differs at n={} truths={} predictions={}", n, t, p)};
        }
        if (expected.macro_defined && macro_f1(predictions, truths) != expected.macro_f1) {
          return {false, fmt::format("macro-F1 differs at n={} truths={} predictions={}", n, t, p)};
        }
        ++compared;
      }
    }
  }
  return {true, fmt::format("{} assignments, exact", compared)};
}

Outcome all_negative_arithmetic() {
  CorpusSplit split;
  split.test = st::make_labeled_corpus(1000, 231, 11);
  const auto row = baseline_all_negative(split);
  const bool pass = std::abs(row.accuracy - 0.77) <= 0.005 && std::abs(row.macro_f1 - 0.43) <= 0.005;
  return {pass, fmt::format("accuracy {:.4f}, macro-F1 {:.4f} on 769/1000 negative", row.accuracy, row.macro_f1)};
}

Outcome cleaning_golden() {
  const auto rows = read_jsonl(st::data_dir() / "cleaning_golden.jsonl");
  if (rows.size() != 50) return {false, fmt::format("golden file has {} cases", rows.size())};
  for (const auto& row : rows) {
    const auto input = row.at("input").get<std::string>();
    const auto got = strip_preamble(input);
    if (got != row.at("expected").get<std::string>()) return {false, fmt::format("'{}' -> '{}'", input, got)};
  }
  return {true, "50/50 exact"};
}

Outcome end_to_end_determinism() {
  st::TempDir a, b;
  const auto config = (st::data_dir() / "mini_config.json").string();
  for (const auto* dir : {&a, &b}) {
    const auto command = fmt::format("'{}' --run-dir '{}' --config '{}' run > '{}' 2>&1", SYNTHFAITH_CLI,
                                     (dir->path() / "run").string(), config, (dir->path() / "cli.log").string());
    if (std::system(command.c_str()) != 0) {
      return {false, "cli run failed: " + st::read_text(dir->path() / "cli.log")};
    }
  }
  std::size_t compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a.path() / "run")) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), a.path() / "run");
    if (rel == "manifest.json") continue;
    const auto other = b.path() / "run" / rel;
    if (!fs::exists(other) || st::read_text(entry.path()) != st::read_text(other)) {
      return {false, "differs: " + rel.string()};
    }
    ++compared;
  }
  for (const auto* required : {"report/report.jsonl", "report/report.txt", "clean/grounding.jsonl",
                               "filter/filtered.jsonl"}) {
    if (!fs::exists(a.path() / "run" / required)) return {false, std::string("missing ") + required};
  }
  return {true, fmt::format("{} files byte-identical", compared)};
}

Outcome discriminator_efficacy() {
  const auto fixture = st::make_artifact_fixture(300, 200, 21);
  const auto model = train_discriminator(build_discriminator_dataset(fixture.split, fixture.synthetic, 3), TrainConfig{});
  std::size_t correct = 0;
  for (const auto& text : fixture.heldout_real) correct += model.predict(text) == 1;
  for (const auto& item : fixture.heldout_synthetic) correct += model.predict(item.text) == 0;
  const double acc = static_cast<double>(correct) / 400.0;
  const auto filtered = filter_synthetic(fixture.heldout_synthetic, model, 0.5);
  const double culled = static_cast<double>(filtered.per_group.at("all").culled) / 200.0;
  return {acc >= 0.9 && culled >= 0.8, fmt::format("held-out accuracy {:.3f}, culled {:.3f} of marked", acc, culled)};
}

Outcome classifier_numerics() {
  const auto corpus = st::make_labeled_corpus(60, 25, 3);
  std::vector<std::string> texts;
  std::vector<int> targets;
  for (const auto& item : corpus) {
    texts.push_back(item.text);
    targets.push_back(*item.label == Label::positive_construct);
  }
  const auto vectorizer = Vectorizer::fit(texts, FeatureConfig{});
  const auto x = vectorizer.transform(texts);
  Vector<double> y(static_cast<Eigen::Index>(targets.size()));
  for (std::size_t i = 0; i < targets.size(); ++i) y(static_cast<Eigen::Index>(i)) = targets[i];
  Rng rng(17);
  double worst = 0.0;
  for (int point = 0; point < 10; ++point) {
    Vector<double> w(x.cols());
    for (Eigen::Index j = 0; j < w.size(); ++j) w(j) = (uniform_unit(rng) * 2.0 - 1.0) * 3.0;
    const double b = uniform_unit(rng) * 2.0 - 1.0;
    Vector<double> grad;
    double grad_b = 0.0;
    logistic_objective<double>(x, y, w, b, 1e-2, &grad, &grad_b);
    const auto fd = st::finite_difference(x, y, w, b, 1e-2, 1e-5);
    Vector<double> full(w.size() + 1), full_fd(w.size() + 1);
    full << grad, grad_b;
    full_fd << fd.grad_weights, fd.grad_bias;
    worst = std::max(worst, (full - full_fd).norm() / std::max(full.norm(), 1e-12));
  }
  double worst_rise = 0.0;
  for (double lr : {0.1, 2.0, 50.0}) {
    TrainConfig config;
    config.learning_rate = lr;
    config.batch_size = 8;
    TrainingTrace trace;
    train_binary(texts, targets, kConstructClasses, config, &trace);
    for (std::size_t e = 1; e < trace.epoch_objective.size(); ++e) {
      worst_rise = std::max(worst_rise, trace.epoch_objective[e] - trace.epoch_objective[e - 1]);
    }
  }
  return {worst < 1e-4 && worst_rise <= 1e-6,
          fmt::format("max relative gradient error {:.2e}, max epoch rise {:.2e}", worst, worst_rise)};
}

Outcome polarity_balance() {
  Rng rng(404);
  auto client = CompletionClient(std::make_shared<MockProvider>(42), RetryPolicy{}, 0);
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t n = 5 + uniform_index(rng, 120);
    const auto corpus = st::make_labeled_corpus(n, 1 + uniform_index(rng, n - 1), trial);
    const auto split = split_corpus(corpus, 0.8, trial);
    for (auto strategy : {Strategy::grounding, Strategy::grounding_rewrite}) {
      PlanOptions options;
      options.strategy = strategy;
      options.n_generations = 1 + static_cast<int>(uniform_index(rng, 10));
      const auto jobs = plan_generation_jobs(split, options);
      std::size_t positive = 0;
      for (const auto& job : jobs) positive += job.spec.polarity == Polarity::positive_construct;
      if (jobs.size() != 2 * split.train_texts.size() || 2 * positive != jobs.size()) {
        return {false, fmt::format("unbalanced plan for {} train texts", split.train_texts.size())};
      }
      const auto batch = generate_all(jobs, client, {}, 1);
      const auto assembled = assemble_synthetic_corpus(batch.completions, index_jobs(jobs), "acceptance");
      if (assembled.stats.positive_before_dedup != assembled.stats.negative_before_dedup) {
        return {false, fmt::format("assembled {} positive vs {} negative", assembled.stats.positive_before_dedup,
                                   assembled.stats.negative_before_dedup)};
      }
    }
  }
  return {true, "12 random corpus sizes x 2 grounded strategies"};
}

Outcome filter_monotonicity() {
  Rng rng(2024);
  int checks = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 60);
    const auto data = st::as_first_decodes(st::plain_posts(n, trial), "p-");
    std::vector<SampleScore> scores;
    for (const auto& item : data) scores.push_back({item.id, uniform_unit(rng), false, 0.0, "d"});
    scores[uniform_index(rng, n)].proba_real = 1.0;
    std::vector<double> thresholds;
    for (int k = 0; k < 8; ++k) thresholds.push_back(uniform_unit(rng));
    thresholds.push_back(0.0);
    thresholds.push_back(1.0);
    std::sort(thresholds.begin(), thresholds.end());
    std::set<std::string> previous;
    for (double t : thresholds) {
      std::set<std::string> kept;
      for (const auto& item : apply_cull_threshold(data, scores, t).kept) kept.insert(item.id);
      if (!std::includes(kept.begin(), kept.end(), previous.begin(), previous.end())) {
        return {false, fmt::format("trial {} threshold {}", trial, t)};
      }
      previous = std::move(kept);
      ++checks;
    }
  }
  return {true, fmt::format("{} threshold pairs", checks)};
}

}  // namespace

int main() {
  struct Criterion {
    std::string name;
    std::chrono::milliseconds budget;
    std::function<Outcome()> check;
  };
  using namespace std::chrono_literals;
  const std::vector<Criterion> criteria = {
      {"metric oracle equivalence", 1s, metric_oracle},
      {"all-negative arithmetic cross-check", 1s, all_negative_arithmetic},
      {"cleaning golden suite", 1s, cleaning_golden},
      {"end-to-end determinism", 120s, end_to_end_determinism},
      {"discriminator/filter efficacy", 60s, discriminator_efficacy},
      {"classifier numerics", 10s, classifier_numerics},
      {"polarity balance", 10s, polarity_balance},
      {"filter monotonicity", 10s, filter_monotonicity},
  };
  int failures = 0;
  for (const auto& criterion : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome outcome;
    try {
      outcome = criterion.check();
    } catch (const std::exception& e) {
      outcome = {false, std::string("exception: ") + e.what()};
    }
    const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start);
    if (elapsed > criterion.budget) {
      outcome.pass = false;
      outcome.detail += fmt::format("; over budget {} ms", criterion.budget.count());
    }
    failures += !outcome.pass;
    fmt::print("{} {} ({} ms): {}\n", outcome.pass ? "PASS" : "FAIL", criterion.name, elapsed.count(), outcome.detail);
  }
  return failures == 0 ? 0 : 1;
}
