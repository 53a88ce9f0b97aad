#include <gtest/gtest.h>

#include "synthfaith/cleaning.hpp"
#include "synthfaith/generation.hpp"
#include "synthfaith/json_io.hpp"
#include "synthfaith/providers.hpp"
#include "test_support.hpp"

using namespace synthfaith;

namespace {

RawCompletion completion(std::string prompt_id, std::string text, bool refusal = false) {
  RawCompletion c;
  c.prompt_id = std::move(prompt_id);
  c.raw_text = std::move(text);
  c.refusal = refusal;
  return c;
}

GenerationJob job(std::string prompt_id, Polarity polarity, int n = 10) {
  LabeledText example{"real-1", "seed text", std::nullopt, Source::real, std::nullopt};
  return {std::move(prompt_id), {Strategy::grounding, polarity, n, example}};
}

}  // namespace

TEST(StripPreamble, Examples) {
  EXPECT_EQ(strip_preamble("Sure, here you go: Oh great, rain again."), "Oh great, rain again.");
  EXPECT_EQ(strip_preamble("No colon here"), "No colon here");
  EXPECT_EQ(strip_preamble("Verbal Irony: Wow, I just love traffic: it's the best."),
            "Wow, I just love traffic: it's the best.");
}

TEST(StripPreamble, MarkersAndQuotes) {
  EXPECT_EQ(strip_preamble("3. \"Oh joy, Mondays.\""), "Oh joy, Mondays.");
  EXPECT_EQ(strip_preamble("3) Oh joy"), "Oh joy");
  EXPECT_EQ(strip_preamble("\xE2\x80\x9C" "Curly quotes\xE2\x80\x9D"), "Curly quotes");
  EXPECT_EQ(strip_preamble("- bullet item"), "bullet item");
  EXPECT_EQ(strip_preamble("2020 was a year"), "2020 was a year");
  EXPECT_EQ(strip_preamble("Sure, here you go:"), "");
}

TEST(StripPreamble, GoldenFile) {
  const auto rows = read_jsonl(synthfaith::testing::data_dir() / "cleaning_golden.jsonl");
  ASSERT_EQ(rows.size(), 50u);
  for (const auto& row : rows) {
    EXPECT_EQ(strip_preamble(row.at("input").get<std::string>()), row.at("expected").get<std::string>())
        << row.at("input").get<std::string>();
  }
}

// Idempotent on lines with at most one colon.
TEST(StripPreambleProperty, IdempotentWithAtMostOneColon) {
  static constexpr std::string_view pieces[] = {"Sure, here you go", "1.", "2)", "\"", "Oh great", "rain again", " ",
                                                "Wow", "-", "**",        "\xE2\x80\x9C", "it's", "best.",     "42"};
  Rng rng(5);
  for (int trial = 0; trial < 3000; ++trial) {
    std::string line;
    const int n = 1 + static_cast<int>(uniform_index(rng, 8));
    bool colon = false;
    for (int i = 0; i < n; ++i) {
      if (!colon && uniform_unit(rng) < 0.2) {
        line += ": ";
        colon = true;
      }
      line += pieces[uniform_index(rng, std::size(pieces))];
      if (uniform_unit(rng) < 0.6) line += " ";
    }
    const std::string once = strip_preamble(line);
    ASSERT_EQ(strip_preamble(once), once) << "input: [" << line << "]";
    ASSERT_EQ(once, std::string(trim(once)));
  }
}

TEST(ParseNumberedList, DirectParse) {
  const auto items = parse_numbered_list("1. A\n2. B\n3. C", 3);
  ASSERT_EQ(items.size(), 3u);
  EXPECT_EQ(items[0], (ListItem{1, "A"}));
  EXPECT_EQ(items[1], (ListItem{2, "B"}));
  EXPECT_EQ(items[2], (ListItem{3, "C"}));
}

TEST(ParseNumberedList, EmptyItemsAreDroppedKeepingPositions) {
  ListParseNotes notes;
  const auto items = parse_numbered_list("1. Sure, here you go:\n2. Beta\n3. Gamma", 3, &notes);
  ASSERT_EQ(items.size(), 2u);
  EXPECT_EQ(items[0], (ListItem{2, "Beta"}));
  EXPECT_EQ(notes.dropped_empty, 1);
}

TEST(ParseNumberedList, ShortfallIsTolerated) {
  ListParseNotes notes;
  const auto items = parse_numbered_list("1. Alpha\n2. Beta", 10, &notes);
  EXPECT_EQ(items.size(), 2u);
  EXPECT_EQ(notes.shortfall, 8);
}

TEST(ParseNumberedList, RefusalYieldsError) {
  EXPECT_THROW(parse_numbered_list("I'm sorry, but I can't help with that.", 10), ParseError);
  EXPECT_THROW(parse_numbered_list("   \n ", 10), ParseError);
}

TEST(ParseNumberedList, ChatterAroundListIsIgnored) {
  const auto items = parse_numbered_list(
      "Sure, here you go:\n1. Oh great, rain.\n\n2. Verbal Irony: Love Mondays.\nHope these help!", 10);
  ASSERT_EQ(items.size(), 2u);
  EXPECT_EQ(items[0].text, "Oh great, rain.");
  EXPECT_EQ(items[1].text, "Love Mondays.");
}

TEST(ParseNumberedList, ExtraItemsAreTruncated) {
  ListParseNotes notes;
  const auto items = parse_numbered_list("1. One one\n2. Two two\n3. Three three", 2, &notes);
  ASSERT_EQ(items.size(), 2u);
  EXPECT_EQ(notes.truncated, 1);
}

TEST(ParseNumberedList, UnnumberedFallback) {
  const auto items = parse_numbered_list("First line here\nSecond line here\n", 5);
  ASSERT_EQ(items.size(), 2u);
  EXPECT_EQ(items[1].decode_index, 2);
}

TEST(Assemble, DuplicateKeepsLowestDecodeIndex) {
  std::string text;
  for (int i = 1; i <= 10; ++i) {
    text += std::to_string(i) + ". " + ((i == 2 || i == 7) ? std::string("Oh great.") : "Item number " + std::to_string(i)) + "\n";
  }
  const std::vector<GenerationJob> jobs = {job("grounding-000001", Polarity::positive_construct)};
  const auto assembled = assemble_synthetic_corpus(std::vector{completion("grounding-000001", text)}, index_jobs(jobs), "r");
  int hits = 0;
  for (const auto& sample : assembled.samples) {
    if (sample.text == "Oh great.") {
      ++hits;
      EXPECT_EQ(sample.provenance->decode_index, 2);
      EXPECT_EQ(sample.id, "grounding-000001#02");
    }
  }
  EXPECT_EQ(hits, 1);
  EXPECT_EQ(assembled.samples.size(), 9u);
  EXPECT_EQ(assembled.stats.duplicates_removed, 1u);
}

TEST(Assemble, CaseFoldedDuplicatesAcrossPrompts) {
  const std::vector<GenerationJob> jobs = {job("g-1", Polarity::positive_construct), job("g-2", Polarity::positive_construct)};
  const std::vector<RawCompletion> completions = {completion("g-2", "1. OH GREAT, RAIN."),
                                                  completion("g-1", "1. Oh great, rain.")};
  const auto assembled = assemble_synthetic_corpus(completions, index_jobs(jobs), "r");
  ASSERT_EQ(assembled.samples.size(), 1u);
  EXPECT_EQ(assembled.samples[0].provenance->prompt_id, "g-1");
}

TEST(Assemble, RefusalContributesNothing) {
  const std::vector<GenerationJob> jobs = {job("g-1", Polarity::positive_construct)};
  const auto assembled =
      assemble_synthetic_corpus(std::vector{completion("g-1", "1. something fine", true)}, index_jobs(jobs), "r");
  EXPECT_TRUE(assembled.samples.empty());
  EXPECT_EQ(assembled.stats.refusals, 1u);
}

TEST(Assemble, UnknownPromptIdIsFatal) {
  const std::vector<GenerationJob> jobs = {job("g-1", Polarity::positive_construct)};
  EXPECT_THROW(assemble_synthetic_corpus(std::vector{completion("g-9", "1. text here")}, index_jobs(jobs), "r"),
               StateError);
}

TEST(Assemble, ProvenanceIsFilled) {
  Taxonomy taxonomy{"sarcastic", {{1, "A", "a."}, {2, "B", "b."}, {3, "C", "c."}}};
  GenerationJob tax = job("taxonomy-000001", Polarity::positive_construct, 5);
  tax.spec.strategy = Strategy::taxonomy;
  tax.spec.taxonomy = taxonomy;
  const auto assembled = assemble_synthetic_corpus(
      std::vector{completion("taxonomy-000001", "1. one one\n2. two two\n3. three three\n4. four four\n5. five five")},
      index_jobs(std::vector{tax}), "run-1");
  ASSERT_EQ(assembled.samples.size(), 5u);
  for (const auto& sample : assembled.samples) {
    const auto& p = *sample.provenance;
    EXPECT_EQ(sample.source, Source::synthetic);
    EXPECT_EQ(sample.label, Polarity::positive_construct);
    EXPECT_EQ(p.grounding_example_id, "real-1");
    EXPECT_EQ(p.run_id, "run-1");
    EXPECT_LE(p.decode_index, 5);
    ASSERT_TRUE(p.taxonomy_entry_index);
    EXPECT_EQ(*p.taxonomy_entry_index, (p.decode_index - 1) % 3 + 1);
  }
}

// 200 grounded completions of 10 items each through the mock provider.
TEST(Assemble, GroundedMockRunIsBalancedBeforeDedup) {
  const auto corpus = synthfaith::testing::make_labeled_corpus(125, 30, 8);
  const auto split = split_corpus(corpus, 0.8, 8);
  const auto jobs = plan_generation_jobs(split, {Strategy::grounding});
  ASSERT_EQ(jobs.size(), 200u);
  CompletionClient client(std::make_shared<MockProvider>(42), {}, 0);
  const auto batch = generate_all(jobs, client, {}, 2);
  const auto assembled = assemble_synthetic_corpus(batch.completions, index_jobs(jobs), "r");
  EXPECT_LE(assembled.samples.size(), 2000u);
  EXPECT_EQ(assembled.stats.positive_before_dedup, assembled.stats.negative_before_dedup);
  const auto counts = count_labels(assembled.samples);
  const auto gap = counts.positive > counts.negative ? counts.positive - counts.negative : counts.negative - counts.positive;
  EXPECT_LE(gap, assembled.stats.duplicates_removed);
}
