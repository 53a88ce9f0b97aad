#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "synthfaith/prompting.hpp"
#include "test_support.hpp"

using namespace synthfaith;

namespace {

LabeledText example(std::string text) { return {"real-000001", std::move(text), std::nullopt, Source::real, std::nullopt}; }

Taxonomy four_ways() {
  return {"sarcastic",
          {{1, "Verbal Irony", "Saying something but meaning the exact opposite."},
           {2, "Hyperbole", "Exaggerating wildly to make a point."},
           {3, "Understatement", "Describing something dramatic as if it were trivial."},
           {4, "Rhetorical Question", "Asking a question whose answer is obvious."}}};
}

std::vector<std::string> words(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

bool contains(const std::string& haystack, std::string_view needle) { return haystack.find(needle) != std::string::npos; }

}  // namespace

TEST(RenderPrompt, SimplePositiveAsksForTenNumbered) {
  const auto prompt = render_prompt({Strategy::simple, Polarity::positive_construct, 10, std::nullopt, std::nullopt});
  EXPECT_TRUE(contains(prompt.rendered_text, "Generate 10 sarcastic texts")) << prompt.rendered_text;
  EXPECT_TRUE(contains(prompt.rendered_text, "numbered list"));
  EXPECT_FALSE(contains(prompt.rendered_text, "not-sarcastic"));
  EXPECT_EQ(prompt.template_version, kTemplateVersion);
}

TEST(RenderPrompt, RewriteNegativeCarriesExampleAndNegation) {
  const std::string text = "Joined a gym today, legs already hurt";
  const auto prompt =
      render_prompt({Strategy::grounding_rewrite, Polarity::negative_construct, 10, example(text), std::nullopt});
  EXPECT_TRUE(contains(prompt.rendered_text, text));
  EXPECT_TRUE(contains(prompt.rendered_text, "not-sarcastic"));
}

TEST(RenderPrompt, TaxonomyEnumeratesEveryWay) {
  const auto prompt = render_prompt(
      {Strategy::taxonomy, Polarity::positive_construct, 4, example("The bus was late again"), four_ways()});
  for (const auto& entry : four_ways().entries) {
    EXPECT_TRUE(contains(prompt.rendered_text, std::to_string(entry.index) + ". " + entry.name + ": ")) << entry.name;
  }
  EXPECT_TRUE(contains(prompt.rendered_text, "rewrite the following text 4 times"));
  EXPECT_TRUE(contains(prompt.rendered_text, "The bus was late again"));
}

TEST(RenderPrompt, SpecInvariantsAreEnforced) {
  EXPECT_THROW(render_prompt({Strategy::grounding, Polarity::positive_construct, 10, std::nullopt, std::nullopt}), Error);
  EXPECT_THROW(render_prompt({Strategy::simple, Polarity::positive_construct, 10, example("x y z"), std::nullopt}), Error);
  EXPECT_THROW(render_prompt({Strategy::taxonomy, Polarity::positive_construct, 10, example("x y z"), std::nullopt}), Error);
  EXPECT_THROW(render_prompt({Strategy::simple, Polarity::positive_construct, 0, std::nullopt, std::nullopt}), Error);
}

TEST(RenderPrompt, EqualSpecsRenderEqualText) {
  const StrategySpec spec{Strategy::grounding, Polarity::positive_construct, 7, example("Coffee is cold again"),
                          std::nullopt};
  EXPECT_EQ(render_prompt(spec).rendered_text, render_prompt(StrategySpec(spec)).rendered_text);
}

// Opposite polarity changes only construct-word tokens.
TEST(RenderPromptProperty, PolarityChangesOnlyConstructWords) {
  const std::vector<std::string> examples = {"Monday again", "Wow the train is late: again", "\"quoted\" text here",
                                             "sarcastic remarks about sarcastic people"};
  for (const auto& construct : {"sarcastic", "hateful"}) {
    for (auto strategy : kAllStrategies) {
      for (const auto& text : examples) {
        StrategySpec spec{strategy, Polarity::positive_construct, 5, std::nullopt, std::nullopt, construct};
        if (strategy != Strategy::simple) spec.grounding_example = example(text);
        if (strategy == Strategy::taxonomy) spec.taxonomy = four_ways();
        StrategySpec flipped = spec;
        flipped.polarity = Polarity::negative_construct;
        const auto a = words(render_prompt(spec).rendered_text);
        const auto b = words(render_prompt(flipped).rendered_text);
        ASSERT_EQ(a.size(), b.size());
        int changed = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
          if (a[i] == b[i]) continue;
          ++changed;
          EXPECT_TRUE(contains(a[i], construct)) << a[i];
          EXPECT_TRUE(contains(b[i], std::string("not-") + construct)) << b[i];
        }
        EXPECT_GE(changed, 1);
      }
    }
  }
}

TEST(TaxonomyElicitation, AsksForKNumberedWays) {
  const auto four = render_taxonomy_elicitation("sarcastic", 4).rendered_text;
  EXPECT_TRUE(contains(four, "List exactly 4 different ways a text can be sarcastic."));
  EXPECT_TRUE(contains(four, "1. Name: one-sentence description"));
  EXPECT_TRUE(contains(render_taxonomy_elicitation("sarcastic", 1).rendered_text, "exactly 1 different"));
  const auto hateful = render_taxonomy_elicitation("hateful", 6).rendered_text;
  EXPECT_TRUE(contains(hateful, "List exactly 6 different ways a text can be hateful."));
  EXPECT_THROW(render_taxonomy_elicitation("sarcastic", 0), Error);
}

TEST(ParseTaxonomy, TwoEntryExample) {
  const auto taxonomy = parse_taxonomy(
      "1. Verbal Irony: Saying something but meaning the exact opposite.\n"
      "2. Hyperbole: Exaggerating to make a point.\n",
      2);
  ASSERT_EQ(taxonomy.size(), 2u);
  EXPECT_EQ(taxonomy.entries[0].name, "Verbal Irony");
  EXPECT_EQ(taxonomy.entries[0].description, "Saying something but meaning the exact opposite.");
  EXPECT_EQ(taxonomy.entries[1].index, 2);
}

TEST(ParseTaxonomy, ChatterAndMarkdownAreTolerated) {
  const auto taxonomy = parse_taxonomy(
      "Sure! Here are 3 ways:\n1) **Deadpan**: Flat delivery.\n2. Mimicry: Mocking repetition.\n3. Caps: ALL CAPS.\nHope "
      "that helps!",
      3);
  EXPECT_EQ(taxonomy.entries[0].name, "Deadpan");
  EXPECT_EQ(taxonomy.entries[2].description, "ALL CAPS.");
}

TEST(ParseTaxonomy, NoNumbersReportsCount) {
  try {
    parse_taxonomy("irony, hyperbole and mimicry", 3);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_TRUE(contains(e.what(), "0 of 3 entries parsed")) << e.what();
  }
}

TEST(ParseTaxonomy, NonContiguousIsRejected) {
  EXPECT_THROW(parse_taxonomy("1. A: a\n2. B: b\n4. D: d\n", 3), ParseError);
}

TEST(ParseTaxonomy, DuplicateNamesAreRejected) {
  EXPECT_THROW(parse_taxonomy("1. Irony: a\n2. irony: b\n", 2), Error);
}

// parse_taxonomy(format_taxonomy(t)) == t for random valid taxonomies.
TEST(ParseTaxonomyProperty, RoundTrip) {
  static constexpr std::string_view vocabulary[] = {"Verbal", "Irony", "Deadpan", "Caps", "Lock", "Hyperbole",
                                                    "Mock",   "Polite", "Dry",    "Fake", "Praise", "Question"};
  Rng rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    const int k = 1 + static_cast<int>(uniform_index(rng, 12));
    Taxonomy taxonomy{"sarcastic", {}};
    for (int i = 1; i <= k; ++i) {
      std::string name = std::string(vocabulary[uniform_index(rng, std::size(vocabulary))]) + " " + std::to_string(i);
      std::string description;
      const int n_words = 1 + static_cast<int>(uniform_index(rng, 8));
      for (int w = 0; w < n_words; ++w) {
        if (w) description += uniform_unit(rng) < 0.1 ? ": " : " ";
        description += to_lower_ascii(vocabulary[uniform_index(rng, std::size(vocabulary))]);
      }
      description += ".";
      taxonomy.entries.push_back({i, name, description});
    }
    ASSERT_EQ(parse_taxonomy(format_taxonomy(taxonomy), k), taxonomy) << format_taxonomy(taxonomy);
    ASSERT_EQ(taxonomy_from_jsonl(taxonomy_to_jsonl(taxonomy)), taxonomy);
  }
}

TEST(TaxonomyDecode, EntriesCycle) {
  EXPECT_EQ(taxonomy_entry_for_decode(1, 4), 1);
  EXPECT_EQ(taxonomy_entry_for_decode(4, 4), 4);
  EXPECT_EQ(taxonomy_entry_for_decode(5, 4), 1);
  EXPECT_EQ(taxonomy_entry_for_decode(10, 4), 2);
}

TEST(PlanJobs, GroundingEmitsTwoPerText) {
  const Corpus corpus = synthfaith::testing::make_labeled_corpus(125, 30, 1);
  const auto split = split_corpus(corpus, 0.8, 1);
  ASSERT_EQ(split.train_texts.size(), 100u);
  const auto jobs = plan_generation_jobs(split, {Strategy::grounding});
  EXPECT_EQ(jobs.size(), 200u);
}

TEST(PlanJobs, SimpleRepetitionsGiveThousandJobsOfTen) {
  CorpusSplit empty;
  PlanOptions options;
  options.strategy = Strategy::simple;
  options.simple_repetitions = 500;
  const auto jobs = plan_generation_jobs(empty, options);
  ASSERT_EQ(jobs.size(), 1000u);
  for (const auto& job : jobs) {
    EXPECT_EQ(job.spec.n_generations, 10);
    EXPECT_FALSE(job.spec.grounding_example);
  }
}

TEST(PlanJobs, GroundedStrategiesNeedTrainTexts) {
  CorpusSplit empty;
  EXPECT_THROW(plan_generation_jobs(empty, {Strategy::grounding_rewrite}), Error);
  EXPECT_THROW(plan_generation_jobs(empty, {Strategy::grounding}), Error);
}

TEST(PlanJobs, TaxonomyNeedsTaxonomy) {
  const auto split = split_corpus(synthfaith::testing::make_labeled_corpus(10, 3, 1), 0.8, 1);
  PlanOptions options;
  options.strategy = Strategy::taxonomy;
  EXPECT_THROW(plan_generation_jobs(split, options), Error);
  options.taxonomy = four_ways();
  EXPECT_EQ(plan_generation_jobs(split, options).size(), 16u);
}

TEST(PlanJobs, PromptIdsAreUniqueAndStable) {
  const auto split = split_corpus(synthfaith::testing::make_labeled_corpus(30, 8, 2), 0.8, 3);
  const auto a = plan_generation_jobs(split, {Strategy::grounding});
  const auto b = plan_generation_jobs(split, {Strategy::grounding});
  std::set<std::string> ids;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].prompt_id, b[i].prompt_id);
    EXPECT_EQ(a[i].spec, b[i].spec);
    ids.insert(a[i].prompt_id);
  }
  EXPECT_EQ(ids.size(), a.size());
}
