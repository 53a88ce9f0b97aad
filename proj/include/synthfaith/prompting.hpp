#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "synthfaith/common.hpp"
#include "synthfaith/corpus.hpp"

namespace synthfaith {

inline constexpr std::string_view kTemplateVersion = "v1";
inline constexpr int kDefaultGenerations = 10;
inline constexpr int kDefaultSimpleRepetitions = 500;
inline constexpr int kDefaultTaxonomySize = 4;

struct TaxonomyEntry {
  int index = 1;
  std::string name;
  std::string description;

  bool operator==(const TaxonomyEntry&) const = default;
};

/// k named variants of a construct, indexed contiguously from 1.
struct Taxonomy {
  std::string construct_name;
  std::vector<TaxonomyEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool operator==(const Taxonomy&) const = default;
};

struct StrategySpec {
  Strategy strategy = Strategy::simple;
  Polarity polarity = Polarity::positive_construct;
  int n_generations = kDefaultGenerations;
  std::optional<LabeledText> grounding_example;
  std::optional<Taxonomy> taxonomy;
  std::string construct_name = "sarcastic";

  bool operator==(const StrategySpec&) const = default;
};

struct PromptInstance {
  StrategySpec spec;
  std::string rendered_text;
  std::string template_version{kTemplateVersion};
};

/// A planned request: its StrategySpec plus the id its completion will carry.
struct GenerationJob {
  std::string prompt_id;
  StrategySpec spec;
};

/// "sarcastic" for the positive pole, "not-sarcastic" for the negative one.
std::string construct_word(std::string_view construct_name, Polarity polarity);

/// Throws Error when the StrategySpec violates its invariants.
void validate(const StrategySpec& spec);
void validate(const Taxonomy& taxonomy);

/// Replaces every {NAME} placeholder; unknown placeholders are an error.
std::string fill_template(std::string_view tmpl,
                          std::initializer_list<std::pair<std::string_view, std::string_view>> values);

PromptInstance render_prompt(const StrategySpec& spec);
PromptInstance render_taxonomy_elicitation(std::string_view construct_name, int k);
std::string render_zero_shot_prompt(std::string_view text, std::string_view construct_name);

/// Taxonomy entry a given rewrite uses when cycling through the ways in order.
int taxonomy_entry_for_decode(int decode_index, std::size_t taxonomy_size);

/// "1. Name: description" per line.
std::string format_taxonomy(const Taxonomy& taxonomy);
Taxonomy parse_taxonomy(std::string_view raw_llm_output, int k, std::string_view construct_name = "sarcastic");

std::string taxonomy_to_jsonl(const Taxonomy& taxonomy);
Taxonomy taxonomy_from_jsonl(std::string_view contents);

struct PlanOptions {
  Strategy strategy = Strategy::grounding;
  int n_generations = kDefaultGenerations;
  int simple_repetitions = kDefaultSimpleRepetitions;
  std::string construct_name = "sarcastic";
  std::optional<Taxonomy> taxonomy;
};

/// Grounded strategies: one job per (train text, polarity). Simple: one job
/// per (repetition, polarity). Always balanced across the two polarities.
std::vector<GenerationJob> plan_generation_jobs(const CorpusSplit& split, const PlanOptions& options);

}  // namespace synthfaith
