#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "synthfaith/corpus.hpp"
#include "synthfaith/generation.hpp"
#include "synthfaith/prompting.hpp"

namespace synthfaith {

/// Removes list markers and surrounding quotes, then keeps only the text
/// after the first colon ("Sure, here you go: ..." and "Verbal Irony: ...").
std::string strip_preamble(std::string_view raw_line);

struct ListItem {
  int decode_index = 1;
  std::string text;

  bool operator==(const ListItem&) const = default;
};

struct ListParseNotes {
  int candidates = 0;
  int dropped_empty = 0;
  int truncated = 0;
  int shortfall = 0;
};

/// Splits a multi-item response into at most `expected_n` cleaned items with
/// 1-based decode indices. Throws ParseError for refusals and when nothing
/// survives cleaning.
std::vector<ListItem> parse_numbered_list(std::string_view raw_text, int expected_n, ListParseNotes* notes = nullptr);

struct AssemblyStats {
  std::size_t completions = 0;
  std::size_t refusals = 0;
  std::size_t parse_errors = 0;
  std::size_t items_before_dedup = 0;
  std::size_t positive_before_dedup = 0;
  std::size_t negative_before_dedup = 0;
  std::size_t duplicates_removed = 0;
  std::size_t dropped_empty = 0;
  std::size_t shortfall = 0;
  std::vector<std::string> errors;  // "prompt_id: message"
};

struct AssembledCorpus {
  Corpus samples;
  AssemblyStats stats;
};

using JobIndex = std::map<std::string, StrategySpec, std::less<>>;

JobIndex index_jobs(std::span<const GenerationJob> jobs);

/// One LabeledText per cleaned item, labelled with its job's polarity.
/// Case-folded exact duplicates keep the lowest decode index. Output is ordered
/// by (prompt_id, decode_index). Unknown prompt ids raise StateError.
AssembledCorpus assemble_synthetic_corpus(std::span<const RawCompletion> completions, const JobIndex& jobs,
                                          std::string_view run_id);

}  // namespace synthfaith
