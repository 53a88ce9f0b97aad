#include "synthfaith/cleaning.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <regex>
#include <unordered_set>

#include "synthfaith/json_io.hpp"

namespace synthfaith {

namespace {

const std::regex& list_marker() {
  // "3." / "3)" followed by whitespace, a markdown bullet, or a stray bold marker.
  static const std::regex marker(R"(^(?:\d+[.)](?:\s+|$)|\*\*(?:\s+|$)|(?:-|\*|•)\s+))");
  return marker;
}

bool strip_list_marker(std::string& text) {
  std::smatch match;
  if (!std::regex_search(text, match, list_marker())) return false;
  text = std::string(trim(std::string_view(text).substr(static_cast<std::size_t>(match.length(0)))));
  return true;
}

bool strip_quotes(std::string& text) {
  static constexpr std::pair<std::string_view, std::string_view> pairs[] = {
      {"\"", "\""}, {"'", "'"}, {"“", "”"}, {"‘", "’"}};
  for (const auto& [open, close] : pairs) {
    if (text.size() >= open.size() + close.size() && text.starts_with(open) && text.ends_with(close)) {
      text = std::string(trim(std::string_view(text).substr(open.size(), text.size() - open.size() - close.size())));
      return true;
    }
  }
  return false;
}

void strip_decorations(std::string& text) {
  while (strip_list_marker(text) || strip_quotes(text)) {
  }
}

}  // namespace

std::string strip_preamble(std::string_view raw_line) {
  std::string text(trim(raw_line));
  strip_decorations(text);
  if (const auto colon = text.find(':'); colon != std::string::npos) {
    text = std::string(trim(std::string_view(text).substr(colon + 1)));
    strip_decorations(text);
  }
  return text;
}

std::vector<ListItem> parse_numbered_list(std::string_view raw_text, int expected_n, ListParseNotes* notes) {
  if (expected_n < 1) throw Error("expected_n must be positive");
  if (trim(raw_text).empty()) throw ParseError("empty completion");
  if (looks_like_refusal(raw_text)) throw ParseError("completion is a refusal");

  static const std::regex numbered(R"(^\s*\d+[.)](?:\s|$))");
  std::vector<std::string> numbered_lines;
  std::vector<std::string> plain_lines;
  for_each_line(raw_text, [&](std::string_view line) {
    if (trim(line).empty()) return;
    const std::string owned(line);
    if (std::regex_search(owned, numbered)) {
      numbered_lines.push_back(owned);
    } else {
      plain_lines.push_back(owned);
    }
  });
  // With a numbered list present, unnumbered lines are chatter around it.
  const auto& candidates = numbered_lines.empty() ? plain_lines : numbered_lines;

  ListParseNotes local;
  local.candidates = static_cast<int>(candidates.size());
  std::vector<ListItem> items;
  const int limit = std::min<int>(expected_n, static_cast<int>(candidates.size()));
  for (int i = 0; i < limit; ++i) {
    std::string text = strip_preamble(candidates[static_cast<std::size_t>(i)]);
    if (text.empty()) {
      ++local.dropped_empty;
      spdlog::debug("dropping list item {}: empty after stripping", i + 1);
      continue;
    }
    items.push_back({i + 1, std::move(text)});
  }
  local.truncated = std::max(0, static_cast<int>(candidates.size()) - expected_n);
  local.shortfall = std::max(0, expected_n - static_cast<int>(items.size()));
  if (local.shortfall > 0) {
    spdlog::debug("parsed {} of {} expected items", items.size(), expected_n);
  }
  if (notes) *notes = local;
  if (items.empty()) throw ParseError(fmt::format("no items parsed from completion (expected {})", expected_n));
  return items;
}

JobIndex index_jobs(std::span<const GenerationJob> jobs) {
  JobIndex index;
  for (const auto& job : jobs) {
    if (!index.emplace(job.prompt_id, job.spec).second) throw StateError("duplicate prompt id " + job.prompt_id);
  }
  return index;
}

AssembledCorpus assemble_synthetic_corpus(std::span<const RawCompletion> completions, const JobIndex& jobs,
                                          std::string_view run_id) {
  AssembledCorpus result;
  auto& stats = result.stats;
  Corpus all;

  for (const auto& completion : completions) {
    const auto spec_it = jobs.find(completion.prompt_id);
    if (spec_it == jobs.end()) {
      throw StateError("completion references unknown prompt id '" + completion.prompt_id + "'");
    }
    const StrategySpec& spec = spec_it->second;
    ++stats.completions;
    if (completion.refusal) {
      ++stats.refusals;
      continue;
    }
    std::vector<ListItem> items;
    ListParseNotes notes;
    try {
      items = parse_numbered_list(completion.raw_text, spec.n_generations, &notes);
    } catch (const ParseError& e) {
      ++stats.parse_errors;
      stats.errors.push_back(completion.prompt_id + ": " + e.what());
      continue;
    }
    stats.dropped_empty += static_cast<std::size_t>(notes.dropped_empty);
    stats.shortfall += static_cast<std::size_t>(notes.shortfall);

    for (auto& item : items) {
      LabeledText sample;
      sample.id = fmt::format("{}#{:02}", completion.prompt_id, item.decode_index);
      sample.text = std::move(item.text);
      sample.label = spec.polarity;
      sample.source = Source::synthetic;
      GenerationProvenance provenance;
      provenance.strategy = spec.strategy;
      provenance.polarity = spec.polarity;
      if (spec.grounding_example) provenance.grounding_example_id = spec.grounding_example->id;
      if (spec.strategy == Strategy::taxonomy && spec.taxonomy) {
        provenance.taxonomy_entry_index = taxonomy_entry_for_decode(item.decode_index, spec.taxonomy->size());
      }
      provenance.decode_index = item.decode_index;
      provenance.prompt_id = completion.prompt_id;
      provenance.run_id = std::string(run_id);
      sample.provenance = std::move(provenance);
      (spec.polarity == Polarity::positive_construct ? stats.positive_before_dedup : stats.negative_before_dedup)++;
      all.push_back(std::move(sample));
    }
  }
  stats.items_before_dedup = all.size();

  auto canonical_less = [](const LabeledText& a, const LabeledText& b) {
    if (a.provenance->prompt_id != b.provenance->prompt_id) return a.provenance->prompt_id < b.provenance->prompt_id;
    return a.provenance->decode_index < b.provenance->decode_index;
  };
  // Lowest decode index wins; ties go to the earliest prompt.
  std::stable_sort(all.begin(), all.end(), [&](const LabeledText& a, const LabeledText& b) {
    if (a.provenance->decode_index != b.provenance->decode_index) {
      return a.provenance->decode_index < b.provenance->decode_index;
    }
    return canonical_less(a, b);
  });
  std::unordered_set<std::string> seen;
  for (auto& sample : all) {
    if (!seen.insert(to_lower_ascii(trim(sample.text))).second) {
      ++stats.duplicates_removed;
      continue;
    }
    result.samples.push_back(std::move(sample));
  }
  std::sort(result.samples.begin(), result.samples.end(), canonical_less);
  return result;
}

}  // namespace synthfaith
