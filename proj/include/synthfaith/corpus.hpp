#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "synthfaith/common.hpp"

namespace synthfaith {

/// Where a synthetic sample came from. decode_index is the 1-based position
/// of the sample in the numbered list the model returned.
struct GenerationProvenance {
  Strategy strategy = Strategy::simple;
  Polarity polarity = Polarity::positive_construct;
  std::optional<std::string> grounding_example_id;
  std::optional<int> taxonomy_entry_index;
  int decode_index = 1;
  std::string prompt_id;
  std::string run_id;

  bool operator==(const GenerationProvenance&) const = default;
};

struct LabeledText {
  std::string id;
  std::string text;
  std::optional<Label> label;
  Source source = Source::real;
  std::optional<GenerationProvenance> provenance;

  bool operator==(const LabeledText&) const = default;
};

using Corpus = std::vector<LabeledText>;

enum class CorpusFormat { csv, jsonl };

/// Train texts have their labels erased; the test half keeps them.
struct CorpusSplit {
  Corpus train_texts;
  Corpus test;
  std::uint64_t split_seed = 0;
  double train_fraction = 0.8;
  bool stratified = true;
};

inline constexpr double kDefaultTrainFraction = 0.8;

/// Throws ParseError naming the offending line for malformed records.
Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format);
Corpus parse_corpus_jsonl(std::string_view contents);
Corpus parse_corpus_csv(std::string_view contents);
CorpusFormat format_from_extension(const std::filesystem::path& path);

/// Canonical JSONL: one record per line, keys in a fixed order.
std::string to_jsonl(std::span<const LabeledText> corpus);
void write_corpus(const std::filesystem::path& path, std::span<const LabeledText> corpus);

/// Checks the LabeledText invariants (non-empty text, unique ids, provenance only on synthetic rows).
void validate_corpus(std::span<const LabeledText> corpus);

/// Deterministic in (corpus, train_fraction, seed). Stratifies by label when
/// both classes are present and falls back to an unstratified split otherwise.
CorpusSplit split_corpus(std::span<const LabeledText> corpus, double train_fraction, std::uint64_t seed);

void write_split(const std::filesystem::path& directory, const CorpusSplit& split);
CorpusSplit read_split(const std::filesystem::path& directory);

/// The train half with its labels restored from the original corpus.
Corpus relabel_from(std::span<const LabeledText> unlabeled, std::span<const LabeledText> original);

struct LabelCounts {
  std::size_t positive = 0;
  std::size_t negative = 0;
  std::size_t unlabeled = 0;
};
LabelCounts count_labels(std::span<const LabeledText> corpus);

}  // namespace synthfaith
