#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace synthfaith {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input data (corpus files, LLM output that cannot be parsed).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Run-state or precondition problems (wrong stage order, missing artifacts).
class StateError : public Error {
 public:
  using Error::Error;
};

enum class Label { positive_construct, negative_construct };
using Polarity = Label;

enum class Source { real, synthetic };

enum class Strategy { simple, grounding, grounding_rewrite, taxonomy };

inline constexpr Strategy kAllStrategies[] = {Strategy::simple, Strategy::grounding,
                                              Strategy::grounding_rewrite, Strategy::taxonomy};

std::string_view to_string(Label label);
std::string_view to_string(Source source);
std::string_view to_string(Strategy strategy);

/// Accepts the canonical names and the usual dataset spellings
/// ("sarcastic", "not_sarcastic", "1", "0", "yes", "no", ...).
std::optional<Label> parse_label(std::string_view text);
Source parse_source(std::string_view text);
/// Accepts "rewrite" as an alias for grounding_rewrite.
Strategy parse_strategy(std::string_view text);

constexpr Label opposite(Label label) {
  return label == Label::positive_construct ? Label::negative_construct : Label::positive_construct;
}

std::string_view trim(std::string_view text);
std::string to_lower_ascii(std::string_view text);

// Portable random helpers. std::mt19937_64 has a standardized output sequence,
// the standard distributions do not, so sampling goes through these instead.
using Rng = std::mt19937_64;

/// Uniform integer in [0, bound).
std::uint64_t uniform_index(Rng& rng, std::uint64_t bound);
/// Uniform double in [0, 1) with 53 bits of randomness.
double uniform_unit(Rng& rng);

template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::swap(items[i - 1], items[uniform_index(rng, i)]);
  }
}

/// FNV-1a, used to derive per-item seeds from strings.
std::uint64_t fnv1a(std::string_view text);

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);

std::string read_file(const std::filesystem::path& path);
/// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace synthfaith
