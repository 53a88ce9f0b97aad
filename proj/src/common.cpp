#include "synthfaith/common.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <sstream>

namespace synthfaith {

std::string_view to_string(Label label) {
  return label == Label::positive_construct ? "positive_construct" : "negative_construct";
}

std::string_view to_string(Source source) { return source == Source::real ? "real" : "synthetic"; }

std::string_view to_string(Strategy strategy) {
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

std::optional<Label> parse_label(std::string_view text) {
  const std::string key = to_lower_ascii(trim(text));
  if (key.empty()) return std::nullopt;
  static constexpr std::array<std::string_view, 7> positive = {
      "positive_construct", "positive", "sarcastic", "1", "true", "yes", "pos"};
  static constexpr std::array<std::string_view, 9> negative = {
      "negative_construct", "negative", "not_sarcastic", "not-sarcastic", "non-sarcastic",
      "0",                  "false",    "no",            "neg"};
  if (std::find(positive.begin(), positive.end(), key) != positive.end()) return Label::positive_construct;
  if (std::find(negative.begin(), negative.end(), key) != negative.end()) return Label::negative_construct;
  throw ParseError("unrecognized label '" + std::string(text) + "'");
}

Source parse_source(std::string_view text) {
  if (text == "real") return Source::real;
  if (text == "synthetic") return Source::synthetic;
  throw ParseError("unrecognized source '" + std::string(text) + "'");
}

Strategy parse_strategy(std::string_view text) {
  if (text == "simple") return Strategy::simple;
  if (text == "grounding") return Strategy::grounding;
  if (text == "grounding_rewrite" || text == "rewrite") return Strategy::grounding_rewrite;
  if (text == "taxonomy") return Strategy::taxonomy;
  throw ParseError("unrecognized strategy '" + std::string(text) + "'");
}

std::string_view trim(std::string_view text) {
  constexpr std::string_view ws = " \t\r\n\f\v";
  const auto first = text.find_first_not_of(ws);
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(ws);
  return text.substr(first, last - first + 1);
}

std::string to_lower_ascii(std::string_view text) {
  std::string out(text);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

std::uint64_t uniform_index(Rng& rng, std::uint64_t bound) {
  if (bound <= 1) return 0;
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = Rng::max() - (Rng::max() % bound);
  std::uint64_t draw = rng();
  while (draw >= limit) draw = rng();
  return draw % bound;
}

double uniform_unit(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t hash = 14695981039346656037ULL;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 1099511628211ULL;
  }
  return hash;
}

std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int length = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &length, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(length * 2);
  for (unsigned int i = 0; i < length; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) throw Error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace synthfaith
