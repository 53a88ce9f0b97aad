#include <fmt/format.h>

#include <algorithm>
#include <array>
#include <regex>
#include <sstream>

#include "synthfaith/json_io.hpp"
#include "synthfaith/providers.hpp"

namespace synthfaith {

namespace {

constexpr std::array<std::pair<std::string_view, std::string_view>, 8> kSarcasmForms = {{
    {"Verbal Irony", "Saying something but meaning the exact opposite."},
    {"Sarcastic Mimicry", "Imitating or repeating what someone else said in a mocking way."},
    {"Sarcasm of Ignorance", "Pretending not to understand something obvious."},
    {"Caps Lock Sarcasm", "Using all caps for exaggerated emphasis."},
    {"Hyperbole", "Exaggerating wildly to make a point."},
    {"Understatement", "Describing something dramatic as if it were trivial."},
    {"Rhetorical Question", "Asking a question whose answer is painfully obvious."},
    {"Deadpan", "Delivering an absurd remark with a completely flat tone."},
}};

constexpr std::array<std::string_view, 8> kStockTopics = {
    "mondays", "traffic", "the weather", "my phone battery", "homework", "the gym", "meetings", "coffee"};

constexpr std::array<std::string_view, 8> kPositiveFrames = {
    "Oh great, {} again. Just what I needed.",
    "Wow, I just love {}. Best day ever!",
    "Oh sure, because {} always goes so well.",
    "Wow, {} is totally my favorite thing in the world.",
    "Nothing says fun like {}, right?",
    "I absolutely adore {}. Said no one ever.",
    "Oh wonderful, more {}. How thrilling.",
    "Wow, {} really made my day. Truly amazing.",
};

constexpr std::array<std::string_view, 6> kNegativeFrames = {
    "Spent the afternoon thinking about {}.",
    "Honestly {} was fine today, nothing special.",
    "Looking forward to {} this weekend.",
    "Had a long conversation about {} with a friend.",
    "Just finished dealing with {}.",
    "Not sure how I feel about {} yet.",
};

constexpr std::array<std::string_view, 14> kStopwords = {"the",  "and",  "that", "this", "with", "have", "just",
                                                         "what", "your", "from", "they", "been", "were", "about"};

std::vector<std::string> content_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    if (current.size() >= 4 &&
        std::find(kStopwords.begin(), kStopwords.end(), std::string_view(current)) == kStopwords.end()) {
      words.push_back(current);
    }
    current.clear();
  };
  for (char c : text) {
    if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')) {
      current.push_back(static_cast<char>(c >= 'A' && c <= 'Z' ? c - 'A' + 'a' : c));
    } else {
      flush();
    }
  }
  flush();
  return words;
}

std::string sentence_case_off(std::string_view text) {
  std::string out(trim(text));
  if (!out.empty() && out[0] >= 'A' && out[0] <= 'Z' && (out.size() < 2 || !(out[1] >= 'A' && out[1] <= 'Z'))) {
    out[0] = static_cast<char>(out[0] - 'A' + 'a');
  }
  return out;
}

std::string to_upper_ascii(std::string_view text) {
  std::string out(text);
  for (char& c : out) {
    if (c >= 'a' && c <= 'z') c = static_cast<char>(c - 'a' + 'A');
  }
  return out;
}

constexpr std::array<std::string_view, 6> kPositiveTails = {
    ", love that for me", ", living the dream", " #blessed", ", just perfect", ", truly my favorite", ", so glad"};
constexpr std::array<std::string_view, 6> kNeutralTails = {" today", " again", " lol", " honestly", "!", " tbh"};

// A near copy of the example: one word dropped or a short tail added.
std::string paraphrase(std::string_view example, bool sarcastic, Rng& rng) {
  std::string base(trim(example));
  std::vector<std::string> words;
  std::istringstream in(base);
  for (std::string w; in >> w;) words.push_back(w);
  if (words.size() > 4 && uniform_unit(rng) < 0.5) {
    words.erase(words.begin() + static_cast<std::ptrdiff_t>(1 + uniform_index(rng, words.size() - 1)));
    base.clear();
    for (const auto& w : words) base += (base.empty() ? "" : " ") + w;
  }
  if (sarcastic) return base + std::string(kPositiveTails[uniform_index(rng, kPositiveTails.size())]);
  if (uniform_unit(rng) < 0.5) base += kNeutralTails[uniform_index(rng, kNeutralTails.size())];
  return base;
}

struct GenerationPrompt {
  int n = 10;
  bool negative = false;
  bool rewrite = false;
  std::optional<std::string> example;
  std::vector<std::string> ways;
};

std::optional<GenerationPrompt> parse_generation_prompt(const std::string& prompt) {
  static const std::regex count(R"((?:Generate (\d+) )|(?:text (\d+) times))");
  static const std::regex negated(R"(\bnot-[A-Za-z]+)");
  static const std::regex example(R"(Text: \"(.*)\")");
  static const std::regex way(R"(^(\d+)\. ([^:\n]+):)");
  std::smatch match;
  if (!std::regex_search(prompt, match, count)) return std::nullopt;
  GenerationPrompt parsed;
  parsed.n = std::stoi(match[1].matched ? match[1].str() : match[2].str());
  parsed.rewrite = match[2].matched;
  parsed.negative = std::regex_search(prompt, negated);
  if (std::regex_search(prompt, match, example)) parsed.example = match[1].str();
  std::istringstream lines(prompt);
  for (std::string line; std::getline(lines, line);) {
    if (std::regex_search(line, match, way)) parsed.ways.push_back(match[2].str());
  }
  return parsed;
}

std::string make_item(const GenerationPrompt& p, int index, Rng& rng) {
  std::string topic;
  if (p.example) {
    auto words = content_words(*p.example);
    if (!words.empty()) {
      const auto& first = words[uniform_index(rng, words.size())];
      topic = words.size() > 1 && uniform_unit(rng) < 0.5 ? first + " and " + words[uniform_index(rng, words.size())]
                                                           : first;
    }
  }
  if (topic.empty()) topic = std::string(kStockTopics[uniform_index(rng, kStockTopics.size())]);

  std::string text;
  const bool faithful = p.example && uniform_unit(rng) < (p.rewrite ? 0.4 : 0.35);
  if (faithful) {
    text = paraphrase(*p.example, !p.negative, rng);
  } else if (p.rewrite && p.example) {
    const std::string base = sentence_case_off(*p.example);
    if (p.negative) {
      static constexpr std::array<std::string_view, 4> openers = {"Honestly, ", "So ", "Update: ", "Today "};
      text = std::string(openers[uniform_index(rng, openers.size())]) + base;
    } else {
      static constexpr std::array<std::string_view, 4> openers = {"Oh great, ", "Wow, ", "Oh sure, ",
                                                                  "Oh wonderful, "};
      text = std::string(openers[uniform_index(rng, openers.size())]) + base + " Just perfect.";
    }
  } else if (p.negative) {
    text = fmt::format(fmt::runtime(kNegativeFrames[uniform_index(rng, kNegativeFrames.size())]), topic);
  } else {
    text = fmt::format(fmt::runtime(kPositiveFrames[uniform_index(rng, kPositiveFrames.size())]), topic);
  }
  if (text.size() > 1 && text[0] >= 'a' && text[0] <= 'z') text[0] = static_cast<char>(text[0] - 'a' + 'A');

  if (!p.ways.empty()) {
    const auto& way = p.ways[static_cast<std::size_t>(index - 1) % p.ways.size()];
    if (way == "Caps Lock Sarcasm" && !p.negative) text = to_upper_ascii(text);
    if (uniform_unit(rng) < 0.5) text = way + ": " + text;  // taxonomy-label artifact
  }
  if (uniform_unit(rng) < 0.15) text = "\"" + text + "\"";
  return text;
}

}  // namespace

MockProvider::MockProvider(std::uint64_t seed) : seed_(seed) {}

MockProvider MockProvider::fixed(std::string response) {
  MockProvider mock(0);
  mock.fixture_.push_back(std::move(response));
  return mock;
}

MockProvider MockProvider::from_fixture(std::uint64_t seed, std::vector<std::string> responses) {
  if (responses.empty()) throw Error("mock fixture has no responses");
  MockProvider mock(seed);
  mock.fixture_ = std::move(responses);
  return mock;
}

MockProvider MockProvider::from_fixture_file(std::uint64_t seed, const std::filesystem::path& path) {
  // JSONL with one {"response": "..."} object per line.
  std::vector<std::string> responses;
  for (const auto& row : read_jsonl(path)) responses.push_back(row.at("response").get<std::string>());
  return from_fixture(seed, std::move(responses));
}

ProviderReply MockProvider::send(const ChatRequest& request) {
  ProviderReply reply;
  reply.model_name = model_name();
  if (!fixture_.empty()) {
    reply.text = fixture_[(fnv1a(request.prompt) ^ seed_) % fixture_.size()];
  } else {
    reply.text = generate(request.prompt);
  }
  auto count_words = [](std::string_view s) {
    std::int64_t words = 0;
    bool in_word = false;
    for (char c : s) {
      const bool space = c == ' ' || c == '\n' || c == '\t';
      if (!space && !in_word) ++words;
      in_word = !space;
    }
    return words;
  };
  reply.prompt_tokens = count_words(request.prompt);
  reply.completion_tokens = count_words(reply.text);
  return reply;
}

std::string MockProvider::generate(const std::string& prompt) const {
  Rng rng(seed_ ^ fnv1a(prompt));

  if (prompt.find("Answer yes or no.") != std::string::npos) {
    static const std::regex example(R"(Text: \"(.*)\")");
    std::smatch match;
    const std::string text = std::regex_search(prompt, match, example) ? to_lower_ascii(match[1].str()) : "";
    static constexpr std::array<std::string_view, 12> cues = {
        "oh great", "wow", "love", "totally", "yeah right", "/s", "can't wait", "so much fun", "just what",
        "thanks a lot", "perfect", "best"};
    const bool yes = std::any_of(cues.begin(), cues.end(), [&](auto cue) { return text.find(cue) != std::string::npos; });
    return yes ? "Yes." : "No.";
  }

  static const std::regex elicitation(R"(^List exactly (\d+) different ways a text can be ([^.\n]+)\.)");
  std::smatch match;
  if (std::regex_search(prompt, match, elicitation)) {
    const int k = std::stoi(match[1].str());
    std::string out = fmt::format("Sure! Here are {} ways a text can be {}:\n", k, match[2].str());
    for (int i = 0; i < k; ++i) {
      const auto& [name, description] = kSarcasmForms[static_cast<std::size_t>(i) % kSarcasmForms.size()];
      const auto round = static_cast<std::size_t>(i) / kSarcasmForms.size();
      out += fmt::format("{}. {}{}: {}\n", i + 1, name, round ? fmt::format(" {}", round + 1) : "", description);
    }
    return out;
  }

  const auto parsed = parse_generation_prompt(prompt);
  if (!parsed) return "I'm sorry, I can't help with that request.";

  std::string out;
  const double preamble = uniform_unit(rng);
  if (preamble < 0.3) out += "Sure, here you go:\n";
  for (int i = 1; i <= parsed->n; ++i) {
    std::string item = make_item(*parsed, i, rng);
    if (i == 1 && preamble >= 0.3 && preamble < 0.45) item = "Sure, here you go: " + item;
    out += fmt::format("{}. {}\n", i, item);
  }
  return out;
}

}  // namespace synthfaith
