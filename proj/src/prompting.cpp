#include "synthfaith/prompting.hpp"

#include <fmt/format.h>

#include <regex>
#include <unordered_set>

#include "synthfaith/embedded_templates.hpp"
#include "synthfaith/json_io.hpp"

namespace synthfaith {

namespace {

bool is_grounded(Strategy strategy) { return strategy != Strategy::simple; }

std::string_view template_for(Strategy strategy) {
  switch (strategy) {
    case Strategy::simple:
      return templates::k_simple;
    case Strategy::grounding:
      return templates::k_grounding;
    case Strategy::grounding_rewrite:
      return templates::k_grounding_rewrite;
    case Strategy::taxonomy:
      return templates::k_taxonomy;
  }
  throw Error("no template for strategy");
}

}  // namespace

std::string construct_word(std::string_view construct_name, Polarity polarity) {
  if (polarity == Polarity::positive_construct) return std::string(construct_name);
  return "not-" + std::string(construct_name);
}

void validate(const Taxonomy& taxonomy) {
  if (taxonomy.entries.empty()) throw Error("taxonomy has no entries");
  std::unordered_set<std::string> names;
  for (std::size_t i = 0; i < taxonomy.entries.size(); ++i) {
    const auto& entry = taxonomy.entries[i];
    if (entry.index != static_cast<int>(i) + 1) {
      throw Error(fmt::format("taxonomy indices must be contiguous from 1; entry {} has index {}", i + 1, entry.index));
    }
    if (trim(entry.name).empty()) throw Error(fmt::format("taxonomy entry {} has an empty name", entry.index));
    if (!names.insert(to_lower_ascii(entry.name)).second) {
      throw Error("duplicate taxonomy entry name '" + entry.name + "'");
    }
  }
}

void validate(const StrategySpec& spec) {
  if (spec.n_generations < 1) throw Error("n_generations must be positive");
  if (trim(spec.construct_name).empty()) throw Error("construct_name must not be empty");
  if (spec.strategy == Strategy::simple && spec.grounding_example) {
    throw Error("simple strategy does not take a grounding example");
  }
  if (is_grounded(spec.strategy) && !spec.grounding_example) {
    throw Error(fmt::format("strategy '{}' requires a grounding example", to_string(spec.strategy)));
  }
  if (spec.strategy == Strategy::taxonomy) {
    if (!spec.taxonomy) throw Error("taxonomy strategy requires a taxonomy");
    validate(*spec.taxonomy);
  }
}

std::string fill_template(std::string_view tmpl,
                          std::initializer_list<std::pair<std::string_view, std::string_view>> values) {
  std::string out;
  out.reserve(tmpl.size() + 128);
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find('{', pos);
    if (open == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      break;
    }
    out.append(tmpl.substr(pos, open - pos));
    const auto close = tmpl.find('}', open);
    if (close == std::string_view::npos) throw Error("unterminated placeholder in template");
    const auto name = tmpl.substr(open + 1, close - open - 1);
    bool found = false;
    for (const auto& [key, value] : values) {
      if (key == name) {
        out.append(value);
        found = true;
        break;
      }
    }
    if (!found) throw Error("template placeholder {" + std::string(name) + "} has no value");
    pos = close + 1;
  }
  return out;
}

PromptInstance render_prompt(const StrategySpec& spec) {
  validate(spec);
  const std::string construct = construct_word(spec.construct_name, spec.polarity);
  const std::string n = std::to_string(spec.n_generations);
  const std::string example = spec.grounding_example ? spec.grounding_example->text : std::string{};
  const std::string taxonomy = spec.taxonomy ? format_taxonomy(*spec.taxonomy) : std::string{};
  const std::string k = spec.taxonomy ? std::to_string(spec.taxonomy->size()) : std::string{};

  PromptInstance prompt;
  prompt.spec = spec;
  prompt.rendered_text = fill_template(template_for(spec.strategy), {{"CONSTRUCT", construct},
                                                                      {"N", n},
                                                                      {"EXAMPLE", example},
                                                                      {"TAXONOMY", taxonomy},
                                                                      {"K", k}});
  return prompt;
}

PromptInstance render_taxonomy_elicitation(std::string_view construct_name, int k) {
  if (k < 1) throw Error("taxonomy size k must be at least 1");
  PromptInstance prompt;
  prompt.spec.construct_name = std::string(construct_name);
  prompt.spec.n_generations = k;
  const std::string k_text = std::to_string(k);
  prompt.rendered_text =
      fill_template(templates::k_taxonomy_elicitation, {{"K", k_text}, {"CONSTRUCT", construct_name}});
  return prompt;
}

std::string render_zero_shot_prompt(std::string_view text, std::string_view construct_name) {
  std::string prompt = fill_template(templates::k_zero_shot, {{"CONSTRUCT", construct_name}, {"EXAMPLE", text}});
  while (!prompt.empty() && (prompt.back() == '\n' || prompt.back() == ' ')) prompt.pop_back();
  return prompt;
}

int taxonomy_entry_for_decode(int decode_index, std::size_t taxonomy_size) {
  if (taxonomy_size == 0) throw Error("empty taxonomy");
  return static_cast<int>((static_cast<std::size_t>(decode_index - 1) % taxonomy_size) + 1);
}

std::string format_taxonomy(const Taxonomy& taxonomy) {
  std::string out;
  for (const auto& entry : taxonomy.entries) {
    if (!out.empty()) out.push_back('\n');
    out += fmt::format("{}. {}: {}", entry.index, entry.name, entry.description);
  }
  return out;
}

Taxonomy parse_taxonomy(std::string_view raw_llm_output, int k, std::string_view construct_name) {
  if (k < 1) throw Error("taxonomy size k must be at least 1");
  if (trim(raw_llm_output).empty()) throw ParseError("empty taxonomy output");

  // "3. Name: description", "3) Name - ...", optionally with markdown bold around the name.
  static const std::regex numbered(R"(^\s*(\d+)\s*[.)]\s*(.*)$)");
  Taxonomy taxonomy;
  taxonomy.construct_name = std::string(construct_name);
  for_each_line(raw_llm_output, [&](std::string_view line) {
    if (static_cast<int>(taxonomy.entries.size()) >= k) return;
    std::match_results<std::string_view::const_iterator> match;
    if (!std::regex_match(line.begin(), line.end(), match, numbered)) return;
    const std::string body = match[2].str();
    const auto colon = body.find(':');
    if (colon == std::string::npos) return;
    std::string name(trim(std::string_view(body).substr(0, colon)));
    std::string description(trim(std::string_view(body).substr(colon + 1)));
    while (name.size() >= 2 && name.front() == '*' && name.back() == '*') name = name.substr(1, name.size() - 2);
    if (name.starts_with("**")) name.erase(0, 2);
    if (description.starts_with("**")) description.erase(0, 2);
    if (trim(name).empty()) return;
    taxonomy.entries.push_back({std::stoi(match[1].str()), std::string(trim(name)), std::string(trim(description))});
  });

  const int found = static_cast<int>(taxonomy.entries.size());
  if (found < k) throw ParseError(fmt::format("{} of {} entries parsed", found, k));
  for (int i = 0; i < k; ++i) {
    if (taxonomy.entries[static_cast<std::size_t>(i)].index != i + 1) {
      throw ParseError(fmt::format("taxonomy entries are not numbered contiguously from 1 (entry {} is numbered {})",
                                   i + 1, taxonomy.entries[static_cast<std::size_t>(i)].index));
    }
  }
  try {
    validate(taxonomy);
  } catch (const Error& e) {
    throw ParseError(e.what());
  }
  return taxonomy;
}

std::string taxonomy_to_jsonl(const Taxonomy& taxonomy) {
  std::string out;
  for (const auto& entry : taxonomy.entries) {
    nlohmann::ordered_json j;
    j["construct_name"] = taxonomy.construct_name;
    j["index"] = entry.index;
    j["name"] = entry.name;
    j["description"] = entry.description;
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

Taxonomy taxonomy_from_jsonl(std::string_view contents) {
  Taxonomy taxonomy;
  for_each_line(contents, [&](std::string_view line) {
    if (trim(line).empty()) return;
    const auto j = nlohmann::ordered_json::parse(line);
    taxonomy.construct_name = j.at("construct_name").get<std::string>();
    taxonomy.entries.push_back(
        {j.at("index").get<int>(), j.at("name").get<std::string>(), j.at("description").get<std::string>()});
  });
  validate(taxonomy);
  return taxonomy;
}

std::vector<GenerationJob> plan_generation_jobs(const CorpusSplit& split, const PlanOptions& options) {
  if (options.n_generations < 1) throw Error("n_generations must be positive");
  std::vector<GenerationJob> jobs;
  const auto strategy_name = to_string(options.strategy);
  auto add = [&](std::optional<LabeledText> example, Polarity polarity) {
    GenerationJob job;
    job.prompt_id = fmt::format("{}-{:06}", strategy_name, jobs.size() + 1);
    job.spec.strategy = options.strategy;
    job.spec.polarity = polarity;
    job.spec.n_generations = options.n_generations;
    job.spec.grounding_example = std::move(example);
    job.spec.construct_name = options.construct_name;
    if (options.strategy == Strategy::taxonomy) job.spec.taxonomy = options.taxonomy;
    validate(job.spec);
    jobs.push_back(std::move(job));
  };

  if (options.strategy == Strategy::simple) {
    if (options.simple_repetitions < 1) throw Error("simple_repetitions must be positive");
    jobs.reserve(2 * static_cast<std::size_t>(options.simple_repetitions));
    for (int r = 0; r < options.simple_repetitions; ++r) {
      add(std::nullopt, Polarity::positive_construct);
      add(std::nullopt, Polarity::negative_construct);
    }
    return jobs;
  }

  if (split.train_texts.empty()) {
    throw Error(fmt::format("strategy '{}' needs at least one train text to ground on", strategy_name));
  }
  if (options.strategy == Strategy::taxonomy && !options.taxonomy) {
    throw Error("taxonomy strategy requires a taxonomy; run the taxonomy stage first");
  }
  jobs.reserve(2 * split.train_texts.size());
  for (const auto& text : split.train_texts) {
    add(text, Polarity::positive_construct);
    add(text, Polarity::negative_construct);
  }
  return jobs;
}

}  // namespace synthfaith
