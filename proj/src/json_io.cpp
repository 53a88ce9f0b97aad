#include "synthfaith/json_io.hpp"

#include <fmt/format.h>

namespace synthfaith {

using ordered_json = nlohmann::ordered_json;

void for_each_line(std::string_view contents, const std::function<void(std::string_view)>& fn) {
  std::size_t start = 0;
  while (start < contents.size()) {
    auto end = contents.find('\n', start);
    if (end == std::string_view::npos) end = contents.size();
    std::string_view line = contents.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    fn(line);
    start = end + 1;
  }
}

ordered_json to_json(const GenerationProvenance& p) {
  ordered_json j;
  j["strategy"] = to_string(p.strategy);
  j["polarity"] = to_string(p.polarity);
  j["grounding_example_id"] = p.grounding_example_id ? ordered_json(*p.grounding_example_id) : ordered_json(nullptr);
  j["taxonomy_entry_index"] = p.taxonomy_entry_index ? ordered_json(*p.taxonomy_entry_index) : ordered_json(nullptr);
  j["decode_index"] = p.decode_index;
  j["prompt_id"] = p.prompt_id;
  j["run_id"] = p.run_id;
  return j;
}

GenerationProvenance provenance_from_json(const ordered_json& j) {
  GenerationProvenance p;
  p.strategy = parse_strategy(j.at("strategy").get<std::string>());
  const auto polarity = parse_label(j.at("polarity").get<std::string>());
  if (!polarity) throw ParseError("provenance without polarity");
  p.polarity = *polarity;
  if (j.contains("grounding_example_id") && !j["grounding_example_id"].is_null()) {
    p.grounding_example_id = j["grounding_example_id"].get<std::string>();
  }
  if (j.contains("taxonomy_entry_index") && !j["taxonomy_entry_index"].is_null()) {
    p.taxonomy_entry_index = j["taxonomy_entry_index"].get<int>();
  }
  p.decode_index = j.at("decode_index").get<int>();
  p.prompt_id = j.at("prompt_id").get<std::string>();
  p.run_id = j.value("run_id", std::string{});
  return p;
}

ordered_json to_json(const LabeledText& item) {
  ordered_json j;
  j["id"] = item.id;
  j["text"] = item.text;
  j["label"] = item.label ? ordered_json(to_string(*item.label)) : ordered_json(nullptr);
  j["source"] = to_string(item.source);
  if (item.provenance) j["provenance"] = to_json(*item.provenance);
  return j;
}

LabeledText labeled_text_from_json(const ordered_json& j) {
  if (!j.is_object()) throw ParseError("record is not a JSON object");
  if (!j.contains("text") || !j["text"].is_string()) throw ParseError("missing string field 'text'");
  LabeledText item;
  item.text = j["text"].get<std::string>();
  if (j.contains("id") && !j["id"].is_null()) {
    item.id = j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
  }
  if (j.contains("label") && !j["label"].is_null()) {
    const auto& raw = j["label"];
    if (raw.is_string()) {
      item.label = parse_label(raw.get<std::string>());
    } else if (raw.is_boolean()) {
      item.label = raw.get<bool>() ? Label::positive_construct : Label::negative_construct;
    } else if (raw.is_number_integer()) {
      item.label = parse_label(raw.dump());
    } else {
      throw ParseError("unsupported label value " + raw.dump());
    }
  }
  if (j.contains("source")) item.source = parse_source(j["source"].get<std::string>());
  if (j.contains("provenance") && !j["provenance"].is_null()) {
    item.provenance = provenance_from_json(j["provenance"]);
  }
  return item;
}

Corpus read_jsonl_corpus(const std::filesystem::path& path) {
  Corpus corpus;
  std::size_t line_number = 0;
  for_each_line(read_file(path), [&](std::string_view line) {
    ++line_number;
    if (line.empty()) return;
    try {
      corpus.push_back(labeled_text_from_json(ordered_json::parse(line)));
    } catch (const std::exception& e) {
      throw ParseError(fmt::format("{}: malformed record at line {}: {}", path.string(), line_number, e.what()));
    }
  });
  return corpus;
}

std::vector<ordered_json> read_jsonl(const std::filesystem::path& path) {
  std::vector<ordered_json> rows;
  std::size_t line_number = 0;
  for_each_line(read_file(path), [&](std::string_view line) {
    ++line_number;
    if (trim(line).empty()) return;
    try {
      rows.push_back(ordered_json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(fmt::format("{}: malformed record at line {}: {}", path.string(), line_number, e.what()));
    }
  });
  return rows;
}

std::string to_jsonl(std::span<const ordered_json> rows) {
  std::string out;
  for (const auto& row : rows) {
    out += row.dump();
    out.push_back('\n');
  }
  return out;
}

}  // namespace synthfaith
