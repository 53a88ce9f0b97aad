#pragma once

#include <filesystem>
#include <functional>
#include <string_view>

#include "json.hpp"
#include "synthfaith/corpus.hpp"

namespace synthfaith {

/// Calls `fn` once per line, without the trailing newline.
void for_each_line(std::string_view contents, const std::function<void(std::string_view)>& fn);

nlohmann::ordered_json to_json(const GenerationProvenance& provenance);
GenerationProvenance provenance_from_json(const nlohmann::ordered_json& j);

/// Keys in fixed order: id, text, label, source, provenance.
nlohmann::ordered_json to_json(const LabeledText& item);
LabeledText labeled_text_from_json(const nlohmann::ordered_json& j);

/// Reads a canonical JSONL corpus written by write_corpus (labels may be absent).
Corpus read_jsonl_corpus(const std::filesystem::path& path);

std::vector<nlohmann::ordered_json> read_jsonl(const std::filesystem::path& path);
std::string to_jsonl(std::span<const nlohmann::ordered_json> rows);

}  // namespace synthfaith
