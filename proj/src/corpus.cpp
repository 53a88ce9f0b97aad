#include "synthfaith/corpus.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"
#include "synthfaith/json_io.hpp"

namespace synthfaith {

using ordered_json = nlohmann::ordered_json;

namespace {

std::string normalize_text(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  const std::string_view trimmed = trim(raw);
  for (std::size_t i = 0; i < trimmed.size(); ++i) {
    if (trimmed[i] == '\r') {
      if (i + 1 < trimmed.size() && trimmed[i + 1] == '\n') continue;
      out.push_back('\n');
    } else {
      out.push_back(trimmed[i]);
    }
  }
  return out;
}

void assign_missing_ids(Corpus& corpus) {
  std::unordered_set<std::string> taken;
  for (const auto& item : corpus) {
    if (!item.id.empty()) taken.insert(item.id);
  }
  std::size_t next = 1;
  for (auto& item : corpus) {
    if (!item.id.empty()) continue;
    std::string candidate;
    do {
      candidate = fmt::format("real-{:06}", next++);
    } while (taken.contains(candidate));
    taken.insert(candidate);
    item.id = std::move(candidate);
  }
}

// RFC 4180 records. Quoted fields may contain separators, doubled quotes and newlines.
struct CsvRecord {
  std::vector<std::string> fields;
  std::size_t line = 0;
};

std::vector<CsvRecord> parse_csv_records(std::string_view contents) {
  std::vector<CsvRecord> records;
  CsvRecord current;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  std::size_t line = 1;
  current.line = 1;

  auto end_field = [&] {
    current.fields.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    end_field();
    const bool blank = current.fields.size() == 1 && trim(current.fields[0]).empty();
    if (!blank) records.push_back(std::move(current));
    current = CsvRecord{};
    current.line = line;
  };

  for (std::size_t i = 0; i < contents.size(); ++i) {
    const char c = contents[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < contents.size() && contents[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        if (field_started && !trim(field).empty()) {
          throw ParseError(fmt::format("malformed record at line {}: stray quote", line));
        }
        field.clear();
        in_quotes = true;
        field_started = true;
        break;
      case ',':
        end_field();
        break;
      case '\r':
        break;
      case '\n':
        ++line;
        end_record();
        break;
      default:
        field.push_back(c);
        field_started = true;
    }
  }
  if (in_quotes) throw ParseError(fmt::format("malformed record at line {}: unterminated quote", current.line));
  if (field_started || !field.empty() || !current.fields.empty()) end_record();
  return records;
}

}  // namespace

CorpusFormat format_from_extension(const std::filesystem::path& path) {
  const std::string ext = to_lower_ascii(path.extension().string());
  if (ext == ".csv") return CorpusFormat::csv;
  if (ext == ".jsonl" || ext == ".json" || ext == ".ndjson") return CorpusFormat::jsonl;
  throw Error("cannot infer corpus format from " + path.string());
}

Corpus parse_corpus_jsonl(std::string_view contents) {
  Corpus corpus;
  std::size_t line_number = 0;
  for_each_line(contents, [&](std::string_view line) {
    ++line_number;
    if (trim(line).empty()) return;
    ordered_json record;
    try {
      record = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(fmt::format("malformed record at line {}: {}", line_number, e.what()));
    }
    LabeledText item;
    try {
      item = labeled_text_from_json(record);
    } catch (const Error& e) {
      throw ParseError(fmt::format("malformed record at line {}: {}", line_number, e.what()));
    }
    if (trim(item.text).empty()) throw ParseError(fmt::format("empty text at line {}", line_number));
    item.text = normalize_text(item.text);
    corpus.push_back(std::move(item));
  });
  if (corpus.empty()) throw ParseError("empty corpus: no records found");
  assign_missing_ids(corpus);
  validate_corpus(corpus);
  return corpus;
}

Corpus parse_corpus_csv(std::string_view contents) {
  auto records = parse_csv_records(contents);
  if (records.empty()) throw ParseError("empty corpus: no records found");

  const auto& header = records.front().fields;
  auto column = [&](std::initializer_list<std::string_view> names) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < header.size(); ++i) {
      const std::string name = to_lower_ascii(trim(header[i]));
      for (auto candidate : names) {
        if (name == candidate) return i;
      }
    }
    return std::nullopt;
  };
  const auto text_col = column({"text", "tweet"});
  const auto label_col = column({"label", "sarcastic"});
  const auto id_col = column({"id"});
  if (!text_col) throw ParseError("malformed record at line 1: header has no 'text' column");

  Corpus corpus;
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& record = records[r];
    if (record.fields.size() != header.size()) {
      throw ParseError(fmt::format("malformed record at line {}: expected {} fields, found {}", record.line,
                                   header.size(), record.fields.size()));
    }
    LabeledText item;
    if (trim(record.fields[*text_col]).empty()) {
      throw ParseError(fmt::format("empty text at line {}", record.line));
    }
    item.text = normalize_text(record.fields[*text_col]);
    if (label_col) {
      try {
        item.label = parse_label(record.fields[*label_col]);
      } catch (const ParseError& e) {
        throw ParseError(fmt::format("malformed record at line {}: {}", record.line, e.what()));
      }
    }
    if (id_col) item.id = std::string(trim(record.fields[*id_col]));
    corpus.push_back(std::move(item));
  }
  if (corpus.empty()) throw ParseError("empty corpus: header only");
  assign_missing_ids(corpus);
  validate_corpus(corpus);
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format) {
  if (!std::filesystem::exists(path)) throw Error("corpus file not found: " + path.string());
  const std::string contents = read_file(path);
  if (trim(contents).empty()) throw ParseError("empty corpus file: " + path.string());
  return format == CorpusFormat::csv ? parse_corpus_csv(contents) : parse_corpus_jsonl(contents);
}

std::string to_jsonl(std::span<const LabeledText> corpus) {
  std::string out;
  for (const auto& item : corpus) {
    out += to_json(item).dump();
    out.push_back('\n');
  }
  return out;
}

void write_corpus(const std::filesystem::path& path, std::span<const LabeledText> corpus) {
  write_file_atomic(path, to_jsonl(corpus));
}

void validate_corpus(std::span<const LabeledText> corpus) {
  std::unordered_set<std::string_view> ids;
  for (const auto& item : corpus) {
    if (item.id.empty()) throw Error("record without id");
    if (trim(item.text).empty()) throw Error("record '" + item.id + "' has empty text");
    if (item.source == Source::real && item.provenance) {
      throw Error("real record '" + item.id + "' carries generation provenance");
    }
    if (!ids.insert(item.id).second) throw Error("duplicate id '" + item.id + "'");
  }
}

LabelCounts count_labels(std::span<const LabeledText> corpus) {
  LabelCounts counts;
  for (const auto& item : corpus) {
    if (!item.label) {
      ++counts.unlabeled;
    } else if (*item.label == Label::positive_construct) {
      ++counts.positive;
    } else {
      ++counts.negative;
    }
  }
  return counts;
}

CorpusSplit split_corpus(std::span<const LabeledText> corpus, double train_fraction, std::uint64_t seed) {
  if (corpus.empty()) throw Error("cannot split an empty corpus");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(fmt::format("train_fraction must lie in (0,1), got {}", train_fraction));
  }
  const std::size_t n = corpus.size();
  std::size_t n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * train_fraction));
  if (n >= 2) n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  const std::size_t n_test = n - n_train;

  // Groups keyed by label; index 2 holds unlabeled rows.
  std::array<std::vector<std::size_t>, 3> groups;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& label = corpus[i].label;
    groups[!label ? 2 : (*label == Label::positive_construct ? 0 : 1)].push_back(i);
  }
  const bool stratify = !groups[0].empty() && !groups[1].empty();
  if (!stratify) {
    spdlog::warn("split_corpus: corpus has fewer than two label classes; falling back to an unstratified split");
    for (std::size_t g = 0; g < 2; ++g) {
      groups[2].insert(groups[2].end(), groups[g].begin(), groups[g].end());
      groups[g].clear();
    }
    std::sort(groups[2].begin(), groups[2].end());
  }

  // Largest-remainder allocation of the test quota across groups.
  std::array<std::size_t, 3> quota{};
  std::array<double, 3> remainder{};
  std::size_t allocated = 0;
  for (std::size_t g = 0; g < 3; ++g) {
    const double exact = static_cast<double>(n_test) * static_cast<double>(groups[g].size()) / static_cast<double>(n);
    quota[g] = static_cast<std::size_t>(std::floor(exact));
    remainder[g] = exact - static_cast<double>(quota[g]);
    allocated += quota[g];
  }
  while (allocated < n_test) {
    std::size_t best = 3;
    for (std::size_t g = 0; g < 3; ++g) {
      if (quota[g] >= groups[g].size()) continue;
      if (best == 3 || remainder[g] > remainder[best]) best = g;
    }
    ++quota[best];
    remainder[best] = -1.0;
    ++allocated;
  }

  Rng rng(seed);
  std::vector<bool> in_test(n, false);
  for (std::size_t g = 0; g < 3; ++g) {
    auto members = groups[g];
    shuffle(members, rng);
    for (std::size_t k = 0; k < quota[g]; ++k) in_test[members[k]] = true;
  }

  CorpusSplit split;
  split.split_seed = seed;
  split.train_fraction = train_fraction;
  split.stratified = stratify;
  for (std::size_t i = 0; i < n; ++i) {
    LabeledText item = corpus[i];
    if (in_test[i]) {
      split.test.push_back(std::move(item));
    } else {
      item.label.reset();
      split.train_texts.push_back(std::move(item));
    }
  }
  return split;
}

void write_split(const std::filesystem::path& directory, const CorpusSplit& split) {
  write_corpus(directory / "train.jsonl", split.train_texts);
  write_corpus(directory / "test.jsonl", split.test);
  ordered_json meta;
  meta["split_seed"] = split.split_seed;
  meta["train_fraction"] = split.train_fraction;
  meta["stratified"] = split.stratified;
  meta["n_train"] = split.train_texts.size();
  meta["n_test"] = split.test.size();
  write_file_atomic(directory / "split.json", meta.dump(2) + "\n");
}

CorpusSplit read_split(const std::filesystem::path& directory) {
  CorpusSplit split;
  const auto meta = nlohmann::json::parse(read_file(directory / "split.json"));
  split.split_seed = meta.at("split_seed").get<std::uint64_t>();
  split.train_fraction = meta.at("train_fraction").get<double>();
  split.stratified = meta.at("stratified").get<bool>();
  split.train_texts = read_jsonl_corpus(directory / "train.jsonl");
  split.test = read_jsonl_corpus(directory / "test.jsonl");
  return split;
}

Corpus relabel_from(std::span<const LabeledText> unlabeled, std::span<const LabeledText> original) {
  std::unordered_map<std::string_view, const LabeledText*> by_id;
  for (const auto& item : original) by_id.emplace(item.id, &item);
  Corpus out;
  out.reserve(unlabeled.size());
  for (const auto& item : unlabeled) {
    const auto it = by_id.find(item.id);
    if (it == by_id.end() || !it->second->label) {
      throw StateError("cannot restore label for '" + item.id + "'");
    }
    LabeledText restored = item;
    restored.label = it->second->label;
    out.push_back(std::move(restored));
  }
  return out;
}

}  // namespace synthfaith
