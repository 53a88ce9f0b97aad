#include "synthfaith/filtering.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>

#include "synthfaith/json_io.hpp"

namespace synthfaith {

std::size_t DiscriminatorDataset::count(Origin origin) const {
  return static_cast<std::size_t>(
      std::count_if(items.begin(), items.end(), [&](const auto& item) { return item.origin == origin; }));
}

DiscriminatorDataset build_discriminator_dataset(const CorpusSplit& split, std::span<const LabeledText> synthetic,
                                                 std::uint64_t seed, std::string_view run_id) {
  std::vector<DiscriminatorItem> real;
  for (const auto& item : split.train_texts) real.push_back({item.id, item.text, Origin::real});

  std::vector<DiscriminatorItem> fake;
  for (const auto& item : synthetic) {
    if (!item.provenance) throw Error("synthetic sample '" + item.id + "' has no provenance");
    if (item.provenance->decode_index == 1) fake.push_back({item.id, item.text, Origin::synthetic_first_decode});
  }
  if (real.empty()) throw Error("discriminator dataset: no real train texts");
  if (fake.empty()) throw Error("discriminator dataset: no first-decode synthetic samples");

  Rng rng(seed);
  auto subsample = [&](std::vector<DiscriminatorItem>& items, std::size_t size) {
    if (items.size() <= size) return;
    std::vector<std::size_t> order(items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle(order, rng);
    order.resize(size);
    std::sort(order.begin(), order.end());
    std::vector<DiscriminatorItem> kept;
    kept.reserve(size);
    for (auto i : order) kept.push_back(std::move(items[i]));
    items = std::move(kept);
  };
  const std::size_t size = std::min(real.size(), fake.size());
  subsample(real, size);
  subsample(fake, size);

  DiscriminatorDataset dataset;
  dataset.source_run = std::string(run_id);
  dataset.items = std::move(real);
  dataset.items.insert(dataset.items.end(), std::make_move_iterator(fake.begin()), std::make_move_iterator(fake.end()));
  return dataset;
}

ClassifierModel train_discriminator(const DiscriminatorDataset& dataset, const TrainConfig& config) {
  std::vector<std::string> texts;
  std::vector<int> targets;
  for (const auto& item : dataset.items) {
    texts.push_back(item.text);
    targets.push_back(item.origin == Origin::real ? 1 : 0);
  }
  return train_binary(texts, targets, kDiscriminatorClasses, config);
}

std::string to_jsonl(const DiscriminatorDataset& dataset) {
  std::string out;
  for (const auto& item : dataset.items) {
    nlohmann::ordered_json j;
    j["id"] = item.id;
    j["text"] = item.text;
    j["origin"] = item.origin == Origin::real ? "real" : "synthetic_first_decode";
    j["source_run"] = dataset.source_run;
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

DiscriminatorDataset discriminator_dataset_from_jsonl(std::string_view contents) {
  DiscriminatorDataset dataset;
  for_each_line(contents, [&](std::string_view line) {
    if (trim(line).empty()) return;
    const auto j = nlohmann::ordered_json::parse(line);
    const auto origin = j.at("origin").get<std::string>();
    if (origin != "real" && origin != "synthetic_first_decode") throw ParseError("unknown origin '" + origin + "'");
    dataset.items.push_back({j.at("id").get<std::string>(), j.at("text").get<std::string>(),
                             origin == "real" ? Origin::real : Origin::synthetic_first_decode});
    dataset.source_run = j.value("source_run", std::string{});
  });
  return dataset;
}

nlohmann::ordered_json BelievabilityReport::to_json() const {
  nlohmann::ordered_json j;
  j["dataset_name"] = dataset_name;
  j["n_items"] = n_items;
  j["n_predicted_real"] = n_predicted_real;
  j["fraction_predicted_real"] = fraction_predicted_real;
  j["threshold"] = threshold;
  j["discriminator_digest"] = discriminator_digest;
  j["excluded_overlap"] = excluded_overlap;
  j["circularity_warning"] = circularity_warning;
  return j;
}

BelievabilityReport believability(std::string_view dataset_name, std::span<const LabeledText> dataset,
                                  const TextClassifier& discriminator, const BelievabilityOptions& options) {
  if (discriminator.classes() != kDiscriminatorClasses) {
    throw Error("believability needs a real-vs-synthetic discriminator");
  }
  BelievabilityReport report;
  report.dataset_name = std::string(dataset_name);
  report.threshold = options.threshold;
  report.discriminator_digest = discriminator.digest();
  report.circularity_warning = options.circular;
  for (const auto& item : dataset) {
    if (options.discriminator_training_ids && options.discriminator_training_ids->contains(item.id)) {
      ++report.excluded_overlap;
      continue;
    }
    ++report.n_items;
    if (discriminator.predict_proba(item.text) > options.threshold) ++report.n_predicted_real;
  }
  if (report.excluded_overlap > 0) {
    spdlog::info("believability({}): excluded {} items the discriminator was trained on", dataset_name,
                 report.excluded_overlap);
  }
  if (report.n_items == 0) throw Error(fmt::format("believability({}): empty dataset", dataset_name));
  report.fraction_predicted_real = static_cast<double>(report.n_predicted_real) / static_cast<double>(report.n_items);
  return report;
}

nlohmann::ordered_json SampleScore::to_json() const {
  nlohmann::ordered_json j;
  j["id"] = id;
  j["proba_real"] = proba_real;
  j["kept"] = kept;
  j["threshold"] = threshold;
  j["discriminator_digest"] = discriminator_digest;
  return j;
}

SampleScore SampleScore::from_json(const nlohmann::ordered_json& j) {
  return {j.at("id").get<std::string>(), j.at("proba_real").get<double>(), j.at("kept").get<bool>(),
          j.at("threshold").get<double>(), j.at("discriminator_digest").get<std::string>()};
}

FilterResult apply_cull_threshold(std::span<const LabeledText> dataset, std::span<const SampleScore> scores,
                                  double cull_threshold) {
  if (dataset.empty()) throw Error("cannot filter an empty dataset");
  if (scores.size() != dataset.size()) throw Error("score count does not match dataset");
  FilterResult result;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& item = dataset[i];
    if (scores[i].id != item.id) throw Error("score order does not match dataset at '" + item.id + "'");
    SampleScore score = scores[i];
    score.threshold = cull_threshold;
    score.kept = 1.0 - score.proba_real <= cull_threshold;
    std::string group = "unknown";
    if (item.provenance) {
      group = fmt::format("{}/{}", to_string(item.provenance->strategy), to_string(item.provenance->polarity));
    } else if (item.label) {
      group = fmt::format("real/{}", to_string(*item.label));
    }
    auto& counts = result.per_group[group];
    auto& total = result.per_group["all"];
    if (score.kept) {
      ++counts.kept;
      ++total.kept;
      result.kept.push_back(item);
    } else {
      ++counts.culled;
      ++total.culled;
    }
    result.scores.push_back(std::move(score));
  }
  if (result.kept.empty()) throw Error("filter removed entire dataset");
  return result;
}

FilterResult filter_synthetic(std::span<const LabeledText> dataset, const TextClassifier& discriminator,
                              double cull_threshold) {
  if (discriminator.classes() != kDiscriminatorClasses) {
    throw Error("filtering needs a real-vs-synthetic discriminator");
  }
  const std::string digest = discriminator.digest();
  std::vector<SampleScore> scores;
  scores.reserve(dataset.size());
  for (const auto& item : dataset) {
    scores.push_back({item.id, discriminator.predict_proba(item.text), false, cull_threshold, digest});
  }
  return apply_cull_threshold(dataset, scores, cull_threshold);
}

}  // namespace synthfaith
