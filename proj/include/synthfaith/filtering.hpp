#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "synthfaith/classifier.hpp"
#include "synthfaith/corpus.hpp"

namespace synthfaith {

enum class Origin { real, synthetic_first_decode };

/// Discriminator class order: predict_proba is the probability of "real".
inline const std::array<std::string, 2> kDiscriminatorClasses = {"synthetic", "real"};

struct DiscriminatorItem {
  std::string id;
  std::string text;
  Origin origin = Origin::real;
};

struct DiscriminatorDataset {
  std::vector<DiscriminatorItem> items;
  std::string source_run;

  std::size_t count(Origin origin) const;
};

/// Real class: the train-split texts. Synthetic class: decode_index == 1
/// samples only. The larger class is subsampled (seeded) to the smaller one's size.
DiscriminatorDataset build_discriminator_dataset(const CorpusSplit& split, std::span<const LabeledText> synthetic,
                                                 std::uint64_t seed, std::string_view run_id = {});

ClassifierModel train_discriminator(const DiscriminatorDataset& dataset, const TrainConfig& config);

std::string to_jsonl(const DiscriminatorDataset& dataset);
DiscriminatorDataset discriminator_dataset_from_jsonl(std::string_view contents);

struct BelievabilityReport {
  std::string dataset_name;
  std::size_t n_items = 0;
  std::size_t n_predicted_real = 0;
  double fraction_predicted_real = 0.0;
  double threshold = 0.5;
  std::string discriminator_digest;
  std::size_t excluded_overlap = 0;  // items dropped because the discriminator trained on them
  bool circularity_warning = false;  // dataset was filtered by this same discriminator

  nlohmann::ordered_json to_json() const;
};

struct BelievabilityOptions {
  double threshold = 0.5;
  const std::unordered_set<std::string>* discriminator_training_ids = nullptr;
  bool circular = false;
};

/// Fraction of items with P(real) strictly above the threshold.
BelievabilityReport believability(std::string_view dataset_name, std::span<const LabeledText> dataset,
                                  const TextClassifier& discriminator, const BelievabilityOptions& options = {});

struct SampleScore {
  std::string id;
  double proba_real = 0.0;
  bool kept = false;
  double threshold = 0.5;
  std::string discriminator_digest;

  nlohmann::ordered_json to_json() const;
  static SampleScore from_json(const nlohmann::ordered_json& j);
};

struct FilterCounts {
  std::size_t kept = 0;
  std::size_t culled = 0;
};

struct FilterResult {
  Corpus kept;
  std::vector<SampleScore> scores;
  std::map<std::string, FilterCounts> per_group;  // "strategy/polarity" keys plus "all"
};

/// Keeps samples with P(synthetic) = 1 - P(real) <= cull_threshold, in input order.
/// Throws Error when nothing survives.
FilterResult filter_synthetic(std::span<const LabeledText> dataset, const TextClassifier& discriminator,
                              double cull_threshold);

/// Re-applies a threshold to persisted scores without rescoring.
FilterResult apply_cull_threshold(std::span<const LabeledText> dataset, std::span<const SampleScore> scores,
                                  double cull_threshold);

}  // namespace synthfaith
