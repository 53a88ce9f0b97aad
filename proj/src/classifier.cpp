#include "synthfaith/classifier.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <numeric>
#include <unordered_map>

namespace synthfaith {

namespace {

bool is_word_byte(unsigned char c) {
  return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '\'' || c == '_' ||
         c >= 0x80;
}

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

constexpr int kMaxBacktracks = 30;

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error("learning_rate must be positive");
  if (epochs < 1) throw Error("epochs must be positive");
  if (batch_size < 1) throw Error("batch_size must be positive");
  if (!(l2_penalty >= 0.0)) throw Error("l2_penalty must be non-negative");
  if (features.ngram_max < 1) throw Error("ngram_max must be at least 1");
  if (features.min_doc_freq < 1) throw Error("min_doc_freq must be at least 1");
}

nlohmann::ordered_json to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["learning_rate"] = c.learning_rate;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["l2_penalty"] = c.l2_penalty;
  j["seed"] = c.seed;
  j["features"] = {{"lowercase", c.features.lowercase},
                   {"ngram_max", c.features.ngram_max},
                   {"min_doc_freq", c.features.min_doc_freq},
                   {"tfidf", c.features.tfidf}};
  return j;
}

TrainConfig train_config_from_json(const nlohmann::ordered_json& j) {
  TrainConfig c;
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.l2_penalty = j.value("l2_penalty", c.l2_penalty);
  c.seed = j.value("seed", c.seed);
  if (j.contains("features")) {
    const auto& f = j["features"];
    c.features.lowercase = f.value("lowercase", c.features.lowercase);
    c.features.ngram_max = f.value("ngram_max", c.features.ngram_max);
    c.features.min_doc_freq = f.value("min_doc_freq", c.features.min_doc_freq);
    c.features.tfidf = f.value("tfidf", c.features.tfidf);
  }
  c.validate();
  return c;
}

std::vector<std::string> tokenize(std::string_view text, bool lowercase) {
  std::vector<std::string> tokens;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) tokens.push_back(lowercase ? to_lower_ascii(word) : word);
    word.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_word_byte(c)) {
      word.push_back(ch);
    } else {
      flush();
      if (!is_space(c)) tokens.emplace_back(1, ch);
    }
  }
  flush();
  return tokens;
}

std::vector<std::string> extract_terms(std::string_view text, const FeatureConfig& config) {
  const auto tokens = tokenize(text, config.lowercase);
  std::vector<std::string> terms = tokens;
  for (int n = 2; n <= config.ngram_max; ++n) {
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= tokens.size(); ++i) {
      std::string gram = tokens[i];
      for (int k = 1; k < n; ++k) {
        gram.push_back(' ');
        gram += tokens[i + static_cast<std::size_t>(k)];
      }
      terms.push_back(std::move(gram));
    }
  }
  return terms;
}

Vectorizer Vectorizer::fit(std::span<const std::string> documents, const FeatureConfig& config) {
  std::map<std::string, int, std::less<>> doc_freq;
  for (const auto& doc : documents) {
    auto terms = extract_terms(doc, config);
    std::sort(terms.begin(), terms.end());
    terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
    for (auto& term : terms) ++doc_freq[std::move(term)];
  }
  std::vector<std::string> terms;
  std::vector<double> idf;
  const double n_docs = static_cast<double>(documents.size());
  for (const auto& [term, df] : doc_freq) {
    if (df < config.min_doc_freq) continue;
    terms.push_back(term);
    idf.push_back(std::log((1.0 + n_docs) / (1.0 + static_cast<double>(df))) + 1.0);
  }
  return from_parts(config, std::move(terms), std::move(idf));
}

Vectorizer Vectorizer::from_parts(FeatureConfig config, std::vector<std::string> terms, std::vector<double> idf) {
  if (terms.size() != idf.size()) throw Error("vocabulary and idf sizes differ");
  Vectorizer v;
  v.config_ = config;
  v.terms_ = std::move(terms);
  v.idf_ = std::move(idf);
  for (std::size_t i = 0; i < v.terms_.size(); ++i) {
    if (!v.index_.emplace(v.terms_[i], static_cast<int>(i)).second) throw Error("duplicate vocabulary term");
  }
  return v;
}

int Vectorizer::index_of(std::string_view term) const {
  const auto it = index_.find(term);
  return it == index_.end() ? -1 : it->second;
}

Eigen::SparseVector<double> Vectorizer::transform(std::string_view text) const {
  std::map<int, double> counts;
  for (const auto& term : extract_terms(text, config_)) {
    if (const int idx = index_of(term); idx >= 0) counts[idx] += 1.0;
  }
  Eigen::SparseVector<double> row(static_cast<Eigen::Index>(terms_.size()));
  if (counts.empty()) return row;
  double norm_sq = 0.0;
  for (auto& [idx, value] : counts) {
    if (config_.tfidf) value *= idf_[static_cast<std::size_t>(idx)];
    norm_sq += value * value;
  }
  const double inv_norm = 1.0 / std::sqrt(norm_sq);
  row.reserve(static_cast<Eigen::Index>(counts.size()));
  for (const auto& [idx, value] : counts) row.insertBack(idx) = value * inv_norm;
  return row;
}

SparseRows<double> Vectorizer::transform(std::span<const std::string> documents) const {
  std::vector<Eigen::Triplet<double>> triplets;
  for (std::size_t r = 0; r < documents.size(); ++r) {
    const auto row = transform(documents[r]);
    for (Eigen::SparseVector<double>::InnerIterator it(row); it; ++it) {
      triplets.emplace_back(static_cast<int>(r), static_cast<int>(it.index()), it.value());
    }
  }
  SparseRows<double> matrix(static_cast<Eigen::Index>(documents.size()), static_cast<Eigen::Index>(terms_.size()));
  matrix.setFromTriplets(triplets.begin(), triplets.end());
  return matrix;
}

double ClassifierModel::score(const Eigen::SparseVector<double>& features) const {
  double z = bias_;
  for (Eigen::SparseVector<double>::InnerIterator it(features); it; ++it) z += it.value() * weights_(it.index());
  return z;
}

double ClassifierModel::predict_proba(std::string_view text) const {
  return sigmoid(score(vectorizer_.transform(text)));
}

nlohmann::ordered_json ClassifierModel::to_json() const {
  nlohmann::ordered_json j;
  j["format"] = "synthfaith-classifier";
  j["version"] = kModelFormatVersion;
  j["classes"] = classes_;
  j["train_config"] = synthfaith::to_json(config_);
  j["training_data_digest"] = data_digest_;
  j["vocabulary"] = vectorizer_.terms();
  j["idf"] = vectorizer_.idf();
  j["weights"] = std::vector<double>(weights_.data(), weights_.data() + weights_.size());
  j["bias"] = bias_;
  return j;
}

ClassifierModel ClassifierModel::from_json(const nlohmann::ordered_json& j) {
  if (j.value("format", std::string{}) != "synthfaith-classifier") throw ParseError("not a classifier artifact");
  const int version = j.at("version").get<int>();
  if (version != kModelFormatVersion) throw ParseError(fmt::format("unsupported classifier version {}", version));
  ClassifierModel model;
  model.classes_ = j.at("classes").get<std::array<std::string, 2>>();
  model.config_ = train_config_from_json(j.at("train_config"));
  model.data_digest_ = j.at("training_data_digest").get<std::string>();
  model.vectorizer_ = Vectorizer::from_parts(model.config_.features, j.at("vocabulary").get<std::vector<std::string>>(),
                                             j.at("idf").get<std::vector<double>>());
  const auto weights = j.at("weights").get<std::vector<double>>();
  if (weights.size() != model.vectorizer_.size()) throw ParseError("weight count does not match vocabulary");
  model.weights_ = Eigen::Map<const Vector<double>>(weights.data(), static_cast<Eigen::Index>(weights.size()));
  model.bias_ = j.at("bias").get<double>();
  return model;
}

std::string ClassifierModel::digest() const { return sha256_hex(to_json().dump()); }

void ClassifierModel::save(const std::filesystem::path& path) const { write_file_atomic(path, to_json().dump() + "\n"); }

ClassifierModel ClassifierModel::load(const std::filesystem::path& path) {
  try {
    return from_json(nlohmann::ordered_json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

ClassifierModel train_binary(std::span<const std::string> texts, std::span<const int> targets,
                             std::array<std::string, 2> classes, const TrainConfig& config, TrainingTrace* trace) {
  config.validate();
  if (texts.size() != targets.size()) throw Error("texts and targets differ in length");
  const auto positives = static_cast<std::size_t>(std::count(targets.begin(), targets.end(), 1));
  const auto negatives = static_cast<std::size_t>(std::count(targets.begin(), targets.end(), 0));
  if (positives + negatives != targets.size()) throw Error("targets must be 0 or 1");
  if (positives < 2 || negatives < 2) {
    throw Error(fmt::format("degenerate training set: need at least 2 samples per class, got {} and {}", negatives,
                            positives));
  }

  ClassifierModel model;
  model.classes_ = std::move(classes);
  model.config_ = config;
  std::string digest_input;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    digest_input += std::to_string(targets[i]);
    digest_input.push_back('\t');
    digest_input += texts[i];
    digest_input.push_back('\n');
  }
  model.data_digest_ = sha256_hex(digest_input);
  model.vectorizer_ = Vectorizer::fit(texts, config.features);

  const SparseRows<double> features = model.vectorizer_.transform(texts);
  Vector<double> y(static_cast<Eigen::Index>(targets.size()));
  for (std::size_t i = 0; i < targets.size(); ++i) y(static_cast<Eigen::Index>(i)) = targets[i];

  const auto n = static_cast<std::size_t>(features.rows());
  Vector<double> weights = Vector<double>::Zero(features.cols());
  double bias = 0.0;
  double objective = logistic_objective<double>(features, y, weights, bias, config.l2_penalty);
  double learning_rate = config.learning_rate;

  Rng rng(config.seed);
  std::vector<std::size_t> order(n);
  const auto batch = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order, rng);

    Vector<double> candidate_w;
    double candidate_b = 0.0;
    double candidate_objective = objective;
    bool accepted = false;
    for (int attempt = 0; attempt <= kMaxBacktracks && !accepted; ++attempt) {
      candidate_w = weights;
      candidate_b = bias;
      Vector<double> step(features.cols());
      for (std::size_t start = 0; start < n; start += batch) {
        const std::size_t end = std::min(n, start + batch);
        const double inv_m = 1.0 / static_cast<double>(end - start);
        step.setZero();
        double bias_step = 0.0;
        for (std::size_t k = start; k < end; ++k) {
          const auto row = static_cast<Eigen::Index>(order[k]);
          double z = candidate_b;
          for (SparseRows<double>::InnerIterator it(features, row); it; ++it) z += it.value() * candidate_w(it.index());
          const double residual = sigmoid(z) - y(row);
          for (SparseRows<double>::InnerIterator it(features, row); it; ++it) step(it.index()) += residual * it.value();
          bias_step += residual;
        }
        candidate_w -= learning_rate * (step * inv_m + config.l2_penalty * candidate_w);
        candidate_b -= learning_rate * bias_step * inv_m;
      }
      candidate_objective = logistic_objective<double>(features, y, candidate_w, candidate_b, config.l2_penalty);
      if (candidate_objective <= objective) {
        accepted = true;
      } else {
        learning_rate *= 0.5;
      }
    }
    if (accepted) {
      weights = std::move(candidate_w);
      bias = candidate_b;
      objective = candidate_objective;
    }
    if (trace) {
      trace->epoch_objective.push_back(objective);
      trace->epoch_learning_rate.push_back(learning_rate);
    }
  }

  model.weights_ = std::move(weights);
  model.bias_ = bias;
  return model;
}

ClassifierModel train(std::span<const LabeledText> data, const TrainConfig& config, TrainingTrace* trace) {
  std::vector<std::string> texts;
  std::vector<int> targets;
  texts.reserve(data.size());
  targets.reserve(data.size());
  for (const auto& item : data) {
    if (!item.label) throw Error("training item '" + item.id + "' has no label");
    texts.push_back(item.text);
    targets.push_back(*item.label == Label::positive_construct ? 1 : 0);
  }
  return train_binary(texts, targets, kConstructClasses, config, trace);
}

Label predict_label(const TextClassifier& model, std::string_view text) {
  return model.predict(text) == 1 ? Label::positive_construct : Label::negative_construct;
}

}  // namespace synthfaith
