#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "synthfaith/common.hpp"
#include "synthfaith/corpus.hpp"

namespace synthfaith {

struct FeatureConfig {
  bool lowercase = true;
  int ngram_max = 2;  // unigrams up to ngram_max-grams
  int min_doc_freq = 2;
  bool tfidf = true;

  bool operator==(const FeatureConfig&) const = default;
};

/// Defaults: epochs and batch size follow the reference fine-tuning setup,
/// the rest are ordinary choices for a linear model on TF-IDF features.
struct TrainConfig {
  double learning_rate = 2.0;
  int epochs = 20;
  int batch_size = 32;
  double l2_penalty = 1e-4;
  std::uint64_t seed = 13;
  FeatureConfig features;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::ordered_json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::ordered_json& j);

/// Words are runs of letters, digits, apostrophes and non-ASCII bytes; every
/// other non-space character is its own token.
std::vector<std::string> tokenize(std::string_view text, bool lowercase);

/// Unigrams through `ngram_max`-grams, n-gram tokens joined by a space.
std::vector<std::string> extract_terms(std::string_view text, const FeatureConfig& config);

template <typename Scalar>
using SparseRows = Eigen::SparseMatrix<Scalar, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Term vocabulary plus smoothed idf weights, fitted once on training text.
class Vectorizer {
 public:
  Vectorizer() = default;

  static Vectorizer fit(std::span<const std::string> documents, const FeatureConfig& config);

  /// L2-normalized row; unseen terms are ignored and empty input maps to zero.
  Eigen::SparseVector<double> transform(std::string_view text) const;
  SparseRows<double> transform(std::span<const std::string> documents) const;

  std::size_t size() const { return terms_.size(); }
  const std::vector<std::string>& terms() const { return terms_; }
  const std::vector<double>& idf() const { return idf_; }
  const FeatureConfig& config() const { return config_; }
  /// -1 when the term is not in the vocabulary.
  int index_of(std::string_view term) const;

  static Vectorizer from_parts(FeatureConfig config, std::vector<std::string> terms, std::vector<double> idf);

 private:
  FeatureConfig config_;
  std::vector<std::string> terms_;
  std::vector<double> idf_;
  std::map<std::string, int, std::less<>> index_;
};

/// Numerically stable logistic function.
template <typename Scalar>
Scalar sigmoid(Scalar z) {
  if (z >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-z));
  const Scalar e = std::exp(z);
  return e / (Scalar(1) + e);
}

/// log(1 + exp(z)) without overflow.
template <typename Scalar>
Scalar log1p_exp(Scalar z) {
  return z > Scalar(0) ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

/// Mean binary cross-entropy over the rows of `features` plus
/// (l2/2)·|weights|². The bias is not penalized. When gradient outputs are
/// given they receive the analytic gradient.
template <typename Scalar>
Scalar logistic_objective(const SparseRows<Scalar>& features, const Vector<Scalar>& targets,
                          const Vector<Scalar>& weights, Scalar bias, Scalar l2,
                          Vector<Scalar>* grad_weights = nullptr, Scalar* grad_bias = nullptr) {
  const Eigen::Index n = features.rows();
  const Vector<Scalar> scores = (features * weights).array() + bias;
  Scalar loss(0);
  Vector<Scalar> residual(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Scalar z = scores(i);
    // -[y log σ(z) + (1-y) log(1-σ(z))] = log(1+e^z) - y z
    loss += log1p_exp(z) - targets(i) * z;
    residual(i) = sigmoid(z) - targets(i);
  }
  const Scalar inv_n = n > 0 ? Scalar(1) / Scalar(n) : Scalar(0);
  loss = loss * inv_n + Scalar(0.5) * l2 * weights.squaredNorm();
  if (grad_weights) *grad_weights = (features.transpose() * residual) * inv_n + l2 * weights;
  if (grad_bias) *grad_bias = residual.sum() * inv_n;
  return loss;
}

/// Interface shared by the built-in model and external backends.
/// Class index 1 is the "positive" class whose probability predict_proba returns.
class TextClassifier {
 public:
  virtual ~TextClassifier() = default;
  virtual double predict_proba(std::string_view text) const = 0;
  virtual const std::array<std::string, 2>& classes() const = 0;
  virtual std::string digest() const = 0;

  /// Ties at exactly 0.5 go to class 0.
  int predict(std::string_view text) const { return predict_proba(text) > 0.5 ? 1 : 0; }
};

inline const std::array<std::string, 2> kConstructClasses = {"negative_construct", "positive_construct"};

struct TrainingTrace {
  std::vector<double> epoch_objective;  // full-data objective after each accepted epoch
  std::vector<double> epoch_learning_rate;
};

/// TF-IDF features with L2-regularized logistic regression.
class ClassifierModel final : public TextClassifier {
 public:
  ClassifierModel() = default;

  double predict_proba(std::string_view text) const override;
  const std::array<std::string, 2>& classes() const override { return classes_; }
  /// SHA-256 of the serialized model.
  std::string digest() const override;

  double score(const Eigen::SparseVector<double>& features) const;

  const Vectorizer& vectorizer() const { return vectorizer_; }
  const Vector<double>& weights() const { return weights_; }
  double bias() const { return bias_; }
  const TrainConfig& train_config() const { return config_; }
  const std::string& training_data_digest() const { return data_digest_; }

  nlohmann::ordered_json to_json() const;
  static ClassifierModel from_json(const nlohmann::ordered_json& j);
  void save(const std::filesystem::path& path) const;
  static ClassifierModel load(const std::filesystem::path& path);

  friend ClassifierModel train_binary(std::span<const std::string> texts, std::span<const int> targets,
                                      std::array<std::string, 2> classes, const TrainConfig& config,
                                      TrainingTrace* trace);

 private:
  std::array<std::string, 2> classes_ = kConstructClasses;
  Vectorizer vectorizer_;
  Vector<double> weights_;
  double bias_ = 0.0;
  TrainConfig config_;
  std::string data_digest_;
};

inline constexpr int kModelFormatVersion = 1;

/// Mini-batch gradient descent. An epoch that would raise the full-data
/// objective is retried from the previous weights with half the step size,
/// so the objective trace is non-increasing. Requires two samples per class.
ClassifierModel train_binary(std::span<const std::string> texts, std::span<const int> targets,
                             std::array<std::string, 2> classes, const TrainConfig& config,
                             TrainingTrace* trace = nullptr);

/// Construct model: positive_construct is class 1. Every item must be labeled.
ClassifierModel train(std::span<const LabeledText> data, const TrainConfig& config, TrainingTrace* trace = nullptr);

Label predict_label(const TextClassifier& model, std::string_view text);

}  // namespace synthfaith
