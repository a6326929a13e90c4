#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>
#include <torch/script.h>
#include <torch/torch.h>

#include "aoda/dataset.hpp"
#include "aoda/models.hpp"
#include "aoda/vocabulary.hpp"

namespace aoda {

struct LabeledImages {
  torch::Tensor images;  // [N,3,H,W] in [-1,1]
  torch::Tensor labels;  // [N]

  int64_t size() const { return labels.defined() ? labels.size(0) : 0; }
  LabeledImages select(const std::vector<int64_t>& indices) const;
};

// ---------------------------------------------------------------------------
// FID
// ---------------------------------------------------------------------------

struct GaussianStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;  // unbiased (N-1) estimate
};

/// Mean and covariance of row-wise samples; needs at least two rows.
GaussianStats gaussian_stats(const Eigen::MatrixXd& samples);

/// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}). The trace term is evaluated as
/// Tr sqrt(A^{1/2} S_b A^{1/2}) with eigenvalues clamped at 0; `clamped` reports whether any
/// clearly negative eigenvalue had to be clamped.
double frechet_distance(const GaussianStats& a, const GaussianStats& b, bool* clamped = nullptr);

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  /// [N,3,H,W] in [-1,1] -> [N,D] features.
  virtual torch::Tensor extract(const torch::Tensor& images) = 0;
  virtual std::string name() const = 0;
};

/// Pooled features of a frozen classifier (the judge by default).
class ClassifierFeatures : public FeatureExtractor {
 public:
  explicit ClassifierFeatures(Classifier net);
  torch::Tensor extract(const torch::Tensor& images) override;
  std::string name() const override { return "classifier"; }

 private:
  Classifier net_;
};

/// A TorchScript image network (e.g. an exported Inception-v3 pool layer). Inputs are
/// bilinearly resized to `input_size` and outputs flattened per image.
class TorchScriptFeatures : public FeatureExtractor {
 public:
  TorchScriptFeatures(const std::filesystem::path& module_path, int input_size);
  torch::Tensor extract(const torch::Tensor& images) override;
  std::string name() const override { return "torchscript:" + path_.string(); }

 private:
  std::filesystem::path path_;
  int input_size_;
  torch::jit::script::Module module_;
};

Eigen::MatrixXd extract_features(FeatureExtractor& extractor, const torch::Tensor& images, int64_t batch = 16);

/// FID between two image sets through `extractor`. Warns below 100 images per set.
double compute_fid(const torch::Tensor& generated, const torch::Tensor& reference, FeatureExtractor& extractor);

// ---------------------------------------------------------------------------
// Accuracy judge
// ---------------------------------------------------------------------------

struct Judge {
  Classifier net{nullptr};
  ClassVocabulary vocabulary;
  double holdout_accuracy = 0.0;
  int64_t holdout_size = 0;
};

struct JudgeOptions {
  int steps = 500;
  double lr = 1e-3;
  int batch_size = 8;
  double holdout_fraction = 0.1;
  uint64_t seed = 0;
};

/// Trains an independent classifier on real photos with cross-entropy (90/10 split by default).
Judge train_judge(const LabeledImages& photos, const ClassVocabulary& vocabulary, const ClassifierSpec& spec,
                  const JudgeOptions& options = {});

void save_judge(const Judge& judge, const std::filesystem::path& path);
Judge load_judge(const std::filesystem::path& path);

/// Fraction of images whose judge argmax equals their conditioning label. Throws
/// std::invalid_argument on an empty set and VocabularyMismatchError when the judge and the
/// generator disagree on the class list.
double compute_accuracy(const LabeledImages& generated, Judge& judge, const ClassVocabulary& generator_vocabulary);

// ---------------------------------------------------------------------------
// Reports and exports
// ---------------------------------------------------------------------------

enum class Split { full, in_domain, open_domain };
std::string to_string(Split s);
Split parse_split(const std::string& s);

struct SplitMetrics {
  std::optional<double> fid;
  std::optional<double> acc;
  int64_t n_generated = 0;
  int64_t n_reference = 0;
};

struct MetricsReport {
  std::optional<SplitMetrics> full;
  std::optional<SplitMetrics> in_domain;
  std::optional<SplitMetrics> open_domain;
  std::string extractor;

  nlohmann::json to_json() const;
  /// Aligned text table with one column per split.
  std::string table() const;
};

/// Per-split FID (generated vs real photos of the split's classes) and judge accuracy.
MetricsReport evaluate_generated(const LabeledImages& generated, const LabeledImages& reference_photos,
                                 const ClassVocabulary& vocabulary, Judge& judge, FeatureExtractor& extractor,
                                 const std::set<Split>& splits);

/// CSV with one row per image: f0..f{D-1}, label, tag.
void export_embeddings(FeatureExtractor& extractor, const LabeledImages& photos, const std::vector<std::string>& tags,
                       const std::filesystem::path& csv_path);

struct TestSketch {
  std::filesystem::path path;
  int64_t label;
};

/// Evaluation inputs per class: test_sketches/<class>/ when present, otherwise every file in
/// sketches/<class>/ (for open-domain classes these were never seen in training).
std::vector<TestSketch> evaluation_sketches(const DatasetManifest& manifest);

struct GeneratedItem {
  std::filesystem::path file;
  std::filesystem::path source;
  int64_t label;
  std::string class_name;
  bool open_domain;
};

struct GeneratedSet {
  std::vector<GeneratedItem> items;
  std::vector<std::pair<std::filesystem::path, std::string>> skipped;
  LabeledImages images;
};

/// One synthesized photo per input sketch, written as <class>_<index>.png under out_dir with a
/// manifest.json recording labels, in-/open-domain membership and skipped inputs.
GeneratedSet generate_test_set(Generator& painter, const ClassVocabulary& vocabulary,
                               const std::vector<TestSketch>& sketches, const std::filesystem::path& out_dir,
                               int image_size);

/// Loads photos (all classes) for reference statistics or judge training.
LabeledImages load_labeled_photos(const std::vector<std::vector<std::filesystem::path>>& per_class, int image_size);

}  // namespace aoda
