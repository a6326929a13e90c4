#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "aoda/imaging.hpp"
#include "aoda/vocabulary.hpp"

namespace aoda {

struct LabeledImageBatch {
  torch::Tensor images;  // [B,3,H,W] in [-1,1]
  torch::Tensor labels;  // [B] int64
  Domain domain = Domain::photo;

  int64_t size() const { return labels.defined() ? labels.size(0) : 0; }
};

struct ClassFiles {
  std::vector<std::filesystem::path> photos;
  std::vector<std::filesystem::path> sketches;       // training sketches; empty for open-domain classes
  std::vector<std::filesystem::path> test_sketches;  // optional test_sketches/<class>/ tree
  size_t excluded_sketches = 0;                      // sketches found on disk but masked as open-domain
};

/// File lists per class under the documented layout:
///   root/photos/<class>/*, root/sketches/<class>/*, root/test_sketches/<class>/* (optional).
struct DatasetManifest {
  std::filesystem::path root;
  ClassVocabulary vocabulary;
  std::vector<ClassFiles> classes;  // indexed by class

  size_t photo_count() const;
  size_t training_sketch_count() const;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
};

struct ManifestOptions {
  bool verify_decode = true;
};

/// Scans `root` and applies open-domain masking. Throws ConfigError for a missing root and
/// VocabularyMismatchError when a class directory is not part of the vocabulary.
DatasetManifest load_dataset_manifest(const std::filesystem::path& root, const ClassVocabulary& vocabulary,
                                      ManifestOptions options = {});

/// Sorted image files (png, jpg, jpeg, bmp) directly inside dir; empty if dir is missing.
std::vector<std::filesystem::path> list_image_files(const std::filesystem::path& dir);

/// Sorted class directory names found under root/photos.
std::vector<std::string> discover_class_names(const std::filesystem::path& root);

/// Draws unpaired (photo, sketch) minibatches with replacement. Photos are uniform over all
/// classes' photos; sketches uniform over in-domain training sketches. Decoded images are cached.
class BatchSampler {
 public:
  BatchSampler(const DatasetManifest& manifest, int image_size, uint64_t seed, bool horizontal_flip = false);

  std::pair<LabeledImageBatch, LabeledImageBatch> next(int64_t batch_size);

  std::string rng_state() const;
  void set_rng_state(const std::string& state);

  int image_size() const { return image_size_; }

 private:
  struct Item {
    std::filesystem::path path;
    int64_t label;
  };

  torch::Tensor load(const Item& item, Domain domain);
  LabeledImageBatch draw(const std::vector<Item>& items, int64_t batch_size, Domain domain);

  std::vector<Item> photos_;
  std::vector<Item> sketches_;
  int image_size_;
  bool flip_;
  std::mt19937_64 rng_;
  std::map<std::filesystem::path, torch::Tensor> cache_;
};

/// Free-function form of BatchSampler::next.
std::pair<LabeledImageBatch, LabeledImageBatch> next_training_batch(BatchSampler& sampler, int64_t batch_size);

}  // namespace aoda
