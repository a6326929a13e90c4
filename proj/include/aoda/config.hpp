#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aoda/losses.hpp"
#include "aoda/models.hpp"
#include "aoda/vocabulary.hpp"

namespace aoda {

enum class Strategy { random_mixed, none, pre_extracted };
enum class LrSchedule { linear, halve };

std::string to_string(Strategy s);
std::string to_string(LrSchedule s);

struct DataConfig {
  std::filesystem::path root;
  std::vector<std::string> classes;      // empty: discovered from root/photos
  std::vector<std::string> open_domain;
  int image_size = 256;
  bool flip = false;
};

struct TrainConfig {
  int epochs = 200;
  int batch_size = 1;
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  LrSchedule lr_schedule = LrSchedule::linear;
  int image_size = 256;
  LossWeights weights;
  double focal_gamma = 2.0;
  std::optional<double> mix_threshold;  // nullopt: n_in_domain / n_total
  int pool_capacity = 50;
  double pool_swap_prob = 0.5;
  Strategy strategy = Strategy::random_mixed;
  std::filesystem::path pre_extracted_checkpoint;
  uint64_t seed = 0;
  int steps_per_epoch = 0;  // 0: n_photos / batch_size
  int sample_every = 500;
  int checkpoint_every = 5;

  void validate() const;
};

struct EvalConfig {
  int judge_steps = 500;
  double judge_lr = 1e-3;
  std::string feature_extractor = "judge";  // "judge" or a TorchScript module path
  int feature_input_size = 299;
};

struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
};

/// Flat `section.key = value` configuration. Unknown keys are rejected with the closest
/// known key as a suggestion; later assignments win.
class RunConfig {
 public:
  RunConfig();

  static const std::vector<ConfigKey>& schema();
  static RunConfig from_file(const std::filesystem::path& path);
  static std::string help_text();

  void set(const std::string& key, const std::string& value);
  /// Parses `section.key=value`.
  void apply_override(const std::string& assignment);
  const std::string& get(const std::string& key) const;

  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;

  DataConfig data() const;
  ModelConfig model() const;
  TrainConfig train() const;
  EvalConfig eval() const;

  nlohmann::json to_json() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// Closest schema key by edit distance.
std::string nearest_config_key(const std::string& key);

nlohmann::json to_json(const ModelConfig& m);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& t);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Vocabulary from data config; classes are discovered under root/photos when not listed.
ClassVocabulary make_vocabulary(const DataConfig& data);

}  // namespace aoda
