#include "aoda/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "aoda/dataset.hpp"
#include "aoda/errors.hpp"

namespace aoda {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

Strategy parse_strategy(const std::string& s) {
  if (s == "random_mixed") return Strategy::random_mixed;
  if (s == "none") return Strategy::none;
  if (s == "pre_extracted") return Strategy::pre_extracted;
  throw ConfigError("train.strategy: expected random_mixed, none or pre_extracted, got '" + s + "'");
}

LrSchedule parse_schedule(const std::string& s) {
  if (s == "linear") return LrSchedule::linear;
  if (s == "halve") return LrSchedule::halve;
  throw ConfigError("train.lr_schedule: expected linear or halve, got '" + s + "'");
}

}  // namespace

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::random_mixed: return "random_mixed";
    case Strategy::none: return "none";
    case Strategy::pre_extracted: return "pre_extracted";
  }
  return "?";
}

std::string to_string(LrSchedule s) { return s == LrSchedule::linear ? "linear" : "halve"; }

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("train.lr must be positive");
  if (image_size < 8) throw ConfigError("data.image_size must be >= 8");
  if (mix_threshold && !(*mix_threshold >= 0.0 && *mix_threshold <= 1.0)) {
    throw ConfigError("train.mix_threshold must lie in [0,1] or be 'auto'");
  }
  if (pool_capacity < 1) throw ConfigError("train.pool_capacity must be >= 1");
  if (!(pool_swap_prob >= 0.0 && pool_swap_prob <= 1.0)) throw ConfigError("train.pool_swap_prob must lie in [0,1]");
  if (focal_gamma < 0) throw ConfigError("train.focal_gamma must be >= 0");
  if (strategy == Strategy::pre_extracted && pre_extracted_checkpoint.empty()) {
    throw ConfigError("train.strategy=pre_extracted requires train.pre_extracted_checkpoint");
  }
  try {
    weights.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("train.lambda_*: ") + e.what());
  }
}

const std::vector<ConfigKey>& RunConfig::schema() {
  static const std::vector<ConfigKey> keys = {
      {"data.root", "", "dataset root with photos/<class>/ and sketches/<class>/"},
      {"data.classes", "", "comma-separated ordered class list (empty: sorted photos/ subdirectories)"},
      {"data.open_domain", "", "comma-separated classes whose sketches are withheld from training"},
      {"data.image_size", "256", "square training resolution"},
      {"data.flip", "false", "random horizontal flips"},
      {"model.base_width", "64", "generator base channel width"},
      {"model.n_blocks", "9", "residual blocks per generator"},
      {"model.disc_layers", "5", "PatchGAN convolution layers"},
      {"model.disc_width", "64", "discriminator base width"},
      {"model.classifier", "simple_cnn", "classifier backbone: simple_cnn | hrnet_small"},
      {"model.classifier_width", "32", "classifier base width"},
      {"model.embed_dim", "64", "label embedding size for AdaIN conditioning"},
      {"train.epochs", "200", "number of epochs"},
      {"train.batch_size", "1", "minibatch size"},
      {"train.lr", "2e-4", "initial Adam learning rate"},
      {"train.beta1", "0.5", "Adam beta1"},
      {"train.beta2", "0.999", "Adam beta2"},
      {"train.lr_schedule", "linear", "linear (decay to 0 over second half) | halve (x0.5 in second half)"},
      {"train.lambda_s", "1", "weight of the photo-to-sketch adversarial term"},
      {"train.lambda_p", "1", "weight of the sketch-to-photo adversarial term"},
      {"train.lambda_pix", "10", "weight of the pixel consistency term"},
      {"train.lambda_eta", "1", "weight of the generated-photo classification term"},
      {"train.focal_gamma", "2", "focal loss exponent"},
      {"train.mix_threshold", "auto", "substitution threshold t in [0,1]; auto = in-domain share"},
      {"train.pool_capacity", "50", "sketch pool size in minibatches"},
      {"train.pool_swap_prob", "0.5", "probability a full pool returns a stored pair"},
      {"train.strategy", "random_mixed", "random_mixed | none | pre_extracted"},
      {"train.pre_extracted_checkpoint", "", "frozen sketcher checkpoint for strategy=pre_extracted"},
      {"train.seed", "0", "random seed"},
      {"train.steps_per_epoch", "0", "iterations per epoch (0: photos / batch_size)"},
      {"train.sample_every", "500", "write a sample grid every N steps (0: never)"},
      {"train.checkpoint_every", "5", "checkpoint every N epochs (the final epoch is always saved)"},
      {"eval.judge_steps", "500", "training steps for the accuracy judge"},
      {"eval.judge_lr", "1e-3", "judge learning rate"},
      {"eval.feature_extractor", "judge", "FID features: judge | path to a TorchScript module"},
      {"eval.feature_input_size", "299", "input resolution for a TorchScript feature extractor"},
  };
  return keys;
}

RunConfig::RunConfig() {
  for (const auto& k : schema()) values_[k.name] = k.default_value;
}

std::string nearest_config_key(const std::string& key) {
  std::string best;
  size_t best_d = std::string::npos;
  for (const auto& k : RunConfig::schema()) {
    const size_t d = edit_distance(key, k.name);
    if (d < best_d) {
      best_d = d;
      best = k.name;
    }
  }
  return best;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (!values_.count(key)) {
    throw ConfigError("unknown config key '" + key + "' (did you mean '" + nearest_config_key(key) + "'?)");
  }
  values_[key] = value;
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path.string());
  RunConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.find('=') == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    }
    cfg.apply_override(line);
  }
  return cfg;
}

std::string RunConfig::help_text() {
  std::ostringstream os;
  os << "Config keys (set in the --config file or with --set key=value):\n";
  for (const auto& k : schema()) {
    os << "  " << k.name << " = " << (k.default_value.empty() ? "\"\"" : k.default_value) << "\n      " << k.help
       << "\n";
  }
  return os.str();
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

int RunConfig::get_int(const std::string& key) const {
  const auto& s = get(key);
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError(key + ": expected an integer, got '" + s + "'");
  return v;
}

double RunConfig::get_double(const std::string& key) const {
  const auto& s = get(key);
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + s + "'");
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const auto& s = get(key);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(key + ": expected a boolean, got '" + s + "'");
}

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
  std::vector<std::string> out;
  std::stringstream ss(get(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

DataConfig RunConfig::data() const {
  DataConfig d;
  d.root = get("data.root");
  d.classes = get_list("data.classes");
  d.open_domain = get_list("data.open_domain");
  d.image_size = get_int("data.image_size");
  d.flip = get_bool("data.flip");
  return d;
}

ModelConfig RunConfig::model() const {
  ModelConfig m;
  m.base_width = get_int("model.base_width");
  m.n_blocks = get_int("model.n_blocks");
  m.disc_layers = get_int("model.disc_layers");
  m.disc_width = get_int("model.disc_width");
  m.classifier = parse_backbone(get("model.classifier"));
  m.classifier_width = get_int("model.classifier_width");
  m.embed_dim = get_int("model.embed_dim");
  if (m.base_width < 1 || m.n_blocks < 0 || m.disc_layers < 3 || m.disc_width < 1 || m.classifier_width < 1 ||
      m.embed_dim < 1) {
    throw ConfigError("model.*: widths must be positive, n_blocks >= 0, disc_layers >= 3");
  }
  return m;
}

TrainConfig RunConfig::train() const {
  TrainConfig t;
  t.epochs = get_int("train.epochs");
  t.batch_size = get_int("train.batch_size");
  t.lr = get_double("train.lr");
  t.beta1 = get_double("train.beta1");
  t.beta2 = get_double("train.beta2");
  t.lr_schedule = parse_schedule(get("train.lr_schedule"));
  t.image_size = get_int("data.image_size");
  t.weights.lambda_s = get_double("train.lambda_s");
  t.weights.lambda_p = get_double("train.lambda_p");
  t.weights.lambda_pix = get_double("train.lambda_pix");
  t.weights.lambda_eta = get_double("train.lambda_eta");
  t.focal_gamma = get_double("train.focal_gamma");
  if (get("train.mix_threshold") != "auto") t.mix_threshold = get_double("train.mix_threshold");
  t.pool_capacity = get_int("train.pool_capacity");
  t.pool_swap_prob = get_double("train.pool_swap_prob");
  t.strategy = parse_strategy(get("train.strategy"));
  t.pre_extracted_checkpoint = get("train.pre_extracted_checkpoint");
  const int seed = get_int("train.seed");
  if (seed < 0) throw ConfigError("train.seed must be >= 0");
  t.seed = static_cast<uint64_t>(seed);
  t.steps_per_epoch = get_int("train.steps_per_epoch");
  t.sample_every = get_int("train.sample_every");
  t.checkpoint_every = get_int("train.checkpoint_every");
  t.validate();
  return t;
}

EvalConfig RunConfig::eval() const {
  EvalConfig e;
  e.judge_steps = get_int("eval.judge_steps");
  e.judge_lr = get_double("eval.judge_lr");
  e.feature_extractor = get("eval.feature_extractor");
  e.feature_input_size = get_int("eval.feature_input_size");
  return e;
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : values_) j[k] = v;
  return j;
}

nlohmann::json to_json(const ModelConfig& m) {
  return {{"base_width", m.base_width},   {"n_blocks", m.n_blocks},
          {"disc_layers", m.disc_layers}, {"disc_width", m.disc_width},
          {"classifier", to_string(m.classifier)}, {"classifier_width", m.classifier_width},
          {"embed_dim", m.embed_dim}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig m;
  m.base_width = j.at("base_width");
  m.n_blocks = j.at("n_blocks");
  m.disc_layers = j.at("disc_layers");
  m.disc_width = j.at("disc_width");
  m.classifier = parse_backbone(j.at("classifier"));
  m.classifier_width = j.at("classifier_width");
  m.embed_dim = j.at("embed_dim");
  return m;
}

nlohmann::json to_json(const TrainConfig& t) {
  nlohmann::json j = {{"epochs", t.epochs},
                      {"batch_size", t.batch_size},
                      {"lr", t.lr},
                      {"beta1", t.beta1},
                      {"beta2", t.beta2},
                      {"lr_schedule", to_string(t.lr_schedule)},
                      {"image_size", t.image_size},
                      {"lambda_s", t.weights.lambda_s},
                      {"lambda_p", t.weights.lambda_p},
                      {"lambda_pix", t.weights.lambda_pix},
                      {"lambda_eta", t.weights.lambda_eta},
                      {"focal_gamma", t.focal_gamma},
                      {"pool_capacity", t.pool_capacity},
                      {"pool_swap_prob", t.pool_swap_prob},
                      {"strategy", to_string(t.strategy)},
                      {"pre_extracted_checkpoint", t.pre_extracted_checkpoint.string()},
                      {"seed", t.seed},
                      {"steps_per_epoch", t.steps_per_epoch},
                      {"sample_every", t.sample_every},
                      {"checkpoint_every", t.checkpoint_every}};
  j["mix_threshold"] = t.mix_threshold ? nlohmann::json(*t.mix_threshold) : nlohmann::json("auto");
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig t;
  t.epochs = j.at("epochs");
  t.batch_size = j.at("batch_size");
  t.lr = j.at("lr");
  t.beta1 = j.at("beta1");
  t.beta2 = j.at("beta2");
  t.lr_schedule = parse_schedule(j.at("lr_schedule"));
  t.image_size = j.at("image_size");
  t.weights.lambda_s = j.at("lambda_s");
  t.weights.lambda_p = j.at("lambda_p");
  t.weights.lambda_pix = j.at("lambda_pix");
  t.weights.lambda_eta = j.at("lambda_eta");
  t.focal_gamma = j.at("focal_gamma");
  if (j.at("mix_threshold").is_number()) t.mix_threshold = j.at("mix_threshold").get<double>();
  t.pool_capacity = j.at("pool_capacity");
  t.pool_swap_prob = j.at("pool_swap_prob");
  t.strategy = parse_strategy(j.at("strategy"));
  t.pre_extracted_checkpoint = j.at("pre_extracted_checkpoint").get<std::string>();
  t.seed = j.at("seed");
  t.steps_per_epoch = j.at("steps_per_epoch");
  t.sample_every = j.at("sample_every");
  t.checkpoint_every = j.at("checkpoint_every");
  return t;
}

ClassVocabulary make_vocabulary(const DataConfig& data) {
  auto names = data.classes;
  if (names.empty()) {
    if (data.root.empty()) throw ConfigError("data.classes is empty and data.root is not set");
    names = discover_class_names(data.root);
  }
  return ClassVocabulary::from_names(std::move(names), data.open_domain);
}

}  // namespace aoda
