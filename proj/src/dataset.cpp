#include "aoda/dataset.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "aoda/errors.hpp"

namespace fs = std::filesystem;

namespace aoda {

namespace {

bool is_image_file(const fs::path& p) {
  static const std::set<std::string> kExt = {".png", ".jpg", ".jpeg", ".bmp"};
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return kExt.count(ext) > 0;
}

std::vector<fs::path> list_images(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && is_image_file(e.path())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

void check_subdirs(const fs::path& tree, const ClassVocabulary& vocab) {
  if (!fs::is_directory(tree)) return;
  for (const auto& e : fs::directory_iterator(tree)) {
    if (!e.is_directory()) continue;
    const auto name = e.path().filename().string();
    if (!vocab.index_of(name)) {
      throw VocabularyMismatchError("class directory '" + name + "' under " + tree.string() +
                                    " is not in the vocabulary");
    }
  }
}

nlohmann::json paths_json(const std::vector<fs::path>& ps) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : ps) arr.push_back(p.string());
  return arr;
}

std::vector<fs::path> paths_from_json(const nlohmann::json& j) {
  std::vector<fs::path> out;
  for (const auto& s : j) out.emplace_back(s.get<std::string>());
  return out;
}

}  // namespace

size_t DatasetManifest::photo_count() const {
  size_t n = 0;
  for (const auto& c : classes) n += c.photos.size();
  return n;
}

size_t DatasetManifest::training_sketch_count() const {
  size_t n = 0;
  for (const auto& c : classes) n += c.sketches.size();
  return n;
}

nlohmann::json DatasetManifest::to_json() const {
  nlohmann::json cls = nlohmann::json::array();
  for (size_t i = 0; i < classes.size(); ++i) {
    const auto& c = classes[i];
    cls.push_back({{"name", vocabulary.name(static_cast<int64_t>(i))},
                   {"open_domain", vocabulary.is_open(static_cast<int64_t>(i))},
                   {"photos", paths_json(c.photos)},
                   {"sketches", paths_json(c.sketches)},
                   {"test_sketches", paths_json(c.test_sketches)},
                   {"excluded_sketches", c.excluded_sketches},
                   {"counts",
                    {{"photos", c.photos.size()},
                     {"sketches", c.sketches.size()},
                     {"test_sketches", c.test_sketches.size()}}}});
  }
  return {{"root", root.string()}, {"vocabulary", vocabulary.to_json()}, {"classes", cls}};
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.root = j.at("root").get<std::string>();
  m.vocabulary = ClassVocabulary::from_json(j.at("vocabulary"));
  for (const auto& c : j.at("classes")) {
    ClassFiles f;
    f.photos = paths_from_json(c.at("photos"));
    f.sketches = paths_from_json(c.at("sketches"));
    f.test_sketches = paths_from_json(c.at("test_sketches"));
    f.excluded_sketches = c.at("excluded_sketches").get<size_t>();
    m.classes.push_back(std::move(f));
  }
  if (static_cast<int64_t>(m.classes.size()) != m.vocabulary.size()) {
    throw IntegrityError("manifest class count does not match its vocabulary");
  }
  return m;
}

std::vector<std::string> discover_class_names(const fs::path& root) {
  std::vector<std::string> names;
  const fs::path photos = root / "photos";
  if (!fs::is_directory(photos)) throw ConfigError("dataset root has no photos/ directory: " + root.string());
  for (const auto& e : fs::directory_iterator(photos)) {
    if (e.is_directory()) names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

std::vector<fs::path> list_image_files(const fs::path& dir) { return list_images(dir); }

DatasetManifest load_dataset_manifest(const fs::path& root, const ClassVocabulary& vocabulary,
                                      ManifestOptions options) {
  if (!fs::is_directory(root)) throw ConfigError("dataset root does not exist: " + root.string());
  check_subdirs(root / "photos", vocabulary);
  check_subdirs(root / "sketches", vocabulary);
  check_subdirs(root / "test_sketches", vocabulary);

  DatasetManifest m;
  m.root = root;
  m.vocabulary = vocabulary;
  m.classes.resize(static_cast<size_t>(vocabulary.size()));
  for (int64_t i = 0; i < vocabulary.size(); ++i) {
    auto& c = m.classes[static_cast<size_t>(i)];
    const auto& name = vocabulary.name(i);
    c.photos = list_images(root / "photos" / name);
    auto sketches = list_images(root / "sketches" / name);
    c.test_sketches = list_images(root / "test_sketches" / name);
    if (vocabulary.is_open(i)) {
      c.excluded_sketches = sketches.size();
    } else {
      c.sketches = std::move(sketches);
    }
    if (options.verify_decode) {
      for (const auto* list : {&c.photos, &c.sketches, &c.test_sketches}) {
        for (const auto& p : *list) read_image(p);
      }
    }
  }
  return m;
}

BatchSampler::BatchSampler(const DatasetManifest& manifest, int image_size, uint64_t seed, bool horizontal_flip)
    : image_size_(image_size), flip_(horizontal_flip), rng_(seed) {
  if (image_size <= 0) throw std::invalid_argument("image size must be positive");
  for (size_t c = 0; c < manifest.classes.size(); ++c) {
    const auto label = static_cast<int64_t>(c);
    for (const auto& p : manifest.classes[c].photos) photos_.push_back({p, label});
    if (manifest.vocabulary.is_open(label)) continue;
    for (const auto& s : manifest.classes[c].sketches) sketches_.push_back({s, label});
  }
  if (photos_.empty()) throw ConfigError("manifest has no training photos");
  if (sketches_.empty()) throw ConfigError("manifest has no in-domain training sketches");
}

torch::Tensor BatchSampler::load(const Item& item, Domain domain) {
  auto it = cache_.find(item.path);
  if (it != cache_.end()) return it->second;
  auto t = preprocess_image(read_image(item.path), image_size_, domain);
  cache_.emplace(item.path, t);
  return t;
}

LabeledImageBatch BatchSampler::draw(const std::vector<Item>& items, int64_t batch_size, Domain domain) {
  std::uniform_int_distribution<size_t> pick(0, items.size() - 1);
  std::bernoulli_distribution coin(0.5);
  std::vector<torch::Tensor> imgs;
  std::vector<int64_t> labels;
  for (int64_t b = 0; b < batch_size; ++b) {
    const auto& item = items[pick(rng_)];
    auto img = load(item, domain);
    if (flip_ && coin(rng_)) img = img.flip({2});
    imgs.push_back(img);
    labels.push_back(item.label);
  }
  return {torch::stack(imgs), torch::tensor(labels, torch::kInt64), domain};
}

std::pair<LabeledImageBatch, LabeledImageBatch> BatchSampler::next(int64_t batch_size) {
  if (batch_size <= 0) throw std::invalid_argument("batch_size must be positive");
  auto photo = draw(photos_, batch_size, Domain::photo);
  auto sketch = draw(sketches_, batch_size, Domain::sketch);
  return {std::move(photo), std::move(sketch)};
}

std::string BatchSampler::rng_state() const {
  std::ostringstream os;
  os << rng_;
  return os.str();
}

void BatchSampler::set_rng_state(const std::string& state) {
  std::istringstream is(state);
  is >> rng_;
  if (!is) throw IntegrityError("invalid sampler rng state");
}

std::pair<LabeledImageBatch, LabeledImageBatch> next_training_batch(BatchSampler& sampler, int64_t batch_size) {
  return sampler.next(batch_size);
}

}  // namespace aoda
