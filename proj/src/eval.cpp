#include "aoda/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include "aoda/checkpoint.hpp"
#include "aoda/errors.hpp"
#include "aoda/imaging.hpp"

namespace fs = std::filesystem;

namespace aoda {

LabeledImages LabeledImages::select(const std::vector<int64_t>& indices) const {
  auto idx = torch::tensor(indices, torch::kInt64);
  if (indices.empty()) {
    return {images.slice(0, 0, 0), labels.slice(0, 0, 0)};
  }
  return {images.index_select(0, idx), labels.index_select(0, idx)};
}

// ---------------------------------------------------------------------------
// FID
// ---------------------------------------------------------------------------

GaussianStats gaussian_stats(const Eigen::MatrixXd& samples) {
  if (samples.rows() < 2) throw std::invalid_argument("covariance needs at least two samples");
  GaussianStats s;
  s.mean = samples.colwise().mean().transpose();
  Eigen::MatrixXd centered = samples.rowwise() - s.mean.transpose();
  s.cov = (centered.transpose() * centered) / static_cast<double>(samples.rows() - 1);
  return s;
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b, bool* clamped) {
  if (a.mean.size() != b.mean.size()) throw std::invalid_argument("feature dimensions differ");
  bool did_clamp = false;
  auto clamp_tol = [](const Eigen::VectorXd& ev) { return 1e-10 * std::max(1.0, ev.cwiseAbs().maxCoeff()); };

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(0.5 * (a.cov + a.cov.transpose()));
  Eigen::VectorXd la = ea.eigenvalues();
  if (la.minCoeff() < -clamp_tol(la)) did_clamp = true;
  la = la.cwiseMax(0.0);
  Eigen::MatrixXd sqrt_a = ea.eigenvectors() * la.cwiseSqrt().asDiagonal() * ea.eigenvectors().transpose();

  Eigen::MatrixXd m = sqrt_a * b.cov * sqrt_a;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(m, Eigen::EigenvaluesOnly);
  Eigen::VectorXd lm = em.eigenvalues();
  if (lm.minCoeff() < -clamp_tol(lm)) did_clamp = true;
  const double tr_sqrt = lm.cwiseMax(0.0).cwiseSqrt().sum();

  if (clamped) *clamped = did_clamp;
  if (did_clamp) std::cerr << "warning: FID covariance product not PSD; negative eigenvalues clamped to 0\n";
  const double d = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, d);
}

ClassifierFeatures::ClassifierFeatures(Classifier net) : net_(std::move(net)) { net_->eval(); }

torch::Tensor ClassifierFeatures::extract(const torch::Tensor& images) {
  torch::NoGradGuard no_grad;
  return net_->features(images);
}

TorchScriptFeatures::TorchScriptFeatures(const fs::path& module_path, int input_size)
    : path_(module_path), input_size_(input_size) {
  try {
    module_ = torch::jit::load(module_path.string());
  } catch (const c10::Error& e) {
    throw DataError(module_path, std::string("cannot load TorchScript feature extractor: ") + e.what_without_backtrace());
  }
  module_.eval();
}

torch::Tensor TorchScriptFeatures::extract(const torch::Tensor& images) {
  torch::NoGradGuard no_grad;
  auto x = torch::nn::functional::interpolate(
      images, torch::nn::functional::InterpolateFuncOptions()
                  .size(std::vector<int64_t>{input_size_, input_size_})
                  .mode(torch::kBilinear)
                  .align_corners(false));
  auto out = module_.forward({x}).toTensor();
  return out.reshape({out.size(0), -1});
}

Eigen::MatrixXd extract_features(FeatureExtractor& extractor, const torch::Tensor& images, int64_t batch) {
  std::vector<torch::Tensor> chunks;
  for (int64_t i = 0; i < images.size(0); i += batch) {
    chunks.push_back(extractor.extract(images.slice(0, i, std::min(images.size(0), i + batch))));
  }
  auto feats = torch::cat(chunks, 0).to(torch::kFloat64).contiguous();
  Eigen::MatrixXd m(feats.size(0), feats.size(1));
  auto acc = feats.accessor<double, 2>();
  for (int64_t r = 0; r < feats.size(0); ++r) {
    for (int64_t c = 0; c < feats.size(1); ++c) m(r, c) = acc[r][c];
  }
  return m;
}

double compute_fid(const torch::Tensor& generated, const torch::Tensor& reference, FeatureExtractor& extractor) {
  if (generated.size(0) < 2 || reference.size(0) < 2) {
    throw std::invalid_argument("FID needs at least two images per set");
  }
  if (generated.size(0) < 100 || reference.size(0) < 100) {
    std::cerr << "warning: FID on " << generated.size(0) << " vs " << reference.size(0)
              << " images; small-sample estimates are noisy\n";
  }
  return frechet_distance(gaussian_stats(extract_features(extractor, generated)),
                          gaussian_stats(extract_features(extractor, reference)));
}

// ---------------------------------------------------------------------------
// Judge
// ---------------------------------------------------------------------------

Judge train_judge(const LabeledImages& photos, const ClassVocabulary& vocabulary, const ClassifierSpec& spec,
                  const JudgeOptions& options) {
  if (photos.size() == 0) throw std::invalid_argument("judge training needs photos");
  if (spec.n_classes != vocabulary.size()) throw VocabularyMismatchError("judge spec and vocabulary sizes differ");
  torch::manual_seed(options.seed);
  std::mt19937_64 rng(options.seed);

  std::vector<int64_t> order(static_cast<size_t>(photos.size()));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_hold = static_cast<size_t>(std::floor(options.holdout_fraction * static_cast<double>(order.size())));
  if (n_hold >= order.size()) n_hold = 0;
  std::vector<int64_t> hold(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_hold));
  std::vector<int64_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_hold), order.end());

  torch::AutoGradMode grad_on(true);
  Judge judge{Classifier(spec), vocabulary, 0.0, static_cast<int64_t>(n_hold)};
  torch::optim::Adam opt(judge.net->parameters(), torch::optim::AdamOptions(options.lr));
  std::uniform_int_distribution<size_t> pick(0, train.size() - 1);
  judge.net->train();
  for (int step = 0; step < options.steps; ++step) {
    std::vector<int64_t> batch;
    for (int b = 0; b < options.batch_size; ++b) batch.push_back(train[pick(rng)]);
    auto mb = photos.select(batch);
    opt.zero_grad();
    auto loss = torch::nn::functional::cross_entropy(judge.net(mb.images), mb.labels);
    loss.backward();
    opt.step();
  }
  judge.net->eval();
  if (!hold.empty()) {
    torch::NoGradGuard no_grad;
    auto hb = photos.select(hold);
    auto pred = judge.net(hb.images).argmax(1);
    judge.holdout_accuracy = pred.eq(hb.labels).to(torch::kFloat64).mean().item<double>();
  }
  return judge;
}

void save_judge(const Judge& judge, const fs::path& path) {
  CheckpointBundle b;
  const auto& spec = judge.net->spec();
  b.meta = {{"format", "aoda-judge"},
            {"vocabulary", judge.vocabulary.to_json()},
            {"backbone", to_string(spec.backbone)},
            {"base_width", spec.base_width},
            {"holdout_accuracy", judge.holdout_accuracy},
            {"holdout_size", judge.holdout_size}};
  for (const auto& item : judge.net->named_parameters()) b.tensors["judge/" + item.key()] = item.value().detach().clone();
  write_checkpoint(b, path);
}

Judge load_judge(const fs::path& path) {
  auto b = read_checkpoint(path);
  if (b.meta.value("format", "") != "aoda-judge") throw IntegrityError("not a judge file: " + path.string());
  Judge j;
  j.vocabulary = ClassVocabulary::from_json(b.meta.at("vocabulary"));
  ClassifierSpec spec;
  spec.backbone = parse_backbone(b.meta.at("backbone"));
  spec.base_width = b.meta.at("base_width");
  spec.n_classes = static_cast<int>(j.vocabulary.size());
  j.net = Classifier(spec);
  torch::NoGradGuard no_grad;
  for (auto& item : j.net->named_parameters()) {
    auto it = b.tensors.find("judge/" + item.key());
    if (it == b.tensors.end() || it->second.sizes() != item.value().sizes()) {
      throw IntegrityError("judge parameter '" + item.key() + "' missing or mis-shaped");
    }
    item.value().copy_(it->second);
  }
  j.net->eval();
  j.holdout_accuracy = b.meta.at("holdout_accuracy");
  j.holdout_size = b.meta.at("holdout_size");
  return j;
}

double compute_accuracy(const LabeledImages& generated, Judge& judge, const ClassVocabulary& generator_vocabulary) {
  if (generated.size() == 0) throw std::invalid_argument("accuracy of an empty image set is undefined");
  if (judge.vocabulary.names() != generator_vocabulary.names()) {
    throw VocabularyMismatchError("judge and generator class lists differ");
  }
  torch::NoGradGuard no_grad;
  judge.net->eval();
  int64_t correct = 0;
  for (int64_t i = 0; i < generated.size(); i += 32) {
    const auto end = std::min(generated.size(), i + 32);
    auto pred = judge.net(generated.images.slice(0, i, end)).argmax(1);
    correct += pred.eq(generated.labels.slice(0, i, end)).sum().item<int64_t>();
  }
  return static_cast<double>(correct) / static_cast<double>(generated.size());
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

std::string to_string(Split s) {
  switch (s) {
    case Split::full: return "full";
    case Split::in_domain: return "in";
    case Split::open_domain: return "open";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "full") return Split::full;
  if (s == "in" || s == "in_domain") return Split::in_domain;
  if (s == "open" || s == "open_domain") return Split::open_domain;
  throw ConfigError("unknown split '" + s + "' (expected full, in or open)");
}

namespace {

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

nlohmann::json split_json(const std::optional<SplitMetrics>& m) {
  if (!m) return nullptr;
  return {{"fid", opt_json(m->fid)},
          {"acc", opt_json(m->acc)},
          {"n_generated", m->n_generated},
          {"n_reference", m->n_reference}};
}

std::vector<int64_t> indices_where(const torch::Tensor& labels, const std::function<bool(int64_t)>& keep) {
  std::vector<int64_t> out;
  auto acc = labels.accessor<int64_t, 1>();
  for (int64_t i = 0; i < labels.size(0); ++i) {
    if (keep(acc[i])) out.push_back(i);
  }
  return out;
}

}  // namespace

nlohmann::json MetricsReport::to_json() const {
  return {{"full", split_json(full)},
          {"in_domain", split_json(in_domain)},
          {"open_domain", split_json(open_domain)},
          {"feature_extractor", extractor}};
}

std::string MetricsReport::table() const {
  std::vector<std::pair<std::string, const std::optional<SplitMetrics>*>> cols = {
      {"full", &full}, {"in-domain", &in_domain}, {"open-domain", &open_domain}};
  std::ostringstream os;
  os << std::left << std::setw(10) << "metric";
  for (const auto& [name, m] : cols) {
    if (*m) os << std::right << std::setw(14) << name;
  }
  os << '\n';
  auto row = [&](const std::string& label, auto getter, int precision) {
    os << std::left << std::setw(10) << label;
    for (const auto& [name, m] : cols) {
      if (!*m) continue;
      std::optional<double> v = getter(**m);
      std::ostringstream cell;
      if (v) {
        cell << std::fixed << std::setprecision(precision) << *v;
      } else {
        cell << "n/a";
      }
      os << std::right << std::setw(14) << cell.str();
    }
    os << '\n';
  };
  row("FID", [](const SplitMetrics& m) { return m.fid; }, 2);
  row("Acc(%)", [](const SplitMetrics& m) { return m.acc ? std::optional<double>(*m.acc * 100.0) : std::nullopt; }, 1);
  row("n_gen", [](const SplitMetrics& m) { return std::optional<double>(static_cast<double>(m.n_generated)); }, 0);
  row("n_ref", [](const SplitMetrics& m) { return std::optional<double>(static_cast<double>(m.n_reference)); }, 0);
  return os.str();
}

MetricsReport evaluate_generated(const LabeledImages& generated, const LabeledImages& reference,
                                 const ClassVocabulary& vocabulary, Judge& judge, FeatureExtractor& extractor,
                                 const std::set<Split>& splits) {
  MetricsReport report;
  report.extractor = extractor.name();
  for (Split split : splits) {
    auto keep = [&](int64_t label) {
      if (split == Split::full) return true;
      return vocabulary.is_open(label) == (split == Split::open_domain);
    };
    auto gen = generated.select(indices_where(generated.labels, keep));
    auto ref = reference.select(indices_where(reference.labels, keep));
    SplitMetrics m;
    m.n_generated = gen.size();
    m.n_reference = ref.size();
    if (gen.size() >= 2 && ref.size() >= 2) m.fid = compute_fid(gen.images, ref.images, extractor);
    if (gen.size() > 0) m.acc = compute_accuracy(gen, judge, vocabulary);
    if (split == Split::full) report.full = m;
    if (split == Split::in_domain) report.in_domain = m;
    if (split == Split::open_domain) report.open_domain = m;
  }
  return report;
}

void export_embeddings(FeatureExtractor& extractor, const LabeledImages& photos, const std::vector<std::string>& tags,
                       const fs::path& csv_path) {
  if (static_cast<int64_t>(tags.size()) != photos.size()) throw std::invalid_argument("one tag per image required");
  auto feats = extract_features(extractor, photos.images);
  std::ofstream out(csv_path, std::ios::trunc);
  if (!out) throw DataError(csv_path, "cannot write embedding table");
  for (Eigen::Index c = 0; c < feats.cols(); ++c) out << 'f' << c << ',';
  out << "label,tag\n";
  out << std::setprecision(9);
  auto labels = photos.labels.accessor<int64_t, 1>();
  for (Eigen::Index r = 0; r < feats.rows(); ++r) {
    for (Eigen::Index c = 0; c < feats.cols(); ++c) out << feats(r, c) << ',';
    out << labels[r] << ',' << tags[static_cast<size_t>(r)] << '\n';
  }
  if (!out) throw DataError(csv_path, "failed writing embedding table");
}

std::vector<TestSketch> evaluation_sketches(const DatasetManifest& manifest) {
  std::vector<TestSketch> out;
  for (int64_t c = 0; c < manifest.vocabulary.size(); ++c) {
    const auto& files = manifest.classes[static_cast<size_t>(c)];
    auto paths = files.test_sketches;
    if (paths.empty()) paths = list_image_files(manifest.root / "sketches" / manifest.vocabulary.name(c));
    for (auto& p : paths) out.push_back({std::move(p), c});
  }
  return out;
}

GeneratedSet generate_test_set(Generator& painter, const ClassVocabulary& vocabulary,
                               const std::vector<TestSketch>& sketches, const fs::path& out_dir, int image_size) {
  fs::create_directories(out_dir);
  torch::NoGradGuard no_grad;
  painter->eval();
  GeneratedSet set;
  std::vector<torch::Tensor> images;
  std::vector<int64_t> labels;
  std::vector<int> per_class(static_cast<size_t>(vocabulary.size()), 0);
  nlohmann::json items = nlohmann::json::array();
  for (const auto& sk : sketches) {
    if (sk.label < 0 || sk.label >= vocabulary.size()) {
      throw VocabularyMismatchError("test sketch label " + std::to_string(sk.label) + " not covered by the checkpoint");
    }
    torch::Tensor input;
    try {
      input = preprocess_image(read_image(sk.path), image_size, Domain::sketch).unsqueeze(0);
    } catch (const DataError& e) {
      std::cerr << "warning: skipping " << sk.path << ": " << e.what() << '\n';
      set.skipped.emplace_back(sk.path, e.what());
      continue;
    }
    auto photo = painter(input, torch::tensor({sk.label}, torch::kInt64))[0];
    const auto& name = vocabulary.name(sk.label);
    std::ostringstream file;
    file << name << '_' << std::setw(4) << std::setfill('0') << per_class[static_cast<size_t>(sk.label)]++ << ".png";
    write_png(out_dir / file.str(), tensor_to_image(photo));
    GeneratedItem item{out_dir / file.str(), sk.path, sk.label, name, vocabulary.is_open(sk.label)};
    items.push_back({{"file", file.str()},
                     {"source", sk.path.string()},
                     {"label", sk.label},
                     {"class", name},
                     {"domain", item.open_domain ? "open" : "in"}});
    set.items.push_back(std::move(item));
    images.push_back(photo);
    labels.push_back(sk.label);
  }
  nlohmann::json skipped = nlohmann::json::array();
  for (const auto& [p, why] : set.skipped) skipped.push_back({{"source", p.string()}, {"reason", why}});
  std::ofstream(out_dir / "manifest.json") << nlohmann::json{{"items", items}, {"skipped", skipped}}.dump(2) << '\n';

  if (!images.empty()) {
    set.images = {torch::stack(images), torch::tensor(labels, torch::kInt64)};
  } else {
    set.images = {torch::empty({0, 3, image_size, image_size}), torch::empty({0}, torch::kInt64)};
  }
  return set;
}

LabeledImages load_labeled_photos(const std::vector<std::vector<fs::path>>& per_class, int image_size) {
  std::vector<torch::Tensor> images;
  std::vector<int64_t> labels;
  for (size_t c = 0; c < per_class.size(); ++c) {
    for (const auto& p : per_class[c]) {
      images.push_back(preprocess_image(read_image(p), image_size, Domain::photo));
      labels.push_back(static_cast<int64_t>(c));
    }
  }
  if (images.empty()) return {torch::empty({0, 3, image_size, image_size}), torch::empty({0}, torch::kInt64)};
  return {torch::stack(images), torch::tensor(labels, torch::kInt64)};
}

}  // namespace aoda
