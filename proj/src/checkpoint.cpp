#include "aoda/checkpoint.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

#include "aoda/errors.hpp"

namespace fs = std::filesystem;

namespace aoda {

namespace {

constexpr char kMagic[8] = {'A', 'O', 'D', 'A', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;
constexpr size_t kDigestSize = 32;

std::array<unsigned char, kDigestSize> sha256(const void* data, size_t size) {
  std::array<unsigned char, kDigestSize> out{};
  unsigned int len = 0;
  if (EVP_Digest(data, size, out.data(), &len, EVP_sha256(), nullptr) != 1 || len != kDigestSize) {
    throw std::runtime_error("SHA-256 computation failed");
  }
  return out;
}

std::string hex(const unsigned char* p, size_t n) {
  std::ostringstream os;
  for (size_t i = 0; i < n; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(p[i]);
  return os.str();
}

uint8_t dtype_code(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return 0;
    case torch::kFloat64: return 1;
    case torch::kInt64: return 2;
    case torch::kUInt8: return 3;
    case torch::kInt32: return 4;
    default: throw std::invalid_argument("checkpoint: unsupported tensor dtype");
  }
}

torch::ScalarType dtype_from_code(uint8_t c) {
  switch (c) {
    case 0: return torch::kFloat32;
    case 1: return torch::kFloat64;
    case 2: return torch::kInt64;
    case 3: return torch::kUInt8;
    case 4: return torch::kInt32;
    default: throw IntegrityError("checkpoint: unknown dtype code " + std::to_string(c));
  }
}

// Host byte order is little-endian on every supported platform.
template <typename T>
void put(std::string& buf, T v) {
  buf.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& buf, size_t end) : buf_(buf), end_(end) {}

  template <typename T>
  T get() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string bytes(size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == end_; }

 private:
  void need(size_t n) const {
    if (pos_ + n > end_) throw IntegrityError("checkpoint truncated");
  }
  const std::string& buf_;
  size_t end_;
  size_t pos_ = 0;
};

std::string padded(size_t i) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << i;
  return os.str();
}

struct NamedModule {
  std::string name;
  torch::nn::Module* module;
};

std::vector<NamedModule> modules_of(const Networks& n) {
  return {{"sketcher", n.sketcher.ptr().get()},
          {"painter", n.painter.ptr().get()},
          {"sketch_critic", n.sketch_critic.ptr().get()},
          {"photo_critic", n.photo_critic.ptr().get()},
          {"classifier", n.classifier.ptr().get()}};
}

struct NamedOptimizer {
  std::string name;
  torch::optim::Adam* opt;
};

std::vector<NamedOptimizer> optimizers_of(const TrainingState& s) {
  return {{"generator", s.generator_opt.get()},
          {"sketch_critic", s.sketch_critic_opt.get()},
          {"photo_critic", s.photo_critic_opt.get()},
          {"classifier", s.classifier_opt.get()}};
}

std::vector<torch::Tensor> optimizer_params(torch::optim::Adam& opt) {
  std::vector<torch::Tensor> out;
  for (auto& g : opt.param_groups()) {
    for (auto& p : g.params()) out.push_back(p);
  }
  return out;
}

void add_module_tensors(CheckpointBundle& b, const std::string& name, const torch::nn::Module& m) {
  for (const auto& item : m.named_parameters()) {
    b.tensors["net/" + name + "/param/" + item.key()] = item.value().detach().clone();
  }
  for (const auto& item : m.named_buffers()) {
    b.tensors["net/" + name + "/buffer/" + item.key()] = item.value().detach().clone();
  }
}

const torch::Tensor& require_tensor(const CheckpointBundle& b, const std::string& key,
                                    torch::IntArrayRef expected_shape) {
  auto it = b.tensors.find(key);
  if (it == b.tensors.end()) throw IntegrityError("checkpoint is missing tensor '" + key + "'");
  if (it->second.sizes() != expected_shape) {
    std::ostringstream os;
    os << "checkpoint tensor '" << key << "' has shape " << it->second.sizes() << ", expected " << expected_shape;
    throw IntegrityError(os.str());
  }
  return it->second;
}

void restore_module(const CheckpointBundle& b, const std::string& name, torch::nn::Module& m) {
  torch::NoGradGuard no_grad;
  for (auto& item : m.named_parameters()) {
    item.value().copy_(require_tensor(b, "net/" + name + "/param/" + item.key(), item.value().sizes()));
  }
  for (auto& item : m.named_buffers()) {
    item.value().copy_(require_tensor(b, "net/" + name + "/buffer/" + item.key(), item.value().sizes()));
  }
}

void check_vocabulary_size(const CheckpointBundle& b, int64_t expected) {
  const auto actual = b.vocabulary().size();
  if (actual != expected) {
    throw IntegrityError("vocabulary.size mismatch: checkpoint has " + std::to_string(actual) +
                         " classes, expected " + std::to_string(expected));
  }
}

}  // namespace

std::string sha256_hex(const std::string& data) {
  auto d = sha256(data.data(), data.size());
  return hex(d.data(), d.size());
}

std::string file_sha256(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path, "cannot open file");
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return sha256_hex(buf);
}

std::string config_fingerprint(const ModelConfig& model, const ClassVocabulary& vocabulary) {
  nlohmann::json j = {{"model", to_json(model)}, {"vocabulary", vocabulary.to_json()}};
  return sha256_hex(j.dump());
}

int CheckpointBundle::epoch() const { return meta.at("epoch").get<int>(); }
int64_t CheckpointBundle::step() const { return meta.at("step").get<int64_t>(); }
std::string CheckpointBundle::fingerprint() const { return meta.at("fingerprint").get<std::string>(); }
ClassVocabulary CheckpointBundle::vocabulary() const { return ClassVocabulary::from_json(meta.at("vocabulary")); }
ModelConfig CheckpointBundle::model() const { return model_config_from_json(meta.at("model")); }
TrainConfig CheckpointBundle::train() const { return train_config_from_json(meta.at("train")); }

CheckpointBundle capture_checkpoint(const TrainingState& s, const BatchSampler* sampler) {
  CheckpointBundle b;
  b.meta = {{"format", "aoda-checkpoint"},
            {"version", kVersion},
            {"epoch", s.epoch},
            {"step", s.step},
            {"fingerprint", config_fingerprint(s.model, s.vocabulary)},
            {"vocabulary", s.vocabulary.to_json()},
            {"model", to_json(s.model)},
            {"train", to_json(s.config)},
            {"mix_threshold", s.policy.threshold}};

  std::ostringstream mix;
  mix << s.mix_rng;
  b.meta["rng"] = {{"mix", mix.str()},
                   {"pool", s.pool.rng_state()},
                   {"sampler", sampler ? nlohmann::json(sampler->rng_state()) : nlohmann::json(nullptr)}};

  for (const auto& [name, module] : modules_of(s.nets)) add_module_tensors(b, name, *module);

  nlohmann::json optim = nlohmann::json::object();
  for (const auto& [name, opt] : optimizers_of(s)) {
    nlohmann::json steps = nlohmann::json::array();
    auto params = optimizer_params(*opt);
    for (size_t i = 0; i < params.size(); ++i) {
      auto it = opt->state().find(params[i].unsafeGetTensorImpl());
      if (it == opt->state().end()) {
        steps.push_back(nullptr);
        continue;
      }
      const auto& st = static_cast<const torch::optim::AdamParamState&>(*it->second);
      steps.push_back(st.step());
      b.tensors["opt/" + name + "/" + padded(i) + "/exp_avg"] = st.exp_avg().detach().clone();
      b.tensors["opt/" + name + "/" + padded(i) + "/exp_avg_sq"] = st.exp_avg_sq().detach().clone();
    }
    optim[name] = steps;
  }
  b.meta["optim"] = optim;

  const auto& entries = s.pool.entries();
  b.meta["pool"] = {{"count", entries.size()}, {"capacity", s.pool.capacity()}};
  for (size_t i = 0; i < entries.size(); ++i) {
    b.tensors["pool/" + padded(i) + "/sketches"] = entries[i].sketches.detach().clone();
    b.tensors["pool/" + padded(i) + "/labels"] = entries[i].labels.detach().clone();
  }
  return b;
}

void write_checkpoint(const CheckpointBundle& b, const fs::path& path) {
  std::string buf(kMagic, sizeof(kMagic));
  put<uint32_t>(buf, kVersion);
  const std::string meta = b.meta.dump();
  put<uint64_t>(buf, meta.size());
  buf += meta;
  put<uint64_t>(buf, b.tensors.size());
  for (const auto& [name, tensor] : b.tensors) {
    auto t = tensor.detach().to(torch::kCPU).contiguous();
    put<uint32_t>(buf, static_cast<uint32_t>(name.size()));
    buf += name;
    put<uint8_t>(buf, dtype_code(t.scalar_type()));
    put<uint32_t>(buf, static_cast<uint32_t>(t.dim()));
    for (int64_t d : t.sizes()) put<int64_t>(buf, d);
    const uint64_t nbytes = t.numel() * t.element_size();
    put<uint64_t>(buf, nbytes);
    buf.append(static_cast<const char*>(t.data_ptr()), nbytes);
  }
  auto digest = sha256(buf.data(), buf.size());
  buf.append(reinterpret_cast<const char*>(digest.data()), digest.size());

  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    out.flush();
    if (!out) throw Error("failed writing checkpoint " + tmp.string());
  }
  fs::rename(tmp, path);
}

CheckpointBundle read_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path, "cannot open checkpoint");
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kMagic) + sizeof(uint32_t) + kDigestSize ||
      std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
    throw IntegrityError("not a checkpoint file: " + path.string());
  }
  const size_t body = buf.size() - kDigestSize;
  auto digest = sha256(buf.data(), body);
  if (std::memcmp(digest.data(), buf.data() + body, kDigestSize) != 0) {
    throw IntegrityError("checkpoint digest mismatch (corrupt file): " + path.string());
  }

  Reader r(buf, body);
  r.bytes(sizeof(kMagic));
  const auto version = r.get<uint32_t>();
  if (version != kVersion) throw IntegrityError("unsupported checkpoint version " + std::to_string(version));

  CheckpointBundle b;
  const auto meta_len = r.get<uint64_t>();
  b.meta = nlohmann::json::parse(r.bytes(meta_len), nullptr, false);
  if (b.meta.is_discarded()) throw IntegrityError("checkpoint metadata is not valid JSON");

  const auto count = r.get<uint64_t>();
  for (uint64_t i = 0; i < count; ++i) {
    const auto name_len = r.get<uint32_t>();
    std::string name = r.bytes(name_len);
    const auto dtype = dtype_from_code(r.get<uint8_t>());
    const auto ndim = r.get<uint32_t>();
    std::vector<int64_t> shape(ndim);
    for (auto& d : shape) d = r.get<int64_t>();
    const auto nbytes = r.get<uint64_t>();
    auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype));
    if (static_cast<uint64_t>(t.numel() * t.element_size()) != nbytes) {
      throw IntegrityError("checkpoint tensor '" + name + "' has inconsistent size");
    }
    const std::string raw = r.bytes(nbytes);
    std::memcpy(t.data_ptr(), raw.data(), nbytes);
    b.tensors.emplace(std::move(name), std::move(t));
  }
  if (!r.done()) throw IntegrityError("trailing bytes in checkpoint");
  return b;
}

void save_checkpoint(const TrainingState& state, const fs::path& path, const BatchSampler* sampler) {
  write_checkpoint(capture_checkpoint(state, sampler), path);
}

CheckpointBundle load_checkpoint(const fs::path& path, const LoadOptions& options) {
  auto b = read_checkpoint(path);
  if (options.expected_fingerprint && b.fingerprint() != *options.expected_fingerprint && !options.force) {
    throw FingerprintMismatchError("checkpoint fingerprint " + b.fingerprint().substr(0, 16) +
                                   " does not match the configured model " +
                                   options.expected_fingerprint->substr(0, 16) + " (use --force to override)");
  }
  return b;
}

void restore_training_state(const CheckpointBundle& b, TrainingState& s, BatchSampler* sampler) {
  check_vocabulary_size(b, s.vocabulary.size());
  for (const auto& [name, module] : modules_of(s.nets)) restore_module(b, name, *module);

  const auto& optim = b.meta.at("optim");
  for (const auto& [name, opt] : optimizers_of(s)) {
    auto params = optimizer_params(*opt);
    const auto& steps = optim.at(name);
    if (steps.size() != params.size()) {
      throw IntegrityError("optim." + name + ": checkpoint has " + std::to_string(steps.size()) +
                           " parameter states, expected " + std::to_string(params.size()));
    }
    opt->state().clear();
    for (size_t i = 0; i < params.size(); ++i) {
      if (steps[i].is_null()) continue;
      const auto prefix = "opt/" + name + "/" + padded(i);
      auto st = std::make_unique<torch::optim::AdamParamState>();
      st->step(steps[i].get<int64_t>());
      st->exp_avg(require_tensor(b, prefix + "/exp_avg", params[i].sizes()).clone());
      st->exp_avg_sq(require_tensor(b, prefix + "/exp_avg_sq", params[i].sizes()).clone());
      opt->state()[params[i].unsafeGetTensorImpl()] = std::move(st);
    }
  }

  std::vector<SketchLabelBatch> entries;
  const auto count = b.meta.at("pool").at("count").get<size_t>();
  for (size_t i = 0; i < count; ++i) {
    const auto prefix = "pool/" + padded(i);
    auto sk = b.tensors.find(prefix + "/sketches");
    auto lb = b.tensors.find(prefix + "/labels");
    if (sk == b.tensors.end() || lb == b.tensors.end()) throw IntegrityError("checkpoint pool entry " + prefix + " missing");
    entries.push_back({sk->second.clone(), lb->second.clone()});
  }
  s.pool.restore(std::move(entries));

  const auto& rng = b.meta.at("rng");
  s.pool.set_rng_state(rng.at("pool").get<std::string>());
  std::istringstream mix(rng.at("mix").get<std::string>());
  mix >> s.mix_rng;
  if (!mix) throw IntegrityError("invalid mix rng state in checkpoint");
  if (sampler && !rng.at("sampler").is_null()) sampler->set_rng_state(rng.at("sampler").get<std::string>());

  s.policy.threshold = b.meta.at("mix_threshold").get<double>();
  s.epoch = b.epoch();
  s.step = b.step();
}

Networks load_networks(const CheckpointBundle& b) {
  const auto vocab = b.vocabulary();
  auto nets = build_networks(b.model(), static_cast<int>(vocab.size()));
  check_vocabulary_size(b, vocab.size());
  for (const auto& [name, module] : modules_of(nets)) restore_module(b, name, *module);
  return nets;
}

}  // namespace aoda
