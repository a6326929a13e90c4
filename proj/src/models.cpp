#include "aoda/models.hpp"

#include <numeric>
#include <stdexcept>

#include "aoda/errors.hpp"

namespace nn = torch::nn;

namespace aoda {

std::string to_string(ClassifierBackbone b) { return b == ClassifierBackbone::simple_cnn ? "simple_cnn" : "hrnet_small"; }

ClassifierBackbone parse_backbone(const std::string& s) {
  if (s == "simple_cnn") return ClassifierBackbone::simple_cnn;
  if (s == "hrnet_small") return ClassifierBackbone::hrnet_small;
  throw ConfigError("unknown classifier backbone '" + s + "' (expected simple_cnn or hrnet_small)");
}

// ---------------------------------------------------------------------------
// Specs
// ---------------------------------------------------------------------------

void GeneratorSpec::validate() const {
  if (input_channels <= 0 || output_channels <= 0 || base_width <= 0) {
    throw std::invalid_argument("generator channel counts must be positive");
  }
  if (n_residual_blocks < 0 || n_down < 0) throw std::invalid_argument("generator depth must be non-negative");
  if (n_down != n_up) throw std::invalid_argument("generator requires n_down == n_up");
  if (conditioning == Conditioning::adain && n_classes <= 0) {
    throw std::invalid_argument("AdaIN conditioning requires a non-empty class vocabulary");
  }
  if (conditioning == Conditioning::adain && (embed_dim <= 0 || embed_hidden <= 0)) {
    throw std::invalid_argument("label embedding sizes must be positive");
  }
}

GeneratorSpec GeneratorSpec::photo_to_sketch(int base_width, int n_blocks) {
  GeneratorSpec s;
  s.base_width = base_width;
  s.n_residual_blocks = n_blocks;
  return s;
}

GeneratorSpec GeneratorSpec::sketch_to_photo(int n_classes, int base_width, int n_blocks) {
  GeneratorSpec s;
  s.base_width = base_width;
  s.n_residual_blocks = n_blocks;
  s.conditioning = Conditioning::adain;
  s.upsampling = Upsampling::subpixel;
  s.n_classes = n_classes;
  return s;
}

void DiscriminatorSpec::validate() const {
  if (n_layers < 3) throw std::invalid_argument("PatchGAN discriminator needs at least 3 layers");
  if (base_width <= 0 || input_channels <= 0) throw std::invalid_argument("discriminator widths must be positive");
}

namespace {

constexpr int64_t kPatchKernel = 4;
constexpr int64_t kPatchPad = 1;

std::vector<int64_t> patch_strides(int n_layers) {
  std::vector<int64_t> s(static_cast<size_t>(n_layers - 2), 2);
  s.push_back(1);
  s.push_back(1);
  return s;
}

}  // namespace

int64_t DiscriminatorSpec::output_size(int64_t input_size) const {
  int64_t n = input_size;
  for (int64_t s : patch_strides(n_layers)) n = (n + 2 * kPatchPad - kPatchKernel) / s + 1;
  return n;
}

int64_t DiscriminatorSpec::receptive_field() const {
  auto [a, b] = receptive_interval(0);
  return b - a + 1;
}

std::pair<int64_t, int64_t> DiscriminatorSpec::receptive_interval(int64_t o) const {
  auto strides = patch_strides(n_layers);
  int64_t lo = o, hi = o;
  for (auto it = strides.rbegin(); it != strides.rend(); ++it) {
    lo = lo * *it - kPatchPad;
    hi = hi * *it - kPatchPad + kPatchKernel - 1;
  }
  return {lo, hi};
}

void ClassifierSpec::validate() const {
  if (n_classes <= 0) throw std::invalid_argument("classifier needs at least one class");
  if (base_width <= 0 || input_channels <= 0) throw std::invalid_argument("classifier widths must be positive");
}

GeneratorSpec ModelConfig::sketcher_spec() const { return GeneratorSpec::photo_to_sketch(base_width, n_blocks); }

GeneratorSpec ModelConfig::painter_spec(int n_classes) const {
  auto s = GeneratorSpec::sketch_to_photo(n_classes, base_width, n_blocks);
  s.embed_dim = embed_dim;
  return s;
}

DiscriminatorSpec ModelConfig::discriminator_spec() const {
  DiscriminatorSpec s;
  s.n_layers = disc_layers;
  s.base_width = disc_width;
  return s;
}

ClassifierSpec ModelConfig::classifier_spec(int n_classes) const {
  ClassifierSpec s;
  s.backbone = classifier;
  s.n_classes = n_classes;
  s.base_width = classifier_width;
  return s;
}

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

torch::Tensor adain(const torch::Tensor& features, const torch::Tensor& scale, const torch::Tensor& shift,
                    double eps) {
  if (features.dim() != 4) throw ShapeError("adain expects [B,C,H,W] features");
  const auto b = features.size(0), c = features.size(1);
  if (scale.sizes() != torch::IntArrayRef{b, c} || shift.sizes() != torch::IntArrayRef{b, c}) {
    throw ShapeError("adain scale/shift must be [B,C] matching the features");
  }
  auto mean = features.mean({2, 3}, /*keepdim=*/true);
  auto var = features.var({2, 3}, /*unbiased=*/false, /*keepdim=*/true);
  auto normalized = (features - mean) / torch::sqrt(var + eps);
  return normalized * scale.view({b, c, 1, 1}) + shift.view({b, c, 1, 1});
}

torch::Tensor subpixel_upsample(const torch::Tensor& x, int64_t r) {
  if (x.dim() != 4) throw ShapeError("subpixel_upsample expects [B,C,H,W]");
  if (r < 1) throw std::invalid_argument("upsampling factor must be >= 1");
  const auto b = x.size(0), crr = x.size(1), h = x.size(2), w = x.size(3);
  if (crr % (r * r) != 0) {
    throw ShapeError("channel count " + std::to_string(crr) + " not divisible by r^2 = " + std::to_string(r * r));
  }
  const auto c = crr / (r * r);
  return x.reshape({b, c, r, r, h, w}).permute({0, 1, 4, 2, 5, 3}).reshape({b, c, h * r, w * r});
}

torch::Tensor subpixel_downsample(const torch::Tensor& x, int64_t r) {
  if (x.dim() != 4) throw ShapeError("subpixel_downsample expects [B,C,H,W]");
  if (r < 1) throw std::invalid_argument("downsampling factor must be >= 1");
  const auto b = x.size(0), c = x.size(1), hr = x.size(2), wr = x.size(3);
  if (hr % r != 0 || wr % r != 0) throw ShapeError("spatial size not divisible by the factor");
  const auto h = hr / r, w = wr / r;
  return x.reshape({b, c, h, r, w, r}).permute({0, 1, 3, 5, 2, 4}).reshape({b, c * r * r, h, w});
}

// ---------------------------------------------------------------------------
// Blocks
// ---------------------------------------------------------------------------

namespace {

nn::InstanceNorm2d instance_norm(int channels) {
  return nn::InstanceNorm2d(nn::InstanceNorm2dOptions(channels).eps(1e-5));
}

nn::Conv2d conv(int in, int out, int k, int stride = 1, int pad = 0) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, k).stride(stride).padding(pad));
}

}  // namespace

ResidualBlockImpl::ResidualBlockImpl(int channels) {
  body = register_module("body", nn::Sequential(nn::ReflectionPad2d(1), conv(channels, channels, 3),
                                                instance_norm(channels), nn::ReLU(), nn::ReflectionPad2d(1),
                                                conv(channels, channels, 3), instance_norm(channels)));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) { return x + body->forward(x); }

AdaINResidualBlockImpl::AdaINResidualBlockImpl(int channels) {
  pad1 = register_module("pad1", nn::ReflectionPad2d(1));
  conv1 = register_module("conv1", conv(channels, channels, 3));
  pad2 = register_module("pad2", nn::ReflectionPad2d(1));
  conv2 = register_module("conv2", conv(channels, channels, 3));
}

torch::Tensor AdaINResidualBlockImpl::forward(const torch::Tensor& x,
                                              const std::pair<torch::Tensor, torch::Tensor>& site1,
                                              const std::pair<torch::Tensor, torch::Tensor>& site2) {
  auto h = adain(conv1(pad1(x)), site1.first, site1.second);
  h = torch::relu(h);
  h = adain(conv2(pad2(h)), site2.first, site2.second);
  return x + h;
}

LabelEmbeddingImpl::LabelEmbeddingImpl(int n_classes_, int embed_dim, int hidden, std::vector<int> site_channels)
    : n_classes(n_classes_) {
  embedding = register_module("embedding", nn::Embedding(n_classes, embed_dim));
  mlp = register_module("mlp", nn::Sequential(nn::Linear(embed_dim, hidden), nn::ReLU(),
                                              nn::Linear(hidden, hidden), nn::ReLU()));
  scale_heads = register_module("scale_heads", nn::ModuleList());
  shift_heads = register_module("shift_heads", nn::ModuleList());
  for (int c : site_channels) {
    scale_heads->push_back(nn::Linear(hidden, c));
    shift_heads->push_back(nn::Linear(hidden, c));
  }
  reset_identity();
}

void LabelEmbeddingImpl::reset_identity() {
  torch::NoGradGuard no_grad;
  for (size_t i = 0; i < scale_heads->size(); ++i) {
    auto sc = scale_heads[i]->as<nn::Linear>();
    auto sh = shift_heads[i]->as<nn::Linear>();
    sc->weight.zero_();
    sc->bias.fill_(1.0);
    sh->weight.zero_();
    sh->bias.zero_();
  }
}

std::vector<std::pair<torch::Tensor, torch::Tensor>> LabelEmbeddingImpl::forward(const torch::Tensor& labels) {
  auto h = mlp->forward(embedding(labels));
  std::vector<std::pair<torch::Tensor, torch::Tensor>> out;
  out.reserve(scale_heads->size());
  for (size_t i = 0; i < scale_heads->size(); ++i) {
    out.emplace_back(scale_heads[i]->as<nn::Linear>()->forward(h), shift_heads[i]->as<nn::Linear>()->forward(h));
  }
  return out;
}

SubpixelUpsampleImpl::SubpixelUpsampleImpl(int in_channels, int out_channels, int factor_) : factor(factor_) {
  conv = register_module("conv", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels * factor * factor, 3).padding(1)));
}

torch::Tensor SubpixelUpsampleImpl::forward(const torch::Tensor& x) { return subpixel_upsample(conv(x), factor); }

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

GeneratorImpl::GeneratorImpl(GeneratorSpec spec) : spec_(spec) {
  spec_.validate();
  const int w = spec_.base_width;

  stem = register_module("stem", nn::Sequential(nn::ReflectionPad2d(3), conv(spec_.input_channels, w, 7),
                                                instance_norm(w), nn::ReLU()));

  down = register_module("down", nn::Sequential());
  int ch = w;
  for (int i = 0; i < spec_.n_down; ++i) {
    down->push_back(conv(ch, ch * 2, 3, 2, 1));
    down->push_back(instance_norm(ch * 2));
    down->push_back(nn::ReLU());
    ch *= 2;
  }

  blocks = register_module("blocks", nn::ModuleList());
  std::vector<int> sites;
  for (int i = 0; i < spec_.n_residual_blocks; ++i) {
    if (conditional()) {
      blocks->push_back(AdaINResidualBlock(ch));
      sites.push_back(ch);
      sites.push_back(ch);
    } else {
      blocks->push_back(ResidualBlock(ch));
    }
  }

  up = register_module("up", nn::Sequential());
  for (int i = 0; i < spec_.n_up; ++i) {
    if (spec_.upsampling == Upsampling::subpixel) {
      up->push_back(SubpixelUpsample(ch, ch / 2, 2));
    } else {
      up->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(ch, ch / 2, 3).stride(2).padding(1).output_padding(1)));
    }
    up->push_back(instance_norm(ch / 2));
    up->push_back(nn::ReLU());
    ch /= 2;
  }

  head = register_module("head", nn::Sequential(nn::ReflectionPad2d(3), conv(ch, spec_.output_channels, 7), nn::Tanh()));

  init_gan_weights(*this);
  if (conditional()) {
    label_embedding = register_module(
        "label_embedding", LabelEmbedding(spec_.n_classes, spec_.embed_dim, spec_.embed_hidden, std::move(sites)));
  }
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& x, const torch::Tensor& labels) {
  if (x.dim() != 4 || x.size(1) != spec_.input_channels) {
    throw ShapeError("generator expects [B," + std::to_string(spec_.input_channels) + ",H,W] input");
  }
  const int64_t stride = int64_t{1} << spec_.n_down;
  if (x.size(2) % stride != 0 || x.size(3) % stride != 0 || x.size(2) < 2 * stride || x.size(3) < 2 * stride) {
    throw ShapeError("generator input H and W must be multiples of " + std::to_string(stride) + " and at least " +
                     std::to_string(2 * stride));
  }

  std::vector<std::pair<torch::Tensor, torch::Tensor>> sites;
  if (conditional()) {
    if (!labels.defined() || labels.dim() != 1 || labels.size(0) != x.size(0)) {
      throw std::invalid_argument("conditional generator needs one label per input image");
    }
    if (labels.numel() > 0) {
      const auto lo = labels.min().item<int64_t>();
      const auto hi = labels.max().item<int64_t>();
      if (lo < 0 || hi >= spec_.n_classes) {
        throw std::invalid_argument("label out of range [0," + std::to_string(spec_.n_classes) + ")");
      }
    }
    sites = label_embedding(labels.to(torch::kInt64));
  }

  auto h = down->forward(stem->forward(x));
  for (size_t i = 0; i < blocks->size(); ++i) {
    if (conditional()) {
      h = blocks[i]->as<AdaINResidualBlockImpl>()->forward(h, sites[2 * i], sites[2 * i + 1]);
    } else {
      h = blocks[i]->as<ResidualBlockImpl>()->forward(h);
    }
  }
  return head->forward(up->forward(h));
}

// ---------------------------------------------------------------------------
// Discriminator
// ---------------------------------------------------------------------------

PatchDiscriminatorImpl::PatchDiscriminatorImpl(DiscriminatorSpec spec) : spec_(spec) {
  spec_.validate();
  const int w = spec_.base_width;
  auto leaky = [] { return nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)); };
  auto norm = [&](int c) -> nn::AnyModule {
    if (spec_.normalization == DiscriminatorNorm::instance) return nn::AnyModule(instance_norm(c));
    return nn::AnyModule(nn::Identity());
  };

  model = register_module("model", nn::Sequential());
  model->push_back(conv(spec_.input_channels, w, 4, 2, 1));
  model->push_back(leaky());
  int mult = 1;
  for (int i = 1; i < spec_.n_layers - 2; ++i) {
    const int prev = mult;
    mult = std::min(1 << i, 8);
    model->push_back(conv(w * prev, w * mult, 4, 2, 1));
    model->push_back(norm(w * mult));
    model->push_back(leaky());
  }
  const int prev = mult;
  mult = std::min(1 << (spec_.n_layers - 2), 8);
  model->push_back(conv(w * prev, w * mult, 4, 1, 1));
  model->push_back(norm(w * mult));
  model->push_back(leaky());
  model->push_back(conv(w * mult, 1, 4, 1, 1));

  init_gan_weights(*this);
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != spec_.input_channels) throw ShapeError("discriminator expects [B,3,H,W] input");
  if (spec_.output_size(std::min(x.size(2), x.size(3))) < 1) {
    throw ShapeError("input too small for a " + std::to_string(spec_.n_layers) + "-layer PatchGAN");
  }
  return model->forward(x);
}

torch::Tensor PatchDiscriminatorImpl::score(const torch::Tensor& x) { return forward(x).mean({1, 2, 3}); }

// ---------------------------------------------------------------------------
// Classifier
// ---------------------------------------------------------------------------

namespace {

nn::GroupNorm group_norm(int c) { return nn::GroupNorm(nn::GroupNormOptions(c % 4 == 0 ? 4 : 1, c)); }

struct BasicBlockImpl : nn::Module {
  explicit BasicBlockImpl(int c) {
    body = register_module("body", nn::Sequential(conv(c, c, 3, 1, 1), group_norm(c), nn::ReLU(),
                                                  conv(c, c, 3, 1, 1), group_norm(c)));
  }
  torch::Tensor forward(const torch::Tensor& x) { return torch::relu(x + body->forward(x)); }
  nn::Sequential body{nullptr};
};
TORCH_MODULE(BasicBlock);

nn::Sequential strided(int in, int out) { return nn::Sequential(conv(in, out, 3, 2, 1), group_norm(out), nn::ReLU()); }

}  // namespace

/// Compact high-resolution network: parallel branches at 1/4, 1/8 and 1/16 resolution with
/// repeated cross-resolution fusion, pooled and concatenated for the FC head.
struct HRNetSmallImpl : nn::Module {
  explicit HRNetSmallImpl(int in_channels, int w) : widths{w, 2 * w, 4 * w} {
    stem = register_module("stem", nn::Sequential(conv(in_channels, w, 3, 2, 1), group_norm(w), nn::ReLU(),
                                                   conv(w, w, 3, 2, 1), group_norm(w), nn::ReLU()));
    stage1 = register_module("stage1", nn::Sequential(BasicBlock(w), BasicBlock(w)));
    to_branch1 = register_module("to_branch1", strided(w, 2 * w));
    stage2 = register_module("stage2", nn::ModuleList(BasicBlock(w), BasicBlock(2 * w)));
    fuse2 = register_module("fuse2", make_fusion(2));
    to_branch2 = register_module("to_branch2", strided(2 * w, 4 * w));
    stage3 = register_module("stage3", nn::ModuleList(BasicBlock(w), BasicBlock(2 * w), BasicBlock(4 * w)));
    fuse3 = register_module("fuse3", make_fusion(3));
  }

  // fusion[i * n + j] maps branch j onto branch i's resolution and width (unused when i == j).
  nn::ModuleList make_fusion(int n) {
    nn::ModuleList list;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (j > i) {
          list->push_back(nn::Sequential(conv(widths[j], widths[i], 1), group_norm(widths[i])));
        } else if (j < i) {
          nn::Sequential chain;
          int c = widths[j];
          for (int k = j; k < i; ++k) {
            chain->push_back(conv(c, widths[k + 1], 3, 2, 1));
            chain->push_back(group_norm(widths[k + 1]));
            c = widths[k + 1];
          }
          list->push_back(chain);
        } else {
          list->push_back(nn::Identity());
        }
      }
    }
    return list;
  }

  std::vector<torch::Tensor> fuse(nn::ModuleList& fusion, const std::vector<torch::Tensor>& xs) {
    const size_t n = xs.size();
    std::vector<torch::Tensor> out;
    for (size_t i = 0; i < n; ++i) {
      auto acc = xs[i];
      for (size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        auto y = fusion[i * n + j]->as<nn::Sequential>()->forward(xs[j]);
        if (j > i) {
          y = torch::nn::functional::interpolate(
              y, torch::nn::functional::InterpolateFuncOptions()
                     .size(std::vector<int64_t>{xs[i].size(2), xs[i].size(3)})
                     .mode(torch::kNearest));
        }
        acc = acc + y;
      }
      out.push_back(torch::relu(acc));
    }
    return out;
  }

  torch::Tensor forward(const torch::Tensor& x) {
    auto b0 = stage1->forward(stem->forward(x));
    auto b1 = to_branch1->forward(b0);
    std::vector<torch::Tensor> xs{stage2[0]->as<BasicBlockImpl>()->forward(b0),
                                  stage2[1]->as<BasicBlockImpl>()->forward(b1)};
    xs = fuse(fuse2, xs);
    xs.push_back(to_branch2->forward(xs[1]));
    for (size_t i = 0; i < 3; ++i) xs[i] = stage3[i]->as<BasicBlockImpl>()->forward(xs[i]);
    xs = fuse(fuse3, xs);
    std::vector<torch::Tensor> pooled;
    for (auto& t : xs) pooled.push_back(t.mean({2, 3}));
    return torch::cat(pooled, 1);
  }

  int64_t feature_dim() const { return widths[0] + widths[1] + widths[2]; }

  std::vector<int> widths;
  nn::Sequential stem{nullptr}, stage1{nullptr}, to_branch1{nullptr}, to_branch2{nullptr};
  nn::ModuleList stage2{nullptr}, stage3{nullptr}, fuse2{nullptr}, fuse3{nullptr};
};

ClassifierImpl::ClassifierImpl(ClassifierSpec spec) : spec_(spec) {
  spec_.validate();
  const int w = spec_.base_width;
  if (spec_.backbone == ClassifierBackbone::simple_cnn) {
    const std::vector<int> widths{w, 2 * w, 4 * w, 4 * w, 8 * w, 8 * w};
    const std::vector<int> strides{2, 2, 2, 2, 2, 1};
    cnn = register_module("cnn", nn::Sequential());
    int in = spec_.input_channels;
    for (size_t i = 0; i < widths.size(); ++i) {
      cnn->push_back(conv(in, widths[i], 3, strides[i], 1));
      cnn->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
      in = widths[i];
    }
    feature_dim_ = in;
  } else {
    hrnet = register_module("hrnet", std::make_shared<HRNetSmallImpl>(spec_.input_channels, w));
    feature_dim_ = hrnet->feature_dim();
  }
  fc = register_module("fc", nn::Linear(feature_dim_, spec_.n_classes));
}

torch::Tensor ClassifierImpl::features(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != spec_.input_channels) throw ShapeError("classifier expects [B,3,H,W] input");
  if (cnn) return cnn->forward(x).mean({2, 3});
  return hrnet->forward(x);
}

torch::Tensor ClassifierImpl::forward(const torch::Tensor& x) { return fc(features(x)); }

// ---------------------------------------------------------------------------

Networks build_networks(const ModelConfig& config, int n_classes) {
  Networks n;
  n.sketcher = Generator(config.sketcher_spec());
  n.painter = Generator(config.painter_spec(n_classes));
  n.sketch_critic = PatchDiscriminator(config.discriminator_spec());
  n.photo_critic = PatchDiscriminator(config.discriminator_spec());
  n.classifier = Classifier(config.classifier_spec(n_classes));
  return n;
}

void init_gan_weights(nn::Module& module, double std) {
  torch::NoGradGuard no_grad;
  module.apply([std](nn::Module& m) {
    if (auto* c = m.as<nn::Conv2d>()) {
      c->weight.normal_(0.0, std);
      if (c->bias.defined()) c->bias.zero_();
    } else if (auto* t = m.as<nn::ConvTranspose2d>()) {
      t->weight.normal_(0.0, std);
      if (t->bias.defined()) t->bias.zero_();
    }
  });
}

void copy_state(const nn::Module& from, nn::Module& to) {
  torch::NoGradGuard no_grad;
  auto src_p = from.named_parameters();
  auto dst_p = to.named_parameters();
  for (auto& item : dst_p) {
    const auto* s = src_p.find(item.key());
    if (!s) throw IntegrityError("parameter '" + item.key() + "' missing in source module");
    item.value().copy_(*s);
  }
  auto src_b = from.named_buffers();
  auto dst_b = to.named_buffers();
  for (auto& item : dst_b) {
    const auto* s = src_b.find(item.key());
    if (!s) throw IntegrityError("buffer '" + item.key() + "' missing in source module");
    item.value().copy_(*s);
  }
}

void set_requires_grad(nn::Module& module, bool flag) {
  for (auto& p : module.parameters()) p.set_requires_grad(flag);
}

}  // namespace aoda
