#pragma once

#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace aoda {

enum class Conditioning { none, adain };
enum class Upsampling { transposed, subpixel };
enum class ClassifierBackbone { simple_cnn, hrnet_small };
enum class DiscriminatorNorm { instance, none };

std::string to_string(ClassifierBackbone b);
ClassifierBackbone parse_backbone(const std::string& s);

struct GeneratorSpec {
  int input_channels = 3;
  int output_channels = 3;
  int base_width = 64;
  int n_residual_blocks = 9;
  int n_down = 2;
  int n_up = 2;
  Conditioning conditioning = Conditioning::none;
  Upsampling upsampling = Upsampling::transposed;
  int n_classes = 0;
  int embed_dim = 64;
  int embed_hidden = 256;

  void validate() const;

  /// Johnson-style photo-to-sketch layout: instance norm, transposed-conv upsampling.
  static GeneratorSpec photo_to_sketch(int base_width = 64, int n_blocks = 9);
  /// Multi-class sketch-to-photo layout: AdaIN residual blocks, sub-pixel upsampling.
  static GeneratorSpec sketch_to_photo(int n_classes, int base_width = 64, int n_blocks = 9);
};

/// PatchGAN layout with `n_layers` 4x4 convolutions: n_layers-2 stride-2 layers followed by two
/// stride-1 layers. n_layers = 5 gives a 70x70 receptive field and 30x30 logits for 256x256 input.
struct DiscriminatorSpec {
  int n_layers = 5;
  int base_width = 64;
  int input_channels = 3;
  DiscriminatorNorm normalization = DiscriminatorNorm::instance;

  void validate() const;
  int64_t output_size(int64_t input_size) const;
  int64_t receptive_field() const;
  /// Half-open input interval [first, last] (per axis, unclamped) seen by output index `o`.
  std::pair<int64_t, int64_t> receptive_interval(int64_t o) const;
};

struct ClassifierSpec {
  ClassifierBackbone backbone = ClassifierBackbone::simple_cnn;
  int n_classes = 2;
  int base_width = 32;
  int input_channels = 3;

  void validate() const;
};

/// Architecture keys shared by the trainer, checkpoints and inference.
struct ModelConfig {
  int base_width = 64;
  int n_blocks = 9;
  int disc_layers = 5;
  int disc_width = 64;
  ClassifierBackbone classifier = ClassifierBackbone::simple_cnn;
  int classifier_width = 32;
  int embed_dim = 64;

  GeneratorSpec sketcher_spec() const;
  GeneratorSpec painter_spec(int n_classes) const;
  DiscriminatorSpec discriminator_spec() const;
  ClassifierSpec classifier_spec(int n_classes) const;
};

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

/// Per-(b,c) plane normalization followed by an affine map:
/// scale * (x - mean) / sqrt(var + eps) + shift, with biased variance over H x W.
torch::Tensor adain(const torch::Tensor& features, const torch::Tensor& scale, const torch::Tensor& shift,
                    double eps = 1e-5);

/// Channel-to-space rearrangement: out[b,c,r*h+i,r*w+j] = in[b, c*r*r + i*r + j, h, w].
torch::Tensor subpixel_upsample(const torch::Tensor& features, int64_t r);
/// Exact inverse of subpixel_upsample.
torch::Tensor subpixel_downsample(const torch::Tensor& features, int64_t r);

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

struct ResidualBlockImpl : torch::nn::Module {
  explicit ResidualBlockImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Sequential body{nullptr};
};
TORCH_MODULE(ResidualBlock);

/// Residual block whose two normalization layers are AdaIN sites.
struct AdaINResidualBlockImpl : torch::nn::Module {
  explicit AdaINResidualBlockImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x, const std::pair<torch::Tensor, torch::Tensor>& site1,
                        const std::pair<torch::Tensor, torch::Tensor>& site2);

  torch::nn::ReflectionPad2d pad1{nullptr}, pad2{nullptr};
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
};
TORCH_MODULE(AdaINResidualBlock);

/// label -> embedding -> shared 2-layer MLP -> one (scale, shift) head pair per AdaIN site.
struct LabelEmbeddingImpl : torch::nn::Module {
  LabelEmbeddingImpl(int n_classes, int embed_dim, int hidden, std::vector<int> site_channels);

  std::vector<std::pair<torch::Tensor, torch::Tensor>> forward(const torch::Tensor& labels);
  /// Zero head weights; scale bias 1 and shift bias 0, so every site starts as plain instance norm.
  void reset_identity();

  int n_classes;
  torch::nn::Embedding embedding{nullptr};
  torch::nn::Sequential mlp{nullptr};
  torch::nn::ModuleList scale_heads{nullptr};
  torch::nn::ModuleList shift_heads{nullptr};
};
TORCH_MODULE(LabelEmbedding);

struct SubpixelUpsampleImpl : torch::nn::Module {
  SubpixelUpsampleImpl(int in_channels, int out_channels, int factor);
  torch::Tensor forward(const torch::Tensor& x);

  int factor;
  torch::nn::Conv2d conv{nullptr};
};
TORCH_MODULE(SubpixelUpsample);

// ---------------------------------------------------------------------------
// Networks
// ---------------------------------------------------------------------------

/// ResNet generator (feature conv, n_down downsampling, residual blocks, n_up upsampling,
/// RGB conv, tanh). With adain conditioning it is G_p and forward requires labels.
struct GeneratorImpl : torch::nn::Module {
  explicit GeneratorImpl(GeneratorSpec spec);

  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& labels = {});

  const GeneratorSpec& spec() const { return spec_; }
  bool conditional() const { return spec_.conditioning == Conditioning::adain; }

  torch::nn::Sequential stem{nullptr};
  torch::nn::Sequential down{nullptr};
  torch::nn::ModuleList blocks{nullptr};
  torch::nn::Sequential up{nullptr};
  torch::nn::Sequential head{nullptr};
  LabelEmbedding label_embedding{nullptr};

 private:
  GeneratorSpec spec_;
};
TORCH_MODULE(Generator);

struct PatchDiscriminatorImpl : torch::nn::Module {
  explicit PatchDiscriminatorImpl(DiscriminatorSpec spec);

  /// Raw patch logits [B,1,h,w].
  torch::Tensor forward(const torch::Tensor& x);
  /// Image-level score: mean of the patch logits, [B].
  torch::Tensor score(const torch::Tensor& x);

  const DiscriminatorSpec& spec() const { return spec_; }

  torch::nn::Sequential model{nullptr};

 private:
  DiscriminatorSpec spec_;
};
TORCH_MODULE(PatchDiscriminator);

struct HRNetSmallImpl;

/// Photo classifier R. forward returns unnormalized logits [B, n_classes];
/// features returns the pooled representation feeding the final FC layer.
struct ClassifierImpl : torch::nn::Module {
  explicit ClassifierImpl(ClassifierSpec spec);

  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor features(const torch::Tensor& x);
  int64_t feature_dim() const { return feature_dim_; }
  const ClassifierSpec& spec() const { return spec_; }

  torch::nn::Sequential cnn{nullptr};
  std::shared_ptr<HRNetSmallImpl> hrnet;
  torch::nn::Linear fc{nullptr};

 private:
  ClassifierSpec spec_;
  int64_t feature_dim_ = 0;
};
TORCH_MODULE(Classifier);

/// The five jointly trained networks.
struct Networks {
  Generator sketcher{nullptr};     // G_s: photo -> sketch
  Generator painter{nullptr};      // G_p: (sketch, label) -> photo
  PatchDiscriminator sketch_critic{nullptr};  // D_s
  PatchDiscriminator photo_critic{nullptr};   // D_p
  Classifier classifier{nullptr};  // R
};

Networks build_networks(const ModelConfig& config, int n_classes);

/// Normal(0, std) conv/linear weights and zero biases.
void init_gan_weights(torch::nn::Module& module, double std = 0.02);

/// Copies parameters and buffers between structurally identical modules (dtype converted).
void copy_state(const torch::nn::Module& from, torch::nn::Module& to);

void set_requires_grad(torch::nn::Module& module, bool flag);

}  // namespace aoda
