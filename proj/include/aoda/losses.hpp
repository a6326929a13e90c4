#pragma once

#include <map>
#include <string>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "aoda/models.hpp"

namespace aoda {

struct LossWeights {
  double lambda_s = 1.0;
  double lambda_p = 1.0;
  double lambda_pix = 10.0;
  double lambda_eta = 1.0;

  void validate() const;
};

/// Scalar summary of one training iteration.
struct LossReport {
  double g_s_adv = 0;
  double g_p_adv = 0;
  double pix = 0;
  double eta = 0;
  double g_total = 0;
  double d_s = 0;
  double d_p = 0;
  double r = 0;
  bool substituted = false;

  bool all_finite() const;
  std::map<std::string, double> scalars() const;
  nlohmann::json to_json() const;
};

/// Generator-side loss terms as graph-connected tensors.
struct GeneratorLossParts {
  torch::Tensor g_s_adv;
  torch::Tensor g_p_adv;
  torch::Tensor pix;
  torch::Tensor eta;
};

/// Non-saturating generator loss: -mean(log sigmoid(logit)) over batch and patches.
torch::Tensor gen_adversarial_loss(const torch::Tensor& disc_logits_on_fake);

/// Mean absolute difference; throws std::invalid_argument on shape mismatch.
torch::Tensor pixel_consistency_loss(const torch::Tensor& reconstructed, const torch::Tensor& original);

/// Batch mean of -(1 - p_t)^gamma * log p_t with p_t the softmax probability of the true class.
torch::Tensor focal_classification_loss(const torch::Tensor& class_logits, const torch::Tensor& labels,
                                        double gamma = 2.0);

torch::Tensor generator_total_loss(const LossWeights& weights, const GeneratorLossParts& parts);

/// Binary cross-entropy on raw logits: -mean(log sigmoid(real)) - mean(log(1 - sigmoid(fake))).
torch::Tensor discriminator_loss(const torch::Tensor& logits_real, const torch::Tensor& logits_fake);

/// Discriminator update loss evaluated through `critic`; fake images are detached before the
/// forward pass, so no gradient reaches the generator that produced them.
torch::Tensor discriminator_update_loss(PatchDiscriminator& critic, const torch::Tensor& real_images,
                                        const torch::Tensor& fake_images);

/// Focal loss on real pairs plus focal loss on fake pairs (each a batch mean). An empty fake
/// batch contributes nothing.
torch::Tensor classifier_update_loss(const torch::Tensor& logits_real, const torch::Tensor& labels_real,
                                     const torch::Tensor& logits_fake, const torch::Tensor& labels_fake,
                                     double gamma = 2.0);

/// classifier_update_loss evaluated through `classifier` with the fake photos detached.
torch::Tensor classifier_update_loss(Classifier& classifier, const torch::Tensor& real_photos,
                                     const torch::Tensor& labels_real, const torch::Tensor& fake_photos,
                                     const torch::Tensor& labels_fake, double gamma = 2.0);

}  // namespace aoda
