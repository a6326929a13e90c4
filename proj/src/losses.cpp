#include "aoda/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace aoda {

void LossWeights::validate() const {
  for (double v : {lambda_s, lambda_p, lambda_pix, lambda_eta}) {
    if (!std::isfinite(v) || v < 0) throw std::invalid_argument("loss weights must be finite and non-negative");
  }
}

bool LossReport::all_finite() const {
  for (const auto& [k, v] : scalars()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::map<std::string, double> LossReport::scalars() const {
  return {{"g_s_adv", g_s_adv}, {"g_p_adv", g_p_adv}, {"pix", pix}, {"eta", eta},
          {"g_total", g_total}, {"d_s", d_s},         {"d_p", d_p}, {"r", r}};
}

nlohmann::json LossReport::to_json() const {
  nlohmann::json j;
  for (const auto& [k, v] : scalars()) j[k] = v;
  j["substituted"] = substituted;
  return j;
}

// softplus(-x) = -log sigmoid(x), evaluated without overflow.
torch::Tensor gen_adversarial_loss(const torch::Tensor& logits) { return torch::softplus(-logits).mean(); }

torch::Tensor pixel_consistency_loss(const torch::Tensor& reconstructed, const torch::Tensor& original) {
  if (reconstructed.sizes() != original.sizes()) {
    throw std::invalid_argument("pixel_consistency_loss: shape mismatch");
  }
  return (reconstructed - original).abs().mean();
}

torch::Tensor focal_classification_loss(const torch::Tensor& logits, const torch::Tensor& labels, double gamma) {
  if (gamma < 0) throw std::invalid_argument("focal gamma must be >= 0");
  if (logits.dim() != 2 || labels.dim() != 1 || labels.size(0) != logits.size(0)) {
    throw std::invalid_argument("focal loss expects logits [B,n] and labels [B]");
  }
  auto log_p = torch::log_softmax(logits, 1).gather(1, labels.to(torch::kInt64).unsqueeze(1)).squeeze(1);
  auto p = log_p.exp();
  auto weight = gamma == 0.0 ? torch::ones_like(p) : (1.0 - p).clamp_min(0.0).pow(gamma);
  return -(weight * log_p).mean();
}

torch::Tensor generator_total_loss(const LossWeights& w, const GeneratorLossParts& parts) {
  return w.lambda_s * parts.g_s_adv + w.lambda_p * parts.g_p_adv + w.lambda_pix * parts.pix +
         w.lambda_eta * parts.eta;
}

torch::Tensor discriminator_loss(const torch::Tensor& logits_real, const torch::Tensor& logits_fake) {
  return torch::softplus(-logits_real).mean() + torch::softplus(logits_fake).mean();
}

torch::Tensor discriminator_update_loss(PatchDiscriminator& critic, const torch::Tensor& real_images,
                                        const torch::Tensor& fake_images) {
  return discriminator_loss(critic(real_images), critic(fake_images.detach()));
}

torch::Tensor classifier_update_loss(const torch::Tensor& logits_real, const torch::Tensor& labels_real,
                                     const torch::Tensor& logits_fake, const torch::Tensor& labels_fake,
                                     double gamma) {
  auto loss = focal_classification_loss(logits_real, labels_real, gamma);
  if (logits_fake.defined() && logits_fake.size(0) > 0) {
    loss = loss + focal_classification_loss(logits_fake, labels_fake, gamma);
  }
  return loss;
}

torch::Tensor classifier_update_loss(Classifier& classifier, const torch::Tensor& real_photos,
                                     const torch::Tensor& labels_real, const torch::Tensor& fake_photos,
                                     const torch::Tensor& labels_fake, double gamma) {
  torch::Tensor logits_fake;
  if (fake_photos.defined() && fake_photos.size(0) > 0) logits_fake = classifier(fake_photos.detach());
  return classifier_update_loss(classifier(real_photos), labels_real, logits_fake, labels_fake, gamma);
}

}  // namespace aoda
