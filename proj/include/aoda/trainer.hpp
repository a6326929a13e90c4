#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "aoda/config.hpp"
#include "aoda/dataset.hpp"
#include "aoda/losses.hpp"
#include "aoda/models.hpp"
#include "aoda/pool.hpp"

namespace aoda {

/// Everything the training loop owns: networks, optimizers, the sketch pool and the random
/// streams that drive substitution.
struct TrainingState {
  TrainConfig config;
  ModelConfig model;
  ClassVocabulary vocabulary;
  Networks nets;
  std::unique_ptr<torch::optim::Adam> generator_opt;      // G_s and G_p jointly
  std::unique_ptr<torch::optim::Adam> sketch_critic_opt;  // D_s
  std::unique_ptr<torch::optim::Adam> photo_critic_opt;   // D_p
  std::unique_ptr<torch::optim::Adam> classifier_opt;     // R
  SketchPool pool;
  MixPolicy policy;
  std::mt19937_64 mix_rng;
  Generator frozen_sketcher{nullptr};  // strategy=pre_extracted only
  int epoch = 0;     // completed epochs
  int64_t step = 0;  // completed iterations
};

/// Seeds torch with config.seed, builds the five networks and their optimizers.
TrainingState make_training_state(const TrainConfig& config, const ModelConfig& model,
                                  const ClassVocabulary& vocabulary);

/// Forward half of one iteration: sketch extraction, the random-mixed substitution, the three
/// painter passes and the generator loss terms. Consumes randomness (substitution draw, pool).
struct GeneratorPass {
  torch::Tensor fake_sketch;    // G_s(p)
  torch::Tensor mixed_sketch;   // s_c
  torch::Tensor mixed_labels;   // eta_c
  torch::Tensor reconstructed;  // G_p(G_s(p), eta_p)
  torch::Tensor fake_photo;     // G_p(s, eta_s)
  torch::Tensor mixed_photo;    // G_p(s_c, eta_c); aliases fake_photo without substitution
  bool substituted = false;
  GeneratorLossParts parts;
};

GeneratorPass generator_pass(TrainingState& state, const LabeledImageBatch& photo, const LabeledImageBatch& sketch);

/// The three update phases of one iteration, in order. Each touches only its own networks.
torch::Tensor update_generators(TrainingState& state, const GeneratorPass& pass);
std::pair<torch::Tensor, torch::Tensor> update_critics(TrainingState& state, const LabeledImageBatch& photo,
                                                       const LabeledImageBatch& sketch, const GeneratorPass& pass);
torch::Tensor update_classifier(TrainingState& state, const LabeledImageBatch& photo, const LabeledImageBatch& sketch,
                                const GeneratorPass& pass);

/// One full iteration (generator, then discriminators on real data, then classifier).
/// Throws TrainingAbort with a JSON diagnostic when any loss is non-finite.
LossReport train_step(TrainingState& state, const LabeledImageBatch& photo, const LabeledImageBatch& sketch);

/// Learning rate for a 1-based epoch: constant over the first ceil(epochs/2) epochs, then
/// linear decay reaching 0 at the final epoch (or a flat x0.5 with LrSchedule::halve).
double lr_at(const TrainConfig& config, int epoch);

void set_learning_rate(TrainingState& state, double lr);

int steps_per_epoch(const TrainConfig& config, const DatasetManifest& manifest);

struct StepLog {
  int64_t step;
  int epoch;
  double lr;
  LossReport report;

  nlohmann::json to_json() const;
};

struct RunOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;
  bool force = false;
  std::function<void(const StepLog&)> on_step;
};

struct RunResult {
  std::filesystem::path final_checkpoint;
  int epochs_completed = 0;
  int64_t steps = 0;
};

/// Runs epochs x steps_per_epoch iterations, writing train_log.jsonl, sample grids,
/// ckpt_epoch_{k}.bin files and a `latest` pointer under out_dir.
RunResult run_training(const TrainConfig& config, const ModelConfig& model, const DatasetManifest& manifest,
                       const RunOptions& options);

}  // namespace aoda
