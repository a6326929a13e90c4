#include "aoda/trainer.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "aoda/checkpoint.hpp"
#include "aoda/errors.hpp"

namespace fs = std::filesystem;

namespace aoda {

namespace {

std::unique_ptr<torch::optim::Adam> make_adam(std::vector<torch::Tensor> params, const TrainConfig& c) {
  return std::make_unique<torch::optim::Adam>(
      std::move(params), torch::optim::AdamOptions(c.lr).betas({c.beta1, c.beta2}));
}

std::vector<torch::Tensor> concat(std::vector<torch::Tensor> a, const std::vector<torch::Tensor>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

double grad_norm(const torch::nn::Module& m) {
  double sq = 0;
  for (const auto& p : m.parameters()) {
    if (p.grad().defined()) sq += p.grad().to(torch::kFloat64).pow(2).sum().item<double>();
  }
  return std::sqrt(sq);
}

[[noreturn]] void abort_step(const TrainingState& s, const std::string& phase, const LossReport& partial) {
  nlohmann::json dump = {{"step", s.step + 1},
                         {"epoch", s.epoch + 1},
                         {"phase", phase},
                         {"losses", partial.to_json()},
                         {"grad_norms",
                          {{"sketcher", grad_norm(*s.nets.sketcher)},
                           {"painter", grad_norm(*s.nets.painter)},
                           {"sketch_critic", grad_norm(*s.nets.sketch_critic)},
                           {"photo_critic", grad_norm(*s.nets.photo_critic)},
                           {"classifier", grad_norm(*s.nets.classifier)}}}};
  throw TrainingAbort("non-finite loss in " + phase + " update: " + dump.dump());
}

bool finite(const torch::Tensor& t) { return std::isfinite(t.item<double>()); }

}  // namespace

TrainingState make_training_state(const TrainConfig& config, const ModelConfig& model,
                                  const ClassVocabulary& vocabulary) {
  config.validate();
  vocabulary.require_trainable();
  torch::manual_seed(config.seed);

  auto nets = build_networks(model, static_cast<int>(vocabulary.size()));
  TrainingState s{.config = config,
                  .model = model,
                  .vocabulary = vocabulary,
                  .nets = nets,
                  .generator_opt = make_adam(concat(nets.sketcher->parameters(), nets.painter->parameters()), config),
                  .sketch_critic_opt = make_adam(nets.sketch_critic->parameters(), config),
                  .photo_critic_opt = make_adam(nets.photo_critic->parameters(), config),
                  .classifier_opt = make_adam(nets.classifier->parameters(), config),
                  .pool = SketchPool(static_cast<size_t>(config.pool_capacity), config.pool_swap_prob,
                                     config.seed + 2),
                  .policy = MixPolicy{config.mix_threshold.value_or(default_threshold(vocabulary))},
                  .mix_rng = std::mt19937_64(config.seed + 3)};

  if (config.strategy == Strategy::pre_extracted) {
    auto bundle = load_checkpoint(config.pre_extracted_checkpoint);
    s.frozen_sketcher = load_networks(bundle).sketcher;
    s.frozen_sketcher->eval();
    set_requires_grad(*s.frozen_sketcher, false);
  }
  return s;
}

GeneratorPass generator_pass(TrainingState& s, const LabeledImageBatch& photo, const LabeledImageBatch& sketch) {
  auto& n = s.nets;
  set_requires_grad(*n.sketch_critic, false);
  set_requires_grad(*n.photo_critic, false);
  set_requires_grad(*n.classifier, false);

  const auto& p = photo.images;
  const auto& eta_p = photo.labels;
  const auto& real_sketch = sketch.images;
  const auto& eta_s = sketch.labels;

  GeneratorPass g;
  g.fake_sketch = n.sketcher(p);
  g.mixed_sketch = real_sketch;
  g.mixed_labels = eta_s;

  if (s.config.strategy != Strategy::none && should_substitute(s.policy, s.mix_rng)) {
    g.substituted = true;
    if (s.config.strategy == Strategy::random_mixed) {
      auto pooled = s.pool.query({g.fake_sketch.detach(), eta_p});
      g.mixed_sketch = pooled.sketches;
      g.mixed_labels = pooled.labels;
    } else {
      torch::NoGradGuard no_grad;
      g.mixed_sketch = s.frozen_sketcher(p);
      g.mixed_labels = eta_p.clone();
    }
  }

  g.reconstructed = n.painter(g.fake_sketch, eta_p);
  g.fake_photo = n.painter(real_sketch, eta_s);
  g.mixed_photo = g.substituted ? n.painter(g.mixed_sketch, g.mixed_labels) : g.fake_photo;

  g.parts.g_s_adv = gen_adversarial_loss(n.sketch_critic(g.fake_sketch));
  g.parts.g_p_adv = gen_adversarial_loss(n.photo_critic(g.mixed_photo));
  g.parts.pix = pixel_consistency_loss(g.reconstructed, p);
  g.parts.eta = focal_classification_loss(n.classifier(g.mixed_photo), g.mixed_labels, s.config.focal_gamma);
  return g;
}

torch::Tensor update_generators(TrainingState& s, const GeneratorPass& pass) {
  auto total = generator_total_loss(s.config.weights, pass.parts);
  s.generator_opt->zero_grad();
  if (!finite(total)) {
    LossReport partial;
    partial.g_s_adv = pass.parts.g_s_adv.item<double>();
    partial.g_p_adv = pass.parts.g_p_adv.item<double>();
    partial.pix = pass.parts.pix.item<double>();
    partial.eta = pass.parts.eta.item<double>();
    partial.g_total = total.item<double>();
    abort_step(s, "generator", partial);
  }
  total.backward();
  s.generator_opt->step();
  return total.detach();
}

std::pair<torch::Tensor, torch::Tensor> update_critics(TrainingState& s, const LabeledImageBatch& photo,
                                                       const LabeledImageBatch& sketch, const GeneratorPass& pass) {
  auto& n = s.nets;
  set_requires_grad(*n.sketch_critic, true);
  set_requires_grad(*n.photo_critic, true);

  // Real inputs are always dataset samples; pooled sketches never reach the critics.
  s.sketch_critic_opt->zero_grad();
  auto d_s = discriminator_update_loss(n.sketch_critic, sketch.images, pass.fake_sketch);
  if (!finite(d_s)) {
    LossReport partial;
    partial.d_s = d_s.item<double>();
    abort_step(s, "sketch_critic", partial);
  }
  d_s.backward();
  s.sketch_critic_opt->step();

  s.photo_critic_opt->zero_grad();
  auto d_p = discriminator_update_loss(n.photo_critic, photo.images, pass.fake_photo);
  if (!finite(d_p)) {
    LossReport partial;
    partial.d_p = d_p.item<double>();
    abort_step(s, "photo_critic", partial);
  }
  d_p.backward();
  s.photo_critic_opt->step();
  return {d_s.detach(), d_p.detach()};
}

torch::Tensor update_classifier(TrainingState& s, const LabeledImageBatch& photo, const LabeledImageBatch& sketch,
                                const GeneratorPass& pass) {
  auto& r = s.nets.classifier;
  set_requires_grad(*r, true);
  s.classifier_opt->zero_grad();
  auto loss = classifier_update_loss(r, photo.images, photo.labels, pass.fake_photo, sketch.labels,
                                     s.config.focal_gamma);
  if (!finite(loss)) {
    LossReport partial;
    partial.r = loss.item<double>();
    abort_step(s, "classifier", partial);
  }
  loss.backward();
  s.classifier_opt->step();
  return loss.detach();
}

LossReport train_step(TrainingState& s, const LabeledImageBatch& photo, const LabeledImageBatch& sketch) {
  if (photo.domain != Domain::photo || sketch.domain != Domain::sketch) {
    throw std::invalid_argument("train_step expects a photo batch and a sketch batch");
  }
  auto pass = generator_pass(s, photo, sketch);
  auto total = update_generators(s, pass);
  auto [d_s, d_p] = update_critics(s, photo, sketch, pass);
  auto r = update_classifier(s, photo, sketch, pass);
  ++s.step;

  LossReport rep;
  rep.g_s_adv = pass.parts.g_s_adv.item<double>();
  rep.g_p_adv = pass.parts.g_p_adv.item<double>();
  rep.pix = pass.parts.pix.item<double>();
  rep.eta = pass.parts.eta.item<double>();
  rep.g_total = total.item<double>();
  rep.d_s = d_s.item<double>();
  rep.d_p = d_p.item<double>();
  rep.r = r.item<double>();
  rep.substituted = pass.substituted;
  return rep;
}

double lr_at(const TrainConfig& c, int epoch) {
  if (epoch < 1 || epoch > c.epochs) {
    throw std::invalid_argument("epoch " + std::to_string(epoch) + " outside [1," + std::to_string(c.epochs) + "]");
  }
  const int constant_epochs = (c.epochs + 1) / 2;
  if (epoch <= constant_epochs) return c.lr;
  if (c.lr_schedule == LrSchedule::halve) return c.lr * 0.5;
  return c.lr * static_cast<double>(c.epochs - epoch) / static_cast<double>(c.epochs - constant_epochs);
}

void set_learning_rate(TrainingState& s, double lr) {
  for (auto* opt : {s.generator_opt.get(), s.sketch_critic_opt.get(), s.photo_critic_opt.get(),
                    s.classifier_opt.get()}) {
    for (auto& group : opt->param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
  }
}

int steps_per_epoch(const TrainConfig& c, const DatasetManifest& manifest) {
  if (c.steps_per_epoch > 0) return c.steps_per_epoch;
  return std::max<int>(1, static_cast<int>(manifest.photo_count()) / c.batch_size);
}

nlohmann::json StepLog::to_json() const {
  auto j = report.to_json();
  j["step"] = step;
  j["epoch"] = epoch;
  j["lr"] = lr;
  return j;
}

namespace {

// Drops log records beyond `last_step` so a resumed run continues the file seamlessly.
void truncate_log(const fs::path& log_path, int64_t last_step) {
  if (!fs::exists(log_path)) return;
  std::ifstream in(log_path);
  std::vector<std::string> kept;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (!j.is_discarded() && j.value("step", int64_t{0}) <= last_step) kept.push_back(line);
  }
  in.close();
  std::ofstream out(log_path, std::ios::trunc);
  for (const auto& l : kept) out << l << '\n';
}

void write_sample_grid(const fs::path& dir, int64_t step, const LabeledImageBatch& photo,
                       const LabeledImageBatch& sketch, const GeneratorPass& pass) {
  fs::create_directories(dir);
  auto grid = image_grid({photo.images, pass.fake_sketch, pass.reconstructed, sketch.images, pass.fake_photo});
  std::ostringstream name;
  name << "step_" << step << ".png";
  write_png(dir / name.str(), grid);
}

}  // namespace

RunResult run_training(const TrainConfig& config, const ModelConfig& model, const DatasetManifest& manifest,
                       const RunOptions& options) {
  config.validate();
  if (options.out_dir.empty()) throw ConfigError("run_training needs an output directory");
  fs::create_directories(options.out_dir);

  auto state = make_training_state(config, model, manifest.vocabulary);
  BatchSampler sampler(manifest, config.image_size, config.seed + 1);

  const fs::path log_path = options.out_dir / "train_log.jsonl";
  if (options.resume) {
    LoadOptions lo;
    lo.expected_fingerprint = config_fingerprint(model, manifest.vocabulary);
    lo.force = options.force;
    auto bundle = load_checkpoint(*options.resume, lo);
    restore_training_state(bundle, state, &sampler);
    truncate_log(log_path, state.step);
  }
  std::ofstream log(log_path, options.resume ? std::ios::app : std::ios::trunc);
  if (!log) throw Error("cannot open training log " + log_path.string());

  const int per_epoch = steps_per_epoch(config, manifest);
  RunResult result;
  for (int epoch = state.epoch + 1; epoch <= config.epochs; ++epoch) {
    const double lr = lr_at(config, epoch);
    set_learning_rate(state, lr);
    for (int i = 0; i < per_epoch; ++i) {
      auto [photo, sketch] = sampler.next(config.batch_size);
      GeneratorPass preview;
      StepLog entry{state.step + 1, epoch, lr, train_step(state, photo, sketch)};
      log << entry.to_json().dump() << '\n';
      if (!log) throw Error("failed writing training log " + log_path.string());
      if (options.on_step) options.on_step(entry);
      if (config.sample_every > 0 && state.step % config.sample_every == 0) {
        torch::NoGradGuard no_grad;
        preview.fake_sketch = state.nets.sketcher(photo.images);
        preview.reconstructed = state.nets.painter(preview.fake_sketch, photo.labels);
        preview.fake_photo = state.nets.painter(sketch.images, sketch.labels);
        write_sample_grid(options.out_dir / "samples", state.step, photo, sketch, preview);
      }
    }
    log.flush();
    state.epoch = epoch;
    if (epoch % std::max(1, config.checkpoint_every) == 0 || epoch == config.epochs) {
      const auto name = "ckpt_epoch_" + std::to_string(epoch) + ".bin";
      save_checkpoint(state, options.out_dir / name, &sampler);
      std::ofstream latest(options.out_dir / "latest", std::ios::trunc);
      latest << name << '\n';
      if (!latest) throw Error("failed writing latest pointer in " + options.out_dir.string());
      result.final_checkpoint = options.out_dir / name;
    }
  }
  result.epochs_completed = state.epoch;
  result.steps = state.step;
  if (result.final_checkpoint.empty()) {
    // Resumed at or past the final epoch: nothing ran, persist the current state.
    const auto name = "ckpt_epoch_" + std::to_string(state.epoch) + ".bin";
    save_checkpoint(state, options.out_dir / name, &sampler);
    result.final_checkpoint = options.out_dir / name;
  }
  return result;
}

}  // namespace aoda
