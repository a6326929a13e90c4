#include "aoda/cli.hpp"

#include <csignal>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "aoda/checkpoint.hpp"
#include "aoda/config.hpp"
#include "aoda/errors.hpp"
#include "aoda/eval.hpp"
#include "aoda/imaging.hpp"
#include "aoda/service.hpp"
#include "aoda/trainer.hpp"

#ifndef AODA_VERSION
#define AODA_VERSION "0.0.0"
#endif
#ifndef AODA_GIT_DESCRIBE
#define AODA_GIT_DESCRIBE "unknown"
#endif

namespace fs = std::filesystem;

namespace aoda::cli {
namespace {

struct Common {
  std::optional<uint64_t> seed;
  fs::path out;
};

struct ConfigArgs {
  fs::path config;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c, const std::string& default_out) {
  c.out = default_out;
  cmd->add_option("--seed", c.seed, "Random seed (overrides train.seed)");
  cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
}

void add_config(CLI::App* cmd, ConfigArgs& c) {
  cmd->add_option("--config", c.config, "Config file of `section.key = value` lines");
  cmd->add_option("--set", c.overrides, "Override `section.key=value`; applied after the file, last one wins")
      ->take_all();
}

RunConfig resolve_config(const ConfigArgs& args, const Common& common) {
  RunConfig cfg = args.config.empty() ? RunConfig() : RunConfig::from_file(args.config);
  for (const auto& o : args.overrides) cfg.apply_override(o);
  if (common.seed) cfg.set("train.seed", std::to_string(*common.seed));
  return cfg;
}

void write_run_manifest(const fs::path& out, const std::string& command, const std::vector<std::string>& argv,
                        const nlohmann::json& config, uint64_t seed) {
  fs::create_directories(out);
  nlohmann::json j = {{"command", command},
                      {"argv", argv},
                      {"config", config},
                      {"seed", seed},
                      {"version", AODA_VERSION},
                      {"git", AODA_GIT_DESCRIBE},
                      {"torch", TORCH_VERSION}};
  std::ofstream(out / "run_manifest.json") << j.dump(2) << '\n';
}

std::vector<fs::path> expand_inputs(const std::vector<fs::path>& inputs) {
  std::vector<fs::path> out;
  for (const auto& p : inputs) {
    if (fs::is_directory(p)) {
      auto files = list_image_files(p);
      out.insert(out.end(), files.begin(), files.end());
    } else {
      out.push_back(p);
    }
  }
  return out;
}

fs::path resolve_checkpoint(const fs::path& p) {
  if (fs::is_directory(p)) {
    std::ifstream latest(p / "latest");
    std::string name;
    if (!(latest >> name)) throw ConfigError("no `latest` pointer in " + p.string());
    return p / name;
  }
  if (!fs::exists(p)) throw ConfigError("checkpoint not found: " + p.string());
  return p;
}

std::string vocabulary_list(const ClassVocabulary& v) {
  std::string s;
  for (int64_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + v.name(i) + (v.is_open(i) ? "*" : "");
  return s;
}

// ---------------------------------------------------------------------------

int cmd_train(const ConfigArgs& ca, const Common& common, const std::optional<fs::path>& resume, bool force,
              const std::vector<std::string>& argv) {
  auto cfg = resolve_config(ca, common);
  auto train = cfg.train();
  auto model = cfg.model();
  auto data = cfg.data();
  train.validate();
  auto vocab = make_vocabulary(data);
  vocab.require_trainable();
  auto manifest = load_dataset_manifest(data.root, vocab);
  write_run_manifest(common.out, "train", argv, cfg.to_json(), train.seed);
  std::ofstream(common.out / "dataset_manifest.json") << manifest.to_json().dump(2) << '\n';

  RunOptions opts;
  opts.out_dir = common.out;
  opts.force = force;
  if (resume) opts.resume = resolve_checkpoint(*resume);
  const int64_t spe = steps_per_epoch(train, manifest);
  opts.on_step = [spe](const StepLog& log) {
    if (log.step % std::max<int64_t>(1, spe) == 0) {
      std::cout << "epoch " << log.epoch << " step " << log.step << " lr " << log.lr << ' '
                << log.report.to_json().dump() << std::endl;
    }
  };
  std::cout << "classes: " << vocabulary_list(vocab) << " (* open-domain)\n";
  auto result = run_training(train, model, manifest, opts);
  std::cout << "final checkpoint: " << result.final_checkpoint.string() << std::endl;
  return kOk;
}

struct EvalArgs {
  fs::path checkpoint;
  fs::path data_root;
  std::vector<std::string> splits{"full", "in", "open"};
  std::optional<fs::path> judge;
  bool embeddings = false;
};

int cmd_evaluate(const EvalArgs& ea, const ConfigArgs& ca, const Common& common,
                 const std::vector<std::string>& argv) {
  auto cfg = resolve_config(ca, common);
  auto eval_cfg = cfg.eval();
  const uint64_t seed = common.seed.value_or(0);
  std::set<Split> splits;
  for (const auto& s : ea.splits) splits.insert(parse_split(s));

  auto bundle = load_checkpoint(resolve_checkpoint(ea.checkpoint));
  auto vocab = bundle.vocabulary();
  auto model_cfg = bundle.model();
  const int image_size = bundle.train().image_size;
  auto nets = load_networks(bundle);
  auto manifest = load_dataset_manifest(ea.data_root, vocab);
  write_run_manifest(common.out, "evaluate", argv, cfg.to_json(), seed);

  std::vector<std::vector<fs::path>> photos;
  for (const auto& c : manifest.classes) photos.push_back(c.photos);
  auto reference = load_labeled_photos(photos, image_size);

  Judge judge;
  if (ea.judge && fs::exists(*ea.judge)) {
    judge = load_judge(*ea.judge);
  } else {
    JudgeOptions jo;
    jo.steps = eval_cfg.judge_steps;
    jo.lr = eval_cfg.judge_lr;
    jo.seed = seed;
    judge = train_judge(reference, vocab, model_cfg.classifier_spec(static_cast<int>(vocab.size())), jo);
    save_judge(judge, ea.judge.value_or(common.out / "judge.bin"));
    std::cout << "judge holdout accuracy " << judge.holdout_accuracy << " on " << judge.holdout_size << " photos\n";
  }

  auto generated = generate_test_set(nets.painter, vocab, evaluation_sketches(manifest), common.out / "generated",
                                     image_size);
  if (generated.items.empty()) throw ConfigError("no readable evaluation sketches under " + ea.data_root.string());

  std::unique_ptr<FeatureExtractor> extractor;
  if (eval_cfg.feature_extractor == "judge") {
    extractor = std::make_unique<ClassifierFeatures>(judge.net);
  } else {
    extractor = std::make_unique<TorchScriptFeatures>(eval_cfg.feature_extractor, eval_cfg.feature_input_size);
  }
  auto report = evaluate_generated(generated.images, reference, vocab, judge, *extractor, splits);
  std::ofstream(common.out / "metrics.json") << report.to_json().dump(2) << '\n';
  std::ofstream(common.out / "metrics.txt") << report.table();
  std::cout << report.table();

  if (ea.embeddings) {
    // p_fake: painted from real sketches; p_rec: painted from sketches extracted from real photos.
    torch::Tensor rec;
    {
      torch::NoGradGuard no_grad;
      nets.sketcher->eval();
      nets.painter->eval();
      std::vector<torch::Tensor> chunks;
      for (int64_t i = 0; i < reference.size(); i += 16) {
        auto p = reference.images.slice(0, i, std::min(reference.size(), i + 16));
        auto l = reference.labels.slice(0, i, std::min(reference.size(), i + 16));
        chunks.push_back(nets.painter(nets.sketcher(p), l));
      }
      rec = torch::cat(chunks);
    }
    LabeledImages all{torch::cat({generated.images.images, rec}),
                      torch::cat({generated.images.labels, reference.labels})};
    std::vector<std::string> tags(static_cast<size_t>(generated.images.size()), "p_fake");
    tags.resize(static_cast<size_t>(all.size()), "p_rec");
    export_embeddings(*extractor, all, tags, common.out / "embeddings.csv");
  }
  return kOk;
}

struct ImageArgs {
  fs::path checkpoint;
  std::vector<fs::path> inputs;
  std::string label;
  std::optional<int> size;
};

int cmd_images(bool synthesize, const ImageArgs& ia, const Common& common, const std::vector<std::string>& argv) {
  auto model = LoadedModel::from_file(resolve_checkpoint(ia.checkpoint));
  int64_t label = -1;
  if (synthesize) {
    auto idx = model->vocabulary.index_of(ia.label);
    if (!idx) {
      throw VocabularyMismatchError("unknown label '" + ia.label + "'; valid labels: " +
                                    vocabulary_list(model->vocabulary));
    }
    label = *idx;
  }
  auto inputs = expand_inputs(ia.inputs);
  if (inputs.empty()) throw ConfigError("no input images given");
  write_run_manifest(common.out, synthesize ? "synthesize" : "extract-sketch", argv,
                     {{"checkpoint", model->path.string()}, {"fingerprint", model->fingerprint}},
                     common.seed.value_or(0));
  size_t ok = 0;
  std::map<std::string, int> stems;
  for (const auto& in : inputs) {
    std::string bytes;
    {
      std::ifstream f(in, std::ios::binary);
      if (!f) {
        std::cerr << "warning: skipping unreadable " << in << '\n';
        continue;
      }
      bytes.assign(std::istreambuf_iterator<char>(f), {});
    }
    std::string png;
    try {
      png = synthesize ? synthesize_png(*model, bytes, label, ia.size) : extract_sketch_png(*model, bytes, ia.size);
    } catch (const DataError& e) {
      std::cerr << "warning: skipping " << in << ": " << e.what() << '\n';
      continue;
    }
    std::string stem = in.stem().string();
    if (int n = stems[stem]++; n > 0) stem += "_" + std::to_string(n);
    const auto out = common.out / (stem + (synthesize ? "_" + ia.label : std::string("_sketch")) + ".png");
    std::ofstream(out, std::ios::binary) << png;
    std::cout << out.string() << '\n';
    ++ok;
  }
  if (ok == 0) throw ConfigError("none of the " + std::to_string(inputs.size()) + " inputs could be processed");
  return kOk;
}

struct ServeArgs {
  std::optional<fs::path> checkpoint;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::vector<std::string> styles;
  std::string cors_origin = "*";
};

InferenceService* g_service = nullptr;

int cmd_serve(const ServeArgs& sa, const Common& common) {
  if (common.seed) torch::manual_seed(*common.seed);
  ModelStore store;
  if (sa.checkpoint) store.load(resolve_checkpoint(*sa.checkpoint));
  for (const auto& s : sa.styles) {
    auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--styles expects id=path, got '" + s + "'");
    store.add_style(s.substr(0, eq), resolve_checkpoint(s.substr(eq + 1)));
  }
  ServiceOptions so;
  so.cors_origin = sa.cors_origin;
  InferenceService service(store, so);
  g_service = &service;
  std::signal(SIGINT, [](int) {
    if (g_service) g_service->stop();
  });
  std::signal(SIGTERM, [](int) {
    if (g_service) g_service->stop();
  });
  std::cout << "listening on http://" << sa.host << ':' << sa.port << std::endl;
  const bool ok = service.listen(sa.host, sa.port);
  g_service = nullptr;
  if (!ok) throw ConfigError("cannot listen on " + sa.host + ":" + std::to_string(sa.port));
  return kOk;
}

int cmd_dump_pool(const fs::path& checkpoint, const Common& common, const std::vector<std::string>& argv) {
  auto bundle = load_checkpoint(resolve_checkpoint(checkpoint));
  auto vocab = bundle.vocabulary();
  write_run_manifest(common.out, "dump-pool", argv, {{"checkpoint", checkpoint.string()}}, common.seed.value_or(0));
  const size_t count = bundle.meta.at("pool").at("count").get<size_t>();
  nlohmann::json entries = nlohmann::json::array();
  char name[32];
  for (size_t i = 0; i < count; ++i) {
    std::snprintf(name, sizeof(name), "%06zu", i);
    const auto& sketches = bundle.tensors.at("pool/" + std::string(name) + "/sketches");
    const auto& labels = bundle.tensors.at("pool/" + std::string(name) + "/labels");
    const auto file = "entry_" + std::string(name) + ".png";
    write_png(common.out / file, image_grid({sketches}));
    nlohmann::json names = nlohmann::json::array();
    for (int64_t k = 0; k < labels.size(0); ++k) names.push_back(vocab.name(labels[k].item<int64_t>()));
    entries.push_back({{"file", file}, {"labels", names}});
  }
  std::ofstream(common.out / "pool.json") << nlohmann::json{{"capacity", bundle.meta.at("pool").at("capacity")},
                                                            {"entries", entries}}
                                                 .dump(2)
                                          << '\n';
  std::cout << count << " pool entries written to " << common.out.string() << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

int run(int argc, const char* const* argv) {
  CLI::App app{"AODA sketch-to-photo synthesis with open-domain classes"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(AODA_VERSION) + " (" + AODA_GIT_DESCRIBE + ")");
  app.footer(RunConfig::help_text());

  Common common;
  ConfigArgs config_args;

  auto* train = app.add_subcommand("train", "Train all five networks");
  add_common(train, common, "runs/train");
  add_config(train, config_args);
  std::optional<fs::path> resume;
  bool force = false;
  train->add_option("--resume", resume, "Checkpoint file (or run directory) to resume from");
  train->add_flag("--force", force, "Resume even if the architecture fingerprint differs");
  train->footer(RunConfig::help_text());

  EvalArgs eval_args;
  auto* evaluate = app.add_subcommand("evaluate", "FID and judge accuracy on full / in-domain / open-domain splits");
  add_common(evaluate, common, "runs/eval");
  add_config(evaluate, config_args);
  evaluate->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint file or run directory")->required();
  evaluate->add_option("--data", eval_args.data_root, "Dataset root")->required();
  evaluate->add_option("--splits", eval_args.splits, "Any of full, in, open")->delimiter(',')->capture_default_str();
  evaluate->add_option("--judge", eval_args.judge, "Judge classifier file; trained and saved here if missing");
  evaluate->add_flag("--embeddings", eval_args.embeddings, "Also write embeddings.csv (p_fake and p_rec rows)");

  ImageArgs synth_args;
  auto* synthesize = app.add_subcommand("synthesize", "Sketch(es) + class label -> photo(s)");
  add_common(synthesize, common, "runs/synthesize");
  synthesize->add_option("--checkpoint", synth_args.checkpoint, "Checkpoint file or run directory")->required();
  synthesize->add_option("--label", synth_args.label, "Class name")->required();
  synthesize->add_option("--size", synth_args.size, "Output size in pixels");
  synthesize->add_option("inputs", synth_args.inputs, "Sketch files or directories")->required();

  ImageArgs extract_args;
  auto* extract = app.add_subcommand("extract-sketch", "Photo(s) -> sketch(es)");
  add_common(extract, common, "runs/extract");
  extract->add_option("--checkpoint", extract_args.checkpoint, "Checkpoint file or run directory")->required();
  extract->add_option("--size", extract_args.size, "Output size in pixels");
  extract->add_option("inputs", extract_args.inputs, "Photo files or directories")->required();

  ServeArgs serve_args;
  auto* serve = app.add_subcommand("serve", "HTTP inference service");
  add_common(serve, common, "runs/serve");
  serve->add_option("--checkpoint", serve_args.checkpoint, "Checkpoint for /synthesize and /info");
  serve->add_option("--host", serve_args.host)->capture_default_str();
  serve->add_option("--port", serve_args.port)->capture_default_str();
  serve->add_option("--styles", serve_args.styles, "Sketch style checkpoints as id=path")->take_all();
  serve->add_option("--cors-origin", serve_args.cors_origin)->capture_default_str();

  fs::path pool_checkpoint;
  auto* dump_pool = app.add_subcommand("dump-pool", "Write the sketch pool stored in a checkpoint as PNGs");
  add_common(dump_pool, common, "runs/pool");
  dump_pool->add_option("--checkpoint", pool_checkpoint, "Checkpoint file or run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  const std::vector<std::string> args(argv, argv + argc);
  try {
    if (*train) return cmd_train(config_args, common, resume, force, args);
    if (*evaluate) return cmd_evaluate(eval_args, config_args, common, args);
    if (*synthesize) return cmd_images(true, synth_args, common, args);
    if (*extract) return cmd_images(false, extract_args, common, args);
    if (*serve) return cmd_serve(serve_args, common);
    if (*dump_pool) return cmd_dump_pool(pool_checkpoint, common, args);
  } catch (const TrainingAbort& e) {
    std::cerr << "training aborted: " << e.what() << '\n';
    return kAbort;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const VocabularyMismatchError& e) {
    std::cerr << "vocabulary error: " << e.what() << '\n';
    return kUsage;
  } catch (const IntegrityError& e) {
    std::cerr << "checkpoint error: " << e.what() << '\n';
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kAbort;
  }
  return kUsage;
}

}  // namespace aoda::cli
