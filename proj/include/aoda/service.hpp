#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "aoda/models.hpp"
#include "aoda/vocabulary.hpp"

namespace httplib {
class Server;
}

namespace aoda {

/// A frozen, read-only view of one checkpoint. Never mutated after construction, so any number
/// of requests may run forward passes on it concurrently.
struct LoadedModel {
  std::filesystem::path path;
  std::string fingerprint;
  std::string file_digest;
  ClassVocabulary vocabulary;
  ModelConfig model;
  int image_size = 256;
  Generator sketcher{nullptr};
  Generator painter{nullptr};

  static std::shared_ptr<const LoadedModel> from_file(const std::filesystem::path& path);
};

/// Holds the active synthesis checkpoint and the style checkpoints. Readers take a shared_ptr
/// snapshot; reload swaps the pointer, so in-flight requests finish on the model they started on.
class ModelStore {
 public:
  std::shared_ptr<const LoadedModel> current() const;
  void load(const std::filesystem::path& path);
  /// Re-reads the active checkpoint from disk.
  void reload();

  void add_style(const std::string& id, const std::filesystem::path& path);
  std::shared_ptr<const LoadedModel> style(const std::string& id) const;
  std::vector<std::string> style_ids() const;

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const LoadedModel> current_;
  std::map<std::string, std::shared_ptr<const LoadedModel>> styles_;
};

std::string base64_encode(const std::string& bytes);
/// Accepts an optional data-URL prefix; throws std::invalid_argument on malformed input.
std::string base64_decode(std::string text);

/// Sketch PNG/JPEG bytes -> photo PNG bytes through G_p. `output_size` resizes the result.
std::string synthesize_png(const LoadedModel& model, const std::string& sketch_bytes, int64_t label,
                           std::optional<int> output_size = std::nullopt);
/// Photo bytes -> sketch PNG bytes through G_s.
std::string extract_sketch_png(const LoadedModel& model, const std::string& photo_bytes,
                               std::optional<int> output_size = std::nullopt);

nlohmann::json info_json(const LoadedModel& model);

struct ServiceOptions {
  std::string cors_origin = "*";
  int max_output_size = 2048;
};

/// Routes: POST /synthesize, POST /extract-sketch, GET /info, POST /reload.
class InferenceService {
 public:
  explicit InferenceService(ModelStore& store, ServiceOptions options = {});
  ~InferenceService();
  InferenceService(const InferenceService&) = delete;
  InferenceService& operator=(const InferenceService&) = delete;

  /// Binds and serves until stop(); returns false if the address could not be bound.
  bool listen(const std::string& host, int port);
  /// Binds an ephemeral port and returns it (serve with listen_after_bind()).
  int bind_any_port(const std::string& host);
  bool listen_after_bind();
  void stop();
  void wait_until_ready() const;

 private:
  void install_routes();

  ModelStore& store_;
  ServiceOptions options_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace aoda
