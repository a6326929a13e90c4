#include "aoda/service.hpp"

#include <chrono>
#include <iostream>

#include <httplib.h>
#include <openssl/evp.h>
#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "aoda/checkpoint.hpp"
#include "aoda/errors.hpp"
#include "aoda/imaging.hpp"

namespace fs = std::filesystem;

namespace aoda {

std::shared_ptr<const LoadedModel> LoadedModel::from_file(const fs::path& path) {
  auto bundle = load_checkpoint(path);
  auto nets = load_networks(bundle);
  nets.sketcher->eval();
  nets.painter->eval();
  auto m = std::make_shared<LoadedModel>();
  m->path = path;
  m->fingerprint = bundle.fingerprint();
  m->file_digest = file_sha256(path);
  m->vocabulary = bundle.vocabulary();
  m->model = bundle.model();
  m->image_size = bundle.train().image_size;
  m->sketcher = nets.sketcher;
  m->painter = nets.painter;
  return m;
}

std::shared_ptr<const LoadedModel> ModelStore::current() const {
  std::lock_guard lock(mu_);
  return current_;
}

void ModelStore::load(const fs::path& path) {
  auto m = LoadedModel::from_file(path);
  std::lock_guard lock(mu_);
  current_ = std::move(m);
}

void ModelStore::reload() {
  auto cur = current();
  if (!cur) throw ConfigError("no checkpoint loaded");
  load(cur->path);
}

void ModelStore::add_style(const std::string& id, const fs::path& path) {
  auto m = LoadedModel::from_file(path);
  std::lock_guard lock(mu_);
  styles_[id] = std::move(m);
}

std::shared_ptr<const LoadedModel> ModelStore::style(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = styles_.find(id);
  return it == styles_.end() ? nullptr : it->second;
}

std::vector<std::string> ModelStore::style_ids() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> ids;
  for (const auto& [id, _] : styles_) ids.push_back(id);
  return ids;
}

std::string base64_encode(const std::string& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<size_t>(n));
  return out;
}

std::string base64_decode(std::string text) {
  if (auto comma = text.find(','); text.rfind("data:", 0) == 0 && comma != std::string::npos) {
    text.erase(0, comma + 1);
  }
  std::erase_if(text, [](char c) { return c == '\n' || c == '\r' || c == ' '; });
  if (text.size() % 4 != 0) throw std::invalid_argument("base64 length is not a multiple of 4");
  if (text.empty()) return {};
  std::string out(text.size() / 4 * 3, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw std::invalid_argument("malformed base64");
  // EVP_DecodeBlock keeps the zero bytes produced by '=' padding.
  size_t pad = 0;
  if (text.ends_with("==")) {
    pad = 2;
  } else if (text.ends_with("=")) {
    pad = 1;
  }
  out.resize(static_cast<size_t>(n) - pad);
  return out;
}

namespace {

cv::Mat decode_request_image(const std::string& bytes) {
  std::span<const uint8_t> view(reinterpret_cast<const uint8_t*>(bytes.data()), bytes.size());
  return decode_image(view);
}

std::string run_generator(const Generator& net, const torch::Tensor& input, const torch::Tensor& labels,
                          std::optional<int> output_size) {
  torch::NoGradGuard no_grad;
  // The module handle is shared but forward does not touch parameters in eval mode.
  auto& impl = *net.ptr();
  auto out = labels.defined() ? impl.forward(input, labels) : impl.forward(input);
  cv::Mat img = tensor_to_image(out[0]);
  if (output_size && (*output_size != img.cols || *output_size != img.rows)) {
    cv::resize(img, img, cv::Size(*output_size, *output_size), 0, 0, cv::INTER_LINEAR);
  }
  auto png = encode_png(img);
  return {png.begin(), png.end()};
}

}  // namespace

std::string synthesize_png(const LoadedModel& model, const std::string& sketch_bytes, int64_t label,
                           std::optional<int> output_size) {
  if (label < 0 || label >= model.vocabulary.size()) throw VocabularyMismatchError("label index out of range");
  auto input = preprocess_image(decode_request_image(sketch_bytes), model.image_size, Domain::sketch).unsqueeze(0);
  return run_generator(model.painter, input, torch::tensor({label}, torch::kInt64), output_size);
}

std::string extract_sketch_png(const LoadedModel& model, const std::string& photo_bytes,
                               std::optional<int> output_size) {
  auto input = preprocess_image(decode_request_image(photo_bytes), model.image_size, Domain::photo).unsqueeze(0);
  return run_generator(model.sketcher, input, {}, output_size);
}

nlohmann::json info_json(const LoadedModel& model) {
  nlohmann::json classes = nlohmann::json::array();
  for (int64_t i = 0; i < model.vocabulary.size(); ++i) {
    classes.push_back({{"index", i}, {"name", model.vocabulary.name(i)}, {"open_domain", model.vocabulary.is_open(i)}});
  }
  return {{"classes", classes},
          {"n_classes", model.vocabulary.size()},
          {"n_open_domain", model.vocabulary.open_count()},
          {"fingerprint", model.fingerprint},
          {"checkpoint_sha256", model.file_digest},
          {"image_size", model.image_size},
          {"model", to_json(model.model)}};
}

namespace {

struct HttpError {
  int status;
  nlohmann::json body;
};

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

// Reads an image and string fields from either a JSON body (base64 image) or multipart form.
struct ImageRequest {
  std::string image;
  std::map<std::string, std::string> fields;
};

ImageRequest parse_image_request(const httplib::Request& req, const std::string& image_field) {
  ImageRequest out;
  if (req.is_multipart_form_data()) {
    if (!req.has_file(image_field)) throw HttpError{400, {{"error", "missing multipart field '" + image_field + "'"}}};
    out.image = req.get_file_value(image_field).content;
    for (const auto& [name, file] : req.files) {
      if (name != image_field) out.fields[name] = file.content;
    }
    return out;
  }
  auto body = nlohmann::json::parse(req.body, nullptr, false);
  if (body.is_discarded() || !body.is_object()) throw HttpError{400, {{"error", "body must be JSON or multipart"}}};
  if (!body.contains(image_field) || !body[image_field].is_string()) {
    throw HttpError{400, {{"error", "missing base64 field '" + image_field + "'"}}};
  }
  try {
    out.image = base64_decode(body[image_field].get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw HttpError{400, {{"error", std::string("image is not valid base64: ") + e.what()}}};
  }
  for (const auto& [k, v] : body.items()) {
    if (k == image_field) continue;
    out.fields[k] = v.is_string() ? v.get<std::string>() : v.dump();
  }
  return out;
}

std::optional<int> parse_size(const ImageRequest& r, int max_size) {
  auto it = r.fields.find("size");
  if (it == r.fields.end() || it->second == "null") return std::nullopt;
  int v = 0;
  try {
    size_t used = 0;
    v = std::stoi(it->second, &used);
    if (used != it->second.size()) throw std::invalid_argument("trailing characters");
  } catch (const std::exception&) {
    throw HttpError{400, {{"error", "size must be an integer"}}};
  }
  if (v < 1 || v > max_size) {
    throw HttpError{400, {{"error", "size must be in [1, " + std::to_string(max_size) + "]"}}};
  }
  return v;
}

double elapsed_ms(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
}

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const HttpError& e) {
    send_json(res, e.status, e.body);
  } catch (const DataError& e) {
    send_json(res, 400, {{"error", std::string("undecodable image: ") + e.what()}});
  } catch (const std::exception& e) {
    send_json(res, 500, {{"error", e.what()}});
  }
}

}  // namespace

InferenceService::InferenceService(ModelStore& store, ServiceOptions options)
    : store_(store), options_(std::move(options)), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

InferenceService::~InferenceService() { stop(); }

void InferenceService::install_routes() {
  auto& srv = *server_;
  const std::string origin = options_.cors_origin;
  srv.set_post_routing_handler([origin](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", origin);
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
  });
  srv.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  srv.Get("/info", [this](const httplib::Request&, httplib::Response& res) {
    auto model = store_.current();
    if (!model) return send_json(res, 503, {{"error", "no checkpoint loaded"}});
    auto body = info_json(*model);
    body["styles"] = store_.style_ids();
    send_json(res, 200, body);
  });

  srv.Post("/synthesize", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto start = std::chrono::steady_clock::now();
      auto model = store_.current();
      if (!model) throw HttpError{503, {{"error", "no checkpoint loaded"}}};
      auto r = parse_image_request(req, "sketch");
      auto label_it = r.fields.find("label");
      if (label_it == r.fields.end()) throw HttpError{400, {{"error", "missing field 'label'"}}};
      auto idx = model->vocabulary.index_of(label_it->second);
      if (!idx) {
        throw HttpError{422,
                        {{"error", "unknown label '" + label_it->second + "'"}, {"vocabulary", model->vocabulary.names()}}};
      }
      auto size = parse_size(r, options_.max_output_size);
      auto png = synthesize_png(*model, r.image, *idx, size);
      send_json(res, 200,
                {{"photo", base64_encode(png)},
                 {"label", label_it->second},
                 {"open_domain", model->vocabulary.is_open(*idx)},
                 {"fingerprint", model->fingerprint},
                 {"latency_ms", elapsed_ms(start)}});
    });
  });

  srv.Post("/extract-sketch", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto start = std::chrono::steady_clock::now();
      auto r = parse_image_request(req, "photo");
      std::shared_ptr<const LoadedModel> model;
      std::string style = "default";
      if (auto it = r.fields.find("style"); it != r.fields.end() && !it->second.empty()) {
        style = it->second;
        model = store_.style(style);
        if (!model) throw HttpError{404, {{"error", "unknown style '" + style + "'"}, {"styles", store_.style_ids()}}};
      } else {
        model = store_.current();
        if (!model) throw HttpError{503, {{"error", "no checkpoint loaded"}}};
      }
      auto size = parse_size(r, options_.max_output_size);
      auto png = extract_sketch_png(*model, r.image, size);
      send_json(res, 200,
                {{"sketch", base64_encode(png)},
                 {"style", style},
                 {"fingerprint", model->fingerprint},
                 {"latency_ms", elapsed_ms(start)}});
    });
  });

  srv.Post("/reload", [this](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] {
      if (!store_.current()) throw HttpError{503, {{"error", "no checkpoint loaded"}}};
      store_.reload();
      send_json(res, 200, {{"fingerprint", store_.current()->fingerprint}});
    });
  });
}

bool InferenceService::listen(const std::string& host, int port) { return server_->listen(host, port); }

int InferenceService::bind_any_port(const std::string& host) { return server_->bind_to_any_port(host); }

bool InferenceService::listen_after_bind() { return server_->listen_after_bind(); }

void InferenceService::stop() {
  if (server_) server_->stop();
}

void InferenceService::wait_until_ready() const { server_->wait_until_ready(); }

}  // namespace aoda
