#include <gtest/gtest.h>

#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>

#include "aoda/checkpoint.hpp"
#include "aoda/errors.hpp"
#include "aoda/imaging.hpp"
#include "aoda/service.hpp"
#include "toy_data.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace aoda;
namespace toy = aoda::testing;

namespace {

ClassVocabulary scribble() {
  return ClassVocabulary::from_names(
      {"pineapple", "cookie", "orange", "watermelon", "strawberry", "chicken", "cupcake", "moon", "soccer", "basketball"},
      {"strawberry", "chicken", "cupcake", "moon", "soccer", "basketball"});
}

fs::path write_model(const fs::path& dir, const std::string& name, uint64_t seed) {
  TrainConfig t;
  t.image_size = 16;
  t.seed = seed;
  auto state = make_training_state(t, ModelConfig{8, 1, 3, 8, ClassifierBackbone::simple_cnn, 8, 8}, scribble());
  {
    // Move the label heads off identity so different labels give different photos.
    torch::NoGradGuard g;
    for (auto& p : state.nets.painter->label_embedding->parameters()) p.add_(torch::randn_like(p) * 0.2);
  }
  const auto path = dir / name;
  save_checkpoint(state, path);
  return path;
}

std::string png_of(const cv::Mat& m) {
  auto v = encode_png(m);
  return {v.begin(), v.end()};
}

std::string sketch_png(int w = 40, int h = 24) {
  return png_of(toy::draw_sketch(toy::Fruit::pineapple, std::max(w, h), 1)(cv::Rect(0, 0, w, h)).clone());
}

cv::Mat decode_b64_png(const std::string& b64) {
  const auto bytes = base64_decode(b64);
  return cv::imdecode(std::vector<uint8_t>(bytes.begin(), bytes.end()), cv::IMREAD_UNCHANGED);
}

class ServiceTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new toy::TempDir("service");
    model_ = write_model(dir_->path(), "model.bin", 1);
    style_ = write_model(dir_->path(), "style.bin", 2);
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }

  void start(bool load = true) {
    if (load) {
      store_.load(model_);
      store_.add_style("pencil", style_);
    }
    service_ = std::make_unique<InferenceService>(store_);
    port_ = service_->bind_any_port("127.0.0.1");
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { service_->listen_after_bind(); });
    service_->wait_until_ready();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
  }

  void TearDown() override {
    if (service_) service_->stop();
    if (thread_.joinable()) thread_.join();
  }

  httplib::Result post(const std::string& path, const json& body) {
    return client_->Post(path, body.dump(), "application/json");
  }

  static toy::TempDir* dir_;
  static fs::path model_, style_;
  ModelStore store_;
  std::unique_ptr<InferenceService> service_;
  std::unique_ptr<httplib::Client> client_;
  std::thread thread_;
  int port_ = 0;
};

toy::TempDir* ServiceTest::dir_ = nullptr;
fs::path ServiceTest::model_, ServiceTest::style_;

}  // namespace

TEST(Base64, RoundTripAndErrors) {
  for (const std::string& s : std::vector<std::string>{"", "f", "fo", "foo", "foob", std::string("\0\xff\x10", 3)}) {
    EXPECT_EQ(base64_decode(base64_encode(s)), s);
  }
  EXPECT_EQ(base64_encode("foobar"), "Zm9vYmFy");
  EXPECT_EQ(base64_decode("data:image/png;base64,Zm9v"), "foo");
  EXPECT_THROW(base64_decode("abc"), std::invalid_argument);
  EXPECT_THROW(base64_decode("ab!d"), std::invalid_argument);
}

TEST_F(ServiceTest, InfoListsVocabularyWithOpenFlags) {
  start();
  auto res = client_->Get("/info");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  auto j = json::parse(res->body);
  EXPECT_EQ(j["n_classes"], 10);
  EXPECT_EQ(j["n_open_domain"], 6);
  EXPECT_EQ(j["classes"][4]["name"], "strawberry");
  EXPECT_TRUE(j["classes"][4]["open_domain"].get<bool>());
  EXPECT_FALSE(j["classes"][0]["open_domain"].get<bool>());
  EXPECT_EQ(j["fingerprint"].get<std::string>().size(), 64u);
  EXPECT_EQ(j["checkpoint_sha256"], file_sha256(model_));
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
}

TEST_F(ServiceTest, SynthesizeIsDeterministicAndLabelDependent) {
  start();
  const auto b64 = base64_encode(sketch_png());
  auto a = post("/synthesize", {{"sketch", b64}, {"label", "moon"}});
  auto b = post("/synthesize", {{"sketch", b64}, {"label", "moon"}});
  auto c = post("/synthesize", {{"sketch", b64}, {"label", "cookie"}});
  ASSERT_TRUE(a && b && c);
  ASSERT_EQ(a->status, 200) << a->body;
  auto ja = json::parse(a->body), jb = json::parse(b->body), jc = json::parse(c->body);
  EXPECT_EQ(ja["photo"], jb["photo"]);
  EXPECT_NE(ja["photo"], jc["photo"]);
  EXPECT_TRUE(ja["open_domain"].get<bool>());
  EXPECT_FALSE(jc["open_domain"].get<bool>());
  auto img = decode_b64_png(ja["photo"]);
  EXPECT_EQ(img.cols, 16);
  EXPECT_EQ(img.channels(), 3);
}

TEST_F(ServiceTest, SynthesizeResizesOnRequestAndAcceptsAnyAspectRatio) {
  start();
  auto res = post("/synthesize", {{"sketch", base64_encode(sketch_png(50, 13))}, {"label", "soccer"}, {"size", 64}});
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200) << res->body;
  auto img = decode_b64_png(json::parse(res->body)["photo"]);
  EXPECT_EQ(img.cols, 64);
  EXPECT_EQ(img.rows, 64);
}

TEST_F(ServiceTest, SynthesizeErrors) {
  start();
  const auto b64 = base64_encode(sketch_png());
  auto unknown = post("/synthesize", {{"sketch", b64}, {"label", "dragon"}});
  ASSERT_TRUE(unknown);
  EXPECT_EQ(unknown->status, 422);
  EXPECT_EQ(json::parse(unknown->body)["vocabulary"].size(), 10u);

  EXPECT_EQ(post("/synthesize", {{"sketch", b64}})->status, 400);
  EXPECT_EQ(post("/synthesize", {{"label", "moon"}})->status, 400);
  EXPECT_EQ(post("/synthesize", {{"sketch", "%%%"}, {"label", "moon"}})->status, 400);
  EXPECT_EQ(post("/synthesize", {{"sketch", base64_encode("not an image")}, {"label", "moon"}})->status, 400);
  EXPECT_EQ(post("/synthesize", {{"sketch", b64}, {"label", "moon"}, {"size", 0}})->status, 400);
  EXPECT_EQ(post("/synthesize", {{"sketch", b64}, {"label", "moon"}, {"size", "big"}})->status, 400);
  EXPECT_EQ(client_->Post("/synthesize", "{not json", "application/json")->status, 400);
}

TEST_F(ServiceTest, MultipartUpload) {
  start();
  httplib::MultipartFormDataItems items = {{"sketch", sketch_png(), "s.png", "image/png"},
                                           {"label", "pineapple", "", ""}};
  auto res = client_->Post("/synthesize", items);
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200) << res->body;
  EXPECT_EQ(json::parse(res->body)["label"], "pineapple");
}

TEST_F(ServiceTest, ExtractSketchWithAndWithoutStyle) {
  start();
  const auto photo = base64_encode(png_of(toy::draw_photo(toy::Fruit::strawberry, 32, 3)));
  auto plain = post("/extract-sketch", {{"photo", photo}});
  auto styled = post("/extract-sketch", {{"photo", photo}, {"style", "pencil"}});
  ASSERT_TRUE(plain && styled);
  ASSERT_EQ(plain->status, 200) << plain->body;
  ASSERT_EQ(styled->status, 200) << styled->body;
  EXPECT_NE(json::parse(plain->body)["sketch"], json::parse(styled->body)["sketch"]);
  EXPECT_EQ(json::parse(styled->body)["style"], "pencil");
  EXPECT_EQ(post("/extract-sketch", {{"photo", photo}, {"style", "charcoal"}})->status, 404);

  auto info = json::parse(client_->Get("/info")->body);
  EXPECT_EQ(info["styles"], json::array({"pencil"}));
}

TEST_F(ServiceTest, ReloadPicksUpNewWeights) {
  start();
  const auto b64 = base64_encode(sketch_png());
  auto before = json::parse(post("/synthesize", {{"sketch", b64}, {"label", "moon"}})->body)["photo"];
  fs::copy_file(style_, model_, fs::copy_options::overwrite_existing);
  ASSERT_EQ(client_->Post("/reload", "", "application/json")->status, 200);
  auto after = json::parse(post("/synthesize", {{"sketch", b64}, {"label", "moon"}})->body)["photo"];
  EXPECT_NE(before, after);
  // Restore for the other tests in the suite.
  write_model(dir_->path(), "model.bin", 1);
}

TEST_F(ServiceTest, NoModelLoadedGives503) {
  start(false);
  EXPECT_EQ(client_->Get("/info")->status, 503);
  EXPECT_EQ(post("/synthesize", {{"sketch", base64_encode(sketch_png())}, {"label", "moon"}})->status, 503);
  EXPECT_EQ(post("/extract-sketch", {{"photo", base64_encode(sketch_png())}})->status, 503);
  EXPECT_EQ(client_->Post("/reload", "", "application/json")->status, 503);
}

TEST_F(ServiceTest, CorsPreflight) {
  start();
  auto res = client_->Options("/synthesize");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 204);
  EXPECT_EQ(res->get_header_value("Access-Control-Allow-Origin"), "*");
  EXPECT_FALSE(res->get_header_value("Access-Control-Allow-Methods").empty());
}

TEST(ServiceFunctions, ConcurrentRequestsMatchSerialOutput) {
  toy::TempDir dir("service_conc");
  ModelStore store;
  store.load(write_model(dir.path(), "m.bin", 3));
  auto model = store.current();
  const auto sketch = sketch_png();
  const auto expected = synthesize_png(*model, sketch, 7);
  std::vector<std::string> got(4);
  std::vector<std::thread> threads;
  for (size_t i = 0; i < got.size(); ++i) threads.emplace_back([&, i] { got[i] = synthesize_png(*model, sketch, 7); });
  for (auto& t : threads) t.join();
  for (const auto& g : got) EXPECT_EQ(g, expected);
  EXPECT_THROW(synthesize_png(*model, sketch, 10), VocabularyMismatchError);
}
