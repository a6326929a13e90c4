#include <gtest/gtest.h>

#include <fstream>
#include <map>

#include <opencv2/imgcodecs.hpp>

#include "aoda/dataset.hpp"
#include "aoda/errors.hpp"
#include "aoda/imaging.hpp"
#include "aoda/vocabulary.hpp"
#include "toy_data.hpp"

namespace fs = std::filesystem;
using namespace aoda;
namespace toy = aoda::testing;

namespace {

const std::vector<std::string> kScribble = {"pineapple", "cookie", "orange",  "watermelon", "strawberry",
                                            "chicken",   "cupcake", "moon",   "soccer",     "basketball"};
const std::vector<std::string> kScribbleOpen = {"strawberry", "chicken", "cupcake", "moon", "soccer", "basketball"};

void write_solid(const fs::path& p, int w, int h, cv::Scalar color) {
  fs::create_directories(p.parent_path());
  cv::imwrite(p.string(), cv::Mat(h, w, CV_8UC3, color));
}

// photos for every class, sketches only where listed.
void write_tree(const fs::path& root, const std::vector<std::string>& photo_classes,
                const std::vector<std::string>& sketch_classes, int per_class = 3) {
  for (const auto& c : photo_classes) {
    for (int i = 0; i < per_class; ++i) write_solid(root / "photos" / c / (std::to_string(i) + ".png"), 12, 10, {0, 0, 200});
  }
  for (const auto& c : sketch_classes) {
    for (int i = 0; i < per_class; ++i) write_solid(root / "sketches" / c / (std::to_string(i) + ".png"), 8, 8, {255, 255, 255});
  }
}

}  // namespace

TEST(Vocabulary, IndicesFollowListedOrder) {
  auto v = ClassVocabulary::from_names(kScribble, kScribbleOpen);
  EXPECT_EQ(v.size(), 10);
  EXPECT_EQ(v.open_count(), 6);
  EXPECT_EQ(v.in_domain_count(), 4);
  EXPECT_EQ(*v.index_of("cookie"), 1);
  EXPECT_FALSE(v.index_of("dragon"));
  EXPECT_TRUE(v.is_open(4));
  EXPECT_EQ(v.in_domain_indices(), (std::vector<int64_t>{0, 1, 2, 3}));
}

TEST(Vocabulary, RejectsInvalidDefinitions) {
  EXPECT_THROW(ClassVocabulary({"a", "a"}, {}), ConfigError);
  EXPECT_THROW(ClassVocabulary({"a", ""}, {}), ConfigError);
  EXPECT_THROW(ClassVocabulary({"a", "b"}, {2}), ConfigError);
  EXPECT_THROW(ClassVocabulary::from_names({"a"}, {"b"}), ConfigError);
  EXPECT_THROW(ClassVocabulary::from_names({"a", "b"}, {"a", "b"}).require_trainable(), ConfigError);
  EXPECT_NO_THROW(ClassVocabulary::from_names({"a", "b"}, {"b"}).require_trainable());
}

TEST(Vocabulary, JsonRoundTrip) {
  auto v = ClassVocabulary::from_names(kScribble, kScribbleOpen);
  EXPECT_EQ(ClassVocabulary::from_json(v.to_json()), v);
}

TEST(Preprocess, EndpointsMapToPlusMinusOne) {
  auto white = preprocess_image(cv::Mat(20, 20, CV_8UC3, cv::Scalar(255, 255, 255)), 16, Domain::photo);
  auto black = preprocess_image(cv::Mat(20, 20, CV_8UC3, cv::Scalar(0, 0, 0)), 16, Domain::sketch);
  EXPECT_EQ(white.sizes(), (std::vector<int64_t>{3, 16, 16}));
  EXPECT_EQ(white.min().item<float>(), 1.0f);
  EXPECT_EQ(white.max().item<float>(), 1.0f);
  EXPECT_EQ(black.min().item<float>(), -1.0f);
  EXPECT_EQ(black.max().item<float>(), -1.0f);
}

TEST(Preprocess, ResizesAndReplicatesGrayscale) {
  cv::Mat gray(512, 512, CV_8UC1, cv::Scalar(128));
  auto t = preprocess_image(gray, 256, Domain::photo);
  EXPECT_EQ(t.sizes(), (std::vector<int64_t>{3, 256, 256}));
  EXPECT_TRUE(torch::equal(t[0], t[1]));
  EXPECT_TRUE(torch::equal(t[1], t[2]));
  EXPECT_NEAR(t.mean().item<double>(), 128 / 127.5 - 1, 1e-6);
}

TEST(Preprocess, ChannelOrderIsRgb) {
  // OpenCV stores BGR; a pure red BGR pixel must land in channel 0.
  auto t = preprocess_image(cv::Mat(4, 4, CV_8UC3, cv::Scalar(0, 0, 255)), 4, Domain::photo);
  EXPECT_EQ(t[0].mean().item<float>(), 1.0f);
  EXPECT_EQ(t[2].mean().item<float>(), -1.0f);
}

TEST(Preprocess, RoundTripThroughTensorToImageIsExactAtSameSize) {
  cv::Mat img(8, 8, CV_8UC3);
  cv::randu(img, 0, 256);
  auto t = preprocess_image(img, 8, Domain::photo);
  cv::Mat back = tensor_to_image(t);
  EXPECT_EQ(cv::norm(img, back, cv::NORM_INF), 0.0);
  auto again = preprocess_image(back, 8, Domain::photo);
  EXPECT_LE((again - t).abs().max().item<double>(), 1e-6);
}

TEST(Preprocess, AlphaCompositesOverWhite) {
  cv::Mat rgba(4, 4, CV_8UC4, cv::Scalar(0, 0, 0, 0));  // fully transparent
  std::vector<uint8_t> png;
  cv::imencode(".png", rgba, png);
  auto t = preprocess_image(decode_image(png), 4, Domain::sketch);
  EXPECT_EQ(t.min().item<float>(), 1.0f);
}

TEST(Preprocess, UndecodableFileCarriesPath) {
  toy::TempDir dir("bad_image");
  const auto p = dir.path() / "broken.png";
  std::ofstream(p) << "not an image";
  try {
    read_image(p);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_EQ(e.path(), p);
  }
}

TEST(Manifest, MasksOpenDomainSketches) {
  toy::TempDir dir("manifest");
  // Sketches exist for six classes on disk; two of them are declared open-domain.
  write_tree(dir.path(), kScribble, {"pineapple", "cookie", "orange", "watermelon", "strawberry", "moon"});
  auto v = ClassVocabulary::from_names(kScribble, kScribbleOpen);
  auto m = load_dataset_manifest(dir.path(), v);
  EXPECT_EQ(m.photo_count(), 30u);
  EXPECT_EQ(m.training_sketch_count(), 12u);
  for (int64_t c = 0; c < v.size(); ++c) {
    const auto& files = m.classes[static_cast<size_t>(c)];
    if (v.is_open(c)) EXPECT_TRUE(files.sketches.empty()) << v.name(c);
    if (!v.is_open(c)) EXPECT_EQ(files.sketches.size(), 3u) << v.name(c);
  }
  EXPECT_EQ(m.classes[4].excluded_sketches, 3u);
  EXPECT_EQ(m.classes[7].excluded_sketches, 3u);
}

TEST(Manifest, NoOpenDomainClasses) {
  toy::TempDir dir("manifest_closed");
  write_tree(dir.path(), {"a", "b"}, {"a", "b"});
  auto m = load_dataset_manifest(dir.path(), ClassVocabulary::from_names({"a", "b"}, {}));
  EXPECT_EQ(m.training_sketch_count(), 6u);
}

TEST(Manifest, OpenClassWithEmptySketchDirIsValid) {
  toy::TempDir dir("manifest_sheep");
  write_tree(dir.path(), {"cow", "sheep"}, {"cow"});
  fs::create_directories(dir.path() / "sketches" / "sheep");
  EXPECT_NO_THROW(load_dataset_manifest(dir.path(), ClassVocabulary::from_names({"cow", "sheep"}, {"sheep"})));
}

TEST(Manifest, Errors) {
  toy::TempDir dir("manifest_err");
  EXPECT_THROW(load_dataset_manifest(dir.path() / "missing", ClassVocabulary::from_names({"a"}, {})), ConfigError);
  write_tree(dir.path(), {"a", "stray"}, {"a"});
  EXPECT_THROW(load_dataset_manifest(dir.path(), ClassVocabulary::from_names({"a"}, {})), VocabularyMismatchError);
}

TEST(Manifest, UndecodableFileRaisesDataError) {
  toy::TempDir dir("manifest_corrupt");
  write_tree(dir.path(), {"a"}, {"a"});
  std::ofstream(dir.path() / "photos" / "a" / "zz.png") << "garbage";
  EXPECT_THROW(load_dataset_manifest(dir.path(), ClassVocabulary::from_names({"a"}, {})), DataError);
}

TEST(Manifest, JsonRoundTripAndDiscovery) {
  toy::TempDir dir("manifest_json");
  write_tree(dir.path(), {"b", "a"}, {"a"});
  EXPECT_EQ(discover_class_names(dir.path()), (std::vector<std::string>{"a", "b"}));
  auto m = load_dataset_manifest(dir.path(), ClassVocabulary::from_names({"a", "b"}, {"b"}));
  auto back = DatasetManifest::from_json(m.to_json());
  EXPECT_EQ(back.vocabulary, m.vocabulary);
  EXPECT_EQ(back.classes[0].photos, m.classes[0].photos);
  EXPECT_EQ(back.classes[0].sketches, m.classes[0].sketches);
}

class SamplerTest : public ::testing::Test {
 protected:
  void SetUp() override {
    write_tree(dir.path(), kScribble, {"pineapple", "cookie", "orange", "watermelon", "strawberry"}, 2);
    manifest = load_dataset_manifest(dir.path(), ClassVocabulary::from_names(kScribble, kScribbleOpen));
  }
  toy::TempDir dir{"sampler"};
  DatasetManifest manifest;
};

TEST_F(SamplerTest, SketchLabelsAreNeverOpenDomain) {
  BatchSampler s(manifest, 8, 3);
  for (int i = 0; i < 1000; ++i) {
    auto [photo, sketch] = next_training_batch(s, 1);
    ASSERT_FALSE(manifest.vocabulary.is_open(sketch.labels[0].item<int64_t>()));
    ASSERT_EQ(sketch.domain, Domain::sketch);
    ASSERT_EQ(photo.domain, Domain::photo);
  }
}

TEST_F(SamplerTest, PhotoSamplingIsUniformOverClasses) {
  BatchSampler s(manifest, 4, 11);
  std::map<int64_t, int> counts;
  const int n = 10000;
  for (int i = 0; i < n / 10; ++i) {
    auto [photo, sketch] = s.next(10);
    for (int64_t k = 0; k < 10; ++k) ++counts[photo.labels[k].item<int64_t>()];
  }
  ASSERT_EQ(counts.size(), 10u);
  for (const auto& [label, c] : counts) {
    EXPECT_NEAR(c, n / 10, n / 10 * 0.2) << "class " << label;
  }
}

TEST_F(SamplerTest, BatchesAreInRangeAndShaped) {
  BatchSampler s(manifest, 8, 1);
  auto [photo, sketch] = s.next(4);
  EXPECT_EQ(photo.images.sizes(), (std::vector<int64_t>{4, 3, 8, 8}));
  EXPECT_EQ(sketch.images.sizes(), (std::vector<int64_t>{4, 3, 8, 8}));
  EXPECT_LE(photo.images.abs().max().item<float>(), 1.0f);
  EXPECT_THROW(s.next(0), std::invalid_argument);
  EXPECT_THROW(s.next(-2), std::invalid_argument);
}

TEST_F(SamplerTest, SeededSequencesRepeatAndStateRestores) {
  BatchSampler a(manifest, 8, 5), b(manifest, 8, 5);
  for (int i = 0; i < 20; ++i) {
    auto [pa, sa] = a.next(2);
    auto [pb, sb] = b.next(2);
    ASSERT_TRUE(torch::equal(pa.labels, pb.labels));
    ASSERT_TRUE(torch::equal(sa.images, sb.images));
  }
  auto state = a.rng_state();
  auto [p1, s1] = a.next(3);
  b.set_rng_state(state);
  auto [p2, s2] = b.next(3);
  EXPECT_TRUE(torch::equal(p1.images, p2.images));
  EXPECT_TRUE(torch::equal(s1.labels, s2.labels));
}

TEST(Sampler, SingletonManifestAlwaysReturnsThePair) {
  toy::TempDir dir("singleton");
  write_tree(dir.path(), {"a"}, {"a"}, 1);
  auto m = load_dataset_manifest(dir.path(), ClassVocabulary::from_names({"a"}, {}));
  BatchSampler s(m, 8, 0);
  auto [p0, s0] = s.next(1);
  for (int i = 0; i < 5; ++i) {
    auto [p, sk] = s.next(1);
    EXPECT_TRUE(torch::equal(p.images, p0.images));
    EXPECT_TRUE(torch::equal(sk.images, s0.images));
  }
}
