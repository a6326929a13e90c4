#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <sstream>

#include <Eigen/Dense>
#include <torch/torch.h>

#include "aoda/errors.hpp"
#include "aoda/eval.hpp"
#include "aoda/imaging.hpp"
#include "toy_data.hpp"

namespace fs = std::filesystem;
using namespace aoda;
namespace toy = aoda::testing;

namespace {

Eigen::MatrixXd gaussian_samples(int n, int d, double shift, double scale, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd x(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) x(i, j) = shift + scale * normal(rng);
  return x;
}

// A judge whose logits ignore the image and always favour `winner`.
Judge constant_judge(const ClassVocabulary& v, int64_t winner) {
  Judge j;
  j.vocabulary = v;
  j.net = Classifier(ClassifierSpec{ClassifierBackbone::simple_cnn, static_cast<int>(v.size()), 4});
  torch::NoGradGuard g;
  j.net->fc->weight.zero_();
  j.net->fc->bias.zero_();
  j.net->fc->bias[winner] = 1.0;
  return j;
}

ClassVocabulary fruits() { return ClassVocabulary::from_names({"pineapple", "strawberry"}, {"strawberry"}); }

}  // namespace

TEST(Fid, IdenticalSetsGiveZero) {
  auto x = gaussian_samples(200, 6, 0.0, 1.0, 1);
  auto s = gaussian_stats(x);
  EXPECT_LE(frechet_distance(s, s), 1e-9);
}

TEST(Fid, DiagonalClosedForm) {
  // Independent oracle for diagonal covariances: sum (mu_a - mu_b)^2 + (sigma_a - sigma_b)^2.
  GaussianStats a{Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3)};
  GaussianStats b{Eigen::VectorXd::Constant(3, 2.0), Eigen::MatrixXd::Identity(3, 3) * 4.0};
  EXPECT_NEAR(frechet_distance(a, b), 3 * 4.0 + 3 * 1.0, 1e-9);
}

TEST(Fid, SymmetricAndNonNegative) {
  auto a = gaussian_stats(gaussian_samples(80, 5, 0.0, 1.0, 2));
  auto b = gaussian_stats(gaussian_samples(80, 5, 0.3, 1.5, 3));
  const double ab = frechet_distance(a, b), ba = frechet_distance(b, a);
  EXPECT_GE(ab, 0.0);
  EXPECT_NEAR(ab, ba, 1e-8 * std::max(1.0, ab));
}

TEST(Fid, RankDeficientCovarianceStaysFinite) {
  // Fewer samples than dimensions: singular covariances must not produce NaN.
  auto a = gaussian_stats(gaussian_samples(4, 10, 0.0, 1.0, 4));
  auto b = gaussian_stats(gaussian_samples(4, 10, 0.0, 1.0, 5));
  const double d = frechet_distance(a, b);
  EXPECT_TRUE(std::isfinite(d));
  EXPECT_GE(d, 0.0);
  EXPECT_THROW(gaussian_stats(Eigen::MatrixXd::Zero(1, 3)), std::invalid_argument);
}

TEST(Fid, UnbiasedCovariance) {
  Eigen::MatrixXd x(2, 1);
  x << 0.0, 2.0;
  auto s = gaussian_stats(x);
  EXPECT_DOUBLE_EQ(s.mean(0), 1.0);
  EXPECT_DOUBLE_EQ(s.cov(0, 0), 2.0);
}

TEST(Fid, ComputeFidThroughExtractor) {
  torch::manual_seed(1);
  ClassifierFeatures fx(Classifier(ClassifierSpec{ClassifierBackbone::simple_cnn, 2, 4}));
  auto images = torch::rand({12, 3, 16, 16}) * 2 - 1;
  EXPECT_LE(compute_fid(images, images, fx), 1e-6);
  EXPECT_GT(compute_fid(images, torch::rand({12, 3, 16, 16}) * 0.1, fx), 0.0);
  EXPECT_THROW(compute_fid(images.slice(0, 0, 1), images, fx), std::invalid_argument);
}

TEST(Accuracy, ConstantJudgeScoresTheLabelShare) {
  auto v = fruits();
  auto judge = constant_judge(v, 1);
  LabeledImages gen{torch::zeros({10, 3, 16, 16}), torch::tensor({0, 1, 1, 0, 1, 0, 0, 0, 1, 0}, torch::kInt64)};
  EXPECT_DOUBLE_EQ(compute_accuracy(gen, judge, v), 0.4);
}

TEST(Accuracy, EmptySetAndVocabularyMismatch) {
  auto v = fruits();
  auto judge = constant_judge(v, 0);
  EXPECT_THROW(compute_accuracy(LabeledImages{torch::zeros({0, 3, 16, 16}), torch::zeros({0}, torch::kInt64)}, judge, v),
               std::invalid_argument);
  LabeledImages one{torch::zeros({1, 3, 16, 16}), torch::zeros({1}, torch::kInt64)};
  EXPECT_THROW(compute_accuracy(one, judge, ClassVocabulary::from_names({"pear", "fig"}, {})), VocabularyMismatchError);
}

TEST(Judge, LearnsSeparableClassesAndRoundTrips) {
  toy::TempDir dir("judge");
  toy::write_toy_dataset(dir.path(), {32, 20, 1, 0, 2});
  auto photos = load_labeled_photos({list_image_files(dir.path() / "photos" / "pineapple"),
                                     list_image_files(dir.path() / "photos" / "strawberry")},
                                    32);
  ASSERT_EQ(photos.size(), 40);
  JudgeOptions o;
  o.steps = 150;
  o.seed = 1;
  auto judge = train_judge(photos, fruits(), ClassifierSpec{ClassifierBackbone::simple_cnn, 2, 8}, o);
  EXPECT_EQ(judge.holdout_size, 4);
  EXPECT_GE(compute_accuracy(photos, judge, fruits()), 0.9);

  save_judge(judge, dir.path() / "judge.bin");
  auto back = load_judge(dir.path() / "judge.bin");
  EXPECT_EQ(back.vocabulary, judge.vocabulary);
  torch::NoGradGuard g;
  judge.net->eval();
  back.net->eval();
  EXPECT_TRUE(torch::equal(judge.net->forward(photos.images), back.net->forward(photos.images)));
}

TEST(Report, SplitsParseAndRender) {
  EXPECT_EQ(parse_split("full"), Split::full);
  EXPECT_EQ(parse_split("in"), Split::in_domain);
  EXPECT_EQ(parse_split("open_domain"), Split::open_domain);
  EXPECT_THROW(parse_split("half"), ConfigError);
  MetricsReport r;
  r.full = SplitMetrics{12.5, 0.75, 8, 16};
  r.open_domain = SplitMetrics{std::nullopt, 0.5, 4, 8};
  auto j = r.to_json();
  EXPECT_DOUBLE_EQ(j["full"]["fid"].get<double>(), 12.5);
  EXPECT_TRUE(j["in_domain"].is_null());
  EXPECT_TRUE(j["open_domain"]["fid"].is_null());
  EXPECT_NE(r.table().find("FID"), std::string::npos);
}

TEST(Report, EvaluateGeneratedPerSplit) {
  torch::manual_seed(3);
  auto v = fruits();
  auto judge = constant_judge(v, 0);
  ClassifierFeatures fx(judge.net);
  LabeledImages gen{torch::rand({8, 3, 16, 16}), torch::tensor({0, 0, 0, 0, 1, 1, 1, 1}, torch::kInt64)};
  LabeledImages ref{torch::rand({8, 3, 16, 16}), torch::tensor({0, 0, 0, 0, 1, 1, 1, 1}, torch::kInt64)};
  auto r = evaluate_generated(gen, ref, v, judge, fx, {Split::full, Split::in_domain, Split::open_domain});
  ASSERT_TRUE(r.full && r.in_domain && r.open_domain);
  EXPECT_DOUBLE_EQ(*r.full->acc, 0.5);
  EXPECT_DOUBLE_EQ(*r.in_domain->acc, 1.0);
  EXPECT_DOUBLE_EQ(*r.open_domain->acc, 0.0);
  EXPECT_EQ(r.open_domain->n_generated, 4);
}

TEST(Embeddings, CsvHasFeatureColumnsLabelAndTag) {
  toy::TempDir dir("embed");
  ClassifierFeatures fx(Classifier(ClassifierSpec{ClassifierBackbone::simple_cnn, 2, 4}));
  LabeledImages imgs{torch::rand({3, 3, 16, 16}), torch::tensor({0, 1, 1}, torch::kInt64)};
  export_embeddings(fx, imgs, {"p_fake", "p_fake", "p_rec"}, dir.path() / "e.csv");
  std::ifstream in(dir.path() / "e.csv");
  std::string header;
  std::getline(in, header);
  const auto dim = fx.extract(imgs.images).size(1);
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), dim + 1);
  EXPECT_EQ(header.substr(header.size() - 9), "label,tag");
  int rows = 0;
  for (std::string line; std::getline(in, line); ++rows) {
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), dim + 1);
  }
  EXPECT_EQ(rows, 3);
  EXPECT_THROW(export_embeddings(fx, imgs, {"x"}, dir.path() / "bad.csv"), std::invalid_argument);
}

TEST(GenerateTestSet, DeterministicWithManifestAndSkips) {
  toy::TempDir dir("gen");
  toy::write_toy_dataset(dir.path(), {16, 2, 2, 2, 3});
  auto v = fruits();
  auto manifest = load_dataset_manifest(dir.path(), v);
  auto sketches = evaluation_sketches(manifest);
  ASSERT_EQ(sketches.size(), 4u);  // test_sketches for both classes
  std::ofstream(dir.path() / "broken.png") << "nope";
  sketches.push_back({dir.path() / "broken.png", 0});

  torch::manual_seed(4);
  Generator gp(GeneratorSpec::sketch_to_photo(2, 4, 1));
  auto a = generate_test_set(gp, v, sketches, dir.path() / "out_a", 16);
  auto b = generate_test_set(gp, v, sketches, dir.path() / "out_b", 16);
  EXPECT_EQ(a.items.size(), 4u);
  EXPECT_EQ(a.skipped.size(), 1u);
  EXPECT_TRUE(torch::equal(a.images.images, b.images.images));
  EXPECT_TRUE(fs::exists(dir.path() / "out_a" / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir.path() / "out_a" / "strawberry_0000.png"));
  EXPECT_TRUE(a.items.back().open_domain);
}

TEST(GenerateTestSet, FallsBackToSketchFolders) {
  toy::TempDir dir("gen_fallback");
  toy::write_toy_dataset(dir.path(), {16, 1, 3, 0, 3});
  auto manifest = load_dataset_manifest(dir.path(), fruits());
  auto sketches = evaluation_sketches(manifest);
  // No test_sketches tree: every sketch file is used, including the open-domain class's.
  EXPECT_EQ(sketches.size(), 6u);
}
