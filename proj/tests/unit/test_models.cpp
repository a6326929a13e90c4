#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include <torch/torch.h>

#include "aoda/models.hpp"

using namespace aoda;

namespace {

double max_abs(const torch::Tensor& t) { return t.abs().max().item<double>(); }

}  // namespace

TEST(Adain, OutputStatisticsMatchTargets) {
  torch::manual_seed(0);
  auto x = torch::randn({2, 5, 16, 16}, torch::kFloat64) * 3 + 1;
  auto scale = torch::rand({2, 5}, torch::kFloat64) + 0.5;
  auto shift = torch::randn({2, 5}, torch::kFloat64);
  auto y = adain(x, scale, shift, 0.0);
  auto mean = y.mean({2, 3});
  auto std = y.var({2, 3}, /*unbiased=*/false).sqrt();
  EXPECT_LE(max_abs(mean - shift), 1e-9);
  EXPECT_LE(max_abs(std - scale), 1e-9);
}

TEST(Adain, IdentityAffineEqualsInstanceNorm) {
  torch::manual_seed(1);
  auto x = torch::randn({3, 4, 8, 8});
  auto y = adain(x, torch::ones({3, 4}), torch::zeros({3, 4}));
  auto ref = torch::instance_norm(x, {}, {}, {}, {}, true, 0.0, 1e-5, false);
  EXPECT_LE(max_abs(y - ref), 1e-5);
}

TEST(Adain, RejectsMismatchedAffineShape) {
  auto x = torch::randn({2, 4, 8, 8});
  EXPECT_ANY_THROW(adain(x, torch::ones({2, 3}), torch::zeros({2, 3})));
}

TEST(Subpixel, MatchesIndexOracle) {
  const int64_t b = 2, c = 3, r = 2, h = 3, w = 4;
  auto in = torch::arange(b * c * r * r * h * w, torch::kFloat32).reshape({b, c * r * r, h, w});
  auto out = subpixel_upsample(in, r);
  ASSERT_EQ(out.sizes(), (std::vector<int64_t>{b, c, h * r, w * r}));
  auto a = in.accessor<float, 4>();
  auto o = out.accessor<float, 4>();
  for (int64_t n = 0; n < b; ++n)
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
          for (int64_t i = 0; i < r; ++i)
            for (int64_t j = 0; j < r; ++j) ASSERT_EQ(o[n][ch][r * y + i][r * x + j], a[n][ch * r * r + i * r + j][y][x]);
}

TEST(Subpixel, DownsampleInvertsUpsample) {
  torch::manual_seed(2);
  for (int64_t r : {1, 2, 3}) {
    auto x = torch::randn({2, 4 * r * r, 5, 6});
    EXPECT_TRUE(torch::equal(subpixel_downsample(subpixel_upsample(x, r), r), x));
    auto y = torch::randn({2, 4, 5 * r, 6 * r});
    EXPECT_TRUE(torch::equal(subpixel_upsample(subpixel_downsample(y, r), r), y));
  }
  EXPECT_ANY_THROW(subpixel_upsample(torch::randn({1, 6, 4, 4}), 2));
}

TEST(Generators, ShapesAndRange) {
  torch::manual_seed(3);
  Generator gs(GeneratorSpec::photo_to_sketch(8, 2));
  Generator gp(GeneratorSpec::sketch_to_photo(4, 8, 2));
  for (int64_t s : {32, 64}) {
    auto x = torch::rand({2, 3, s, s}) * 2 - 1;
    auto ys = gs->forward(x);
    auto yp = gp->forward(x, torch::tensor({0, 3}, torch::kInt64));
    EXPECT_EQ(ys.sizes(), x.sizes());
    EXPECT_EQ(yp.sizes(), x.sizes());
    EXPECT_LE(max_abs(ys), 1.0);
    EXPECT_LE(max_abs(yp), 1.0);
  }
}

TEST(Generators, LayoutsDiffer) {
  auto s = GeneratorSpec::photo_to_sketch();
  auto p = GeneratorSpec::sketch_to_photo(10);
  EXPECT_EQ(s.conditioning, Conditioning::none);
  EXPECT_EQ(s.upsampling, Upsampling::transposed);
  EXPECT_EQ(p.conditioning, Conditioning::adain);
  EXPECT_EQ(p.upsampling, Upsampling::subpixel);
  EXPECT_EQ(p.n_residual_blocks, 9);
  EXPECT_EQ(p.base_width, 64);
}

TEST(Generators, ConditionalRequiresValidLabels) {
  Generator gp(GeneratorSpec::sketch_to_photo(3, 4, 1));
  auto x = torch::zeros({2, 3, 16, 16});
  EXPECT_ANY_THROW(gp->forward(x));
  EXPECT_ANY_THROW(gp->forward(x, torch::tensor({0, 3}, torch::kInt64)));
  EXPECT_ANY_THROW(gp->forward(x, torch::tensor({0}, torch::kInt64)));
}

TEST(Generators, IdentityInitGivesLabelIndependentOutput) {
  torch::manual_seed(4);
  Generator gp(GeneratorSpec::sketch_to_photo(3, 8, 2));
  auto x = torch::rand({1, 3, 16, 16}) * 2 - 1;
  torch::NoGradGuard g;
  auto a = gp->forward(x, torch::tensor({0}, torch::kInt64));
  auto b = gp->forward(x, torch::tensor({2}, torch::kInt64));
  EXPECT_TRUE(torch::equal(a, b));
}

TEST(Generators, PerturbedHeadsMakeOutputLabelDependent) {
  torch::manual_seed(5);
  Generator gp(GeneratorSpec::sketch_to_photo(3, 8, 2));
  {
    torch::NoGradGuard g;
    for (auto& p : gp->label_embedding->parameters()) p.add_(torch::randn_like(p) * 0.1);
  }
  auto x = torch::rand({1, 3, 16, 16}) * 2 - 1;
  torch::NoGradGuard g;
  auto a = gp->forward(x, torch::tensor({0}, torch::kInt64));
  auto b = gp->forward(x, torch::tensor({2}, torch::kInt64));
  EXPECT_GT(max_abs(a - b), 1e-4);
}

TEST(Generators, BatchItemsAreIndependent) {
  // Instance-level normalization: an item's output must not depend on its batch mates.
  torch::manual_seed(6);
  Generator gp(GeneratorSpec::sketch_to_photo(3, 8, 2));
  {
    torch::NoGradGuard g;
    for (auto& p : gp->label_embedding->parameters()) p.add_(torch::randn_like(p) * 0.1);
  }
  torch::NoGradGuard g;
  auto x = torch::rand({3, 3, 16, 16});
  auto labels = torch::tensor({0, 1, 2}, torch::kInt64);
  auto batched = gp->forward(x, labels);
  for (int64_t i = 0; i < 3; ++i) {
    auto single = gp->forward(x.slice(0, i, i + 1), labels.slice(0, i, i + 1));
    EXPECT_LE(max_abs(single[0] - batched[i]), 1e-5);
  }
}

TEST(Discriminator, DefaultLayoutHas70PixelFieldAnd30x30Logits) {
  DiscriminatorSpec spec;
  EXPECT_EQ(spec.receptive_field(), 70);
  EXPECT_EQ(spec.output_size(256), 30);
  PatchDiscriminator d(DiscriminatorSpec{5, 8});
  auto out = d->forward(torch::zeros({1, 3, 256, 256}));
  EXPECT_EQ(out.sizes(), (std::vector<int64_t>{1, 1, 30, 30}));
  EXPECT_EQ(d->score(torch::zeros({2, 3, 64, 64})).sizes(), (std::vector<int64_t>{2}));
}

TEST(Discriminator, OutputSizeFormulaMatchesForward) {
  for (int layers : {3, 4, 5}) {
    PatchDiscriminator d(DiscriminatorSpec{layers, 4});
    for (int64_t s : {32, 64, 96}) {
      auto out = d->forward(torch::zeros({1, 3, s, s}));
      EXPECT_EQ(out.size(2), (DiscriminatorSpec{layers, 4}.output_size(s))) << layers << " " << s;
    }
  }
}

TEST(Discriminator, ReceptiveFieldProbe) {
  // Without normalization each output depends only on its own input window: perturbing a pixel
  // changes exactly the logits whose interval contains it.
  torch::manual_seed(7);
  DiscriminatorSpec spec{5, 4, 3, DiscriminatorNorm::none};
  PatchDiscriminator d(spec);
  const int64_t s = 128;
  auto x = torch::randn({1, 3, s, s}, torch::kFloat64);
  d->to(torch::kFloat64);
  torch::NoGradGuard g;
  auto base = d->forward(x);
  const int64_t px = 61, py = 40;
  auto xp = x.clone();
  xp[0][0][py][px] += 5.0;
  auto changed = (d->forward(xp) - base).abs() > 0;
  const int64_t o = base.size(2);
  int64_t widest = 0;
  for (int64_t i = 0; i < o; ++i) {
    auto [y0, y1] = spec.receptive_interval(i);
    for (int64_t j = 0; j < o; ++j) {
      auto [x0, x1] = spec.receptive_interval(j);
      const bool inside = py >= y0 && py <= y1 && px >= x0 && px <= x1;
      if (inside) widest = std::max(widest, y1 - y0 + 1);
      // Outside the window the output cannot change; inside it almost surely does.
      if (!inside) ASSERT_FALSE(changed[0][0][i][j].item<bool>()) << i << "," << j;
      if (inside) EXPECT_TRUE(changed[0][0][i][j].item<bool>()) << i << "," << j;
    }
  }
  EXPECT_EQ(widest, 70);
}

TEST(Classifier, BackbonesProduceLogitsAndFeatures) {
  torch::manual_seed(8);
  for (auto backbone : {ClassifierBackbone::simple_cnn, ClassifierBackbone::hrnet_small}) {
    Classifier r(ClassifierSpec{backbone, 10, 8});
    auto x = torch::rand({2, 3, 64, 64});
    EXPECT_EQ(r->forward(x).sizes(), (std::vector<int64_t>{2, 10})) << to_string(backbone);
    EXPECT_EQ(r->features(x).sizes(), (std::vector<int64_t>{2, r->feature_dim()}));
  }
  EXPECT_EQ(parse_backbone("hrnet_small"), ClassifierBackbone::hrnet_small);
  EXPECT_ANY_THROW(parse_backbone("resnet"));
}

TEST(Classifier, HrnetGradientMatchesFiniteDifferences) {
  // Analytic gradient against a float64 central difference on 10-element slices. The step is small
  // so that it rarely moves a ReLU input across zero; at 64x64 the coarsest branch keeps 8x8 planes.
  torch::manual_seed(9);
  ClassifierSpec spec{ClassifierBackbone::hrnet_small, 3, 4};
  Classifier r32(spec), r64(spec);
  r32->to(torch::kFloat64);
  r64->to(torch::kFloat64);
  copy_state(*r32, *r64);
  auto x = torch::rand({2, 3, 64, 64}, torch::kFloat64) * 2 - 1;
  auto proj = torch::randn({2, 3}, torch::kFloat64);
  auto loss = [&](Classifier& r, torch::Dtype dt) { return (r->forward(x.to(dt)) * proj.to(dt)).sum(); };

  loss(r32, torch::kFloat64).backward();
  auto p32 = r32->named_parameters();
  auto p64 = r64->named_parameters();
  std::mt19937_64 rng(1);
  torch::NoGradGuard g;
  double worst = 0;
  for (const auto& item : p32) {
    auto grad = item.value().grad();
    if (!grad.defined()) continue;
    auto flat = p64[item.key()].view({-1});
    auto gflat = grad.reshape({-1}).to(torch::kFloat64);
    std::vector<int64_t> idx(static_cast<size_t>(flat.numel()));
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min<size_t>(10, idx.size()));
    double d2 = 0, a2 = 0, n2 = 0;
    for (int64_t i : idx) {
      const double h = 1e-6, orig = flat[i].item<double>();
      flat[i] = orig + h;
      const double up = loss(r64, torch::kFloat64).item<double>();
      flat[i] = orig - h;
      const double down = loss(r64, torch::kFloat64).item<double>();
      flat[i] = orig;
      const double num = (up - down) / (2 * h), ana = gflat[i].item<double>();
      d2 += (ana - num) * (ana - num);
      a2 += ana * ana;
      n2 += num * num;
    }
    const double rel = std::sqrt(d2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-6});
    EXPECT_LE(rel, 1e-2) << item.key();
    worst = std::max(worst, rel);
  }
  RecordProperty("worst_rel", std::to_string(worst));
}

TEST(Networks, BuildAndFreeze) {
  ModelConfig cfg{8, 1, 3, 8, ClassifierBackbone::simple_cnn, 8, 8};
  auto nets = build_networks(cfg, 4);
  EXPECT_TRUE(nets.painter->conditional());
  EXPECT_FALSE(nets.sketcher->conditional());
  EXPECT_EQ(nets.painter->label_embedding->n_classes, 4);
  set_requires_grad(*nets.photo_critic, false);
  for (const auto& p : nets.photo_critic->parameters()) EXPECT_FALSE(p.requires_grad());
  set_requires_grad(*nets.photo_critic, true);
  for (const auto& p : nets.photo_critic->parameters()) EXPECT_TRUE(p.requires_grad());
}

TEST(Networks, CopyStateReproducesOutputs) {
  ModelConfig cfg{8, 1, 3, 8, ClassifierBackbone::simple_cnn, 8, 8};
  torch::manual_seed(10);
  auto a = build_networks(cfg, 2);
  torch::manual_seed(11);
  auto b = build_networks(cfg, 2);
  copy_state(*a.sketcher, *b.sketcher);
  auto x = torch::rand({1, 3, 16, 16});
  torch::NoGradGuard g;
  EXPECT_TRUE(torch::equal(a.sketcher->forward(x), b.sketcher->forward(x)));
}

TEST(Specs, ValidationRejectsNonsense) {
  GeneratorSpec g;
  g.base_width = 0;
  EXPECT_ANY_THROW(g.validate());
  auto p = GeneratorSpec::sketch_to_photo(0);
  EXPECT_ANY_THROW(p.validate());
  EXPECT_ANY_THROW((DiscriminatorSpec{1, 64}.validate()));
  EXPECT_ANY_THROW((ClassifierSpec{ClassifierBackbone::simple_cnn, 0, 8}.validate()));
}
