#include "gcr/evaluation.hpp"
#include "gcr/grad_check_suite.hpp"
#include "gcr/synthetic.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

using namespace gcr;

namespace {

DistanceMatrix square(std::size_t n, const std::function<double(std::size_t, std::size_t)>& d) {
  DistanceMatrix m;
  m.probe_ids.resize(n);
  std::iota(m.probe_ids.begin(), m.probe_ids.end(), 0);
  m.gallery_ids = m.probe_ids;
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t g = 0; g < n; ++g) m.values.push_back(d(p, g));
  return m;
}

struct EvalFixture {
  Dataset data;
  Model<double> model;
};

EvalFixture eval_setup(std::size_t identities = 3) {
  GeneratorConfig g;
  g.num_identities = identities;
  g.height = 20;
  g.width = 12;
  g.min_frames = 5;
  g.max_frames = 7;
  g.seed = 23;
  EvalFixture f;
  f.data = generate_dataset(g);
  TrainConfig t;
  t.crop_height = 16;
  t.crop_width = 8;
  f.model = init_training<double>(f.data, tiny_network_config(), t).model;
  return f;
}

double l2(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

}  // namespace

TEST(CropOffsetTest, EightPositionsInFixedOrder) {
  const auto o = crop_offsets(20, 12, 16, 8);
  const std::vector<CropOffset> expected{{0, 0}, {0, 2}, {0, 4}, {2, 0}, {2, 4}, {4, 0}, {4, 2}, {4, 4}};
  EXPECT_EQ(o, expected);
  for (const auto& c : crop_offsets(16, 8, 16, 8)) EXPECT_EQ(c, (CropOffset{0, 0}));
  EXPECT_THROW(crop_offsets(10, 12, 16, 8), std::invalid_argument);
}

TEST(CmcTest, PerfectDistancesGiveFullRankOne) {
  const auto curve = cmc_from_distances(square(7, [](std::size_t p, std::size_t g) { return p == g ? 0.0 : 1.0; }));
  ASSERT_EQ(curve.ranks.size(), 7u);
  for (double r : curve.ranks) EXPECT_EQ(r, 100.0);
}

TEST(CmcTest, TiesKeepGalleryOrder) {
  const std::size_t n = 5;
  const auto curve = cmc_from_distances(square(n, [](std::size_t, std::size_t) { return 1.0; }));
  // probe p's match sits at gallery position p, so exactly m probes hit within rank m
  for (std::size_t m = 1; m <= n; ++m) EXPECT_DOUBLE_EQ(curve.at(m), 100.0 * double(m) / double(n));
}

TEST(CmcTest, HandRankedExample) {
  DistanceMatrix d;
  d.probe_ids = {10, 20, 30};
  d.gallery_ids = {30, 10, 20};
  d.values = {0.5, 0.7, 0.1,   // probe 10 sorts to 20, 30, 10: rank 3
              2.0, 3.0, 1.0,   // probe 20 sorts to 20, 30, 10: rank 1
              0.9, 0.2, 0.3};  // probe 30 sorts to 10, 20, 30: rank 3
  const auto curve = cmc_from_distances(d);
  EXPECT_DOUBLE_EQ(curve.at(1), 100.0 / 3);
  EXPECT_DOUBLE_EQ(curve.at(2), 100.0 / 3);
  EXPECT_DOUBLE_EQ(curve.at(3), 100.0);
  EXPECT_DOUBLE_EQ(curve.at(99), 100.0);
}

TEST(CmcTest, RandomDistancesMatchChanceLevelMonteCarlo) {
  const std::size_t n = 20, resamples = 200;
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> sum(n, 0);
  for (std::size_t r = 0; r < resamples; ++r) {
    const auto curve = cmc_from_distances(square(n, [&](std::size_t, std::size_t) { return u(rng); }));
    for (std::size_t m = 0; m < n; ++m) {
      sum[m] += curve.ranks[m];
      if (m > 0) ASSERT_GE(curve.ranks[m], curve.ranks[m - 1]);
    }
    ASSERT_EQ(curve.ranks.back(), 100.0);
  }
  // Each probe hits within rank m with probability m / n; the mean of 200
  // resamples of 20 probes has standard error 100 * sqrt(q (1 - q) / 4000).
  for (std::size_t m : {1u, 5u, 10u}) {
    const double q = double(m) / double(n);
    const double se = 100.0 * std::sqrt(q * (1 - q) / double(n * resamples));
    EXPECT_NEAR(sum[m - 1] / double(resamples), 100.0 * q, 3 * se) << "rank " << m;
  }
}

TEST(CmcTest, RejectsInvalidInput) {
  auto bad = square(3, [](std::size_t p, std::size_t g) { return p == g ? 0.0 : 1.0; });
  bad.values[4] = -1;
  EXPECT_THROW(cmc_from_distances(bad), std::invalid_argument);
  bad.values[4] = NAN;
  EXPECT_THROW(cmc_from_distances(bad), std::invalid_argument);
  auto missing = square(3, [](std::size_t, std::size_t) { return 1.0; });
  missing.gallery_ids[1] = 7;
  EXPECT_THROW(cmc_from_distances(missing), std::invalid_argument);
}

TEST(CmcTest, AverageAndFormat) {
  CMCCurve a{{50, 100}}, b{{0, 100}};
  const std::vector<CMCCurve> curves{a, b};
  const auto mean = average_curves(curves);
  EXPECT_EQ(mean.ranks, (std::vector<double>{25, 100}));
  EXPECT_EQ(format_cmc_table(mean), "rank\tpercentage\n1\t25.00\n2\t100.00\n");
  const std::vector<std::size_t> only{2};
  EXPECT_EQ(format_cmc_table(mean, only), "rank\tpercentage\n2\t100.00\n");
  CMCCurve c{{1, 2, 3}};
  const std::vector<CMCCurve> mismatched{a, c};
  EXPECT_THROW(average_curves(mismatched), std::invalid_argument);
}

TEST(DistanceTest, SummedDistanceHandOracle) {
  std::vector<std::vector<double>> a(16), b(16);
  double expected = 0;
  for (std::size_t v = 0; v < 16; ++v) {
    a[v] = {double(v), 0.0};
    b[v] = {0.0, 1.0};
    expected += std::sqrt(double(v * v) + 1.0);
  }
  EXPECT_NEAR(summed_distance(a, b), expected, 1e-12);
  a.pop_back();
  EXPECT_THROW(summed_distance(a, b), std::invalid_argument);
}

TEST(DistanceTest, MultiCropDistanceIsSymmetricWithZeroSelfDistance) {
  const auto f = eval_setup();
  const auto& a = *f.data.find(0, 0);
  const auto& b = *f.data.find(1, 1);
  EXPECT_EQ(multi_crop_distance(a, a, f.model), 0.0);
  EXPECT_DOUBLE_EQ(multi_crop_distance(a, b, f.model), multi_crop_distance(b, a, f.model));
  EXPECT_GT(multi_crop_distance(a, b, f.model), 0.0);
}

TEST(DistanceTest, MultiCropDistanceSumsSixteenViews) {
  const auto f = eval_setup();
  const auto& a = *f.data.find(0, 0);
  const auto& b = *f.data.find(2, 1);
  const auto offsets = crop_offsets(a.height, a.width, 16, 8);
  double expected = 0;
  for (bool flip : {false, true})
    for (const auto& o : offsets)
      expected += l2(extract_test_feature(a, f.model, o, flip), extract_test_feature(b, f.model, o, flip));
  EXPECT_NEAR(multi_crop_distance(a, b, f.model), expected, 1e-9);
  EXPECT_EQ(extract_multi_crop_features(a, f.model).size(), 16u);
}

TEST(FeatureTest, DependsOnOffsetAndFlip) {
  const auto f = eval_setup();
  const auto& clip = f.data.clips[0];
  const auto o = crop_offsets(clip.height, clip.width, 16, 8);
  const auto base = extract_test_feature(clip, f.model, o[0], false);
  EXPECT_GT(l2(base, extract_test_feature(clip, f.model, o[7], false)), 1e-9);
  EXPECT_GT(l2(base, extract_test_feature(clip, f.model, o[0], true)), 1e-9);
  EXPECT_EQ(base.size(), f.model.net.feature_dim);
}

TEST(FeatureTest, OnlyTheFirstMaxFramesAreUsed) {
  const auto f = eval_setup();
  const auto& clip = f.data.clips[0];
  ASSERT_GT(clip.frame_count, 3u);
  EvalConfig cfg;
  cfg.max_frames = 3;
  const CropOffset o{2, 2};
  const auto capped = extract_test_feature(clip, f.model, o, false, cfg);
  const auto prefix = extract_test_feature(slice_clip(clip, 0, 3), f.model, o, false);
  EXPECT_EQ(capped, prefix);
  EXPECT_NE(capped, extract_test_feature(clip, f.model, o, false));
}

TEST(DistanceMatrixTest, LayoutThreadsAndMissingGallery) {
  const auto f = eval_setup(4);
  const auto d = compute_distance_matrix(f.data, f.model);
  EXPECT_EQ(d.probe_ids, (std::vector<int>{0, 1, 2, 3}));
  EXPECT_EQ(d.gallery_ids, (std::vector<int>{0, 1, 2, 3}));
  EXPECT_DOUBLE_EQ(d(1, 2), multi_crop_distance(*f.data.find(1, 0), *f.data.find(2, 1), f.model));
  EvalConfig threaded;
  threaded.threads = 3;
  EXPECT_EQ(compute_distance_matrix(f.data, f.model, threaded).values, d.values);

  const auto curve = compute_cmc(f.data, f.model);
  EXPECT_EQ(curve.ranks.size(), 4u);
  EXPECT_EQ(curve.ranks.back(), 100.0);

  Dataset broken = f.data;
  std::erase_if(broken.clips, [](const VideoClip& c) { return c.person_id == 2 && c.camera_id == 1; });
  EXPECT_THROW(compute_distance_matrix(broken, f.model), std::invalid_argument);
}
