#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "rawsim/autoexpose.hpp"
#include "rawsim/hdr.hpp"
#include "rawsim/render.hpp"
#include "rawsim/simulator.hpp"
#include "rawsim/synthetic.hpp"
#include "test_support.hpp"

namespace rawsim {
namespace {

using testing::constant_image;
using testing::random_image;

RenderParams passthrough_params() {
  RenderParams params;
  params.wb_gains = {1.0, 1.0, 1.0};
  params.gamma = 1.0;
  params.use_srgb_curve = false;
  return params;
}

TEST(RenderSrgb, BlackAndGray) {
  const Image8 black = render_srgb(constant_image(4, 4, 0.0));
  for (auto v : black.rgb) EXPECT_EQ(v, 0);

  // Linear pass-through of constant 0.5: 127.5 quantizes to 128
  // (round half away from zero).
  const Image8 gray = render_srgb(constant_image(4, 4, 0.5), passthrough_params());
  for (auto v : gray.rgb) EXPECT_EQ(v, 128);
}

TEST(RenderSrgb, MonotonePerChannelUnderUnitMatrix) {
  std::mt19937_64 rng(111);
  const RawImage a = random_image(8, 8, rng, 0.0, 0.8);
  RawImage b = a;
  std::uniform_real_distribution<double> bump(0.0, 0.2);
  for (double& v : b.data) v = clamp01(v + bump(rng));
  for (bool srgb : {false, true}) {
    RenderParams params = passthrough_params();
    params.use_srgb_curve = srgb;
    const Image8 ra = render_srgb(a, params);
    const Image8 rb = render_srgb(b, params);
    for (size_t i = 0; i < ra.rgb.size(); ++i) EXPECT_LE(ra.rgb[i], rb.rgb[i]);
  }
  RenderParams bad;
  bad.wb_gains[1] = 0.0;
  EXPECT_THROW(render_srgb(a, bad), ParameterError);
}

ExposureSettings hdr_source() {
  return ExposureSettings{1.0 / 100.0, 800.0, 8.0, synthetic_nlf_for_iso(800.0)};
}

TEST(PlanHdrBracket, SolvesExposureTimes) {
  const auto plan = plan_hdr_bracket(hdr_source());
  ASSERT_EQ(plan.size(), 17u);
  for (const ExposureSettings& target : plan) {
    EXPECT_EQ(target.iso, 100.0);
    EXPECT_EQ(target.f_number, 8.0);
  }
  // EV +1 solves t2 = 8 * 2 / 100 = 0.16 s.
  EXPECT_NEAR(plan[10].exposure_time, 0.16, 1e-12);
}

TEST(PlanHdrBracket, MultipliersAreExactPowersOfTwo) {
  const ExposureSettings source = hdr_source();
  const auto plan = plan_hdr_bracket(source);
  ASSERT_EQ(plan.size(), 17u);
  for (size_t i = 0; i < plan.size(); ++i) {
    const double ev = -4.0 + 0.5 * static_cast<double>(i);
    ASSERT_EQ(compute_alpha(source, plan[i]), std::exp2(ev)) << "EV " << ev;
  }
}

TEST(PlanHdrBracket, SourceAtMinimumIsoKeepsEvZeroIdentical) {
  ExposureSettings source{1.0 / 100.0, 100.0, 5.6, synthetic_nlf_for_iso(100.0)};
  const auto plan = plan_hdr_bracket(source);
  ASSERT_EQ(plan.size(), 17u);
  const ExposureSettings& mid = plan[8];  // EV 0
  EXPECT_EQ(mid.exposure_time, source.exposure_time);
  EXPECT_EQ(mid.iso, source.iso);
  EXPECT_EQ(mid.f_number, source.f_number);
}

TEST(PlanHdrBracket, DropsTargetsOutsideTheTimeRange) {
  // 2 s at ISO 100: +2 EV and beyond needs more than 4 s.
  ExposureSettings source{2.0, 100.0, 8.0, synthetic_nlf_for_iso(100.0)};
  std::vector<std::string> warnings;
  const auto plan = plan_hdr_bracket(source, 100.0, &warnings);
  EXPECT_LT(plan.size(), 17u);
  EXPECT_FALSE(warnings.empty());
  for (const ExposureSettings& target : plan) {
    EXPECT_GE(target.exposure_time, 1.0 / 8000.0);
    EXPECT_LE(target.exposure_time, 4.0);
  }
}

TEST(FuseExposures, IdenticalFramesPassThrough) {
  std::mt19937_64 rng(112);
  const Image8 frame = render_srgb(random_image(32, 32, rng));
  std::vector<Image8> frames{frame, frame, frame};
  const Image8 fused = fuse_exposures(frames);
  EXPECT_EQ(fused.rgb, frame.rgb);
}

TEST(FuseExposures, WeightsNormalizePerPixel) {
  std::mt19937_64 rng(113);
  std::vector<Image8> frames{render_srgb(random_image(16, 16, rng)),
                             render_srgb(random_image(16, 16, rng))};
  const auto weights = fusion_weights(frames, FusionOptions{});
  for (size_t i = 0; i < weights[0].size(); ++i) {
    EXPECT_NEAR(weights[0][i] + weights[1][i], 1.0, 1e-6);
  }
}

TEST(FuseExposures, BlackFrameLosesToMidGray) {
  const Image8 black = render_srgb(constant_image(16, 16, 0.0), passthrough_params());
  const Image8 gray = render_srgb(constant_image(16, 16, 0.45), passthrough_params());
  std::vector<Image8> frames{black, gray};
  const Image8 fused = fuse_exposures(frames);
  double mean = 0.0;
  for (auto v : fused.rgb) mean += v;
  mean /= static_cast<double>(fused.rgb.size());
  EXPECT_NEAR(mean, 115.0, 3.0);  // 0.45 * 255, well away from the black frame
  EXPECT_THROW(fuse_exposures(std::vector<Image8>{black}), ParameterError);
  std::vector<Image8> mismatched{black, render_srgb(constant_image(8, 16, 0.4))};
  EXPECT_THROW(fuse_exposures(mismatched), DimensionError);
}

// Three luminance bands spanning ~4 decades: deep shadow, mid-tones and a
// bright window, with mild texture so contrast weights have signal.
SyntheticScene hdr_fixture_scene(int planes) {
  SyntheticScene scene;
  scene.rows = planes;
  scene.cols = planes;
  scene.radiance.assign(static_cast<size_t>(planes) * planes * RawImage::kChannels, 0.0);
  scene.depth.assign(static_cast<size_t>(planes) * planes, 2.0);
  scene.focus_distance_m = 2.0;
  for (int r = 0; r < planes; ++r) {
    for (int c = 0; c < planes; ++c) {
      const double band = c < planes / 3 ? 0.005 : (c < 2 * planes / 3 ? 0.15 : 20.0);
      const double texture = 1.0 + 0.25 * std::sin(0.7 * r) * std::cos(0.9 * c);
      for (int ch = 0; ch < RawImage::kChannels; ++ch) {
        scene.radiance_at(r, c, ch) = band * texture;
      }
    }
  }
  return scene;
}

// Well-exposed-pixel-count oracle on a synthetic HDR scene: the fused result
// must beat every single bracket frame. Frames are rendered linearly so the
// exposedness thresholds act on sensor units.
TEST(FuseExposures, RecoversShadowAndHighlightDetail) {
  SimulatorModel model;
  const SyntheticScene scene = hdr_fixture_scene(96);
  ExposureSettings source{1.0 / 50.0, 800.0, 8.0, synthetic_nlf_for_iso(800.0)};
  const RawImage raw = render_with_settings(scene, source, synthetic_reference_settings(), 17);
  const auto plan = plan_hdr_bracket(source);
  ASSERT_EQ(plan.size(), 17u);
  std::vector<Image8> frames;
  StageOptions options;
  options.seed = 31;
  for (size_t i = 0; i < plan.size(); i += 2) {  // every full EV keeps the test quick
    StageOptions opt = options;
    opt.seed += i;
    frames.push_back(render_srgb(simulate(model, raw, plan[i], opt), passthrough_params()));
  }
  const Image8 fused = fuse_exposures(frames);
  const double fused_score = well_exposed_fraction(fused);
  for (size_t i = 0; i < frames.size(); ++i) {
    EXPECT_GT(fused_score, well_exposed_fraction(frames[i])) << "frame " << i;
  }
}

TEST(AutoExpose, SingleCandidateWins) {
  SimulatorModel model;
  const SyntheticScene scene = generate_synthetic_scene(77, 32);
  const RawImage raw = render_with_settings(scene, synthetic_reference_settings(),
                                            synthetic_reference_settings(), 3);
  std::vector<ExposureSettings> only{synthetic_reference_settings()};
  const ExposureState best = auto_expose(model, raw, only, default_defect_score);
  EXPECT_EQ(best.settings.iso, only[0].iso);
  EXPECT_THROW(auto_expose(model, raw, std::vector<ExposureSettings>{}, default_defect_score),
               ParameterError);
}

TEST(AutoExpose, SaturatingCandidateScoresWorse) {
  SimulatorModel model;
  const SyntheticScene scene = generate_synthetic_scene(78, 32);
  const RawImage raw = render_with_settings(scene, synthetic_reference_settings(),
                                            synthetic_reference_settings(), 4);
  ExposureSettings mid = synthetic_reference_settings();
  ExposureSettings blown = mid;
  blown.exposure_time = 2.0;  // +7.6 EV, saturates nearly everything
  std::vector<ExposureSettings> candidates{blown, mid};
  std::vector<ExposureState> table;
  const ExposureState best =
      auto_expose(model, raw, candidates, default_defect_score, {}, &table);
  ASSERT_EQ(table.size(), 2u);
  EXPECT_GT(table[0].score, table[1].score);
  EXPECT_EQ(best.settings.exposure_time, mid.exposure_time);
}

TEST(AutoExpose, FullGridReportsAllScores) {
  SimulatorModel model;
  const SyntheticScene scene = generate_synthetic_scene(79, 32);
  const RawImage raw = render_with_settings(scene, synthetic_reference_settings(),
                                            synthetic_reference_settings(), 5);
  const auto grid = default_candidate_grid(raw.settings);
  ASSERT_EQ(grid.size(), 64u);
  std::vector<ExposureState> table;
  auto_expose(model, raw, grid, default_defect_score, {}, &table);
  EXPECT_EQ(table.size(), 64u);
  for (const ExposureState& state : table) EXPECT_TRUE(std::isfinite(state.score));
}

TEST(AutoExpose, PermutationInvariantUpToTieBreak) {
  SimulatorModel model;
  const SyntheticScene scene = generate_synthetic_scene(80, 32);
  const RawImage raw = render_with_settings(scene, synthetic_reference_settings(),
                                            synthetic_reference_settings(), 6);
  auto grid = default_candidate_grid(raw.settings);
  grid.resize(8);
  StageOptions options;
  options.renoise = false;  // keep scores independent of candidate order
  const ExposureState a = auto_expose(model, raw, grid, default_defect_score, options);
  std::vector<ExposureSettings> reversed(grid.rbegin(), grid.rend());
  const ExposureState b = auto_expose(model, raw, reversed, default_defect_score, options);
  EXPECT_EQ(a.score, b.score);
}

}  // namespace
}  // namespace rawsim
