#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "rawsim/metrics.hpp"
#include "rawsim/raw_image.hpp"
#include "test_support.hpp"

namespace rawsim {
namespace {

using testing::constant_image;
using testing::random_image;
using testing::random_mosaic;

TEST(UnpackBayer, BlackFrameIsAllZero) {
  BayerMosaic m(2, 2);
  for (auto& v : m.data) v = 64;
  const RawImage raw = unpack_bayer(m, 64, 16383);
  ASSERT_EQ(raw.rows, 1);
  ASSERT_EQ(raw.cols, 1);
  for (double v : raw.data) EXPECT_EQ(v, 0.0);
}

TEST(UnpackBayer, SaturatedFrameIsAllOnes) {
  BayerMosaic m(2, 2);
  for (auto& v : m.data) v = 16383;
  const RawImage raw = unpack_bayer(m, 64, 16383);
  for (double v : raw.data) EXPECT_EQ(v, 1.0);
}

TEST(UnpackBayer, ClampsBelowBlackAndAboveWhite) {
  BayerMosaic m(2, 2);
  m.at(0, 0) = 10;     // below black level
  m.at(0, 1) = 20000;  // above white level (real raws do this)
  m.at(1, 0) = 64;
  m.at(1, 1) = 16383;
  const RawImage raw = unpack_bayer(m, 64, 16383);
  EXPECT_EQ(raw.at(0, 0, 0), 0.0);
  EXPECT_EQ(raw.at(0, 0, 1), 1.0);
}

TEST(UnpackBayer, RejectsOddDimensionsAndBadLevels) {
  EXPECT_THROW(unpack_bayer(BayerMosaic(3, 4), 64, 16383), DimensionError);
  EXPECT_THROW(unpack_bayer(BayerMosaic(4, 5), 64, 16383), DimensionError);
  EXPECT_THROW(unpack_bayer(BayerMosaic(4, 4), 100, 100), ParameterError);
  EXPECT_THROW(unpack_bayer(BayerMosaic(4, 4), 200, 100), ParameterError);
}

// Round-trip oracle over random integer mosaics: every CFA order must restore
// the mosaic exactly (values already inside [black, white]).
TEST(UnpackBayer, RoundTripRestoresMosaicExactly) {
  std::mt19937_64 rng(11);
  for (CfaOrder order : {CfaOrder::rggb, CfaOrder::bggr, CfaOrder::grbg, CfaOrder::gbrg}) {
    for (int trial = 0; trial < 20; ++trial) {
      const BayerMosaic m = random_mosaic(8, 8, rng, 64, 16383);
      const BayerMosaic back = pack_bayer(unpack_bayer(m, 64, 16383, order));
      ASSERT_EQ(back.data, m.data);
    }
  }
}

TEST(PackBayer, ConstantPlanesHitTheLevels) {
  const RawImage zeros = constant_image(2, 2, 0.0);
  for (auto v : pack_bayer(zeros).data) EXPECT_EQ(v, 64);
  const RawImage ones = constant_image(2, 2, 1.0);
  for (auto v : pack_bayer(ones).data) EXPECT_EQ(v, 16383);
}

// Quantization-error bound: normalized plane -> DN -> normalized stays within
// one DN step.
TEST(PackBayer, RoundTripWithinOneDn) {
  std::mt19937_64 rng(12);
  const double dn = 1.0 / (16383.0 - 64.0);
  for (int trial = 0; trial < 20; ++trial) {
    RawImage img = random_image(4, 4, rng);
    const RawImage back = unpack_bayer(pack_bayer(img), 64, 16383);
    for (size_t i = 0; i < img.data.size(); ++i) {
      EXPECT_LE(std::abs(back.data[i] - img.data[i]), dn);
    }
  }
}

TEST(OverexposureMask, ConstantCases) {
  const auto none = overexposure_mask(constant_image(4, 4, 0.5), 0.99);
  for (auto m : none) EXPECT_EQ(m, 0);
  const auto all = overexposure_mask(constant_image(4, 4, 1.0), 0.99);
  for (auto m : all) EXPECT_EQ(m, 1);
}

// Direct scan oracle: exactly the pixels above threshold are set.
TEST(OverexposureMask, SinglePixelAboveThreshold) {
  RawImage img = constant_image(4, 4, 0.5);
  img.at(2, 1, 3) = 0.995;
  const auto mask = overexposure_mask(img, 0.99);
  size_t set = 0;
  for (size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) {
      ++set;
      EXPECT_EQ(i, img.index(2, 1, 3));
    }
  }
  EXPECT_EQ(set, 1u);
}

TEST(OverexposureMask, MonotoneInThreshold) {
  std::mt19937_64 rng(13);
  const RawImage img = random_image(6, 6, rng);
  const auto loose = overexposure_mask(img, 0.3);
  const auto tight = overexposure_mask(img, 0.7);
  for (size_t i = 0; i < loose.size(); ++i) {
    if (tight[i]) EXPECT_TRUE(loose[i]);  // mask(theta2) subset of mask(theta1)
  }
  EXPECT_THROW(overexposure_mask(img, 0.0), ParameterError);
  EXPECT_THROW(overexposure_mask(img, 1.5), ParameterError);
}

TEST(Psnr, KnownValues) {
  const RawImage a = constant_image(8, 8, 0.4);
  EXPECT_EQ(compute_psnr(a, a), 100.0);
  const RawImage b = constant_image(8, 8, 0.5);
  EXPECT_NEAR(compute_psnr(a, b), 20.0, 1e-12);  // MSE 0.01
  const RawImage c = constant_image(8, 8, 0.41);
  EXPECT_NEAR(compute_psnr(a, c), 40.0, 1e-9);  // MSE 1e-4
}

TEST(Psnr, SymmetricAndShapeChecked) {
  std::mt19937_64 rng(14);
  const RawImage a = random_image(8, 8, rng);
  const RawImage b = random_image(8, 8, rng);
  EXPECT_EQ(compute_psnr(a, b), compute_psnr(b, a));
  EXPECT_THROW(compute_psnr(a, constant_image(4, 8, 0.0)), DimensionError);
}

TEST(Ssim, IdenticalImagesAreOne) {
  std::mt19937_64 rng(15);
  const RawImage a = random_image(9, 9, rng);
  EXPECT_NEAR(compute_ssim(a, a), 1.0, 1e-12);
}

TEST(Ssim, NegativeImageScoresBelowOne) {
  std::mt19937_64 rng(16);
  RawImage a = random_image(9, 9, rng, 0.0, 0.4);  // keep away from mid-gray fixed point
  RawImage b = a;
  for (double& v : b.data) v = 1.0 - v;
  EXPECT_LT(compute_ssim(a, b), 1.0);
}

// Direct formula oracle on constant images: variance and covariance vanish,
// so SSIM reduces to the luminance term.
TEST(Ssim, ConstantImagesMatchScalarFormula) {
  const double mu_x = 0.5, mu_y = 0.6;
  const RawImage a = constant_image(9, 9, mu_x);
  const RawImage b = constant_image(9, 9, mu_y);
  const double c1 = 0.01 * 0.01;
  const double expected = (2.0 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1);
  EXPECT_NEAR(compute_ssim(a, b), expected, 1e-12);
}

TEST(Ssim, SymmetricAndWindowChecked) {
  std::mt19937_64 rng(17);
  const RawImage a = random_image(10, 9, rng);
  const RawImage b = random_image(10, 9, rng);
  EXPECT_NEAR(compute_ssim(a, b), compute_ssim(b, a), 1e-15);
  EXPECT_THROW(compute_ssim(constant_image(6, 9, 0.5), constant_image(6, 9, 0.5)),
               DimensionError);
}

}  // namespace
}  // namespace rawsim
