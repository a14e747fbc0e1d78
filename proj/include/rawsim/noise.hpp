// Stage 2: heteroscedastic raw-noise modeling. The per-ISO noise level
// function predicts signal-dependent variance; stage output is a residual
// denoiser conditioned on the per-pixel noise level map.
#pragma once

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "rawsim/errors.hpp"
#include "rawsim/raw_image.hpp"
#include "rawsim/tensor.hpp"
#include "rawsim/unet.hpp"

namespace rawsim {

// Per-pixel noise standard deviation in normalized units.
struct NoiseLevelMap {
  int rows = 0;
  int cols = 0;
  std::vector<double> sigma;  // rows * cols * 4, channel-fastest

  NoiseLevelMap() = default;
  NoiseLevelMap(int r, int c)
      : rows(r), cols(c), sigma(static_cast<size_t>(r) * c * RawImage::kChannels, 0.0) {}
  double at(int r, int c, int ch) const {
    return sigma[(static_cast<size_t>(r) * cols + c) * RawImage::kChannels + ch];
  }
};

// Shot-coefficient convention for NLF propagation under a luminance scale.
// Variance of a scaled variable picks up alpha^2, so expressed against the
// scaled signal the shot slope scales linearly; `quadratic` keeps the
// alternative literal reading available for comparison.
enum class ShotScaling { linear, quadratic };

// NLF of the image after scaling by alpha_hat, expressed as a function of the
// scaled signal: lambda_read' = a^2 * lambda_read, lambda_shot' = a * lambda_shot.
inline NoiseLevelFunction propagate_nlf(const NoiseLevelFunction& nlf, double alpha_hat,
                                        ShotScaling scaling = ShotScaling::linear) {
  if (!(alpha_hat > 0.0)) throw ParameterError("propagate_nlf: alpha_hat must be positive");
  const double shot_factor =
      scaling == ShotScaling::linear ? alpha_hat : alpha_hat * alpha_hat;
  return NoiseLevelFunction{alpha_hat * alpha_hat * nlf.lambda_read,
                            shot_factor * nlf.lambda_shot};
}

// ISO-transfer model for camera NLF parameters: read variance scales with the
// square of the gain ratio, shot variance linearly. Used wherever a target
// ISO has no calibrated NLF of its own (synthetic sidecars, HDR planning).
inline NoiseLevelFunction scale_nlf_for_iso(const NoiseLevelFunction& nlf, double iso_from,
                                            double iso_to) {
  if (!(iso_from > 0.0 && iso_to > 0.0)) throw ParameterError("ISO values must be positive");
  const double ratio = iso_to / iso_from;
  return NoiseLevelFunction{nlf.lambda_read * ratio * ratio, nlf.lambda_shot * ratio};
}

// sigma[p] = sqrt(max(lambda_read + lambda_shot * image[p], 0)); the image is
// the signal proxy (stage-1 output at inference time).
inline NoiseLevelMap noise_level_map(const RawImage& image, const NoiseLevelFunction& nlf) {
  if (!nlf.valid()) throw ParameterError("noise_level_map: invalid NLF");
  NoiseLevelMap map(image.rows, image.cols);
  for (size_t i = 0; i < image.data.size(); ++i) {
    map.sigma[i] = std::sqrt(std::max(nlf.variance_at(image.data[i]), 0.0));
  }
  return map;
}

// Adds heteroscedastic Gaussian noise per the NLF and clips to [0,1].
// Deterministic given the seed.
inline RawImage synthesize_noise(const RawImage& clean, const NoiseLevelFunction& nlf,
                                 std::uint64_t seed) {
  RawImage out = clean;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (double& v : out.data) {
    const double sigma = std::sqrt(std::max(nlf.variance_at(v), 0.0));
    v = clamp01(v + sigma * gauss(rng));
  }
  return out;
}

// Residual encoder-decoder denoiser. Input is the image concatenated with its
// noise level map (8 channels); output is a 4-channel residual whose final
// layer starts at zero, so an untrained network is the identity after the
// residual addition.
class DenoiserNet {
 public:
  explicit DenoiserNet(int base_width = 16, std::uint64_t seed = 1, int in_channels = 8)
      : width_(base_width), in_channels_(in_channels) {
    const int w = base_width;
    enc0_ = nn::ConvBlock("denoiser.enc0", in_channels, w);
    down1_ = nn::DownBlock("denoiser.down1", w, 2 * w);
    enc1_ = nn::ConvBlock("denoiser.enc1", 2 * w, 2 * w);
    down2_ = nn::DownBlock("denoiser.down2", 2 * w, 4 * w);
    bott_ = nn::ConvBlock("denoiser.bott", 4 * w, 4 * w);
    up1_ = nn::UpBlock("denoiser.up1", 4 * w, 2 * w);
    dec1_ = nn::ConvBlock("denoiser.dec1", 4 * w, 2 * w);
    up0_ = nn::UpBlock("denoiser.up0", 2 * w, w);
    dec0_ = nn::ConvBlock("denoiser.dec0", 2 * w, w);
    head_ = nn::Conv2d("denoiser.head", w, RawImage::kChannels, 3);
    std::mt19937_64 rng(seed);
    enc0_.init_random(rng);
    down1_.init_random(rng);
    enc1_.init_random(rng);
    down2_.init_random(rng);
    bott_.init_random(rng);
    up1_.init_random(rng);
    dec1_.init_random(rng);
    up0_.init_random(rng);
    dec0_.init_random(rng);
    head_.init_zero();
  }

  nn::Tensor forward(const nn::Tensor& x) {
    if (x.c != in_channels_) throw DimensionError("denoiser: expects image + noise map channels");
    e0_ = enc0_.forward(x);
    e1_ = enc1_.forward(down1_.forward(e0_));
    const nn::Tensor b = bott_.forward(down2_.forward(e1_));
    const nn::Tensor u1 = up1_.forward(b, e1_.h, e1_.w);
    const nn::Tensor d1 = dec1_.forward(cat1_.forward(u1, e1_));
    const nn::Tensor u0 = up0_.forward(d1, e0_.h, e0_.w);
    const nn::Tensor d0 = dec0_.forward(cat0_.forward(u0, e0_));
    return head_.forward(d0);
  }

  nn::Tensor backward(const nn::Tensor& gy) {
    nn::Tensor gd0 = head_.backward(gy);
    auto [gu0, ge0_skip] = cat0_.backward(dec0_.backward(gd0));
    nn::Tensor gd1 = up0_.backward(gu0);
    auto [gu1, ge1_skip] = cat1_.backward(dec1_.backward(gd1));
    nn::Tensor gb = up1_.backward(gu1);
    nn::Tensor ge1 = down2_.backward(bott_.backward(gb));
    for (size_t i = 0; i < ge1.v.size(); ++i) ge1.v[i] += ge1_skip.v[i];
    nn::Tensor ge0 = down1_.backward(enc1_.backward(ge1));
    for (size_t i = 0; i < ge0.v.size(); ++i) ge0.v[i] += ge0_skip.v[i];
    return enc0_.backward(ge0);
  }

  std::vector<nn::Parameter*> parameters() {
    std::vector<nn::Parameter*> out;
    enc0_.collect(out);
    down1_.collect(out);
    enc1_.collect(out);
    down2_.collect(out);
    bott_.collect(out);
    up1_.collect(out);
    dec1_.collect(out);
    up0_.collect(out);
    dec0_.collect(out);
    out.push_back(&head_.weight);
    out.push_back(&head_.bias);
    return out;
  }

  int base_width() const { return width_; }
  int in_channels() const { return in_channels_; }

 private:
  int width_ = 16;
  int in_channels_ = 8;
  nn::ConvBlock enc0_, enc1_, bott_, dec1_, dec0_;
  nn::DownBlock down1_, down2_;
  nn::UpBlock up1_, up0_;
  nn::Conv2d head_;
  nn::ConcatChannels cat0_, cat1_;
  nn::Tensor e0_, e1_;
};

// Builds the 8-channel (image | sigma map) network input.
inline nn::Tensor denoiser_input(const RawImage& image, const NoiseLevelMap& map) {
  if (image.rows != map.rows || image.cols != map.cols) {
    throw DimensionError("denoise: image and noise map shapes differ");
  }
  nn::Tensor x(1, image.rows, image.cols, 2 * RawImage::kChannels);
  for (int r = 0; r < image.rows; ++r)
    for (int c = 0; c < image.cols; ++c) {
      for (int ch = 0; ch < RawImage::kChannels; ++ch) {
        x.at(0, r, c, ch) = image.at(r, c, ch);
        x.at(0, r, c, RawImage::kChannels + ch) = map.at(r, c, ch);
      }
    }
  return x;
}

// Residual denoising: clip(image + net(image | map)).
inline RawImage denoise(const RawImage& image, const NoiseLevelMap& map, DenoiserNet& net) {
  const nn::Tensor residual = net.forward(denoiser_input(image, map));
  RawImage out = image;
  for (int r = 0; r < image.rows; ++r)
    for (int c = 0; c < image.cols; ++c)
      for (int ch = 0; ch < RawImage::kChannels; ++ch) {
        out.at(r, c, ch) = clamp01(image.at(r, c, ch) + residual.at(0, r, c, ch));
      }
  return out;
}

}  // namespace rawsim
