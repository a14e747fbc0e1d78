// Stage 3: defocus-blur magnification. An encoder-decoder with attention
// gates on the skip connections; gates and adaptive layers are conditioned on
// the (input, output) f-number pair so one network covers all transitions.
#pragma once

#include <array>
#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "rawsim/errors.hpp"
#include "rawsim/raw_image.hpp"
#include "rawsim/unet.hpp"

namespace rawsim {

// f-numbers are fed to the network scaled into [0,1].
inline constexpr double kFNumberScale = 22.0;

inline double normalize_fnumber(double n) {
  if (!(n > 0.0)) throw ParameterError("f-number must be positive");
  return n / kFNumberScale;
}

// Elementwise F * beta_s * beta_c with the spatial map broadcast over
// channels and the channel map broadcast over space.
inline nn::Tensor apply_attention(const nn::Tensor& f, const nn::Tensor& beta_s,
                                  const nn::Tensor& beta_c) {
  if (beta_s.n != f.n || beta_s.h != f.h || beta_s.w != f.w || beta_s.c != 1) {
    throw DimensionError("apply_attention: spatial map shape mismatch");
  }
  if (beta_c.n != f.n || beta_c.h != 1 || beta_c.w != 1 || beta_c.c != f.c) {
    throw DimensionError("apply_attention: channel map shape mismatch");
  }
  nn::Tensor out(f.n, f.h, f.w, f.c);
  for (int in = 0; in < f.n; ++in)
    for (int ih = 0; ih < f.h; ++ih)
      for (int iw = 0; iw < f.w; ++iw) {
        const double s = beta_s.at(in, ih, iw, 0);
        for (int ic = 0; ic < f.c; ++ic) {
          out.at(in, ih, iw, ic) = f.at(in, ih, iw, ic) * s * beta_c.at(in, 0, 0, ic);
        }
      }
  return out;
}

// Attention gate over a skip connection. F_l is the encoder feature, F_r the
// coarser decoder feature one level below, bilinearly aligned to F_l. Both
// branches transform the features with a 1x1 convolution followed by an
// adaptive aperture layer, combine them with ReLU(sum), and squeeze to a map:
// the spatial branch through 1x1 conv -> adaptive layer -> sigmoid, the
// channel branch through global average pooling and a two-layer excitation.
class AttentionGate {
 public:
  AttentionGate() = default;
  AttentionGate(const std::string& name, int c_l, int c_r)
      : cl_(c_l),
        cr_(c_r),
        sp_l_(name + ".sp_l", c_l, c_l, 1, 1, 0),
        sp_r_(name + ".sp_r", c_r, c_l, 1, 1, 0),
        sp_out_(name + ".sp_out", c_l, 1, 1, 1, 0),
        ch_l_(name + ".ch_l", c_l, c_l, 1, 1, 0),
        ch_r_(name + ".ch_r", c_r, c_l, 1, 1, 0),
        ch_fc1_(name + ".ch_fc1", c_l, std::max(c_l / 4, 1), 1, 1, 0),
        ch_fc2_(name + ".ch_fc2", std::max(c_l / 4, 1), c_l, 1, 1, 0),
        sp_al_(name + ".sp_al", c_l),
        sp_ar_(name + ".sp_ar", c_l),
        sp_aout_(name + ".sp_aout", 1),
        ch_al_(name + ".ch_al", c_l),
        ch_ar_(name + ".ch_ar", c_l) {}

  void init_random(std::mt19937_64& rng) {
    sp_l_.init_random(rng);
    sp_r_.init_random(rng);
    sp_out_.init_random(rng);
    ch_l_.init_random(rng);
    ch_r_.init_random(rng);
    ch_fc1_.init_random(rng);
    ch_fc2_.init_random(rng);
    sp_al_.init_random(rng);
    sp_ar_.init_random(rng);
    sp_aout_.init_random(rng);
    ch_al_.init_random(rng);
    ch_ar_.init_random(rng);
  }

  void set_condition(const std::vector<std::array<double, 2>>& cond) {
    sp_al_.set_condition(cond);
    sp_ar_.set_condition(cond);
    sp_aout_.set_condition(cond);
    ch_al_.set_condition(cond);
    ch_ar_.set_condition(cond);
  }
  void set_condition(double n_in_norm, double n_out_norm) {
    set_condition(std::vector<std::array<double, 2>>{{n_in_norm, n_out_norm}});
  }

  nn::Tensor forward(const nn::Tensor& f_l, const nn::Tensor& f_r) {
    if (f_l.c != cl_ || f_r.c != cr_) throw DimensionError("attention gate: channel mismatch");
    fl_ = f_l;
    fr_up_ = align_.forward(f_r, f_l.h, f_l.w);

    nn::Tensor s = sp_al_.forward(sp_l_.forward(f_l));
    nn::add_inplace(s, sp_ar_.forward(sp_r_.forward(fr_up_)));
    s = sp_relu_.forward(s);
    bs_ = sp_sig_.forward(sp_aout_.forward(sp_out_.forward(s)));

    nn::Tensor t = ch_al_.forward(ch_l_.forward(f_l));
    nn::add_inplace(t, ch_ar_.forward(ch_r_.forward(fr_up_)));
    t = ch_relu_.forward(t);
    bc_ = ch_sig_.forward(ch_fc2_.forward(fc_relu_.forward(ch_fc1_.forward(pool_.forward(t)))));

    return apply_attention(f_l, bs_, bc_);
  }

  // Returns gradients with respect to (F_l, F_r).
  std::pair<nn::Tensor, nn::Tensor> backward(const nn::Tensor& gy) {
    nn::Tensor gfl(fl_.n, fl_.h, fl_.w, fl_.c);
    nn::Tensor gbs(fl_.n, fl_.h, fl_.w, 1);
    nn::Tensor gbc(fl_.n, 1, 1, fl_.c);
    for (int in = 0; in < fl_.n; ++in)
      for (int ih = 0; ih < fl_.h; ++ih)
        for (int iw = 0; iw < fl_.w; ++iw) {
          const double s = bs_.at(in, ih, iw, 0);
          double acc_s = 0.0;
          for (int ic = 0; ic < fl_.c; ++ic) {
            const double g = gy.at(in, ih, iw, ic);
            const double f = fl_.at(in, ih, iw, ic);
            const double c = bc_.at(in, 0, 0, ic);
            gfl.at(in, ih, iw, ic) = g * s * c;
            acc_s += g * f * c;
            gbc.at(in, 0, 0, ic) += g * f * s;
          }
          gbs.at(in, ih, iw, 0) = acc_s;
        }

    nn::Tensor gs = sp_relu_.backward(
        sp_out_.backward(sp_aout_.backward(sp_sig_.backward(gbs))));
    nn::Tensor gfl_sp = sp_l_.backward(sp_al_.backward(gs));
    nn::Tensor gfr_sp = sp_r_.backward(sp_ar_.backward(gs));

    nn::Tensor gt = ch_relu_.backward(pool_.backward(
        ch_fc1_.backward(fc_relu_.backward(ch_fc2_.backward(ch_sig_.backward(gbc))))));
    nn::Tensor gfl_ch = ch_l_.backward(ch_al_.backward(gt));
    nn::Tensor gfr_ch = ch_r_.backward(ch_ar_.backward(gt));

    nn::add_inplace(gfl, gfl_sp);
    nn::add_inplace(gfl, gfl_ch);
    nn::add_inplace(gfr_sp, gfr_ch);
    return {std::move(gfl), align_.backward(gfr_sp)};
  }

  // Maps from the most recent forward pass.
  const nn::Tensor& spatial_map() const { return bs_; }
  const nn::Tensor& channel_map() const { return bc_; }

  void collect(std::vector<nn::Parameter*>& out) {
    for (nn::Conv2d* c : {&sp_l_, &sp_r_, &sp_out_, &ch_l_, &ch_r_, &ch_fc1_, &ch_fc2_}) {
      out.push_back(&c->weight);
      out.push_back(&c->bias);
    }
    for (nn::AdaptiveApertureLayer* a : {&sp_al_, &sp_ar_, &sp_aout_, &ch_al_, &ch_ar_}) {
      out.push_back(&a->w_gain);
      out.push_back(&a->b_gain);
      out.push_back(&a->w_shift);
      out.push_back(&a->b_shift);
    }
  }

  // Direct access for layer-by-layer replay in tests.
  nn::Conv2d& spatial_conv_l() { return sp_l_; }
  nn::Conv2d& spatial_conv_r() { return sp_r_; }
  nn::Conv2d& spatial_conv_out() { return sp_out_; }
  nn::Conv2d& channel_conv_l() { return ch_l_; }
  nn::Conv2d& channel_conv_r() { return ch_r_; }
  nn::Conv2d& channel_fc1() { return ch_fc1_; }
  nn::Conv2d& channel_fc2() { return ch_fc2_; }
  nn::AdaptiveApertureLayer& spatial_adaptive_l() { return sp_al_; }
  nn::AdaptiveApertureLayer& spatial_adaptive_r() { return sp_ar_; }
  nn::AdaptiveApertureLayer& spatial_adaptive_out() { return sp_aout_; }
  nn::AdaptiveApertureLayer& channel_adaptive_l() { return ch_al_; }
  nn::AdaptiveApertureLayer& channel_adaptive_r() { return ch_ar_; }

 private:
  int cl_ = 0, cr_ = 0;
  nn::Resample align_{nn::ResampleMode::bilinear};
  nn::Conv2d sp_l_, sp_r_, sp_out_, ch_l_, ch_r_, ch_fc1_, ch_fc2_;
  nn::AdaptiveApertureLayer sp_al_, sp_ar_, sp_aout_, ch_al_, ch_ar_;
  nn::ReLU sp_relu_, ch_relu_, fc_relu_;
  nn::Sigmoid sp_sig_, ch_sig_;
  nn::GlobalAvgPool pool_;
  nn::Tensor fl_, fr_up_, bs_, bc_;
};

// Residual encoder-decoder with attention-gated skip connections. Input is
// the stage-2 image plus two constant planes carrying the normalized input
// and output f-numbers (6 channels); the final layer starts at zero so an
// untrained network is the identity after the residual addition.
class ApertureNet {
 public:
  explicit ApertureNet(int base_width = 16, std::uint64_t seed = 2, int in_channels = 6)
      : width_(base_width), in_channels_(in_channels) {
    const int w = base_width;
    enc0_ = nn::ConvBlock("aperture.enc0", in_channels, w);
    down1_ = nn::DownBlock("aperture.down1", w, 2 * w);
    enc1_ = nn::ConvBlock("aperture.enc1", 2 * w, 2 * w);
    down2_ = nn::DownBlock("aperture.down2", 2 * w, 4 * w);
    bott_ = nn::ConvBlock("aperture.bott", 4 * w, 4 * w);
    gate1_ = AttentionGate("aperture.gate1", 2 * w, 4 * w);
    up1_ = nn::UpBlock("aperture.up1", 4 * w, 2 * w);
    dec1_ = nn::ConvBlock("aperture.dec1", 4 * w, 2 * w);
    gate0_ = AttentionGate("aperture.gate0", w, 2 * w);
    up0_ = nn::UpBlock("aperture.up0", 2 * w, w);
    dec0_ = nn::ConvBlock("aperture.dec0", 2 * w, w);
    head_ = nn::Conv2d("aperture.head", w, RawImage::kChannels, 3);
    std::mt19937_64 rng(seed);
    enc0_.init_random(rng);
    down1_.init_random(rng);
    enc1_.init_random(rng);
    down2_.init_random(rng);
    bott_.init_random(rng);
    gate1_.init_random(rng);
    up1_.init_random(rng);
    dec1_.init_random(rng);
    gate0_.init_random(rng);
    up0_.init_random(rng);
    dec0_.init_random(rng);
    head_.init_zero();
  }

  void set_condition(const std::vector<std::array<double, 2>>& cond) {
    gate0_.set_condition(cond);
    gate1_.set_condition(cond);
  }
  void set_condition(double n_in_norm, double n_out_norm) {
    set_condition(std::vector<std::array<double, 2>>{{n_in_norm, n_out_norm}});
  }

  nn::Tensor forward(const nn::Tensor& x) {
    if (x.c != in_channels_) {
      throw DimensionError("aperture net: expects image + f-number channels");
    }
    e0_ = enc0_.forward(x);
    e1_ = enc1_.forward(down1_.forward(e0_));
    b_ = bott_.forward(down2_.forward(e1_));
    const nn::Tensor gated1 = gate1_.forward(e1_, b_);
    const nn::Tensor u1 = up1_.forward(b_, e1_.h, e1_.w);
    d1_ = dec1_.forward(cat1_.forward(u1, gated1));
    const nn::Tensor gated0 = gate0_.forward(e0_, d1_);
    const nn::Tensor u0 = up0_.forward(d1_, e0_.h, e0_.w);
    const nn::Tensor d0 = dec0_.forward(cat0_.forward(u0, gated0));
    return head_.forward(d0);
  }

  nn::Tensor backward(const nn::Tensor& gy) {
    nn::Tensor gd0 = head_.backward(gy);
    auto [gu0, ggated0] = cat0_.backward(dec0_.backward(gd0));
    nn::Tensor gd1 = up0_.backward(gu0);
    auto [ge0_gate, gd1_gate] = gate0_.backward(ggated0);
    nn::add_inplace(gd1, gd1_gate);
    auto [gu1, ggated1] = cat1_.backward(dec1_.backward(gd1));
    nn::Tensor gb = up1_.backward(gu1);
    auto [ge1_gate, gb_gate] = gate1_.backward(ggated1);
    nn::add_inplace(gb, gb_gate);
    nn::Tensor ge1 = down2_.backward(bott_.backward(gb));
    nn::add_inplace(ge1, ge1_gate);
    nn::Tensor ge0 = down1_.backward(enc1_.backward(ge1));
    nn::add_inplace(ge0, ge0_gate);
    return enc0_.backward(ge0);
  }

  std::vector<nn::Parameter*> parameters() {
    std::vector<nn::Parameter*> out;
    enc0_.collect(out);
    down1_.collect(out);
    enc1_.collect(out);
    down2_.collect(out);
    bott_.collect(out);
    gate1_.collect(out);
    up1_.collect(out);
    dec1_.collect(out);
    gate0_.collect(out);
    up0_.collect(out);
    dec0_.collect(out);
    out.push_back(&head_.weight);
    out.push_back(&head_.bias);
    return out;
  }

  int base_width() const { return width_; }
  int in_channels() const { return in_channels_; }
  AttentionGate& gate0() { return gate0_; }
  AttentionGate& gate1() { return gate1_; }

 private:
  int width_ = 16;
  int in_channels_ = 6;
  nn::ConvBlock enc0_, enc1_, bott_, dec1_, dec0_;
  nn::DownBlock down1_, down2_;
  nn::UpBlock up1_, up0_;
  AttentionGate gate0_, gate1_;
  nn::Conv2d head_;
  nn::ConcatChannels cat0_, cat1_;
  nn::Tensor e0_, e1_, b_, d1_;
};

// Builds the 6-channel (image | n_in plane | n_out plane) network input.
inline nn::Tensor aperture_input(const RawImage& image, double n_in, double n_out) {
  const double a = normalize_fnumber(n_in);
  const double b = normalize_fnumber(n_out);
  nn::Tensor x(1, image.rows, image.cols, RawImage::kChannels + 2);
  for (int r = 0; r < image.rows; ++r)
    for (int c = 0; c < image.cols; ++c) {
      for (int ch = 0; ch < RawImage::kChannels; ++ch) x.at(0, r, c, ch) = image.at(r, c, ch);
      x.at(0, r, c, RawImage::kChannels) = a;
      x.at(0, r, c, RawImage::kChannels + 1) = b;
    }
  return x;
}

// Residual blur magnification: clip(image + net(image | n_in | n_out)).
inline RawImage aperture_forward(const RawImage& image, double n_in, double n_out,
                                 ApertureNet& net) {
  net.set_condition(normalize_fnumber(n_in), normalize_fnumber(n_out));
  const nn::Tensor residual = net.forward(aperture_input(image, n_in, n_out));
  RawImage out = image;
  for (int r = 0; r < image.rows; ++r)
    for (int c = 0; c < image.cols; ++c)
      for (int ch = 0; ch < RawImage::kChannels; ++ch) {
        out.at(r, c, ch) = clamp01(image.at(r, c, ch) + residual.at(0, r, c, ch));
      }
  out.settings.f_number = n_out;
  return out;
}

}  // namespace rawsim
