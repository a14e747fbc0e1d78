// Differentiable layers over NHWC tensors. Each layer caches what its
// backward pass needs; networks are fixed topologies wired by hand, so
// reverse-mode accumulation is plain call-ordering rather than a tape.
#pragma once

#include <array>
#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "rawsim/tensor.hpp"

namespace rawsim::nn {

// 2D cross-correlation with zero padding. Weight layout (k, k, in, out).
class Conv2d {
 public:
  Conv2d() = default;
  // pad < 0 selects "same" padding for stride 1 (k/2).
  Conv2d(const std::string& name, int in_ch, int out_ch, int ksize, int stride = 1,
         int pad = -1)
      : in_ch_(in_ch),
        out_ch_(out_ch),
        k_(ksize),
        stride_(stride),
        pad_(pad < 0 ? ksize / 2 : pad),
        weight(name + ".weight", Tensor(ksize, ksize, in_ch, out_ch)),
        bias(name + ".bias", Tensor(1, 1, 1, out_ch)) {
    if (stride < 1) throw ParameterError("conv stride must be >= 1");
  }

  // He-style uniform fan-in initialization.
  void init_random(std::mt19937_64& rng) {
    const double limit = std::sqrt(6.0 / (static_cast<double>(k_) * k_ * in_ch_));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (double& v : weight.value.v) v = dist(rng);
    for (double& v : bias.value.v) v = 0.0;
  }
  void init_zero() {
    for (double& v : weight.value.v) v = 0.0;
    for (double& v : bias.value.v) v = 0.0;
  }

  Tensor forward(const Tensor& x) {
    if (x.c != in_ch_) throw DimensionError("conv2d: input channel mismatch");
    x_ = x;
    const int oh = (x.h + 2 * pad_ - k_) / stride_ + 1;
    const int ow = (x.w + 2 * pad_ - k_) / stride_ + 1;
    if (oh < 1 || ow < 1) throw DimensionError("conv2d: output would be empty");
    Tensor y(x.n, oh, ow, out_ch_);
    const double* wv = weight.value.v.data();
    for (int in = 0; in < x.n; ++in) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          double* out = &y.v[y.index(in, oy, ox, 0)];
          for (int co = 0; co < out_ch_; ++co) out[co] = bias.value.v[co];
          for (int ky = 0; ky < k_; ++ky) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= x.h) continue;
            for (int kx = 0; kx < k_; ++kx) {
              const int ix = ox * stride_ - pad_ + kx;
              if (ix < 0 || ix >= x.w) continue;
              const double* xp = &x.v[x.index(in, iy, ix, 0)];
              const double* wp = &wv[((static_cast<size_t>(ky) * k_ + kx) * in_ch_) * out_ch_];
              for (int ci = 0; ci < in_ch_; ++ci) {
                const double xv = xp[ci];
                const double* wr = wp + static_cast<size_t>(ci) * out_ch_;
                for (int co = 0; co < out_ch_; ++co) out[co] += xv * wr[co];
              }
            }
          }
        }
      }
    }
    return y;
  }

  // Accumulates weight/bias grads and returns the input gradient.
  Tensor backward(const Tensor& gy) {
    const Tensor& x = x_;
    Tensor gx(x.n, x.h, x.w, x.c);
    weight.value.ensure_grad();
    bias.value.ensure_grad();
    double* gw = weight.value.g.data();
    double* gb = bias.value.g.data();
    const double* wv = weight.value.v.data();
    for (int in = 0; in < x.n; ++in) {
      for (int oy = 0; oy < gy.h; ++oy) {
        for (int ox = 0; ox < gy.w; ++ox) {
          const double* gout = &gy.v[gy.index(in, oy, ox, 0)];
          for (int co = 0; co < out_ch_; ++co) gb[co] += gout[co];
          for (int ky = 0; ky < k_; ++ky) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= x.h) continue;
            for (int kx = 0; kx < k_; ++kx) {
              const int ix = ox * stride_ - pad_ + kx;
              if (ix < 0 || ix >= x.w) continue;
              const double* xp = &x.v[x.index(in, iy, ix, 0)];
              double* gxp = &gx.v[gx.index(in, iy, ix, 0)];
              const size_t wbase = (static_cast<size_t>(ky) * k_ + kx) * in_ch_ * out_ch_;
              for (int ci = 0; ci < in_ch_; ++ci) {
                const double xv = xp[ci];
                const double* wr = &wv[wbase + static_cast<size_t>(ci) * out_ch_];
                double* gwr = &gw[wbase + static_cast<size_t>(ci) * out_ch_];
                double acc = 0.0;
                for (int co = 0; co < out_ch_; ++co) {
                  acc += gout[co] * wr[co];
                  gwr[co] += gout[co] * xv;
                }
                gxp[ci] += acc;
              }
            }
          }
        }
      }
    }
    return gx;
  }

  Parameter weight, bias;

  int in_channels() const { return in_ch_; }
  int out_channels() const { return out_ch_; }

 private:
  int in_ch_ = 0, out_ch_ = 0, k_ = 0, stride_ = 1, pad_ = 0;
  Tensor x_;
};

class ReLU {
 public:
  Tensor forward(const Tensor& x) {
    x_ = x;
    Tensor y = x;
    for (double& v : y.v) v = v > 0.0 ? v : 0.0;
    return y;
  }
  Tensor backward(const Tensor& gy) {
    Tensor gx = gy;
    for (size_t i = 0; i < gx.v.size(); ++i)
      if (x_.v[i] <= 0.0) gx.v[i] = 0.0;
    return gx;
  }

 private:
  Tensor x_;
};

class Sigmoid {
 public:
  Tensor forward(const Tensor& x) {
    Tensor y = x;
    for (double& v : y.v) v = 1.0 / (1.0 + std::exp(-v));
    y_ = y;
    return y;
  }
  Tensor backward(const Tensor& gy) {
    Tensor gx = gy;
    for (size_t i = 0; i < gx.v.size(); ++i) {
      const double s = y_.v[i];
      gx.v[i] *= s * (1.0 - s);
    }
    return gx;
  }

 private:
  Tensor y_;
};

// Per-channel spatial mean, (N,H,W,C) -> (N,1,1,C).
class GlobalAvgPool {
 public:
  Tensor forward(const Tensor& x) {
    h_ = x.h;
    w_ = x.w;
    Tensor y(x.n, 1, 1, x.c);
    const double inv = 1.0 / (static_cast<double>(x.h) * x.w);
    for (int in = 0; in < x.n; ++in)
      for (int ih = 0; ih < x.h; ++ih)
        for (int iw = 0; iw < x.w; ++iw) {
          const double* xp = &x.v[x.index(in, ih, iw, 0)];
          double* yp = &y.v[y.index(in, 0, 0, 0)];
          for (int ic = 0; ic < x.c; ++ic) yp[ic] += xp[ic] * inv;
        }
    return y;
  }
  Tensor backward(const Tensor& gy) {
    Tensor gx(gy.n, h_, w_, gy.c);
    const double inv = 1.0 / (static_cast<double>(h_) * w_);
    for (int in = 0; in < gy.n; ++in)
      for (int ih = 0; ih < h_; ++ih)
        for (int iw = 0; iw < w_; ++iw) {
          double* gp = &gx.v[gx.index(in, ih, iw, 0)];
          const double* gyp = &gy.v[gy.index(in, 0, 0, 0)];
          for (int ic = 0; ic < gy.c; ++ic) gp[ic] = gyp[ic] * inv;
        }
    return gx;
  }

 private:
  int h_ = 0, w_ = 0;
};

enum class ResampleMode { nearest, bilinear };

// Deterministic resampling with corner-aligned bilinear weights.
class Resample {
 public:
  explicit Resample(ResampleMode mode = ResampleMode::bilinear) : mode_(mode) {}

  Tensor forward(const Tensor& x, int target_h, int target_w) {
    if (target_h < 1 || target_w < 1) throw ParameterError("resample: target must be >= 1");
    in_h_ = x.h;
    in_w_ = x.w;
    out_h_ = target_h;
    out_w_ = target_w;
    Tensor y(x.n, target_h, target_w, x.c);
    for (int oy = 0; oy < target_h; ++oy) {
      const auto [y0, y1, fy] = source_coords(oy, x.h, target_h);
      for (int ox = 0; ox < target_w; ++ox) {
        const auto [x0, x1, fx] = source_coords(ox, x.w, target_w);
        for (int in = 0; in < x.n; ++in) {
          double* out = &y.v[y.index(in, oy, ox, 0)];
          const double* p00 = &x.v[x.index(in, y0, x0, 0)];
          const double* p01 = &x.v[x.index(in, y0, x1, 0)];
          const double* p10 = &x.v[x.index(in, y1, x0, 0)];
          const double* p11 = &x.v[x.index(in, y1, x1, 0)];
          const double w00 = (1.0 - fy) * (1.0 - fx), w01 = (1.0 - fy) * fx;
          const double w10 = fy * (1.0 - fx), w11 = fy * fx;
          for (int ic = 0; ic < x.c; ++ic) {
            out[ic] = w00 * p00[ic] + w01 * p01[ic] + w10 * p10[ic] + w11 * p11[ic];
          }
        }
      }
    }
    return y;
  }

  Tensor backward(const Tensor& gy) {
    Tensor gx(gy.n, in_h_, in_w_, gy.c);
    for (int oy = 0; oy < out_h_; ++oy) {
      const auto [y0, y1, fy] = source_coords(oy, in_h_, out_h_);
      for (int ox = 0; ox < out_w_; ++ox) {
        const auto [x0, x1, fx] = source_coords(ox, in_w_, out_w_);
        for (int in = 0; in < gy.n; ++in) {
          const double* gout = &gy.v[gy.index(in, oy, ox, 0)];
          double* g00 = &gx.v[gx.index(in, y0, x0, 0)];
          double* g01 = &gx.v[gx.index(in, y0, x1, 0)];
          double* g10 = &gx.v[gx.index(in, y1, x0, 0)];
          double* g11 = &gx.v[gx.index(in, y1, x1, 0)];
          const double w00 = (1.0 - fy) * (1.0 - fx), w01 = (1.0 - fy) * fx;
          const double w10 = fy * (1.0 - fx), w11 = fy * fx;
          for (int ic = 0; ic < gy.c; ++ic) {
            g00[ic] += w00 * gout[ic];
            g01[ic] += w01 * gout[ic];
            g10[ic] += w10 * gout[ic];
            g11[ic] += w11 * gout[ic];
          }
        }
      }
    }
    return gx;
  }

 private:
  // Maps an output index to the two bracketing source indices and the
  // interpolation fraction (corner-aligned; nearest collapses the fraction).
  struct Coords {
    int lo, hi;
    double frac;
  };
  Coords source_coords(int out_idx, int in_size, int out_size) const {
    double src = 0.0;
    if (out_size > 1 && in_size > 1) {
      src = static_cast<double>(out_idx) * (in_size - 1) / (out_size - 1);
    }
    if (mode_ == ResampleMode::nearest) src = std::round(src);
    int lo = static_cast<int>(std::floor(src));
    lo = std::min(std::max(lo, 0), in_size - 1);
    const int hi = std::min(lo + 1, in_size - 1);
    const double frac = src - lo;
    return {lo, hi, frac};
  }

  ResampleMode mode_;
  int in_h_ = 0, in_w_ = 0, out_h_ = 0, out_w_ = 0;
};

// Channel concatenation of two tensors with matching spatial shape.
class ConcatChannels {
 public:
  Tensor forward(const Tensor& a, const Tensor& b) {
    if (a.n != b.n || a.h != b.h || a.w != b.w) {
      throw DimensionError("concat: spatial shape mismatch");
    }
    ca_ = a.c;
    cb_ = b.c;
    Tensor y(a.n, a.h, a.w, a.c + b.c);
    for (int in = 0; in < a.n; ++in)
      for (int ih = 0; ih < a.h; ++ih)
        for (int iw = 0; iw < a.w; ++iw) {
          double* out = &y.v[y.index(in, ih, iw, 0)];
          const double* pa = &a.v[a.index(in, ih, iw, 0)];
          const double* pb = &b.v[b.index(in, ih, iw, 0)];
          for (int ic = 0; ic < a.c; ++ic) out[ic] = pa[ic];
          for (int ic = 0; ic < b.c; ++ic) out[a.c + ic] = pb[ic];
        }
    return y;
  }
  std::pair<Tensor, Tensor> backward(const Tensor& gy) {
    Tensor ga(gy.n, gy.h, gy.w, ca_);
    Tensor gb(gy.n, gy.h, gy.w, cb_);
    for (int in = 0; in < gy.n; ++in)
      for (int ih = 0; ih < gy.h; ++ih)
        for (int iw = 0; iw < gy.w; ++iw) {
          const double* gp = &gy.v[gy.index(in, ih, iw, 0)];
          double* pa = &ga.v[ga.index(in, ih, iw, 0)];
          double* pb = &gb.v[gb.index(in, ih, iw, 0)];
          for (int ic = 0; ic < ca_; ++ic) pa[ic] = gp[ic];
          for (int ic = 0; ic < cb_; ++ic) pb[ic] = gp[ca_ + ic];
        }
    return {std::move(ga), std::move(gb)};
  }

 private:
  int ca_ = 0, cb_ = 0;
};

// Instance-normalization layer whose affine parameters are linear in the
// (input, output) f-number pair:
//   gain(c)  = w_gain[0,c]*n_in + w_gain[1,c]*n_out + b_gain[c]
//   shift(c) = w_shift[0,c]*n_in + w_shift[1,c]*n_out + b_shift[c]
//   y = gain * (x - mean) / sqrt(var + eps) + shift
// Statistics are per (sample, channel) over the spatial extent. Conditions
// are per sample; gradients flow to the input and all four parameter groups.
class AdaptiveApertureLayer {
 public:
  AdaptiveApertureLayer() = default;
  AdaptiveApertureLayer(const std::string& name, int channels, double eps = 1e-5)
      : c_(channels),
        eps_(eps),
        w_gain(name + ".w_gain", Tensor(1, 1, 2, channels)),
        b_gain(name + ".b_gain", Tensor(1, 1, 1, channels)),
        w_shift(name + ".w_shift", Tensor(1, 1, 2, channels)),
        b_shift(name + ".b_shift", Tensor(1, 1, 1, channels)) {}

  void init_random(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-0.1, 0.1);
    for (double& v : w_gain.value.v) v = dist(rng);
    for (double& v : w_shift.value.v) v = dist(rng);
    for (double& v : b_gain.value.v) v = 1.0;  // start as plain instance norm
    for (double& v : b_shift.value.v) v = 0.0;
  }

  // One (n_in, n_out) condition per batch sample; a single entry broadcasts.
  void set_condition(std::vector<std::array<double, 2>> cond) { cond_ = std::move(cond); }
  void set_condition(double n_in, double n_out) {
    cond_.assign(1, std::array<double, 2>{n_in, n_out});
  }

  Tensor forward(const Tensor& x) {
    if (x.c != c_) throw DimensionError("adaptive aperture layer: channel mismatch");
    if (cond_.empty()) throw StateError("adaptive aperture layer: condition not set");
    if (cond_.size() != 1 && static_cast<int>(cond_.size()) != x.n) {
      throw DimensionError("adaptive aperture layer: one condition per sample required");
    }
    x_ = x;
    const int m = x.h * x.w;
    norm_ = Tensor(x.n, x.h, x.w, x.c);
    inv_std_.assign(static_cast<size_t>(x.n) * c_, 0.0);
    gain_.assign(static_cast<size_t>(x.n) * c_, 0.0);
    Tensor y(x.n, x.h, x.w, x.c);
    for (int in = 0; in < x.n; ++in) {
      const auto& cond = cond_[cond_.size() == 1 ? 0 : in];
      for (int ic = 0; ic < c_; ++ic) {
        double mean = 0.0;
        for (int ih = 0; ih < x.h; ++ih)
          for (int iw = 0; iw < x.w; ++iw) mean += x.at(in, ih, iw, ic);
        mean /= m;
        double var = 0.0;
        for (int ih = 0; ih < x.h; ++ih)
          for (int iw = 0; iw < x.w; ++iw) {
            const double d = x.at(in, ih, iw, ic) - mean;
            var += d * d;
          }
        var /= m;
        const double inv_std = 1.0 / std::sqrt(var + eps_);
        const double gain = w_gain.value.v[ic] * cond[0] + w_gain.value.v[c_ + ic] * cond[1] +
                            b_gain.value.v[ic];
        const double shift = w_shift.value.v[ic] * cond[0] +
                             w_shift.value.v[c_ + ic] * cond[1] + b_shift.value.v[ic];
        inv_std_[static_cast<size_t>(in) * c_ + ic] = inv_std;
        gain_[static_cast<size_t>(in) * c_ + ic] = gain;
        for (int ih = 0; ih < x.h; ++ih)
          for (int iw = 0; iw < x.w; ++iw) {
            const double xn = (x.at(in, ih, iw, ic) - mean) * inv_std;
            norm_.at(in, ih, iw, ic) = xn;
            y.at(in, ih, iw, ic) = gain * xn + shift;
          }
      }
    }
    return y;
  }

  Tensor backward(const Tensor& gy) {
    const Tensor& x = x_;
    const int m = x.h * x.w;
    w_gain.value.ensure_grad();
    b_gain.value.ensure_grad();
    w_shift.value.ensure_grad();
    b_shift.value.ensure_grad();
    Tensor gx(x.n, x.h, x.w, x.c);
    for (int in = 0; in < x.n; ++in) {
      const auto& cond = cond_[cond_.size() == 1 ? 0 : in];
      for (int ic = 0; ic < c_; ++ic) {
        double d_gain = 0.0, d_shift = 0.0;
        for (int ih = 0; ih < x.h; ++ih)
          for (int iw = 0; iw < x.w; ++iw) {
            const double g = gy.at(in, ih, iw, ic);
            d_gain += g * norm_.at(in, ih, iw, ic);
            d_shift += g;
          }
        w_gain.value.g[ic] += cond[0] * d_gain;
        w_gain.value.g[c_ + ic] += cond[1] * d_gain;
        b_gain.value.g[ic] += d_gain;
        w_shift.value.g[ic] += cond[0] * d_shift;
        w_shift.value.g[c_ + ic] += cond[1] * d_shift;
        b_shift.value.g[ic] += d_shift;

        // Standard instance-norm input gradient with biased variance:
        // gx = s * (gh - mean(gh) - xn * mean(gh * xn)), gh = gy * gain.
        const double gain = gain_[static_cast<size_t>(in) * c_ + ic];
        const double inv_std = inv_std_[static_cast<size_t>(in) * c_ + ic];
        const double mean_gh = gain * d_shift / m;
        const double mean_ghxn = gain * d_gain / m;
        for (int ih = 0; ih < x.h; ++ih)
          for (int iw = 0; iw < x.w; ++iw) {
            const double gh = gy.at(in, ih, iw, ic) * gain;
            const double xn = norm_.at(in, ih, iw, ic);
            gx.at(in, ih, iw, ic) = inv_std * (gh - mean_gh - xn * mean_ghxn);
          }
      }
    }
    return gx;
  }

  Parameter w_gain, b_gain, w_shift, b_shift;

  int channels() const { return c_; }

 private:
  int c_ = 0;
  double eps_ = 1e-5;
  std::vector<std::array<double, 2>> cond_;
  Tensor x_, norm_;
  std::vector<double> inv_std_, gain_;
};

}  // namespace rawsim::nn
