// HDR bracketing: plan exposure-shifted capture settings, then fuse the
// rendered frames with well-exposedness and contrast weights blended over a
// Laplacian pyramid.
#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "rawsim/errors.hpp"
#include "rawsim/exposure.hpp"
#include "rawsim/noise.hpp"
#include "rawsim/render.hpp"

namespace rawsim {

inline constexpr double kHdrEvMin = -4.0;
inline constexpr double kHdrEvMax = 4.0;
inline constexpr double kHdrEvStep = 0.5;

namespace detail {

// Nudges the solved exposure time so the computed multiplier hits 2^ev
// bit-exactly; the search never needs more than a few ulps.
inline bool adjust_time_for_exact_alpha(const ExposureSettings& source, ExposureSettings& target,
                                        double want) {
  for (int k = 0; k <= 8; ++k) {
    for (int sign : {+1, -1}) {
      if (k == 0 && sign < 0) continue;
      ExposureSettings cand = target;
      cand.exposure_time = shift_ulps(target.exposure_time, sign * k);
      if (compute_alpha(source, cand) == want) {
        target = cand;
        return true;
      }
    }
  }
  return false;
}

}  // namespace detail

// 17 targets shifting total exposure by every half EV in [-4, +4]. Each
// target drops ISO to the minimum level, keeps the aperture, and solves the
// exposure time so that compute_alpha(source, target) == 2^ev exactly.
// Targets whose required time leaves [1/8000, 4] s are dropped with a warning.
inline std::vector<ExposureSettings> plan_hdr_bracket(
    const ExposureSettings& source, double min_iso = 100.0,
    std::vector<std::string>* warnings = nullptr) {
  if (!source.valid()) throw ParameterError("plan_hdr_bracket: invalid source");
  std::vector<ExposureSettings> plan;
  const int steps = static_cast<int>(std::lround((kHdrEvMax - kHdrEvMin) / kHdrEvStep));
  for (int i = 0; i <= steps; ++i) {
    const double ev = kHdrEvMin + i * kHdrEvStep;
    const double want = std::exp2(ev);
    ExposureSettings target = source;
    target.iso = std::min(source.iso, min_iso);
    target.nlf = scale_nlf_for_iso(source.nlf, source.iso, target.iso);
    target.exposure_time = source.exposure_time * (source.iso / target.iso) * want;
    if (target.exposure_time < 1.0 / 8000.0 || target.exposure_time > 4.0) {
      if (warnings) {
        warnings->push_back("EV " + std::to_string(ev) + ": required time " +
                            std::to_string(target.exposure_time) + " s out of range, dropped");
      }
      continue;
    }
    if (target.same_exposure(source)) {
      plan.push_back(target);
      continue;
    }
    if (!detail::adjust_time_for_exact_alpha(source, target, want) && warnings) {
      warnings->push_back("EV " + std::to_string(ev) + ": exact multiplier not reachable");
    }
    plan.push_back(target);
  }
  return plan;
}

struct FusionOptions {
  double exposedness_sigma = 0.2;  // Gaussian width around mid-gray
  double contrast_power = 1.0;
  double exposedness_power = 1.0;
  int pyramid_levels = 0;  // 0 = derive from image size
};

namespace detail {

struct PlaneF {
  int rows = 0, cols = 0, channels = 1;
  std::vector<double> v;
  PlaneF() = default;
  PlaneF(int r, int c, int ch) : rows(r), cols(c), channels(ch), v(static_cast<size_t>(r) * c * ch, 0.0) {}
  double& at(int r, int c, int ch) { return v[(static_cast<size_t>(r) * cols + c) * channels + ch]; }
  double at(int r, int c, int ch) const { return v[(static_cast<size_t>(r) * cols + c) * channels + ch]; }
};

inline int reflect(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * n - 2 - i;
  return i;
}

// Separable 5-tap binomial smoothing with reflected borders.
inline PlaneF blur5(const PlaneF& in) {
  static constexpr double k[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
  PlaneF tmp(in.rows, in.cols, in.channels);
  for (int r = 0; r < in.rows; ++r)
    for (int c = 0; c < in.cols; ++c)
      for (int ch = 0; ch < in.channels; ++ch) {
        double acc = 0.0;
        for (int t = -2; t <= 2; ++t) acc += k[t + 2] * in.at(r, reflect(c + t, in.cols), ch);
        tmp.at(r, c, ch) = acc;
      }
  PlaneF out(in.rows, in.cols, in.channels);
  for (int r = 0; r < in.rows; ++r)
    for (int c = 0; c < in.cols; ++c)
      for (int ch = 0; ch < in.channels; ++ch) {
        double acc = 0.0;
        for (int t = -2; t <= 2; ++t) acc += k[t + 2] * tmp.at(reflect(r + t, in.rows), c, ch);
        out.at(r, c, ch) = acc;
      }
  return out;
}

inline PlaneF downsample2(const PlaneF& in) {
  const PlaneF smooth = blur5(in);
  PlaneF out((in.rows + 1) / 2, (in.cols + 1) / 2, in.channels);
  for (int r = 0; r < out.rows; ++r)
    for (int c = 0; c < out.cols; ++c)
      for (int ch = 0; ch < in.channels; ++ch) out.at(r, c, ch) = smooth.at(2 * r, 2 * c, ch);
  return out;
}

inline PlaneF upsample_to(const PlaneF& in, int rows, int cols) {
  PlaneF out(rows, cols, in.channels);
  for (int r = 0; r < rows; ++r) {
    const double sr = rows > 1 ? static_cast<double>(r) * (in.rows - 1) / (rows - 1) : 0.0;
    const int r0 = static_cast<int>(sr);
    const int r1 = std::min(r0 + 1, in.rows - 1);
    const double fr = sr - r0;
    for (int c = 0; c < cols; ++c) {
      const double sc = cols > 1 ? static_cast<double>(c) * (in.cols - 1) / (cols - 1) : 0.0;
      const int c0 = static_cast<int>(sc);
      const int c1 = std::min(c0 + 1, in.cols - 1);
      const double fc = sc - c0;
      for (int ch = 0; ch < in.channels; ++ch) {
        out.at(r, c, ch) = (1 - fr) * ((1 - fc) * in.at(r0, c0, ch) + fc * in.at(r0, c1, ch)) +
                           fr * ((1 - fc) * in.at(r1, c0, ch) + fc * in.at(r1, c1, ch));
      }
    }
  }
  return out;
}

}  // namespace detail

// Per-pixel fusion weight: well-exposedness (Gaussian around mid-gray, per
// channel) times local contrast (|Laplacian| of luma).
inline std::vector<std::vector<double>> fusion_weights(std::span<const Image8> frames,
                                                       const FusionOptions& opts) {
  const int rows = frames[0].rows, cols = frames[0].cols;
  std::vector<std::vector<double>> weights(frames.size());
  for (size_t f = 0; f < frames.size(); ++f) {
    weights[f].assign(static_cast<size_t>(rows) * cols, 0.0);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        double exposedness = 1.0;
        for (int ch = 0; ch < 3; ++ch) {
          const double v = frames[f].at(r, c, ch) / 255.0;
          const double d = v - 0.5;
          exposedness *= std::exp(-d * d / (2.0 * opts.exposedness_sigma * opts.exposedness_sigma));
        }
        auto luma = [&](int rr, int cc) {
          rr = detail::reflect(rr, rows);
          cc = detail::reflect(cc, cols);
          return (frames[f].at(rr, cc, 0) + frames[f].at(rr, cc, 1) + frames[f].at(rr, cc, 2)) /
                 (3.0 * 255.0);
        };
        const double lap = std::abs(4.0 * luma(r, c) - luma(r - 1, c) - luma(r + 1, c) -
                                    luma(r, c - 1) - luma(r, c + 1));
        // The contrast floor keeps flat frames comparable by exposedness alone.
        weights[f][static_cast<size_t>(r) * cols + c] =
            std::pow(exposedness, opts.exposedness_power) *
                std::pow(lap + 1e-3, opts.contrast_power) +
            1e-12;
      }
    }
  }
  // Normalize to sum 1 across frames at every pixel.
  for (size_t i = 0; i < weights[0].size(); ++i) {
    double total = 0.0;
    for (auto& w : weights) total += w[i];
    for (auto& w : weights) w[i] /= total;
  }
  return weights;
}

// Multi-scale exposure fusion over a Laplacian pyramid.
inline Image8 fuse_exposures(std::span<const Image8> frames, const FusionOptions& opts = {}) {
  if (frames.size() < 2) throw ParameterError("fuse_exposures: need at least two frames");
  const int rows = frames[0].rows, cols = frames[0].cols;
  for (const Image8& f : frames) {
    if (f.rows != rows || f.cols != cols) throw DimensionError("fuse_exposures: size mismatch");
  }
  const auto weights = fusion_weights(frames, opts);

  int levels = opts.pyramid_levels;
  if (levels <= 0) {
    levels = 1;
    int side = std::min(rows, cols);
    while (side >= 16 && levels < 6) {
      side /= 2;
      ++levels;
    }
  }

  // Blend the Laplacian pyramids of the frames under the Gaussian pyramids of
  // the weights, then collapse.
  std::vector<detail::PlaneF> blended;  // per level
  std::vector<detail::PlaneF> frame_gauss(frames.size());
  std::vector<detail::PlaneF> weight_gauss(frames.size());
  for (size_t f = 0; f < frames.size(); ++f) {
    detail::PlaneF img(rows, cols, 3);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = frames[f].at(r, c, ch) / 255.0;
    frame_gauss[f] = std::move(img);
    detail::PlaneF wplane(rows, cols, 1);
    for (size_t i = 0; i < weights[f].size(); ++i) wplane.v[i] = weights[f][i];
    weight_gauss[f] = std::move(wplane);
  }
  for (int level = 0; level < levels; ++level) {
    const bool last = level == levels - 1;
    detail::PlaneF acc;
    for (size_t f = 0; f < frames.size(); ++f) {
      detail::PlaneF lap;
      detail::PlaneF next;
      if (last) {
        lap = frame_gauss[f];
      } else {
        next = detail::downsample2(frame_gauss[f]);
        const detail::PlaneF up = detail::upsample_to(next, frame_gauss[f].rows, frame_gauss[f].cols);
        lap = frame_gauss[f];
        for (size_t i = 0; i < lap.v.size(); ++i) lap.v[i] -= up.v[i];
      }
      if (acc.v.empty()) acc = detail::PlaneF(lap.rows, lap.cols, 3);
      for (int r = 0; r < lap.rows; ++r)
        for (int c = 0; c < lap.cols; ++c) {
          const double w = weight_gauss[f].at(r, c, 0);
          for (int ch = 0; ch < 3; ++ch) acc.at(r, c, ch) += w * lap.at(r, c, ch);
        }
      if (!last) {
        frame_gauss[f] = std::move(next);
        weight_gauss[f] = detail::downsample2(weight_gauss[f]);
      }
    }
    blended.push_back(std::move(acc));
  }

  detail::PlaneF result = std::move(blended.back());
  for (int level = levels - 2; level >= 0; --level) {
    detail::PlaneF up = detail::upsample_to(result, blended[level].rows, blended[level].cols);
    for (size_t i = 0; i < up.v.size(); ++i) up.v[i] += blended[level].v[i];
    result = std::move(up);
  }

  Image8 out(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      for (int ch = 0; ch < 3; ++ch) {
        out.at(r, c, ch) = static_cast<std::uint8_t>(std::lround(clamp01(result.at(r, c, ch)) * 255.0));
      }
  return out;
}

// Fraction of pixels with mean-RGB luma inside [lo, hi]; the figure of merit
// for bracket coverage.
inline double well_exposed_fraction(const Image8& img, double lo = 0.05, double hi = 0.95) {
  size_t good = 0;
  const size_t total = static_cast<size_t>(img.rows) * img.cols;
  for (int r = 0; r < img.rows; ++r)
    for (int c = 0; c < img.cols; ++c) {
      const double luma = (img.at(r, c, 0) + img.at(r, c, 1) + img.at(r, c, 2)) / (3.0 * 255.0);
      if (luma >= lo && luma <= hi) ++good;
    }
  return total ? static_cast<double>(good) / static_cast<double>(total) : 0.0;
}

}  // namespace rawsim
