// Synthetic-scene generator and physics renderer. Scenes carry a latent
// radiance map and a layered depth map; renders apply thin-lens defocus,
// the exposure multiplier, and NLF noise, serving as ground truth for
// training and verification.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "rawsim/dataset.hpp"
#include "rawsim/exposure.hpp"
#include "rawsim/noise.hpp"
#include "rawsim/raw_image.hpp"

namespace rawsim {

// Blur-circle radius in pixels: r = kBlurScale * |1/d - 1/d_f| / n.
// The scale is chosen so the widest supported aperture (n = 4) produces radii
// up to ~8 pixels for the generated depth range.
inline constexpr double kBlurScale = 25.0;

// Default sensor quantization for synthetic renders.
inline constexpr int kSyntheticBlackLevel = 64;
inline constexpr int kSyntheticWhiteLevel = 16383;

// NLF model used for synthetic sidecars (at ISO 100); values are synthetic,
// not measured. Read variance grows with gain squared, shot variance with gain.
inline constexpr NoiseLevelFunction kSyntheticBaseNlf{4e-7, 6e-5};

inline NoiseLevelFunction synthetic_nlf_for_iso(double iso) {
  return scale_nlf_for_iso(kSyntheticBaseNlf, 100.0, iso);
}

// Reference exposure at which the latent radiance is defined: rendering with
// these settings and an in-focus plane reproduces clip(radiance).
inline ExposureSettings synthetic_reference_settings() {
  return ExposureSettings{1.0 / 100.0, 100.0, 4.0, synthetic_nlf_for_iso(100.0)};
}

struct SyntheticScene {
  int rows = 0;
  int cols = 0;
  std::vector<double> radiance;  // rows * cols * 4, scene-referred, >= 0
  std::vector<double> depth;     // rows * cols, meters
  double focus_distance_m = 2.0;

  double radiance_at(int r, int c, int ch) const {
    return radiance[(static_cast<size_t>(r) * cols + c) * RawImage::kChannels + ch];
  }
  double& radiance_at(int r, int c, int ch) {
    return radiance[(static_cast<size_t>(r) * cols + c) * RawImage::kChannels + ch];
  }
  double depth_at(int r, int c) const { return depth[static_cast<size_t>(r) * cols + c]; }
  double& depth_at(int r, int c) { return depth[static_cast<size_t>(r) * cols + c]; }
};

inline double defocus_radius(const SyntheticScene& scene, int r, int c, double f_number) {
  return kBlurScale *
         std::abs(1.0 / scene.depth_at(r, c) - 1.0 / scene.focus_distance_m) / f_number;
}

// Piecewise-smooth radiance (smooth log-gradient base + geometric primitives
// + value-noise texture) over a layered depth map. Deterministic given seed.
// complexity 0 produces a constant in-focus scene.
inline SyntheticScene generate_synthetic_scene(std::uint64_t seed, int mosaic_size,
                                               int complexity = 3) {
  if (mosaic_size <= 0 || mosaic_size % 2 != 0) {
    throw ParameterError("generate_synthetic_scene: size must be positive and even");
  }
  const int n = mosaic_size / 2;
  SyntheticScene scene;
  scene.rows = n;
  scene.cols = n;
  scene.radiance.assign(static_cast<size_t>(n) * n * RawImage::kChannels, 0.18);
  scene.depth.assign(static_cast<size_t>(n) * n, 2.0);
  scene.focus_distance_m = 2.0;
  if (complexity <= 0) return scene;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);

  // Smooth base: log-radiance is an affine ramp plus a few Gaussian bumps.
  const double a0 = -1.0 + 1.2 * uni(rng);
  const double a1 = -1.5 + 3.0 * uni(rng);
  const double a2 = -1.5 + 3.0 * uni(rng);
  struct Bump {
    double cu, cv, amp, sigma;
  };
  std::vector<Bump> bumps;
  for (int j = 0; j < complexity; ++j) {
    bumps.push_back({uni(rng), uni(rng), -2.0 + 4.0 * uni(rng), 0.08 + 0.3 * uni(rng)});
  }
  // Channel tints: greens match; red/blue vary per scene.
  const double tint[RawImage::kChannels] = {0.6 + 0.5 * uni(rng), 1.0, 1.0,
                                            0.5 + 0.5 * uni(rng)};
  // Background depth recedes from bottom to top of the frame.
  const double depth_near = 1.0 + 0.8 * uni(rng);
  const double depth_far = 2.6 + 1.4 * uni(rng);

  // Value-noise texture grid, bilinearly interpolated.
  const int grid = 8;
  std::vector<double> noise_grid(static_cast<size_t>(grid + 1) * (grid + 1));
  for (double& v : noise_grid) v = uni(rng) - 0.5;
  auto texture = [&](double u, double v) {
    const double gu = u * grid, gv = v * grid;
    const int iu = std::min(static_cast<int>(gu), grid - 1);
    const int iv = std::min(static_cast<int>(gv), grid - 1);
    const double fu = gu - iu, fv = gv - iv;
    const auto g = [&](int a, int b) { return noise_grid[static_cast<size_t>(b) * (grid + 1) + a]; };
    const double t = (1 - fu) * (1 - fv) * g(iu, iv) + fu * (1 - fv) * g(iu + 1, iv) +
                     (1 - fu) * fv * g(iu, iv + 1) + fu * fv * g(iu + 1, iv + 1);
    return 1.0 + 0.5 * t;
  };

  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      const double u = n > 1 ? static_cast<double>(c) / (n - 1) : 0.0;
      const double v = n > 1 ? static_cast<double>(r) / (n - 1) : 0.0;
      double logr = a0 + a1 * u + a2 * v;
      for (const Bump& bm : bumps) {
        const double du = u - bm.cu, dv = v - bm.cv;
        logr += bm.amp * std::exp(-(du * du + dv * dv) / (2.0 * bm.sigma * bm.sigma));
      }
      const double base = 0.18 * std::exp(logr) * texture(u, v);
      for (int ch = 0; ch < RawImage::kChannels; ++ch) {
        scene.radiance_at(r, c, ch) = base * tint[ch];
      }
      scene.depth_at(r, c) = depth_near + (depth_far - depth_near) * (1.0 - v);
    }
  }

  // Geometric primitives: discs and axis-aligned rectangles at their own
  // depths, drawn back to front. The last two at default complexity pin the
  // dynamic range: one deep-shadow patch and one bright highlight.
  struct Primitive {
    bool disc;
    double cu, cv, size, radiance_scale, depth, tint_r, tint_b;
    bool textured;
  };
  std::vector<Primitive> prims;
  const int prim_count = 2 * complexity;
  for (int j = 0; j < prim_count; ++j) {
    prims.push_back({uni(rng) < 0.5, uni(rng), uni(rng), 0.05 + 0.22 * uni(rng),
                     std::exp(-2.5 + 5.0 * uni(rng)), 0.6 + 3.2 * uni(rng),
                     0.6 + 0.8 * uni(rng), 0.5 + 0.8 * uni(rng), uni(rng) < 0.5});
  }
  if (complexity >= 2) {
    prims.push_back({false, 0.12 + 0.2 * uni(rng), 0.65 + 0.2 * uni(rng), 0.16, 0.015,
                     0.9 + 0.6 * uni(rng), 1.0, 1.0, false});
    prims.push_back({true, 0.65 + 0.25 * uni(rng), 0.15 + 0.2 * uni(rng), 0.13, 40.0,
                     3.2 + 0.6 * uni(rng), 1.0, 1.0, false});
  }
  for (const Primitive& p : prims) {
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < n; ++c) {
        const double u = n > 1 ? static_cast<double>(c) / (n - 1) : 0.0;
        const double v = n > 1 ? static_cast<double>(r) / (n - 1) : 0.0;
        const double du = u - p.cu, dv = v - p.cv;
        const bool inside = p.disc ? (du * du + dv * dv <= p.size * p.size)
                                   : (std::abs(du) <= p.size && std::abs(dv) <= 0.8 * p.size);
        if (!inside) continue;
        const double tex = p.textured ? texture(std::abs(du) / p.size, std::abs(dv) / p.size)
                                      : 1.0;
        const double val = 0.18 * p.radiance_scale * tex;
        scene.radiance_at(r, c, 0) = val * p.tint_r;
        scene.radiance_at(r, c, 1) = val;
        scene.radiance_at(r, c, 2) = val;
        scene.radiance_at(r, c, 3) = val * p.tint_b;
        scene.depth_at(r, c) = p.depth;
      }
    }
  }
  // Focus on the last generic primitive so part of the frame is sharp and the
  // background carries defocus.
  scene.focus_distance_m = prims.empty() ? 2.0 : prims[prim_count - 1].depth;
  return scene;
}

namespace detail {

struct DiscKernel {
  std::vector<std::pair<int, int>> taps;
  double weight = 1.0;  // uniform, 1/taps.size()
};

// Uniform disc of the given radius; always sums to one.
inline const DiscKernel& disc_kernel(double radius) {
  static thread_local std::map<int, DiscKernel> cache;
  const int key = std::max(0, static_cast<int>(std::lround(radius * 4.0)));
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  DiscKernel kernel;
  const double r = key / 4.0;
  const int ir = static_cast<int>(std::floor(r));
  for (int dy = -ir; dy <= ir; ++dy) {
    for (int dx = -ir; dx <= ir; ++dx) {
      if (dy * dy + dx * dx <= r * r) kernel.taps.emplace_back(dy, dx);
    }
  }
  if (kernel.taps.empty()) kernel.taps.emplace_back(0, 0);
  kernel.weight = 1.0 / static_cast<double>(kernel.taps.size());
  return cache.emplace(key, std::move(kernel)).first->second;
}

}  // namespace detail

// Renders the scene under the given settings: thin-lens disc defocus first,
// then the exposure multiplier relative to the reference, then NLF noise.
inline RawImage render_with_settings(const SyntheticScene& scene, const ExposureSettings& s,
                                     const ExposureSettings& reference, std::uint64_t seed) {
  if (!s.valid() || !reference.valid()) {
    throw ParameterError("render_with_settings: invalid settings");
  }
  const double alpha = compute_alpha(reference, s);
  RawImage out(scene.rows, scene.cols);
  out.black_level = kSyntheticBlackLevel;
  out.white_level = kSyntheticWhiteLevel;
  out.settings = s;
  for (int r = 0; r < scene.rows; ++r) {
    for (int c = 0; c < scene.cols; ++c) {
      const auto& kernel = detail::disc_kernel(defocus_radius(scene, r, c, s.f_number));
      double acc[RawImage::kChannels] = {0, 0, 0, 0};
      for (const auto& [dy, dx] : kernel.taps) {
        const int rr = std::clamp(r + dy, 0, scene.rows - 1);
        const int cc = std::clamp(c + dx, 0, scene.cols - 1);
        for (int ch = 0; ch < RawImage::kChannels; ++ch) {
          acc[ch] += scene.radiance_at(rr, cc, ch);
        }
      }
      for (int ch = 0; ch < RawImage::kChannels; ++ch) {
        out.at(r, c, ch) = clamp01(acc[ch] * kernel.weight * alpha);
      }
    }
  }
  return synthesize_noise(out, s.nlf, seed);
}

// Capture plan used for synthetic sequences. Mostly equal-exposure frames:
// six at f/4 covering clean and noisy ISO levels, three at f/8 so the noise
// stage sees balanced blur-up and blur-down pairs, and one f/22 frame for a
// second aperture transition (ISO 800 keeps it out of the noise-target set).
inline std::vector<ExposureSettings> default_sequence_settings() {
  auto make = [](double t, double iso, double n) {
    return ExposureSettings{t, iso, n, synthetic_nlf_for_iso(iso)};
  };
  return {
      make(1.0 / 100.0, 100.0, 4.0),   make(1.0 / 50.0, 100.0, 4.0),
      make(1.0 / 200.0, 200.0, 4.0),   make(1.0 / 400.0, 400.0, 4.0),
      make(1.0 / 3200.0, 3200.0, 4.0), make(1.0 / 1600.0, 1600.0, 4.0),
      make(1.0 / 25.0, 100.0, 8.0),    make(1.0 / 50.0, 200.0, 8.0),
      make(1.0 / 800.0, 3200.0, 8.0),  make(1.0 / 25.0, 800.0, 22.0),
  };
}

// Renders one scene into a registered sequence.
inline SceneSequence render_sequence(const SyntheticScene& scene, const std::string& scene_id,
                                     std::span<const ExposureSettings> settings,
                                     std::uint64_t seed,
                                     const std::string& camera_id = "synthetic") {
  SceneSequence seq;
  seq.scene_id = scene_id;
  seq.camera_id = camera_id;
  const ExposureSettings reference = synthetic_reference_settings();
  for (size_t i = 0; i < settings.size(); ++i) {
    SequenceFrame frame;
    frame.image = render_with_settings(scene, settings[i], reference, seed + i);
    seq.frames.push_back(std::move(frame));
  }
  return seq;
}

}  // namespace rawsim
