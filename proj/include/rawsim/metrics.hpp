// Full-reference quality metrics over normalized raw planes.
#pragma once

#include <cmath>

#include "rawsim/raw_image.hpp"

namespace rawsim {

inline constexpr double kPsnrCapDb = 100.0;

// Peak signal-to-noise ratio with peak 1.0, capped at 100 dB so the metric
// stays total for identical inputs.
inline double compute_psnr(const RawImage& a, const RawImage& b) {
  if (!a.same_shape(b)) throw DimensionError("compute_psnr: shape mismatch");
  double se = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.data.size());
  if (mse <= 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, 10.0 * std::log10(1.0 / mse));
}

namespace detail {

// Scalar SSIM term with the standard constants, dynamic range 1.
inline double ssim_term(double mu_x, double mu_y, double var_x, double var_y,
                        double cov) {
  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;
  return ((2.0 * mu_x * mu_y + kC1) * (2.0 * cov + kC2)) /
         ((mu_x * mu_x + mu_y * mu_y + kC1) * (var_x + var_y + kC2));
}

}  // namespace detail

// Mean per-channel SSIM with a 7x7 uniform window over valid positions only.
inline double compute_ssim(const RawImage& a, const RawImage& b) {
  constexpr int kWindow = 7;
  if (!a.same_shape(b)) throw DimensionError("compute_ssim: shape mismatch");
  if (a.rows < kWindow || a.cols < kWindow) {
    throw DimensionError("compute_ssim: image smaller than the 7x7 window");
  }
  const double inv_n = 1.0 / (kWindow * kWindow);
  double total = 0.0;
  size_t count = 0;
  for (int ch = 0; ch < RawImage::kChannels; ++ch) {
    for (int r = 0; r + kWindow <= a.rows; ++r) {
      for (int c = 0; c + kWindow <= a.cols; ++c) {
        double sx = 0.0, sy = 0.0;
        for (int dr = 0; dr < kWindow; ++dr) {
          for (int dc = 0; dc < kWindow; ++dc) {
            sx += a.at(r + dr, c + dc, ch);
            sy += b.at(r + dr, c + dc, ch);
          }
        }
        const double mu_x = sx * inv_n;
        const double mu_y = sy * inv_n;
        // Mean-subtracted moments avoid the cancellation of E[x^2] - mu^2.
        double var_x = 0.0, var_y = 0.0, cov = 0.0;
        for (int dr = 0; dr < kWindow; ++dr) {
          for (int dc = 0; dc < kWindow; ++dc) {
            const double dx = a.at(r + dr, c + dc, ch) - mu_x;
            const double dy = b.at(r + dr, c + dc, ch) - mu_y;
            var_x += dx * dx;
            var_y += dy * dy;
            cov += dx * dy;
          }
        }
        total += detail::ssim_term(mu_x, mu_y, var_x * inv_n, var_y * inv_n, cov * inv_n);
        ++count;
      }
    }
  }
  return total / static_cast<double>(count);
}

}  // namespace rawsim
