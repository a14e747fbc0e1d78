// Preview ISP: raw -> sRGB at half resolution. White balance, 3x3 color
// matrix, then a transfer curve; quantization rounds half away from zero.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "rawsim/errors.hpp"
#include "rawsim/raw_image.hpp"

namespace rawsim {

struct RenderParams {
  std::array<double, 3> wb_gains = {2.0, 1.0, 1.6};
  std::array<double, 9> color_matrix = {1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major
  double gamma = 2.2;          // used when use_srgb_curve is false
  bool use_srgb_curve = true;

  bool valid() const {
    for (double g : wb_gains)
      if (!(g > 0.0)) return false;
    for (double m : color_matrix)
      if (!std::isfinite(m)) return false;
    return gamma > 0.0;
  }
};

// 8-bit interleaved RGB image.
struct Image8 {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> rgb;  // rows * cols * 3

  Image8() = default;
  Image8(int r, int c) : rows(r), cols(c), rgb(static_cast<size_t>(r) * c * 3, 0) {}
  std::uint8_t& at(int r, int c, int ch) { return rgb[(static_cast<size_t>(r) * cols + c) * 3 + ch]; }
  std::uint8_t at(int r, int c, int ch) const {
    return rgb[(static_cast<size_t>(r) * cols + c) * 3 + ch];
  }
};

namespace detail {

inline double srgb_encode(double v) {
  return v <= 0.0031308 ? 12.92 * v : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

}  // namespace detail

// Half-resolution render with G as the mean of the two green planes.
inline Image8 render_srgb(const RawImage& raw, const RenderParams& params = {}) {
  if (!params.valid()) throw ParameterError("render_srgb: invalid parameters");
  Image8 out(raw.rows, raw.cols);
  const auto& m = params.color_matrix;
  for (int r = 0; r < raw.rows; ++r) {
    for (int c = 0; c < raw.cols; ++c) {
      const double red = raw.at(r, c, 0) * params.wb_gains[0];
      const double green = 0.5 * (raw.at(r, c, 1) + raw.at(r, c, 2)) * params.wb_gains[1];
      const double blue = raw.at(r, c, 3) * params.wb_gains[2];
      const double rgb_lin[3] = {m[0] * red + m[1] * green + m[2] * blue,
                                 m[3] * red + m[4] * green + m[5] * blue,
                                 m[6] * red + m[7] * green + m[8] * blue};
      for (int ch = 0; ch < 3; ++ch) {
        double v = clamp01(rgb_lin[ch]);
        v = params.use_srgb_curve
                ? detail::srgb_encode(v)
                : (params.gamma == 1.0 ? v : std::pow(v, 1.0 / params.gamma));
        out.at(r, c, ch) = static_cast<std::uint8_t>(std::lround(clamp01(v) * 255.0));
      }
    }
  }
  return out;
}

}  // namespace rawsim
