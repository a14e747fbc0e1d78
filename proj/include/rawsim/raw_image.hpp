// Raw image representation: Bayer packing/unpacking, normalization and
// over-exposure masking. Images live as four half-resolution planes in
// normalized [0,1] units.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "rawsim/errors.hpp"

namespace rawsim {

// Affine signal-to-variance map: sigma^2(x) = lambda_read + lambda_shot * x,
// both coefficients in normalized-DN units.
struct NoiseLevelFunction {
  double lambda_read = 0.0;
  double lambda_shot = 0.0;

  double variance_at(double x) const { return lambda_read + lambda_shot * x; }
  bool valid() const {
    return lambda_read >= 0.0 && lambda_shot >= 0.0 && std::isfinite(lambda_read) &&
           std::isfinite(lambda_shot);
  }
};

// One capture configuration plus the per-ISO noise model that goes with it.
struct ExposureSettings {
  double exposure_time = 1.0 / 100.0;  // seconds
  double iso = 100.0;
  double f_number = 4.0;
  NoiseLevelFunction nlf;

  bool valid() const {
    return exposure_time > 0.0 && iso > 0.0 && f_number > 0.0 && nlf.valid();
  }
  // Equality of the capture triple only; the NLF is derived metadata.
  bool same_exposure(const ExposureSettings& o) const {
    return exposure_time == o.exposure_time && iso == o.iso && f_number == o.f_number;
  }
};

enum class CfaOrder : std::uint8_t { rggb = 0, bggr = 1, grbg = 2, gbrg = 3 };

// Mosaic position (row, col) within a 2x2 tile for each canonical plane
// [R, Gr, Gb, B]; Gr is the green sharing a row with red.
inline std::array<std::array<int, 2>, 4> cfa_offsets(CfaOrder order) {
  switch (order) {
    case CfaOrder::rggb: return {{{0, 0}, {0, 1}, {1, 0}, {1, 1}}};
    case CfaOrder::bggr: return {{{1, 1}, {1, 0}, {0, 1}, {0, 0}}};
    case CfaOrder::grbg: return {{{0, 1}, {0, 0}, {1, 1}, {1, 0}}};
    case CfaOrder::gbrg: return {{{1, 0}, {1, 1}, {0, 0}, {0, 1}}};
  }
  throw ParameterError("unknown CFA order");
}

// Integer sensor readout, row-major, full mosaic resolution.
struct BayerMosaic {
  int height = 0;
  int width = 0;
  std::vector<std::uint16_t> data;

  BayerMosaic() = default;
  BayerMosaic(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w, 0) {}

  std::uint16_t& at(int r, int c) { return data[static_cast<size_t>(r) * width + c]; }
  std::uint16_t at(int r, int c) const { return data[static_cast<size_t>(r) * width + c]; }
};

// Four-channel half-resolution unpacked raw image, normalized to [0,1].
// Channel order is always [R, Gr, Gb, B]; cfa records the originating mosaic
// layout so packing restores the exact tile positions.
struct RawImage {
  static constexpr int kChannels = 4;

  int rows = 0;  // H/2 of the originating mosaic
  int cols = 0;  // W/2
  std::vector<double> data;  // rows * cols * 4, channel-fastest
  CfaOrder cfa = CfaOrder::rggb;
  int black_level = 0;
  int white_level = 1;
  ExposureSettings settings;

  RawImage() = default;
  RawImage(int r, int c)
      : rows(r), cols(c), data(static_cast<size_t>(r) * c * kChannels, 0.0) {}

  size_t index(int r, int c, int ch) const {
    return (static_cast<size_t>(r) * cols + c) * kChannels + ch;
  }
  double& at(int r, int c, int ch) { return data[index(r, c, ch)]; }
  double at(int r, int c, int ch) const { return data[index(r, c, ch)]; }
  size_t pixel_count() const { return data.size(); }

  bool same_shape(const RawImage& o) const { return rows == o.rows && cols == o.cols; }
};

inline double clamp01(double v) { return std::min(std::max(v, 0.0), 1.0); }

// Unpacks a Bayer mosaic into four half-resolution planes, subtracting the
// black level and normalizing by the usable range. Values outside the nominal
// range are clamped rather than rejected; real raws exceed the white level.
inline RawImage unpack_bayer(const BayerMosaic& mosaic, int black_level, int white_level,
                             CfaOrder order = CfaOrder::rggb) {
  if (mosaic.height <= 0 || mosaic.width <= 0 || mosaic.height % 2 != 0 ||
      mosaic.width % 2 != 0) {
    throw DimensionError("mosaic dimensions must be positive and even");
  }
  if (white_level <= black_level) {
    throw ParameterError("white_level must exceed black_level");
  }
  const auto offs = cfa_offsets(order);
  const double span = static_cast<double>(white_level) - black_level;
  RawImage out(mosaic.height / 2, mosaic.width / 2);
  out.cfa = order;
  out.black_level = black_level;
  out.white_level = white_level;
  for (int r = 0; r < out.rows; ++r) {
    for (int c = 0; c < out.cols; ++c) {
      for (int ch = 0; ch < RawImage::kChannels; ++ch) {
        const int mr = 2 * r + offs[ch][0];
        const int mc = 2 * c + offs[ch][1];
        out.at(r, c, ch) = clamp01((mosaic.at(mr, mc) - black_level) / span);
      }
    }
  }
  return out;
}

// Inverse of unpack_bayer up to integer rounding; output DNs are clamped to
// [black_level, white_level].
inline BayerMosaic pack_bayer(const RawImage& raw) {
  const auto offs = cfa_offsets(raw.cfa);
  const double span = static_cast<double>(raw.white_level) - raw.black_level;
  BayerMosaic mosaic(raw.rows * 2, raw.cols * 2);
  for (int r = 0; r < raw.rows; ++r) {
    for (int c = 0; c < raw.cols; ++c) {
      for (int ch = 0; ch < RawImage::kChannels; ++ch) {
        long dn = raw.black_level + std::lround(raw.at(r, c, ch) * span);
        dn = std::clamp(dn, static_cast<long>(raw.black_level),
                        static_cast<long>(raw.white_level));
        mosaic.at(2 * r + offs[ch][0], 2 * c + offs[ch][1]) =
            static_cast<std::uint16_t>(dn);
      }
    }
  }
  return mosaic;
}

// True exactly where data > threshold. Masked pixels are excluded from all
// fitting losses downstream.
inline std::vector<std::uint8_t> overexposure_mask(const RawImage& raw,
                                                   double threshold = 0.99) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw ParameterError("overexposure threshold must lie in (0, 1]");
  }
  std::vector<std::uint8_t> mask(raw.pixel_count(), 0);
  for (size_t i = 0; i < raw.data.size(); ++i) {
    mask[i] = raw.data[i] > threshold ? 1 : 0;
  }
  return mask;
}

}  // namespace rawsim
