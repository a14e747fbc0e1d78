// Stage 1: luminance scaling between exposure settings. The physical
// multiplier combines time, ISO and aperture-stop ratios; a learned linear
// refinement (gain w, black-level offset b) absorbs calibration bias.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "rawsim/errors.hpp"
#include "rawsim/raw_image.hpp"

namespace rawsim {

// Learned refinement of the physical multiplier: scaled = clip((x + b) * w * alpha).
struct ExposureCorrection {
  double gain = 1.0;          // w, dimensionless
  double black_offset = 0.0;  // b, normalized units; compensates black-level error
};

// Third-stop index of an f-number. Recorded f-numbers are rounded
// (sqrt(2)^3 is recorded as 2.8), so the index is recovered by rounding
// 6*log2(n) half away from zero.
inline int fnumber_to_stop(double f_number) {
  if (!(f_number > 0.0)) throw ParameterError("f-number must be positive");
  return static_cast<int>(std::lround(6.0 * std::log2(f_number)));
}

namespace detail {

inline double shift_ulps(double x, int k) {
  while (k > 0) { x = std::nextafter(x, HUGE_VAL); --k; }
  while (k < 0) { x = std::nextafter(x, -HUGE_VAL); ++k; }
  return x;
}

// Finds (f, r) within a few ulps of (a, 1/a) such that f * r == 1.0 in
// double arithmetic. A sign-magnitude search over both members always
// succeeds within one ulp each for the magnitudes seen here; the fallback
// is never reached in practice.
inline std::pair<double, double> exact_inverse_pair(double a) {
  for (int da = 0; da <= 4; ++da) {
    for (int sa : {+1, -1}) {
      if (da == 0 && sa < 0) continue;
      const double f = shift_ulps(a, sa * da);
      const double r0 = 1.0 / f;
      for (int dr = 0; dr <= 4; ++dr) {
        for (int sr : {+1, -1}) {
          if (dr == 0 && sr < 0) continue;
          const double r = shift_ulps(r0, sr * dr);
          if (f * r == 1.0) return {f, r};
        }
      }
    }
  }
  return {a, 1.0 / a};
}

inline std::array<double, 3> exposure_key(const ExposureSettings& s) {
  return {s.exposure_time, s.iso, s.f_number};
}

}  // namespace detail

// Physical luminance multiplier from `from` to `to`:
//   (t2/t1) * (g2/g1) * 2^((s1 - s2)/3)
// with s the third-stop index of the f-number. The ratio is evaluated in a
// canonical direction and the reverse direction returns a reciprocal adjusted
// so that compute_alpha(A,B) * compute_alpha(B,A) == 1 holds exactly; the
// adjustment never moves the result by more than one ulp.
inline double compute_alpha(const ExposureSettings& from, const ExposureSettings& to) {
  if (!(from.exposure_time > 0.0 && from.iso > 0.0 && from.f_number > 0.0 &&
        to.exposure_time > 0.0 && to.iso > 0.0 && to.f_number > 0.0)) {
    throw ParameterError("exposure settings must be positive");
  }
  const auto ka = detail::exposure_key(from);
  const auto kb = detail::exposure_key(to);
  if (ka == kb) return 1.0;
  const bool reversed = kb < ka;
  const ExposureSettings& lo = reversed ? to : from;
  const ExposureSettings& hi = reversed ? from : to;
  const int stop_delta = fnumber_to_stop(lo.f_number) - fnumber_to_stop(hi.f_number);
  const double directed = (hi.exposure_time / lo.exposure_time) * (hi.iso / lo.iso) *
                          std::exp2(stop_delta / 3.0);
  const auto [fwd, rev] = detail::exact_inverse_pair(directed);
  return reversed ? rev : fwd;
}

// Applies the scaled-and-clipped exposure model and stamps the target settings.
inline RawImage apply_exposure(const RawImage& raw, double alpha,
                               const ExposureCorrection& corr,
                               const ExposureSettings& target) {
  if (!(alpha > 0.0)) throw ParameterError("alpha must be positive");
  RawImage out = raw;
  const double scale = corr.gain * alpha;
  for (double& v : out.data) v = clamp01((v + corr.black_offset) * scale);
  out.settings = target;
  return out;
}

inline RawImage apply_exposure(const RawImage& raw, double alpha,
                               const ExposureCorrection& corr) {
  return apply_exposure(raw, alpha, corr, raw.settings);
}

// One training observation for the exposure fit.
struct ExposurePair {
  const RawImage* input = nullptr;
  const RawImage* target = nullptr;
  double alpha = 1.0;
};

struct ExposureFitOptions {
  double mask_threshold = 0.99;  // input or target above this is excluded
  int max_sweeps = 60;
  double tol = 1e-12;
};

namespace detail {

// Weighted median: minimizer of sum_i w_i * |t - v_i| over t.
inline double weighted_median(std::vector<std::pair<double, double>>& vw) {
  std::sort(vw.begin(), vw.end());
  double total = 0.0;
  for (const auto& [v, w] : vw) total += w;
  double acc = 0.0;
  for (const auto& [v, w] : vw) {
    acc += w;
    if (acc >= 0.5 * total) return v;
  }
  return vw.back().first;
}

inline double exposure_objective(std::span<const ExposurePair> pairs,
                                 const std::vector<std::vector<std::uint8_t>>& keep,
                                 double w, double b) {
  double loss = 0.0;
  size_t n = 0;
  for (size_t k = 0; k < pairs.size(); ++k) {
    const auto& in = *pairs[k].input;
    const auto& tg = *pairs[k].target;
    const double scale = w * pairs[k].alpha;
    for (size_t i = 0; i < in.data.size(); ++i) {
      if (!keep[k][i]) continue;
      loss += std::abs(clamp01((in.data[i] + b) * scale) - tg.data[i]);
      ++n;
    }
  }
  if (n == 0) throw DegenerateDataError("exposure fit: every pixel is masked");
  return loss / static_cast<double>(n);
}

}  // namespace detail

// Least-absolute-deviation fit of (w, b). Each sweep solves one coordinate
// exactly by weighted median, so the recorded objective never increases; a
// candidate that would increase it (possible once clipping changes the active
// set) is rejected and the fit stops. Deterministic given the pair order.
inline ExposureCorrection fit_exposure_correction(
    std::span<const ExposurePair> pairs, const ExposureFitOptions& opts = {},
    std::vector<double>* loss_history = nullptr) {
  if (pairs.empty()) throw DegenerateDataError("exposure fit: no pairs");
  // Spec rule masks over-exposed inputs; a clipped target is equally
  // uninformative for a linear fit, so both sides are masked.
  std::vector<std::vector<std::uint8_t>> keep(pairs.size());
  size_t usable = 0;
  for (size_t k = 0; k < pairs.size(); ++k) {
    const auto& in = *pairs[k].input;
    const auto& tg = *pairs[k].target;
    if (!in.same_shape(tg)) throw DimensionError("exposure fit: pair shape mismatch");
    keep[k].resize(in.data.size());
    for (size_t i = 0; i < in.data.size(); ++i) {
      const bool masked =
          in.data[i] > opts.mask_threshold || tg.data[i] > opts.mask_threshold;
      keep[k][i] = masked ? 0 : 1;
      usable += keep[k][i];
    }
  }
  if (usable == 0) throw DegenerateDataError("exposure fit: every pixel is masked");

  double w = 1.0, b = 0.0;
  double best = detail::exposure_objective(pairs, keep, w, b);
  if (loss_history) loss_history->push_back(best);

  std::vector<std::pair<double, double>> vw;
  vw.reserve(usable);
  for (int sweep = 0; sweep < opts.max_sweeps; ++sweep) {
    // Gain step: minimize sum |w * c - y| with c = alpha * (x + b) over
    // pixels whose current prediction is interior to the clip range.
    vw.clear();
    for (size_t k = 0; k < pairs.size(); ++k) {
      const auto& in = *pairs[k].input;
      const auto& tg = *pairs[k].target;
      for (size_t i = 0; i < in.data.size(); ++i) {
        if (!keep[k][i]) continue;
        const double c = pairs[k].alpha * (in.data[i] + b);
        const double pred = w * c;
        if (c == 0.0 || pred <= 0.0 || pred >= 1.0) continue;
        vw.emplace_back(tg.data[i] / c, std::abs(c));
      }
    }
    const double w_new = vw.empty() ? w : detail::weighted_median(vw);

    // Offset step: minimize sum |s * b - (y - s * x)| with s = w * alpha.
    vw.clear();
    for (size_t k = 0; k < pairs.size(); ++k) {
      const auto& in = *pairs[k].input;
      const auto& tg = *pairs[k].target;
      const double s = w_new * pairs[k].alpha;
      for (size_t i = 0; i < in.data.size(); ++i) {
        if (!keep[k][i]) continue;
        const double pred = s * (in.data[i] + b);
        if (s == 0.0 || pred <= 0.0 || pred >= 1.0) continue;
        vw.emplace_back((tg.data[i] - s * in.data[i]) / s, std::abs(s));
      }
    }
    const double b_new = vw.empty() ? b : detail::weighted_median(vw);

    const double cand = detail::exposure_objective(pairs, keep, w_new, b_new);
    if (cand > best) break;  // active set flipped against us; keep the best iterate
    const bool converged = std::abs(w_new - w) < opts.tol && std::abs(b_new - b) < opts.tol;
    w = w_new;
    b = b_new;
    best = cand;
    if (loss_history) loss_history->push_back(best);
    if (converged) break;
  }
  return ExposureCorrection{w, b};
}

}  // namespace rawsim
