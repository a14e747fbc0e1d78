// Auto-exposure: simulate a grid of candidate settings, score each result
// with a pluggable image scorer (smaller is better), return the best state.
#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "rawsim/noise.hpp"
#include "rawsim/simulator.hpp"

namespace rawsim {

struct ExposureState {
  ExposureSettings settings;
  double score = 0.0;
};

using ImageScorer = std::function<double(const RawImage&)>;

// Heuristic defect score: fraction of clipped pixels + fraction of near-black
// pixels + the mean predicted noise level. Lower is better. The noise term is
// small against the fractions, so it breaks ties between well-exposed states.
inline double default_defect_score(const RawImage& image) {
  size_t clipped = 0, dark = 0;
  for (double v : image.data) {
    if (v > 0.99) ++clipped;
    if (v < 0.02) ++dark;
  }
  const double n = static_cast<double>(image.data.size());
  double mean_sigma = 0.0;
  for (double v : image.data) {
    mean_sigma += std::sqrt(std::max(image.settings.nlf.variance_at(v), 0.0));
  }
  mean_sigma /= n;
  return static_cast<double>(clipped) / n + static_cast<double>(dark) / n + mean_sigma;
}

// 4 x 4 x 4 grid spanning the documented setting ranges; NLFs follow the
// source camera model via the ISO-transfer rule.
inline std::vector<ExposureSettings> default_candidate_grid(const ExposureSettings& source) {
  static constexpr double kIsos[4] = {100.0, 400.0, 1600.0, 6400.0};
  static constexpr double kTimes[4] = {1.0 / 1000.0, 1.0 / 100.0, 1.0 / 10.0, 1.0};
  static constexpr double kFNumbers[4] = {4.0, 8.0, 16.0, 22.0};
  std::vector<ExposureSettings> grid;
  grid.reserve(64);
  for (double iso : kIsos)
    for (double t : kTimes)
      for (double n : kFNumbers) {
        grid.push_back(
            ExposureSettings{t, iso, n, scale_nlf_for_iso(source.nlf, source.iso, iso)});
      }
  return grid;
}

// Simulates every candidate and returns the argmin-score state; ties keep the
// earliest candidate. The full score table is emitted through `table`.
inline ExposureState auto_expose(SimulatorModel& model, const RawImage& raw_in,
                                 std::span<const ExposureSettings> candidates,
                                 const ImageScorer& scorer,
                                 const StageOptions& base_options = {},
                                 std::vector<ExposureState>* table = nullptr) {
  if (candidates.empty()) throw ParameterError("auto_expose: no candidates");
  if (!scorer) throw ParameterError("auto_expose: scorer is empty");
  ExposureState best;
  bool first = true;
  if (table) table->clear();
  for (size_t i = 0; i < candidates.size(); ++i) {
    StageOptions options = base_options;
    options.seed = base_options.seed + i;
    const RawImage simulated = simulate(model, raw_in, candidates[i], options);
    const ExposureState state{candidates[i], scorer(simulated)};
    if (table) table->push_back(state);
    if (first || state.score < best.score) {
      best = state;
      first = false;
    }
  }
  return best;
}

}  // namespace rawsim
