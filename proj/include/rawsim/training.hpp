// Training schedules and the per-stage trainers for the denoiser and the
// aperture network. Training is single-threaded and deterministic given the
// schedule seed and pair order.
#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "rawsim/aperture.hpp"
#include "rawsim/errors.hpp"
#include "rawsim/noise.hpp"
#include "rawsim/tensor.hpp"

namespace rawsim {

struct TrainSchedule {
  int exposure_epochs = 5;
  int denoiser_epochs = 30;
  int aperture_epochs = 30;
  int joint_epochs = 10;
  int batch_size = 2;
  double learning_rate = 1e-3;
  int lr_decay_every = 20;       // epochs
  double lr_decay_factor = 0.1;
  int patch_size = 64;           // random square crops; full frame if larger
  // Deterministic cap on pairs fed to each network stage (0 = use all);
  // synthetic sequences enumerate far more pairs than desk-scale runs need.
  int max_pairs_per_stage = 0;
  std::uint64_t seed = 0;

  // Shrunk schedule for desktop-scale runs.
  static TrainSchedule desk_scale() {
    TrainSchedule s;
    s.exposure_epochs = 2;
    s.denoiser_epochs = 6;
    s.aperture_epochs = 6;
    s.joint_epochs = 2;
    return s;
  }

  double lr_at(int epoch) const {
    if (epoch < 0 || learning_rate <= 0.0) throw ParameterError("bad schedule");
    const int decades = lr_decay_every > 0 ? epoch / lr_decay_every : 0;
    // Dividing by the inverse factor keeps decade steps exact (1e-3 -> 1e-4
    // -> 1e-5 bit-for-bit for the default factor of 10).
    return learning_rate / std::pow(1.0 / lr_decay_factor, static_cast<double>(decades));
  }
};

struct TrainReport {
  std::vector<double> epoch_loss;  // mean training loss per epoch
  std::size_t used_pairs = 0;
  std::size_t rejected_pairs = 0;
};

// Target ISO levels accepted for denoiser training pairs.
inline bool denoiser_target_iso_ok(double iso) {
  return iso == 100.0 || iso == 200.0 || iso == 400.0;
}

struct DenoisePair {
  const RawImage* input = nullptr;       // stage-1 output
  const NoiseLevelMap* noise_map = nullptr;
  const RawImage* target = nullptr;      // low-ISO ground truth
};

struct AperturePair {
  const RawImage* input = nullptr;   // stage-2 output
  const RawImage* target = nullptr;  // wider-aperture ground truth
  double n_in = 0.0;
  double n_out = 0.0;
};

namespace detail {

struct Crop {
  int r0 = 0, c0 = 0, rows = 0, cols = 0;
};

inline Crop pick_crop(int rows, int cols, int patch, std::mt19937_64& rng) {
  Crop crop;
  crop.rows = std::min(rows, patch);
  crop.cols = std::min(cols, patch);
  if (rows > crop.rows) {
    crop.r0 = static_cast<int>(std::uniform_int_distribution<int>(0, rows - crop.rows)(rng));
  }
  if (cols > crop.cols) {
    crop.c0 = static_cast<int>(std::uniform_int_distribution<int>(0, cols - crop.cols)(rng));
  }
  return crop;
}

}  // namespace detail

// Trains the residual denoiser with the L1 objective against I2 - I_exp.
// Pairs whose target ISO is outside {100, 200, 400} are rejected.
inline TrainReport train_denoiser(std::span<const DenoisePair> pairs, DenoiserNet& net,
                                  const TrainSchedule& schedule) {
  TrainReport report;
  std::vector<const DenoisePair*> usable;
  for (const DenoisePair& p : pairs) {
    if (denoiser_target_iso_ok(p.target->settings.iso)) {
      usable.push_back(&p);
    } else {
      ++report.rejected_pairs;
    }
  }
  if (usable.empty()) throw DegenerateDataError("train_denoiser: no usable pairs");
  report.used_pairs = usable.size();

  auto params = net.parameters();
  std::mt19937_64 rng(schedule.seed);
  std::vector<size_t> order(usable.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < schedule.denoiser_epochs; ++epoch) {
    const double lr = schedule.lr_at(epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    size_t samples = 0;
    for (size_t start = 0; start < order.size(); start += schedule.batch_size) {
      const size_t end = std::min(order.size(), start + schedule.batch_size);
      for (nn::Parameter* p : params) p->zero_grad();
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      for (size_t i = start; i < end; ++i) {
        const DenoisePair& pair = *usable[order[i]];
        const auto crop = detail::pick_crop(pair.input->rows, pair.input->cols,
                                            schedule.patch_size, rng);
        nn::Tensor x(1, crop.rows, crop.cols, 2 * RawImage::kChannels);
        nn::Tensor target(1, crop.rows, crop.cols, RawImage::kChannels);
        for (int r = 0; r < crop.rows; ++r)
          for (int c = 0; c < crop.cols; ++c)
            for (int ch = 0; ch < RawImage::kChannels; ++ch) {
              const int rr = crop.r0 + r, cc = crop.c0 + c;
              x.at(0, r, c, ch) = pair.input->at(rr, cc, ch);
              x.at(0, r, c, RawImage::kChannels + ch) = pair.noise_map->at(rr, cc, ch);
              target.at(0, r, c, ch) = pair.target->at(rr, cc, ch) - pair.input->at(rr, cc, ch);
            }
        nn::Tensor out = net.forward(x);
        nn::Tensor grad;
        epoch_loss += l1_loss(out, target, &grad);
        ++samples;
        nn::scale_inplace(grad, inv_batch);
        net.backward(grad);
      }
      nn::adam_step(params, lr);
    }
    report.epoch_loss.push_back(epoch_loss / std::max<size_t>(samples, 1));
  }
  return report;
}

// Trains the aperture network on small-to-large aperture transitions
// (strictly n_out < n_in); other pairs are rejected.
inline TrainReport train_aperture(std::span<const AperturePair> pairs, ApertureNet& net,
                                  const TrainSchedule& schedule) {
  TrainReport report;
  std::vector<const AperturePair*> usable;
  for (const AperturePair& p : pairs) {
    if (p.n_out < p.n_in) {
      usable.push_back(&p);
    } else {
      ++report.rejected_pairs;
    }
  }
  if (usable.empty()) throw DegenerateDataError("train_aperture: no usable pairs");
  report.used_pairs = usable.size();

  auto params = net.parameters();
  std::mt19937_64 rng(schedule.seed + 1);
  std::vector<size_t> order(usable.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < schedule.aperture_epochs; ++epoch) {
    const double lr = schedule.lr_at(epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    size_t samples = 0;
    for (size_t start = 0; start < order.size(); start += schedule.batch_size) {
      const size_t end = std::min(order.size(), start + schedule.batch_size);
      for (nn::Parameter* p : params) p->zero_grad();
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      for (size_t i = start; i < end; ++i) {
        const AperturePair& pair = *usable[order[i]];
        const double a = normalize_fnumber(pair.n_in);
        const double b = normalize_fnumber(pair.n_out);
        const auto crop = detail::pick_crop(pair.input->rows, pair.input->cols,
                                            schedule.patch_size, rng);
        nn::Tensor x(1, crop.rows, crop.cols, RawImage::kChannels + 2);
        nn::Tensor target(1, crop.rows, crop.cols, RawImage::kChannels);
        for (int r = 0; r < crop.rows; ++r)
          for (int c = 0; c < crop.cols; ++c) {
            const int rr = crop.r0 + r, cc = crop.c0 + c;
            for (int ch = 0; ch < RawImage::kChannels; ++ch) {
              x.at(0, r, c, ch) = pair.input->at(rr, cc, ch);
              target.at(0, r, c, ch) = pair.target->at(rr, cc, ch) - pair.input->at(rr, cc, ch);
            }
            x.at(0, r, c, RawImage::kChannels) = a;
            x.at(0, r, c, RawImage::kChannels + 1) = b;
          }
        net.set_condition(a, b);
        nn::Tensor out = net.forward(x);
        nn::Tensor grad;
        epoch_loss += l1_loss(out, target, &grad);
        ++samples;
        nn::scale_inplace(grad, inv_batch);
        net.backward(grad);
      }
      nn::adam_step(params, lr);
    }
    report.epoch_loss.push_back(epoch_loss / std::max<size_t>(samples, 1));
  }
  return report;
}

}  // namespace rawsim
