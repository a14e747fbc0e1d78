// End-to-end simulator: exposure -> noise -> aperture -> output NLF
// re-noising, plus staged training with pair selection and joint finetuning.
#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "rawsim/aperture.hpp"
#include "rawsim/checkpoint.hpp"
#include "rawsim/dataset.hpp"
#include "rawsim/exposure.hpp"
#include "rawsim/metrics.hpp"
#include "rawsim/noise.hpp"
#include "rawsim/training.hpp"

namespace rawsim {

struct SimulatorConfig {
  int denoiser_width = 16;
  int aperture_width = 16;
  ShotScaling shot_scaling = ShotScaling::linear;
  std::uint64_t init_seed = 1234;
};

inline constexpr int kModelSchemaVersion = 1;

// The full model: exposure refinement plus the two residual networks.
// simulate() is serialized internally, so concurrent callers are safe.
class SimulatorModel {
 public:
  explicit SimulatorModel(const SimulatorConfig& cfg = {})
      : config(cfg),
        denoiser(cfg.denoiser_width, cfg.init_seed),
        aperture(cfg.aperture_width, cfg.init_seed + 1) {}

  SimulatorModel(const SimulatorModel&) = delete;
  SimulatorModel& operator=(const SimulatorModel&) = delete;

  SimulatorConfig config;
  ExposureCorrection exposure;
  DenoiserNet denoiser;
  ApertureNet aperture;
  std::mutex mutex;
};

struct StageOptions {
  bool exposure = true;
  bool noise = true;
  bool aperture = true;
  bool renoise = true;
  std::uint64_t seed = 0;
};

// Runs the pipeline from the input image to the target settings. Disabled
// stages pass their input through unchanged; the output always carries the
// target settings.
inline RawImage simulate(SimulatorModel& model, const RawImage& raw_in,
                         const ExposureSettings& target, const StageOptions& options = {}) {
  if (!target.valid()) throw ParameterError("simulate: invalid target settings");
  std::lock_guard<std::mutex> lock(model.mutex);

  const double alpha = compute_alpha(raw_in.settings, target);
  RawImage current = raw_in;
  double alpha_hat = 1.0;
  if (options.exposure) {
    alpha_hat = model.exposure.gain * alpha;
    current = apply_exposure(raw_in, alpha, model.exposure, target);
  }
  if (options.noise) {
    const NoiseLevelFunction scaled =
        propagate_nlf(raw_in.settings.nlf, alpha_hat, model.config.shot_scaling);
    const NoiseLevelMap map = noise_level_map(current, scaled);
    current = denoise(current, map, model.denoiser);
  }
  if (options.aperture) {
    current = aperture_forward(current, raw_in.settings.f_number, target.f_number,
                               model.aperture);
  }
  if (options.renoise) {
    current = synthesize_noise(current, target.nlf, options.seed);
  }
  current.settings = target;
  return current;
}

enum class PipelineStage { exposure, noise, aperture };

struct SelectedPair {
  std::string scene_id;
  int input_index = 0;
  int target_index = 0;
  const SceneSequence* sequence = nullptr;

  friend bool operator<(const SelectedPair& a, const SelectedPair& b) {
    return std::tie(a.scene_id, a.input_index, a.target_index) <
           std::tie(b.scene_id, b.input_index, b.target_index);
  }
};

// Ordered pairs within each scene sequence, filtered by the per-stage rule:
// exposure takes everything, the noise stage requires a low-ISO target, the
// aperture stage requires a strictly wider target aperture. Output order is
// deterministic regardless of input sequence order.
inline std::vector<SelectedPair> select_pairs(std::span<const SceneSequence> sequences,
                                              PipelineStage stage) {
  std::vector<SelectedPair> out;
  for (const SceneSequence& seq : sequences) {
    const int n = static_cast<int>(seq.frames.size());
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        const ExposureSettings& tgt = seq.frames[j].image.settings;
        const ExposureSettings& src = seq.frames[i].image.settings;
        if (stage == PipelineStage::noise && !denoiser_target_iso_ok(tgt.iso)) continue;
        if (stage == PipelineStage::aperture && !(tgt.f_number < src.f_number)) continue;
        out.push_back(SelectedPair{seq.scene_id, i, j, &seq});
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct PipelineTrainReport {
  std::vector<double> exposure_loss;
  TrainReport denoiser;
  TrainReport aperture;
  std::vector<double> joint_loss;
};

namespace detail {

// Derivative mask of clip([0,1]) at x: passes gradient strictly inside.
inline double clip_mask(double x) { return (x > 0.0 && x < 1.0) ? 1.0 : 0.0; }

// Deterministic subsample when a stage enumerates more pairs than the
// schedule wants to touch.
inline std::vector<SelectedPair> cap_pairs(std::vector<SelectedPair> pairs, int cap,
                                           std::uint64_t seed) {
  if (cap <= 0 || pairs.size() <= static_cast<size_t>(cap)) return pairs;
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::shuffle(pairs.begin(), pairs.end(), rng);
  pairs.resize(static_cast<size_t>(cap));
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

}  // namespace detail

// Stage-ordered training: exposure fit, denoiser, aperture, then joint
// finetuning of both networks with the exposure correction held fixed.
inline PipelineTrainReport train(SimulatorModel& model,
                                 std::span<const SceneSequence> sequences,
                                 const TrainSchedule& schedule) {
  PipelineTrainReport report;
  std::lock_guard<std::mutex> lock(model.mutex);

  // Stage 1: exposure correction.
  if (schedule.exposure_epochs > 0) {
    const auto pairs = select_pairs(sequences, PipelineStage::exposure);
    if (pairs.empty()) throw DegenerateDataError("train: no pairs for the exposure stage");
    std::vector<ExposurePair> fit_pairs;
    fit_pairs.reserve(pairs.size());
    for (const SelectedPair& p : pairs) {
      const RawImage& in = p.sequence->frames[p.input_index].image;
      const RawImage& tg = p.sequence->frames[p.target_index].image;
      fit_pairs.push_back(
          ExposurePair{&in, &tg, compute_alpha(in.settings, tg.settings)});
    }
    model.exposure = fit_exposure_correction(fit_pairs, {}, &report.exposure_loss);
  }

  // Stage 2: denoiser on low-ISO-target pairs.
  if (schedule.denoiser_epochs > 0) {
    const auto pairs = detail::cap_pairs(select_pairs(sequences, PipelineStage::noise),
                                         schedule.max_pairs_per_stage, schedule.seed + 10);
    if (pairs.empty()) throw DegenerateDataError("train: no pairs for the noise stage");
    std::vector<RawImage> inputs;
    std::vector<NoiseLevelMap> maps;
    inputs.reserve(pairs.size());
    maps.reserve(pairs.size());
    std::vector<DenoisePair> dpairs;
    for (const SelectedPair& p : pairs) {
      const RawImage& in = p.sequence->frames[p.input_index].image;
      const RawImage& tg = p.sequence->frames[p.target_index].image;
      const double alpha = compute_alpha(in.settings, tg.settings);
      const double alpha_hat = model.exposure.gain * alpha;
      inputs.push_back(apply_exposure(in, alpha, model.exposure, tg.settings));
      maps.push_back(noise_level_map(
          inputs.back(), propagate_nlf(in.settings.nlf, alpha_hat, model.config.shot_scaling)));
    }
    for (size_t i = 0; i < pairs.size(); ++i) {
      dpairs.push_back(DenoisePair{&inputs[i], &maps[i],
                                   &pairs[i].sequence->frames[pairs[i].target_index].image});
    }
    report.denoiser = train_denoiser(dpairs, model.denoiser, schedule);
  }

  // Stage 3: aperture on small-to-large transitions, fed by stages 1-2.
  if (schedule.aperture_epochs > 0) {
    const auto pairs = detail::cap_pairs(select_pairs(sequences, PipelineStage::aperture),
                                         schedule.max_pairs_per_stage, schedule.seed + 20);
    if (pairs.empty()) throw DegenerateDataError("train: no pairs for the aperture stage");
    std::vector<RawImage> inputs;
    inputs.reserve(pairs.size());
    std::vector<AperturePair> apairs;
    for (const SelectedPair& p : pairs) {
      const RawImage& in = p.sequence->frames[p.input_index].image;
      const RawImage& tg = p.sequence->frames[p.target_index].image;
      const double alpha = compute_alpha(in.settings, tg.settings);
      const double alpha_hat = model.exposure.gain * alpha;
      RawImage exposed = apply_exposure(in, alpha, model.exposure, tg.settings);
      const NoiseLevelMap map = noise_level_map(
          exposed, propagate_nlf(in.settings.nlf, alpha_hat, model.config.shot_scaling));
      inputs.push_back(denoise(exposed, map, model.denoiser));
    }
    for (size_t i = 0; i < pairs.size(); ++i) {
      const SelectedPair& p = pairs[i];
      apairs.push_back(AperturePair{
          &inputs[i], &p.sequence->frames[p.target_index].image,
          p.sequence->frames[p.input_index].image.settings.f_number,
          p.sequence->frames[p.target_index].image.settings.f_number});
    }
    report.aperture = train_aperture(apairs, model.aperture, schedule);
  }

  // Joint finetuning through both networks; pairs must satisfy both stage
  // rules so each module keeps its role. The exposure scalars stay fixed.
  if (schedule.joint_epochs > 0) {
    const auto noise_ok = select_pairs(sequences, PipelineStage::noise);
    std::vector<SelectedPair> pairs;
    for (const SelectedPair& p : noise_ok) {
      const double n_in = p.sequence->frames[p.input_index].image.settings.f_number;
      const double n_out = p.sequence->frames[p.target_index].image.settings.f_number;
      if (n_out < n_in) pairs.push_back(p);
    }
    pairs = detail::cap_pairs(std::move(pairs), schedule.max_pairs_per_stage, schedule.seed + 30);
    if (pairs.empty()) throw DegenerateDataError("train: no pairs for joint finetuning");

    struct JointSample {
      RawImage exposed;
      NoiseLevelMap map;
      const RawImage* target;
      double n_in, n_out;
    };
    std::vector<JointSample> samples;
    samples.reserve(pairs.size());
    for (const SelectedPair& p : pairs) {
      const RawImage& in = p.sequence->frames[p.input_index].image;
      const RawImage& tg = p.sequence->frames[p.target_index].image;
      const double alpha = compute_alpha(in.settings, tg.settings);
      const double alpha_hat = model.exposure.gain * alpha;
      JointSample s;
      s.exposed = apply_exposure(in, alpha, model.exposure, tg.settings);
      s.map = noise_level_map(
          s.exposed, propagate_nlf(in.settings.nlf, alpha_hat, model.config.shot_scaling));
      s.target = &tg;
      s.n_in = in.settings.f_number;
      s.n_out = tg.settings.f_number;
      samples.push_back(std::move(s));
    }

    std::vector<nn::Parameter*> params = model.denoiser.parameters();
    for (nn::Parameter* p : model.aperture.parameters()) params.push_back(p);
    std::mt19937_64 rng(schedule.seed + 2);
    std::vector<size_t> order(samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < schedule.joint_epochs; ++epoch) {
      const double lr = schedule.lr_at(epoch);
      std::shuffle(order.begin(), order.end(), rng);
      double epoch_loss = 0.0;
      size_t count = 0;
      for (size_t start = 0; start < order.size(); start += schedule.batch_size) {
        const size_t end = std::min(order.size(), start + schedule.batch_size);
        for (nn::Parameter* p : params) p->zero_grad();
        const double inv_batch = 1.0 / static_cast<double>(end - start);
        for (size_t k = start; k < end; ++k) {
          const JointSample& s = samples[order[k]];
          const auto crop = detail::pick_crop(s.exposed.rows, s.exposed.cols,
                                              schedule.patch_size, rng);
          const double a = normalize_fnumber(s.n_in);
          const double b = normalize_fnumber(s.n_out);
          nn::Tensor x8(1, crop.rows, crop.cols, 2 * RawImage::kChannels);
          nn::Tensor exposed(1, crop.rows, crop.cols, RawImage::kChannels);
          nn::Tensor target(1, crop.rows, crop.cols, RawImage::kChannels);
          for (int r = 0; r < crop.rows; ++r)
            for (int c = 0; c < crop.cols; ++c)
              for (int ch = 0; ch < RawImage::kChannels; ++ch) {
                const int rr = crop.r0 + r, cc = crop.c0 + c;
                const double e = s.exposed.at(rr, cc, ch);
                x8.at(0, r, c, ch) = e;
                x8.at(0, r, c, RawImage::kChannels + ch) = s.map.at(rr, cc, ch);
                exposed.at(0, r, c, ch) = e;
                target.at(0, r, c, ch) = s.target->at(rr, cc, ch);
              }
          nn::Tensor res_d = model.denoiser.forward(x8);
          nn::Tensor ins(1, crop.rows, crop.cols, RawImage::kChannels);
          for (size_t i = 0; i < ins.v.size(); ++i) {
            ins.v[i] = clamp01(exposed.v[i] + res_d.v[i]);
          }
          nn::Tensor x6(1, crop.rows, crop.cols, RawImage::kChannels + 2);
          for (int r = 0; r < crop.rows; ++r)
            for (int c = 0; c < crop.cols; ++c) {
              for (int ch = 0; ch < RawImage::kChannels; ++ch) {
                x6.at(0, r, c, ch) = ins.at(0, r, c, ch);
              }
              x6.at(0, r, c, RawImage::kChannels) = a;
              x6.at(0, r, c, RawImage::kChannels + 1) = b;
            }
          model.aperture.set_condition(a, b);
          nn::Tensor res_a = model.aperture.forward(x6);
          nn::Tensor out(1, crop.rows, crop.cols, RawImage::kChannels);
          for (size_t i = 0; i < out.v.size(); ++i) {
            out.v[i] = clamp01(ins.v[i] + res_a.v[i]);
          }
          nn::Tensor gout;
          epoch_loss += l1_loss(out, target, &gout);
          ++count;
          nn::scale_inplace(gout, inv_batch);
          for (size_t i = 0; i < gout.v.size(); ++i) {
            gout.v[i] *= detail::clip_mask(ins.v[i] + res_a.v[i]);
          }
          nn::Tensor gx6 = model.aperture.backward(gout);
          nn::Tensor gins = gout;  // direct path through the residual add
          for (int r = 0; r < crop.rows; ++r)
            for (int c = 0; c < crop.cols; ++c)
              for (int ch = 0; ch < RawImage::kChannels; ++ch) {
                gins.at(0, r, c, ch) += gx6.at(0, r, c, ch);
              }
          for (size_t i = 0; i < gins.v.size(); ++i) {
            gins.v[i] *= detail::clip_mask(exposed.v[i] + res_d.v[i]);
          }
          model.denoiser.backward(gins);
        }
        nn::adam_step(params, lr);
      }
      report.joint_loss.push_back(epoch_loss / std::max<size_t>(count, 1));
    }
  }
  return report;
}

struct StageMetrics {
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  std::size_t count = 0;
};

// Mean metrics after the exposure stage, the noise stage, and the full model,
// in that column order.
struct EvalReport {
  StageMetrics exposure_stage;
  StageMetrics noise_stage;
  StageMetrics full_model;
};

inline EvalReport evaluate(SimulatorModel& model, std::span<const SceneSequence> sequences,
                           std::uint64_t seed = 0) {
  const auto pairs = select_pairs(sequences, PipelineStage::exposure);
  EvalReport report;
  auto accumulate = [](StageMetrics& m, const RawImage& out, const RawImage& ref) {
    m.mean_psnr += compute_psnr(out, ref);
    m.mean_ssim += compute_ssim(out, ref);
    m.count += 1;
  };
  std::uint64_t pair_seed = seed;
  for (const SelectedPair& p : pairs) {
    const RawImage& in = p.sequence->frames[p.input_index].image;
    const RawImage& tg = p.sequence->frames[p.target_index].image;
    StageOptions exp_only{true, false, false, false, pair_seed};
    StageOptions through_noise{true, true, false, false, pair_seed};
    StageOptions full{true, true, true, true, pair_seed};
    accumulate(report.exposure_stage, simulate(model, in, tg.settings, exp_only), tg);
    accumulate(report.noise_stage, simulate(model, in, tg.settings, through_noise), tg);
    accumulate(report.full_model, simulate(model, in, tg.settings, full), tg);
    ++pair_seed;
  }
  for (StageMetrics* m :
       {&report.exposure_stage, &report.noise_stage, &report.full_model}) {
    if (m->count > 0) {
      m->mean_psnr /= static_cast<double>(m->count);
      m->mean_ssim /= static_cast<double>(m->count);
    }
  }
  return report;
}

// ---- Model bundle (directory) ----------------------------------------------
// manifest.txt with schema version and stage configuration, exposure.txt with
// key-value scalars, and one checkpoint per network.

inline void save_model(SimulatorModel& model, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream os(fs::path(dir) / "manifest.txt");
    if (!os) throw FormatError("model bundle: cannot write manifest", 0);
    os << "schema_version = " << kModelSchemaVersion << "\n";
    os << "denoiser_width = " << model.config.denoiser_width << "\n";
    os << "aperture_width = " << model.config.aperture_width << "\n";
    os << "shot_scaling = "
       << (model.config.shot_scaling == ShotScaling::linear ? "linear" : "quadratic") << "\n";
  }
  {
    std::ofstream os(fs::path(dir) / "exposure.txt");
    os << "gain = " << detail::format_double(model.exposure.gain) << "\n";
    os << "black_offset = " << detail::format_double(model.exposure.black_offset) << "\n";
  }
  auto dp = model.denoiser.parameters();
  nn::save_checkpoint((fs::path(dir) / "denoiser.ckpt").string(), dp);
  auto ap = model.aperture.parameters();
  nn::save_checkpoint((fs::path(dir) / "aperture.ckpt").string(), ap);
}

inline std::map<std::string, std::string> read_key_values(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path, 0);
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(is, line)) {
    const size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    out[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
  }
  return out;
}

inline std::unique_ptr<SimulatorModel> load_model(const std::string& dir) {
  namespace fs = std::filesystem;
  const auto manifest = read_key_values((fs::path(dir) / "manifest.txt").string());
  const auto it = manifest.find("schema_version");
  if (it == manifest.end() || std::stoi(it->second) != kModelSchemaVersion) {
    throw FormatError("model bundle: missing or unsupported schema_version", 0);
  }
  SimulatorConfig cfg;
  if (auto w = manifest.find("denoiser_width"); w != manifest.end()) {
    cfg.denoiser_width = std::stoi(w->second);
  }
  if (auto w = manifest.find("aperture_width"); w != manifest.end()) {
    cfg.aperture_width = std::stoi(w->second);
  }
  if (auto s = manifest.find("shot_scaling"); s != manifest.end()) {
    cfg.shot_scaling = s->second == "quadratic" ? ShotScaling::quadratic : ShotScaling::linear;
  }
  auto model = std::make_unique<SimulatorModel>(cfg);
  const auto exposure = read_key_values((fs::path(dir) / "exposure.txt").string());
  if (auto g = exposure.find("gain"); g != exposure.end()) {
    model->exposure.gain = std::stod(g->second);
  }
  if (auto b = exposure.find("black_offset"); b != exposure.end()) {
    model->exposure.black_offset = std::stod(b->second);
  }
  auto dp = model->denoiser.parameters();
  nn::load_checkpoint((fs::path(dir) / "denoiser.ckpt").string(), dp);
  auto ap = model->aperture.parameters();
  nn::load_checkpoint((fs::path(dir) / "aperture.ckpt").string(), ap);
  return model;
}

}  // namespace rawsim
