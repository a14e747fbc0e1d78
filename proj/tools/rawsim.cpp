// Command-line surface for the raw-domain camera simulator.
//
// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric failure.

#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rawsim/autoexpose.hpp"
#include "rawsim/hdr.hpp"
#include "rawsim/png_io.hpp"
#include "rawsim/simulator.hpp"
#include "rawsim/synthetic.hpp"

namespace fs = std::filesystem;

namespace {

struct FrameOnDisk {
  rawsim::RawImage image;
  std::string base;  // path without extension
};

FrameOnDisk load_frame(const std::string& path) {
  FrameOnDisk frame;
  fs::path p(path);
  if (p.extension() == ".nrs") p.replace_extension();
  frame.base = p.string();
  rawsim::ContainerHeader header;
  const rawsim::BayerMosaic mosaic = rawsim::read_raw_container(frame.base + ".nrs", &header);
  frame.image =
      rawsim::unpack_bayer(mosaic, header.black_level, header.white_level, header.cfa);
  rawsim::SequenceFrame meta;
  meta.image.settings = frame.image.settings;
  rawsim::read_sidecar(frame.base + ".txt", meta);
  frame.image.settings = meta.image.settings;
  return frame;
}

void store_frame(const std::string& path, const rawsim::RawImage& image,
                 const std::string& camera_id = "rawsim", const std::string& scene_id = "cli") {
  fs::path p(path);
  if (p.extension() == ".nrs") p.replace_extension();
  rawsim::write_raw_container(p.string() + ".nrs", rawsim::pack_bayer(image), image.cfa,
                              image.black_level, image.white_level);
  rawsim::SequenceFrame meta;
  meta.image = image;
  rawsim::write_sidecar(p.string() + ".txt", meta, camera_id, scene_id);
}

std::unique_ptr<rawsim::SimulatorModel> load_or_default_model(const std::string& dir) {
  if (dir.empty()) return std::make_unique<rawsim::SimulatorModel>();
  return rawsim::load_model(dir);
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";
}

int run_synth(const std::string& out_dir, int scenes, int size, int complexity,
              std::uint64_t seed, const std::string& camera_id) {
  fs::create_directories(out_dir);
  const auto settings = rawsim::default_sequence_settings();
  for (int i = 0; i < scenes; ++i) {
    std::ostringstream scene_id;
    scene_id << "scene_" << std::setfill('0') << std::setw(3) << i;
    const rawsim::SyntheticScene scene =
        rawsim::generate_synthetic_scene(seed + static_cast<std::uint64_t>(i), size, complexity);
    const rawsim::SceneSequence seq = rawsim::render_sequence(
        scene, scene_id.str(), settings, seed + 1000 + static_cast<std::uint64_t>(i) * 100,
        camera_id);
    rawsim::write_sequence(seq, (fs::path(out_dir) / scene_id.str()).string());
  }
  std::cout << "wrote " << scenes << " sequences (" << settings.size() << " frames each) to "
            << out_dir << "\n";
  return 0;
}

void print_loss_curve(const std::string& label, const std::vector<double>& losses) {
  if (losses.empty()) return;
  std::cout << label << ": first " << std::setprecision(6) << losses.front() << ", last "
            << losses.back() << " over " << losses.size() << " epochs\n";
}

int run_train(const std::string& data_dir, const std::string& out_dir,
              const rawsim::TrainSchedule& schedule, const rawsim::SimulatorConfig& config) {
  std::vector<std::string> warnings;
  const auto dataset = rawsim::read_dataset(data_dir, &warnings);
  print_warnings(warnings);
  if (dataset.empty()) throw rawsim::DegenerateDataError("no sequences found in " + data_dir);
  std::cout << "training on " << dataset.size() << " sequences\n";
  rawsim::SimulatorModel model(config);
  const rawsim::PipelineTrainReport report = rawsim::train(model, dataset, schedule);
  print_loss_curve("exposure", report.exposure_loss);
  print_loss_curve("denoiser", report.denoiser.epoch_loss);
  print_loss_curve("aperture", report.aperture.epoch_loss);
  print_loss_curve("joint", report.joint_loss);
  std::cout << "exposure correction: gain " << std::setprecision(8) << model.exposure.gain
            << ", black offset " << model.exposure.black_offset << "\n";
  rawsim::save_model(model, out_dir);
  std::cout << "model bundle written to " << out_dir << "\n";
  return 0;
}

int run_simulate(const std::string& model_dir, const std::string& input,
                 const std::string& output, const std::string& preview, double target_iso,
                 double target_time, double target_fnumber, double nlf_read, double nlf_shot,
                 const rawsim::StageOptions& options) {
  const FrameOnDisk frame = load_frame(input);
  rawsim::ExposureSettings target = frame.image.settings;
  if (target_iso > 0) target.iso = target_iso;
  if (target_time > 0) target.exposure_time = target_time;
  if (target_fnumber > 0) target.f_number = target_fnumber;
  if (nlf_read >= 0 && nlf_shot >= 0) {
    target.nlf = rawsim::NoiseLevelFunction{nlf_read, nlf_shot};
  } else {
    target.nlf =
        rawsim::scale_nlf_for_iso(frame.image.settings.nlf, frame.image.settings.iso, target.iso);
  }
  auto model = load_or_default_model(model_dir);
  const rawsim::RawImage out = rawsim::simulate(*model, frame.image, target, options);
  if (!output.empty()) {
    store_frame(output, out);
    std::cout << "raw output written to " << output << "\n";
  }
  if (!preview.empty()) {
    rawsim::write_png(preview, rawsim::render_srgb(out));
    std::cout << "preview written to " << preview << "\n";
  }
  return 0;
}

int run_eval(const std::string& model_dir, const std::string& data_dir, std::uint64_t seed) {
  std::vector<std::string> warnings;
  const auto dataset = rawsim::read_dataset(data_dir, &warnings);
  print_warnings(warnings);
  if (dataset.empty()) throw rawsim::DegenerateDataError("no sequences found in " + data_dir);
  auto model = load_or_default_model(model_dir);
  const rawsim::EvalReport report = rawsim::evaluate(*model, dataset, seed);
  auto row = [](const char* name, const rawsim::StageMetrics& m) {
    std::cout << std::left << std::setw(10) << name << std::right << std::fixed
              << std::setprecision(2) << std::setw(8) << m.mean_psnr << std::setprecision(4)
              << std::setw(9) << m.mean_ssim << std::setw(8) << m.count << "\n";
  };
  std::cout << std::left << std::setw(10) << "stage" << std::right << std::setw(8) << "PSNR"
            << std::setw(9) << "SSIM" << std::setw(8) << "pairs\n";
  row("EXP", report.exposure_stage);
  row("NS", report.noise_stage);
  row("Full", report.full_model);
  return 0;
}

int run_hdr(const std::string& model_dir, const std::string& input, const std::string& output,
            double min_iso, std::uint64_t seed) {
  const FrameOnDisk frame = load_frame(input);
  std::vector<std::string> warnings;
  const auto plan = rawsim::plan_hdr_bracket(frame.image.settings, min_iso, &warnings);
  print_warnings(warnings);
  auto model = load_or_default_model(model_dir);
  std::vector<rawsim::Image8> frames;
  frames.reserve(plan.size());
  for (size_t i = 0; i < plan.size(); ++i) {
    rawsim::StageOptions options;
    options.seed = seed + i;
    frames.push_back(
        rawsim::render_srgb(rawsim::simulate(*model, frame.image, plan[i], options)));
  }
  const rawsim::Image8 fused = rawsim::fuse_exposures(frames);
  rawsim::write_png(output, fused);
  std::cout << "fused " << frames.size() << " simulated brackets into " << output
            << " (well-exposed fraction " << std::setprecision(4)
            << rawsim::well_exposed_fraction(fused) << ")\n";
  return 0;
}

int run_autoexpose(const std::string& model_dir, const std::string& input, std::uint64_t seed) {
  const FrameOnDisk frame = load_frame(input);
  auto model = load_or_default_model(model_dir);
  const auto grid = rawsim::default_candidate_grid(frame.image.settings);
  rawsim::StageOptions options;
  options.seed = seed;
  std::vector<rawsim::ExposureState> table;
  const rawsim::ExposureState best = rawsim::auto_expose(
      *model, frame.image, grid, rawsim::default_defect_score, options, &table);
  std::cout << std::left << std::setw(12) << "time_s" << std::setw(8) << "iso" << std::setw(10)
            << "f_number" << "score\n";
  for (const rawsim::ExposureState& state : table) {
    std::cout << std::left << std::setw(12) << std::setprecision(6) << state.settings.exposure_time
              << std::setw(8) << state.settings.iso << std::setw(10) << state.settings.f_number
              << std::setprecision(6) << state.score << "\n";
  }
  std::cout << "best: t=" << best.settings.exposure_time << "s iso=" << best.settings.iso
            << " n=" << best.settings.f_number << " score=" << best.score << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"raw-domain camera simulator (exposure / noise / aperture pipeline)"};
  app.require_subcommand(1);
  app.set_config("--config", "", "read options from a key=value file");

  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "global RNG seed")->capture_default_str();

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic raw dataset");
  std::string synth_out = "dataset";
  int synth_scenes = 20, synth_size = 128, synth_complexity = 3;
  std::string synth_camera = "synthetic";
  synth->add_option("--out", synth_out, "output dataset directory")->capture_default_str();
  synth->add_option("--scenes", synth_scenes, "number of scenes")->capture_default_str();
  synth->add_option("--size", synth_size, "mosaic side length (even)")->capture_default_str();
  synth->add_option("--complexity", synth_complexity, "scene complexity level")
      ->capture_default_str();
  synth->add_option("--camera", synth_camera, "camera id for sidecars")->capture_default_str();

  // train
  auto* train_cmd = app.add_subcommand("train", "train the simulator on a dataset");
  std::string train_data = "dataset", train_out = "model";
  std::string schedule_name = "desk";
  rawsim::TrainSchedule schedule_overrides;
  int epochs_exposure = -1, epochs_denoiser = -1, epochs_aperture = -1, epochs_joint = -1;
  int batch_size = -1, patch_size = -1;
  double lr = -1.0;
  int denoiser_width = 16, aperture_width = 16;
  std::string shot_scaling = "linear";
  train_cmd->add_option("--data", train_data, "dataset directory")->capture_default_str();
  train_cmd->add_option("--out", train_out, "model bundle directory")->capture_default_str();
  train_cmd->add_option("--schedule", schedule_name, "desk or paper")->capture_default_str();
  train_cmd->add_option("--epochs-exposure", epochs_exposure, "override exposure epochs");
  train_cmd->add_option("--epochs-denoiser", epochs_denoiser, "override denoiser epochs");
  train_cmd->add_option("--epochs-aperture", epochs_aperture, "override aperture epochs");
  train_cmd->add_option("--epochs-joint", epochs_joint, "override joint epochs");
  train_cmd->add_option("--batch-size", batch_size, "override batch size");
  train_cmd->add_option("--patch", patch_size, "override training patch size");
  train_cmd->add_option("--lr", lr, "override base learning rate");
  train_cmd->add_option("--denoiser-width", denoiser_width, "denoiser base width")
      ->capture_default_str();
  train_cmd->add_option("--aperture-width", aperture_width, "aperture base width")
      ->capture_default_str();
  train_cmd->add_option("--shot-scaling", shot_scaling, "NLF shot propagation: linear|quadratic")
      ->capture_default_str();

  // simulate
  auto* sim = app.add_subcommand("simulate", "map one raw image to new settings");
  std::string sim_model, sim_input, sim_output, sim_preview;
  double sim_iso = -1, sim_time = -1, sim_fnumber = -1, sim_nlf_read = -1, sim_nlf_shot = -1;
  bool no_exposure = false, no_noise = false, no_aperture = false, no_renoise = false;
  sim->add_option("--model", sim_model, "model bundle directory (default: untrained)");
  sim->add_option("--input", sim_input, "input .nrs (sidecar .txt required)")->required();
  sim->add_option("--out", sim_output, "output raw basename or .nrs path");
  sim->add_option("--preview", sim_preview, "output PNG preview path");
  sim->add_option("--target-iso", sim_iso, "target ISO");
  sim->add_option("--target-time", sim_time, "target exposure time in seconds");
  sim->add_option("--target-fnumber", sim_fnumber, "target aperture f-number");
  sim->add_option("--target-nlf-read", sim_nlf_read, "target NLF read variance");
  sim->add_option("--target-nlf-shot", sim_nlf_shot, "target NLF shot slope");
  sim->add_flag("--no-exposure", no_exposure, "disable the exposure stage");
  sim->add_flag("--no-noise", no_noise, "disable the denoising stage");
  sim->add_flag("--no-aperture", no_aperture, "disable the aperture stage");
  sim->add_flag("--no-renoise", no_renoise, "disable output NLF re-noising");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM per stage over a dataset");
  std::string eval_model, eval_data = "dataset";
  eval_cmd->add_option("--model", eval_model, "model bundle directory (default: untrained)");
  eval_cmd->add_option("--data", eval_data, "dataset directory")->capture_default_str();

  // hdr
  auto* hdr_cmd = app.add_subcommand("hdr", "simulate a bracket and fuse to one preview");
  std::string hdr_model, hdr_input, hdr_output = "hdr.png";
  double hdr_min_iso = 100.0;
  hdr_cmd->add_option("--model", hdr_model, "model bundle directory (default: untrained)");
  hdr_cmd->add_option("--input", hdr_input, "input .nrs (sidecar .txt required)")->required();
  hdr_cmd->add_option("--out", hdr_output, "fused PNG path")->capture_default_str();
  hdr_cmd->add_option("--min-iso", hdr_min_iso, "minimum supported ISO")->capture_default_str();

  // autoexpose
  auto* ae = app.add_subcommand("autoexpose", "score a 64-state grid and pick the best");
  std::string ae_model, ae_input;
  ae->add_option("--model", ae_model, "model bundle directory (default: untrained)");
  ae->add_option("--input", ae_input, "input .nrs (sidecar .txt required)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*synth) {
      return run_synth(synth_out, synth_scenes, synth_size, synth_complexity, seed, synth_camera);
    }
    if (*train_cmd) {
      rawsim::TrainSchedule schedule = schedule_name == "paper"
                                           ? rawsim::TrainSchedule{}
                                           : rawsim::TrainSchedule::desk_scale();
      if (epochs_exposure >= 0) schedule.exposure_epochs = epochs_exposure;
      if (epochs_denoiser >= 0) schedule.denoiser_epochs = epochs_denoiser;
      if (epochs_aperture >= 0) schedule.aperture_epochs = epochs_aperture;
      if (epochs_joint >= 0) schedule.joint_epochs = epochs_joint;
      if (batch_size > 0) schedule.batch_size = batch_size;
      if (patch_size > 0) schedule.patch_size = patch_size;
      if (lr > 0) schedule.learning_rate = lr;
      schedule.seed = seed;
      rawsim::SimulatorConfig config;
      config.denoiser_width = denoiser_width;
      config.aperture_width = aperture_width;
      config.shot_scaling = shot_scaling == "quadratic" ? rawsim::ShotScaling::quadratic
                                                        : rawsim::ShotScaling::linear;
      config.init_seed = seed + 1234;
      return run_train(train_data, train_out, schedule, config);
    }
    if (*sim) {
      rawsim::StageOptions options;
      options.exposure = !no_exposure;
      options.noise = !no_noise;
      options.aperture = !no_aperture;
      options.renoise = !no_renoise;
      options.seed = seed;
      return run_simulate(sim_model, sim_input, sim_output, sim_preview, sim_iso, sim_time,
                          sim_fnumber, sim_nlf_read, sim_nlf_shot, options);
    }
    if (*eval_cmd) return run_eval(eval_model, eval_data, seed);
    if (*hdr_cmd) return run_hdr(hdr_model, hdr_input, hdr_output, hdr_min_iso, seed);
    if (*ae) return run_autoexpose(ae_model, ae_input, seed);
  } catch (const rawsim::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const rawsim::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 2;
  } catch (const rawsim::DimensionError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const rawsim::DegenerateDataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const rawsim::ParameterError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
