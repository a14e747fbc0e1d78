// On-disk raw-sequence container format.
//
// Raw container (one file per image), all little-endian:
//   magic "NRS1" (4 bytes) | format version u16 | width u32 | height u32 |
//   cfa code u8 | reserved u8 | black_level u16 | white_level u16 |
//   payload H*W u16 row-major
// Metadata sidecar: same basename with .txt, "key = value" lines. Known keys:
//   iso, exposure_time_s, f_number, nlf_read, nlf_shot, camera_id, scene_id.
// Unknown keys are preserved in order on round-trip.
// A sequence is a directory of image/sidecar pairs plus manifest.txt listing
// members in capture order.
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rawsim/errors.hpp"
#include "rawsim/raw_image.hpp"

namespace rawsim {

inline constexpr char kContainerMagic[4] = {'N', 'R', 'S', '1'};
inline constexpr std::uint16_t kContainerVersion = 1;
inline constexpr std::size_t kContainerHeaderSize = 20;

// Documented capture ranges; violations are warnings, not errors.
inline constexpr double kIsoMin = 100.0, kIsoMax = 16000.0;
inline constexpr double kTimeMinS = 1.0 / 8000.0, kTimeMaxS = 4.0;
inline constexpr double kFNumberMin = 4.0, kFNumberMax = 22.0;

inline std::vector<std::string> validate_settings_ranges(const ExposureSettings& s) {
  std::vector<std::string> warnings;
  auto warn = [&](const std::string& m) { warnings.push_back(m); };
  if (s.iso < kIsoMin || s.iso > kIsoMax) {
    warn("iso " + std::to_string(s.iso) + " outside [100, 16000]");
  }
  if (s.exposure_time < kTimeMinS || s.exposure_time > kTimeMaxS) {
    warn("exposure_time_s " + std::to_string(s.exposure_time) + " outside [1/8000, 4]");
  }
  if (s.f_number < kFNumberMin || s.f_number > kFNumberMax) {
    warn("f_number " + std::to_string(s.f_number) + " outside [4.0, 22.0]");
  }
  return warnings;
}

namespace detail {

template <typename T>
inline void put_le(std::ostream& os, T value) {
  unsigned char buf[sizeof(T)];
  for (size_t i = 0; i < sizeof(T); ++i) {
    buf[i] = static_cast<unsigned char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff);
  }
  os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
inline T get_le(std::istream& is, std::size_t offset, const char* what) {
  unsigned char buf[sizeof(T)];
  is.read(reinterpret_cast<char*>(buf), sizeof(T));
  if (!is) throw FormatError(std::string("container: truncated ") + what, offset);
  std::uint64_t v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return static_cast<T>(v);
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

inline void write_raw_container(const std::string& path, const BayerMosaic& mosaic,
                                CfaOrder cfa, int black_level, int white_level) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("container: cannot open for writing: " + path, 0);
  os.write(kContainerMagic, 4);
  detail::put_le<std::uint16_t>(os, kContainerVersion);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(mosaic.width));
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(mosaic.height));
  detail::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(cfa));
  detail::put_le<std::uint8_t>(os, 0);  // reserved
  detail::put_le<std::uint16_t>(os, static_cast<std::uint16_t>(black_level));
  detail::put_le<std::uint16_t>(os, static_cast<std::uint16_t>(white_level));
  for (std::uint16_t v : mosaic.data) detail::put_le<std::uint16_t>(os, v);
  if (!os) throw FormatError("container: write failed: " + path, 0);
}

struct ContainerHeader {
  CfaOrder cfa = CfaOrder::rggb;
  int black_level = 0;
  int white_level = 0;
};

inline BayerMosaic read_raw_container(const std::string& path, ContainerHeader* header = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("container: cannot open: " + path, 0);
  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kContainerMagic, 4) != 0) {
    throw FormatError("container: bad magic", 0);
  }
  const auto version = detail::get_le<std::uint16_t>(is, 4, "version");
  if (version != kContainerVersion) {
    throw FormatError("container: unsupported version " + std::to_string(version), 4);
  }
  const auto width = detail::get_le<std::uint32_t>(is, 6, "width");
  if (width == 0 || width % 2 != 0) throw FormatError("container: invalid width", 6);
  const auto height = detail::get_le<std::uint32_t>(is, 10, "height");
  if (height == 0 || height % 2 != 0) throw FormatError("container: invalid height", 10);
  const auto cfa_code = detail::get_le<std::uint8_t>(is, 14, "cfa code");
  if (cfa_code > 3) throw FormatError("container: unknown cfa code", 14);
  detail::get_le<std::uint8_t>(is, 15, "reserved byte");
  const auto black = detail::get_le<std::uint16_t>(is, 16, "black level");
  const auto white = detail::get_le<std::uint16_t>(is, 18, "white level");
  if (white <= black) throw FormatError("container: white level <= black level", 18);

  BayerMosaic mosaic(static_cast<int>(height), static_cast<int>(width));
  const std::size_t payload = mosaic.data.size() * sizeof(std::uint16_t);
  std::vector<char> buf(payload);
  is.read(buf.data(), static_cast<std::streamsize>(payload));
  if (static_cast<std::size_t>(is.gcount()) != payload) {
    throw FormatError("container: truncated payload",
                      kContainerHeaderSize + static_cast<std::size_t>(is.gcount()));
  }
  for (size_t i = 0; i < mosaic.data.size(); ++i) {
    const auto lo = static_cast<unsigned char>(buf[2 * i]);
    const auto hi = static_cast<unsigned char>(buf[2 * i + 1]);
    mosaic.data[i] = static_cast<std::uint16_t>(lo | (hi << 8));
  }
  if (header) *header = ContainerHeader{static_cast<CfaOrder>(cfa_code), black, white};
  return mosaic;
}

// One sequence member: the image plus any unrecognized sidecar keys.
struct SequenceFrame {
  RawImage image;
  std::vector<std::pair<std::string, std::string>> extra;
};

struct SceneSequence {
  std::string scene_id;
  std::string camera_id = "synthetic";
  std::optional<double> illuminance_lux;
  std::vector<SequenceFrame> frames;
};

inline void write_sidecar(const std::string& path, const SequenceFrame& frame,
                          const std::string& camera_id, const std::string& scene_id) {
  std::ofstream os(path);
  if (!os) throw FormatError("sidecar: cannot open for writing: " + path, 0);
  const ExposureSettings& s = frame.image.settings;
  os << "iso = " << detail::format_double(s.iso) << "\n";
  os << "exposure_time_s = " << detail::format_double(s.exposure_time) << "\n";
  os << "f_number = " << detail::format_double(s.f_number) << "\n";
  os << "nlf_read = " << detail::format_double(s.nlf.lambda_read) << "\n";
  os << "nlf_shot = " << detail::format_double(s.nlf.lambda_shot) << "\n";
  os << "camera_id = " << camera_id << "\n";
  os << "scene_id = " << scene_id << "\n";
  for (const auto& [k, v] : frame.extra) os << k << " = " << v << "\n";
}

// Parses a sidecar into the frame settings; returns (camera_id, scene_id).
inline std::pair<std::string, std::string> read_sidecar(const std::string& path,
                                                        SequenceFrame& frame) {
  std::ifstream is(path);
  if (!is) throw FormatError("sidecar: cannot open: " + path, 0);
  std::string camera_id, scene_id, line;
  frame.extra.clear();
  while (std::getline(is, line)) {
    const size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    ExposureSettings& s = frame.image.settings;
    if (key == "iso") {
      s.iso = std::stod(value);
    } else if (key == "exposure_time_s") {
      s.exposure_time = std::stod(value);
    } else if (key == "f_number") {
      s.f_number = std::stod(value);
    } else if (key == "nlf_read") {
      s.nlf.lambda_read = std::stod(value);
    } else if (key == "nlf_shot") {
      s.nlf.lambda_shot = std::stod(value);
    } else if (key == "camera_id") {
      camera_id = value;
    } else if (key == "scene_id") {
      scene_id = value;
    } else {
      frame.extra.emplace_back(key, value);
    }
  }
  return {camera_id, scene_id};
}

// Writes frame_%03d.nrs / .txt pairs plus manifest.txt in capture order.
inline void write_sequence(const SceneSequence& seq, const std::string& dir) {
  if (seq.frames.empty()) throw ParameterError("write_sequence: empty sequence");
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw FormatError("sequence: cannot write manifest in " + dir, 0);
  for (size_t i = 0; i < seq.frames.size(); ++i) {
    std::ostringstream name;
    name << "frame_" << std::setfill('0') << std::setw(3) << i;
    const std::string base = (fs::path(dir) / name.str()).string();
    const RawImage& img = seq.frames[i].image;
    write_raw_container(base + ".nrs", pack_bayer(img), img.cfa, img.black_level,
                        img.white_level);
    SequenceFrame frame = seq.frames[i];
    if (seq.illuminance_lux && i == 0) {
      bool has_lux = false;
      for (const auto& [k, v] : frame.extra) has_lux |= (k == "lux");
      if (!has_lux) frame.extra.emplace_back("lux", detail::format_double(*seq.illuminance_lux));
    }
    write_sidecar(base + ".txt", frame, seq.camera_id, seq.scene_id);
    manifest << name.str() << ".nrs\n";
  }
}

inline SceneSequence read_sequence(const std::string& dir,
                                   std::vector<std::string>* warnings = nullptr) {
  namespace fs = std::filesystem;
  std::ifstream manifest(fs::path(dir) / "manifest.txt");
  if (!manifest) throw FormatError("sequence: missing manifest in " + dir, 0);
  SceneSequence seq;
  std::string line;
  while (std::getline(manifest, line)) {
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::string path = (fs::path(dir) / line).string();
    ContainerHeader header;
    const BayerMosaic mosaic = read_raw_container(path, &header);
    SequenceFrame frame;
    frame.image = unpack_bayer(mosaic, header.black_level, header.white_level, header.cfa);
    const std::string sidecar = (fs::path(dir) / fs::path(line).stem()).string() + ".txt";
    auto [camera_id, scene_id] = read_sidecar(sidecar, frame);
    if (seq.frames.empty()) {
      seq.camera_id = camera_id;
      seq.scene_id = scene_id;
    } else if (warnings && (camera_id != seq.camera_id || scene_id != seq.scene_id)) {
      warnings->push_back("sequence " + dir + ": inconsistent ids in " + sidecar);
    }
    for (auto it = frame.extra.begin(); it != frame.extra.end();) {
      if (it->first == "lux") {
        seq.illuminance_lux = std::stod(it->second);
        it = frame.extra.erase(it);
      } else {
        ++it;
      }
    }
    if (warnings) {
      for (const std::string& w : validate_settings_ranges(frame.image.settings)) {
        warnings->push_back(fs::path(line).stem().string() + ": " + w);
      }
    }
    seq.frames.push_back(std::move(frame));
  }
  if (seq.frames.empty()) throw FormatError("sequence: manifest lists no members: " + dir, 0);
  return seq;
}

// Loads every subdirectory of `root` that contains a manifest, sorted by
// scene id so downstream pair selection is order-independent.
inline std::vector<SceneSequence> read_dataset(const std::string& root,
                                               std::vector<std::string>* warnings = nullptr) {
  namespace fs = std::filesystem;
  std::vector<std::string> dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && fs::exists(entry.path() / "manifest.txt")) {
      dirs.push_back(entry.path().string());
    }
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<SceneSequence> out;
  out.reserve(dirs.size());
  for (const std::string& d : dirs) out.push_back(read_sequence(d, warnings));
  std::sort(out.begin(), out.end(),
            [](const SceneSequence& a, const SceneSequence& b) { return a.scene_id < b.scene_id; });
  return out;
}

}  // namespace rawsim
