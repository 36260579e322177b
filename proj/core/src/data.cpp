#include "fxrnn/data.hpp"

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <numbers>
#include <random>

namespace fxrnn {

namespace fs = std::filesystem;

void SequenceSample::validate(int classes) const {
  if (frames < 1) throw DataError("sample '" + id + "' has no frames");
  if (data.size() != static_cast<std::size_t>(frames) * static_cast<std::size_t>(frame_shape.size())) {
    throw DataError("sample '" + id + "' buffer does not match its frame shape");
  }
  if (label < 0 || label >= classes) {
    throw DataError("sample '" + id + "' label " + std::to_string(label) + " outside [0, " +
                    std::to_string(classes) + ")");
  }
}

namespace {

std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (directories ? e.is_directory() : e.is_regular_file()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string lower_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // interleaved RGB
};

RgbImage decode_png(const fs::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw DataError("unreadable frame " + path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  RgbImage out;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw DataError("unreadable frame " + path.string() + ": " + image.message);
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* mgr = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  std::longjmp(mgr->jump, 1);
}

RgbImage decode_jpeg(const fs::path& path) {
  std::FILE* file = std::fopen(path.c_str(), "rb");
  if (file == nullptr) throw DataError("unreadable frame " + path.string());
  RgbImage out;
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    std::fclose(file);
    throw DataError("unreadable frame " + path.string());
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  out.width = static_cast<int>(cinfo.output_width);
  out.height = static_cast<int>(cinfo.output_height);
  out.pixels.resize(static_cast<std::size_t>(out.width) * static_cast<std::size_t>(out.height) * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = out.pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) *
                                           static_cast<std::size_t>(out.width) * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  std::fclose(file);
  return out;
}

std::vector<double> load_frame(const fs::path& path, int target) {
  const std::string ext = lower_extension(path);
  RgbImage img;
  if (ext == ".png") {
    img = decode_png(path);
  } else if (ext == ".jpg" || ext == ".jpeg") {
    img = decode_jpeg(path);
  } else {
    throw DataError("unknown frame extension '" + ext + "' (" + path.string() + ")");
  }
  const Shape3 shape{3, img.height, img.width};
  std::vector<double> planar(static_cast<std::size_t>(shape.size()));
  const std::size_t plane = static_cast<std::size_t>(img.height) * static_cast<std::size_t>(img.width);
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < 3; ++c) planar[c * plane + p] = img.pixels[p * 3 + c] / 255.0;
  }
  return resize_bilinear(planar, shape, target, target);
}

bool parse_double(std::string_view text, double& out) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) {
    text.remove_suffix(1);
  }
  if (text.empty()) return false;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc{} && ptr == text.data() + text.size() && std::isfinite(out);
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

SequenceSample load_accel_file(const fs::path& path, int label) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  SequenceSample s;
  s.id = path.string();
  s.label = label;
  s.frame_shape = {3, 1, 1};
  std::string line;
  int line_no = 0;
  double last_t = -std::numeric_limits<double>::infinity();
  bool warned = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split_commas(line);
    double t = 0.0;
    if (!parse_double(fields[0], t)) {
      if (line_no == 1) continue;  // header row
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed timestamp");
    }
    if (fields.size() < 4) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": missing axis");
    }
    if (fields.size() > 4) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": too many fields");
    }
    std::array<double, 3> a{};
    for (std::size_t k = 0; k < 3; ++k) {
      if (!parse_double(fields[k + 1], a[k])) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed value");
      }
    }
    if (t < last_t && !warned) {
      std::cerr << "warning: non-monotone timestamps in " << path.string() << "\n";
      warned = true;
    }
    last_t = t;
    s.data.insert(s.data.end(), a.begin(), a.end());
    ++s.frames;
  }
  if (s.frames == 0) throw DataError("empty sequence " + path.string());
  return s;
}

// Full-period sine pulse directions for the eight arrow-like motions.
constexpr std::array<std::array<double, 3>, 8> kAccelDirections{{
    {1.0, 0.0, 0.0},
    {-1.0, 0.0, 0.0},
    {0.0, 1.0, 0.0},
    {0.0, -1.0, 0.0},
    {0.70710678118654752, 0.70710678118654752, 0.0},
    {0.70710678118654752, -0.70710678118654752, 0.0},
    {-0.70710678118654752, 0.70710678118654752, 0.0},
    {-0.70710678118654752, -0.70710678118654752, 0.0},
}};

constexpr double kPulseAmplitude = 1.0;

struct Point2 {
  double x;
  double y;
};
struct Segment {
  Point2 a;
  Point2 b;
};

// Glyphs in local units, symmetric about the vertical axis.
std::vector<Segment> glyph_segments(int shape) {
  switch (shape % 3) {
    case 0:  // bar (flat hand)
      return {{{0.0, -1.0}, {0.0, 1.0}}};
    case 1:  // fan (spread hand)
      return {{{0.0, 1.0}, {-0.9, -0.8}}, {{0.0, 1.0}, {-0.45, -1.0}}, {{0.0, 1.0}, {0.0, -1.1}},
              {{0.0, 1.0}, {0.45, -1.0}}, {{0.0, 1.0}, {0.9, -0.8}}};
    default:  // V
      return {{{0.0, 1.0}, {-0.7, -1.0}}, {{0.0, 1.0}, {0.7, -1.0}}};
  }
}

double segment_distance(double px, double py, const Segment& s) {
  const double vx = s.b.x - s.a.x;
  const double vy = s.b.y - s.a.y;
  const double wx = px - s.a.x;
  const double wy = py - s.a.y;
  const double t = std::clamp((wx * vx + wy * vy) / (vx * vx + vy * vy), 0.0, 1.0);
  const double dx = wx - t * vx;
  const double dy = wy - t * vy;
  return std::sqrt(dx * dx + dy * dy);
}

}  // namespace

std::vector<double> resize_bilinear(std::span<const double> src, Shape3 shape, int out_h, int out_w) {
  if (src.size() != static_cast<std::size_t>(shape.size()) || out_h < 1 || out_w < 1) {
    throw DataError("resize_bilinear: bad shape");
  }
  std::vector<double> out(static_cast<std::size_t>(shape.channels) * out_h * out_w);
  const double sy = static_cast<double>(shape.height) / out_h;
  const double sx = static_cast<double>(shape.width) / out_w;
  auto coord = [](int dst, double scale, int limit, int& i0, int& i1, double& frac) {
    double s = (dst + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(limit - 1));
    i0 = static_cast<int>(std::floor(s));
    i1 = std::min(i0 + 1, limit - 1);
    frac = s - i0;
  };
  for (int c = 0; c < shape.channels; ++c) {
    const double* plane = src.data() + static_cast<std::size_t>(c) * shape.height * shape.width;
    for (int y = 0; y < out_h; ++y) {
      int y0, y1;
      double fy;
      coord(y, sy, shape.height, y0, y1, fy);
      for (int x = 0; x < out_w; ++x) {
        int x0, x1;
        double fx;
        coord(x, sx, shape.width, x0, x1, fx);
        const double top = plane[y0 * shape.width + x0] * (1 - fx) + plane[y0 * shape.width + x1] * fx;
        const double bot = plane[y1 * shape.width + x0] * (1 - fx) + plane[y1 * shape.width + x1] * fx;
        out[(static_cast<std::size_t>(c) * out_h + y) * out_w + x] = top * (1 - fy) + bot * fy;
      }
    }
  }
  return out;
}

std::vector<SequenceSample> load_image_dataset(const fs::path& root, int target) {
  if (!fs::is_directory(root)) throw DataError("image dataset root not found: " + root.string());
  std::vector<SequenceSample> samples;
  const auto classes = sorted_entries(root, true);
  for (std::size_t label = 0; label < classes.size(); ++label) {
    for (const auto& seq : sorted_entries(classes[label], true)) {
      SequenceSample s;
      s.id = seq.string();
      s.label = static_cast<int>(label);
      s.frame_shape = {3, target, target};
      for (const auto& frame : sorted_entries(seq, false)) {
        const auto pixels = load_frame(frame, target);
        s.data.insert(s.data.end(), pixels.begin(), pixels.end());
        ++s.frames;
      }
      if (s.frames == 0) throw DataError("empty sequence " + seq.string());
      samples.push_back(std::move(s));
    }
  }
  return samples;
}

std::vector<SequenceSample> load_accel_dataset(const fs::path& root, const AccelLoadOptions& options) {
  if (!fs::is_directory(root)) throw DataError("accelerometer dataset root not found: " + root.string());
  std::vector<SequenceSample> samples;
  for (const auto& user : sorted_entries(root, true)) {
    for (std::size_t label = 0; label < options.gestures.size(); ++label) {
      const fs::path gesture = user / options.gestures[label];
      if (!fs::is_directory(gesture)) continue;
      for (const auto& file : sorted_entries(gesture, false)) {
        if (lower_extension(file) != ".csv") continue;
        samples.push_back(load_accel_file(file, static_cast<int>(label)));
      }
    }
  }
  return samples;
}

int class_count(std::span<const SequenceSample> samples) {
  int classes = 0;
  for (const auto& s : samples) classes = std::max(classes, s.label + 1);
  return classes;
}

DatasetSplit stratified_split(std::vector<SequenceSample> samples, SplitRatios ratios, std::uint64_t seed) {
  const double sum = ratios.train + ratios.valid + ratios.test;
  if (ratios.train < 0 || ratios.valid < 0 || ratios.test < 0 || std::fabs(sum - 1.0) > 1e-9) {
    throw DataError("split ratios must be non-negative and sum to 1");
  }
  if (samples.empty()) throw DataError("cannot split an empty dataset");
  const int active = (ratios.train > 0) + (ratios.valid > 0) + (ratios.test > 0);

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < samples.size(); ++i) by_class[samples[i].label].push_back(i);

  DatasetSplit split;
  split.ratios = ratios;
  split.seed = seed;
  std::mt19937_64 rng(seed);
  for (auto& [label, idx] : by_class) {
    const auto n = idx.size();
    if (n < static_cast<std::size_t>(active)) {
      throw DataError("class " + std::to_string(label) + " has " + std::to_string(n) +
                      " samples, fewer than the " + std::to_string(active) + " splits");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::floor(n * ratios.train + 0.5));
    const auto n_upto_valid =
        std::min(n, static_cast<std::size_t>(std::floor(n * (ratios.train + ratios.valid) + 0.5)));
    for (std::size_t k = 0; k < n; ++k) {
      auto& dst = k < n_train ? split.train : (k < n_upto_valid ? split.valid : split.test);
      dst.push_back(std::move(samples[idx[k]]));
    }
  }
  return split;
}

std::vector<double> accel_prototype(int cls, int frames) {
  if (cls < 0 || frames < 1) throw DataError("accel_prototype: bad class or length");
  const auto& dir = kAccelDirections[static_cast<std::size_t>(cls) % kAccelDirections.size()];
  // Classes beyond the eight base directions reuse a direction with more
  // half-periods (there-and-back, then there-back-there, ...).
  const double cycles = 1.0 + cls / static_cast<int>(kAccelDirections.size());
  std::vector<double> out(static_cast<std::size_t>(frames) * 3);
  for (int t = 0; t < frames; ++t) {
    const double u = frames > 1 ? static_cast<double>(t) / (frames - 1) : 0.0;
    const double pulse = kPulseAmplitude * std::sin(cycles * std::numbers::pi * u);
    for (int k = 0; k < 3; ++k) out[static_cast<std::size_t>(t) * 3 + k] = pulse * dir[k];
    out[static_cast<std::size_t>(t) * 3 + 2] += 1.0;  // gravity
  }
  return out;
}

std::vector<SequenceSample> synth_accel(const AccelSynthConfig& cfg) {
  if (cfg.classes < 1 || cfg.per_class < 1 || cfg.min_frames < 1 || cfg.max_frames < cfg.min_frames ||
      cfg.noise < 0) {
    throw DataError("invalid synthetic accelerometer configuration");
  }
  std::vector<SequenceSample> samples;
  for (int c = 0; c < cfg.classes; ++c) {
    for (int j = 0; j < cfg.per_class; ++j) {
      std::seed_seq length_seed{cfg.seed, std::uint64_t{0xacce1}, static_cast<std::uint64_t>(c),
                                static_cast<std::uint64_t>(j)};
      std::mt19937_64 length_rng(length_seed);
      std::uniform_int_distribution<int> length(cfg.min_frames, cfg.max_frames);
      SequenceSample s;
      s.id = "synth-accel/" + std::to_string(c) + "/" + std::to_string(j);
      s.label = c;
      s.frame_shape = {3, 1, 1};
      s.frames = length(length_rng);
      s.data = accel_prototype(c, s.frames);
      if (cfg.noise > 0) {
        std::seed_seq noise_seed{cfg.seed, std::uint64_t{0x7015e}, static_cast<std::uint64_t>(c),
                                 static_cast<std::uint64_t>(j)};
        std::mt19937_64 noise_rng(noise_seed);
        std::normal_distribution<double> gauss(0.0, cfg.noise);
        for (double& v : s.data) v += gauss(noise_rng);
      }
      samples.push_back(std::move(s));
    }
  }
  return samples;
}

std::vector<SequenceSample> synth_video(const VideoSynthConfig& cfg) {
  if (cfg.shapes < 1 || cfg.motions < 1 || cfg.per_class < 1 || cfg.size < 4 || cfg.frames < 1 ||
      cfg.noise < 0) {
    throw DataError("invalid synthetic video configuration");
  }
  const int size = cfg.size;
  const double mid = (size - 1) / 2.0;
  const double background = 0.2;
  constexpr double kHalfWidth = 0.15;
  std::vector<SequenceSample> samples;
  for (int shape = 0; shape < cfg.shapes; ++shape) {
    const auto segments = glyph_segments(shape);
    for (int motion = 0; motion < cfg.motions; ++motion) {
      const int label = shape * cfg.motions + motion;
      for (int j = 0; j < cfg.per_class; ++j) {
        // Shape-level draws are shared across motions so that left/right
        // pairs differ only by the mirrored trajectory.
        std::seed_seq pose_seed{cfg.seed, std::uint64_t{0x91f}, static_cast<std::uint64_t>(shape),
                                static_cast<std::uint64_t>(j)};
        std::mt19937_64 pose_rng(pose_seed);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        const double base_scale = 0.25 * size * (0.9 + 0.2 * unit(pose_rng));
        const double dy = (unit(pose_rng) - 0.5) * 0.2 * size;
        const std::array<double, 3> color{0.85 + 0.1 * unit(pose_rng), 0.65 + 0.1 * unit(pose_rng),
                                          0.55 + 0.1 * unit(pose_rng)};
        std::seed_seq noise_seed{cfg.seed, std::uint64_t{0x715e}, static_cast<std::uint64_t>(label),
                                 static_cast<std::uint64_t>(j)};
        std::mt19937_64 noise_rng(noise_seed);
        std::normal_distribution<double> gauss(0.0, cfg.noise > 0 ? cfg.noise : 1.0);

        SequenceSample s;
        s.id = "synth-video/" + std::to_string(label) + "/" + std::to_string(j);
        s.label = label;
        s.frame_shape = {3, size, size};
        s.frames = cfg.frames;
        s.data.resize(static_cast<std::size_t>(cfg.frames) * s.frame_shape.size());
        for (int t = 0; t < cfg.frames; ++t) {
          const double tau = cfg.frames > 1 ? static_cast<double>(t) / (cfg.frames - 1) : 0.0;
          const double travel = (-0.25 + 0.5 * tau) * size;
          double offset = 0.0;
          double scale = base_scale;
          switch (motion % 3) {
            case 0: offset = -travel; break;  // left
            case 1: offset = travel; break;   // right
            default: scale = base_scale * (1.0 - 0.5 * tau); break;  // contract
          }
          double* frame = s.data.data() + static_cast<std::size_t>(t) * s.frame_shape.size();
          const std::size_t plane = static_cast<std::size_t>(size) * size;
          for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
              const double px = ((x - mid) - offset) / scale;
              const double py = ((y - mid) - dy) / scale;
              double dist = std::numeric_limits<double>::infinity();
              for (const auto& seg : segments) dist = std::min(dist, segment_distance(px, py, seg));
              const double cover = std::clamp((kHalfWidth - dist) * scale + 0.5, 0.0, 1.0);
              for (int c = 0; c < 3; ++c) {
                double v = background + cover * (color[c] - background);
                if (cfg.noise > 0) v += gauss(noise_rng);
                frame[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * size + x] =
                    std::clamp(v, 0.0, 1.0);
              }
            }
          }
        }
        samples.push_back(std::move(s));
      }
    }
  }
  return samples;
}

void write_manifest(std::span<const SequenceSample> samples, std::ostream& out) {
  for (const auto& s : samples) out << s.id << ',' << s.label << ',' << s.frames << '\n';
}

}  // namespace fxrnn
