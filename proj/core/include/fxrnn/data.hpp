#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fxrnn/graph.hpp"

namespace fxrnn {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One labelled gesture. `data` holds `frames` consecutive frames of
/// `frame_shape` (channel-major); accelerometer samples use a 3x1x1 frame.
struct SequenceSample {
  std::string id;
  int label = 0;
  Shape3 frame_shape;
  int frames = 0;
  std::vector<double> data;

  std::span<const double> frame(int t) const {
    const auto n = static_cast<std::size_t>(frame_shape.size());
    return {data.data() + static_cast<std::size_t>(t) * n, n};
  }

  /// Throws DataError if T < 1, the buffer size is wrong or the label is
  /// outside [0, classes).
  void validate(int classes) const;
};

struct SplitRatios {
  double train = 0.6;
  double valid = 0.2;
  double test = 0.2;
};

inline constexpr SplitRatios kImageSplit{0.6, 0.2, 0.2};
inline constexpr SplitRatios kAccelSplit{0.5, 0.2, 0.3};

struct DatasetSplit {
  std::vector<SequenceSample> train;
  std::vector<SequenceSample> valid;
  std::vector<SequenceSample> test;
  SplitRatios ratios;
  std::uint64_t seed = 0;
};

/// Reads root/<class>/<sequence>/<frame>.{png,jpg,jpeg}. Classes and frames
/// are taken in sorted order; frames are bilinearly resized to
/// target x target RGB and scaled to [0, 1]. An empty root yields no samples.
std::vector<SequenceSample> load_image_dataset(const std::filesystem::path& root, int target = 32);

/// Bilinear resize of a channel-major image (half-pixel centres).
std::vector<double> resize_bilinear(std::span<const double> src, Shape3 shape, int out_h, int out_w);

struct AccelLoadOptions {
  /// Gesture directory names to keep, in label order.
  std::vector<std::string> gestures{"1", "2", "3", "4", "5", "6", "7", "8"};
};

/// Reads root/<user>/<gesture>/<rep>.csv with rows `t,ax,ay,az`. Labels are
/// positions in `options.gestures`. Non-monotone timestamps are reported on
/// stderr and kept.
std::vector<SequenceSample> load_accel_dataset(const std::filesystem::path& root,
                                               const AccelLoadOptions& options = {});

/// Per-class seeded shuffle and proportional cut. Throws DataError if a
/// class has fewer samples than there are non-empty splits.
DatasetSplit stratified_split(std::vector<SequenceSample> samples, SplitRatios ratios,
                              std::uint64_t seed);

int class_count(std::span<const SequenceSample> samples);

struct AccelSynthConfig {
  int classes = 8;
  int per_class = 40;
  int min_frames = 20;
  int max_frames = 40;
  double noise = 0.05;
  std::uint64_t seed = 1;
};

/// Noise-free trajectory of class `cls` over `frames` steps (frames x 3, g
/// units): constant gravity on z plus a half-sine pulse along one of eight
/// in-plane arrow directions (+-x, +-y and the four diagonals).
std::vector<double> accel_prototype(int cls, int frames);

std::vector<SequenceSample> synth_accel(const AccelSynthConfig& config);

struct VideoSynthConfig {
  int shapes = 3;   // bar, fan, V
  int motions = 3;  // left, right, contract
  int per_class = 10;
  int size = 32;
  int frames = 8;
  double noise = 0.05;
  std::uint64_t seed = 1;
};

/// Label = shape * motions + motion.
std::vector<SequenceSample> synth_video(const VideoSynthConfig& config);

/// One line per sample: `id,class,frames`.
void write_manifest(std::span<const SequenceSample> samples, std::ostream& out);

}  // namespace fxrnn
