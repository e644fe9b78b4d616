#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nltrack/geometry.hpp"
#include "nltrack/nn.hpp"

namespace nltrack {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// RGB image, values in [0,1], row-major (y, x, channel).
struct Image {
  int w = 0, h = 0;
  nn::Vec rgb;

  Image() = default;
  Image(int width, int height) : w(width), h(height), rgb(3ull * width * height, 0.0) {}
  double& at(int y, int x, int c) { return rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c]; }
  double at(int y, int x, int c) const { return rgb[(static_cast<std::size_t>(y) * w + x) * 3 + c]; }
};

Image load_image(const std::filesystem::path& path);
void save_image(const Image& img, const std::filesystem::path& path);
Image resize_bilinear(const Image& img, int new_w, int new_h);

// Aspect-preserving downscale so the longest side fits `max_side`; never
// upscales. Returns the applied scale factor (1.0 when unchanged).
std::pair<Image, double> preprocess(const Image& img, double max_side);

// Ground truth for one frame; `present == false` marks full occlusion.
struct GtEntry {
  bool present = false;
  Box box;
};

struct VideoSample {
  std::string id;
  std::vector<std::filesystem::path> frame_paths;
  std::vector<Image> frames;  // populated by load_frames() or the generator
  std::vector<GtEntry> gt;
  std::string query;

  std::size_t frame_count() const {
    return frames.empty() ? frame_paths.size() : frames.size();
  }
  void load_frames();
};

// Layout: <root>/<video_id>/img/*.png|jpg, groundtruth.txt ("x,y,w,h" or
// "absent" per frame), nlp.txt (single-line query), optional subset list.
std::vector<VideoSample> load_benchmark_dir(
    const std::filesystem::path& root,
    const std::optional<std::filesystem::path>& subset = std::nullopt);

void write_benchmark_video(const VideoSample& video,
                           const std::filesystem::path& root);

struct SynthConfig {
  int canvas = 64;
  int frames = 30;
  std::string target_shape = "square";
  std::string target_color = "red";
  int distractors = 2;
  // Explicit (color, shape) per distractor; overrides `distractors` when
  // non-empty. A spec matching the target is rejected as ambiguous.
  std::vector<std::pair<std::string, std::string>> distractor_spec;
  int occlude_start = -1;  // frame index, -1 disables
  int occlude_len = 0;
  double vx = 1.5, vy = 1.0;
  std::uint64_t seed = 0;
};

VideoSample generate_synthetic(const SynthConfig& cfg);

// Color/shape vocabulary used by the generator's query template.
const std::vector<std::string>& synth_colors();
const std::vector<std::string>& synth_shapes();

}  // namespace nltrack
