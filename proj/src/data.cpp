#include "nltrack/data.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace nltrack {

namespace fs = std::filesystem;

Image load_image(const fs::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (m.empty()) throw DataError("cannot read image: " + path.string());
  Image img(m.cols, m.rows);
  for (int y = 0; y < m.rows; ++y) {
    const cv::Vec3b* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < m.cols; ++x) {
      img.at(y, x, 0) = row[x][2] / 255.0;  // BGR -> RGB
      img.at(y, x, 1) = row[x][1] / 255.0;
      img.at(y, x, 2) = row[x][0] / 255.0;
    }
  }
  return img;
}

void save_image(const Image& img, const fs::path& path) {
  cv::Mat m(img.h, img.w, CV_8UC3);
  for (int y = 0; y < img.h; ++y) {
    cv::Vec3b* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.w; ++x) {
      auto q = [&](int c) {
        return static_cast<unsigned char>(
            std::lround(std::clamp(img.at(y, x, c), 0.0, 1.0) * 255.0));
      };
      row[x] = cv::Vec3b(q(2), q(1), q(0));
    }
  }
  if (!cv::imwrite(path.string(), m))
    throw DataError("cannot write image: " + path.string());
}

Image resize_bilinear(const Image& img, int new_w, int new_h) {
  Image out(new_w, new_h);
  const double sx = static_cast<double>(img.w) / new_w;
  const double sy = static_cast<double>(img.h) / new_h;
  for (int y = 0; y < new_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.h - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.h - 1);
    const double wy = fy - y0;
    for (int x = 0; x < new_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.w - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.w - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = img.at(y0, x0, c) * (1 - wx) + img.at(y0, x1, c) * wx;
        const double bot = img.at(y1, x0, c) * (1 - wx) + img.at(y1, x1, c) * wx;
        out.at(y, x, c) = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}

std::pair<Image, double> preprocess(const Image& img, double max_side) {
  if (img.w <= 0 || img.h <= 0) throw DataError("preprocess: empty image");
  const int longest = std::max(img.w, img.h);
  if (longest <= max_side) return {img, 1.0};
  const double scale = max_side / longest;
  const int nw = std::max(1, static_cast<int>(std::lround(img.w * scale)));
  const int nh = std::max(1, static_cast<int>(std::lround(img.h * scale)));
  return {resize_bilinear(img, nw, nh), scale};
}

void VideoSample::load_frames() {
  if (!frames.empty() || frame_paths.empty()) return;
  frames.reserve(frame_paths.size());
  for (const auto& p : frame_paths) frames.push_back(load_image(p));
}

namespace {

GtEntry parse_gt_line(const std::string& line, const std::string& video_id,
                      int line_no) {
  std::string s = line;
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  if (s == "absent") return GtEntry{};
  double f[4];
  char comma[3];
  std::istringstream is(s);
  is >> f[0] >> comma[0] >> f[1] >> comma[1] >> f[2] >> comma[2] >> f[3];
  if (!is || comma[0] != ',' || comma[1] != ',' || comma[2] != ',')
    throw DataError("video '" + video_id + "' groundtruth line " +
                    std::to_string(line_no) + ": unparsable '" + s + "'");
  GtEntry e;
  e.present = true;
  e.box = box_from_xywh(f[0], f[1], f[2], f[3]);
  if (!e.box.valid())
    throw DataError("video '" + video_id + "' groundtruth line " +
                    std::to_string(line_no) + ": degenerate box");
  return e;
}

bool is_frame_file(const fs::path& p) {
  auto e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), ::tolower);
  return e == ".png" || e == ".jpg" || e == ".jpeg";
}

}  // namespace

std::vector<VideoSample> load_benchmark_dir(
    const fs::path& root, const std::optional<fs::path>& subset) {
  if (!fs::is_directory(root))
    throw DataError("dataset root does not exist: " + root.string());

  std::optional<std::vector<std::string>> wanted;
  fs::path subset_path = subset.value_or(root / "subset.txt");
  if (fs::exists(subset_path)) {
    std::ifstream in(subset_path);
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(in, line)) {
      while (!line.empty() && (line.back() == '\r' || line.back() == ' '))
        line.pop_back();
      if (!line.empty()) ids.push_back(line);
    }
    wanted = std::move(ids);
  }

  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());

  std::vector<VideoSample> out;
  for (const auto& dir : dirs) {
    const std::string id = dir.filename().string();
    if (wanted && std::find(wanted->begin(), wanted->end(), id) == wanted->end())
      continue;

    VideoSample v;
    v.id = id;
    const fs::path img_dir = dir / "img";
    if (fs::is_directory(img_dir)) {
      for (const auto& f : fs::directory_iterator(img_dir))
        if (f.is_regular_file() && is_frame_file(f.path()))
          v.frame_paths.push_back(f.path());
      std::sort(v.frame_paths.begin(), v.frame_paths.end());
    }
    if (v.frame_paths.empty())
      throw DataError("video '" + id + "': no frames under img/");

    const fs::path gt_path = dir / "groundtruth.txt";
    std::ifstream gt_in(gt_path);
    if (!gt_in) throw DataError("video '" + id + "': missing groundtruth.txt");
    std::string line;
    int line_no = 0;
    while (std::getline(gt_in, line)) {
      ++line_no;
      if (line.empty()) continue;
      v.gt.push_back(parse_gt_line(line, id, line_no));
    }
    if (v.gt.size() != v.frame_paths.size())
      throw DataError("video '" + id + "': " +
                      std::to_string(v.frame_paths.size()) + " frames but " +
                      std::to_string(v.gt.size()) + " groundtruth lines");

    std::ifstream q_in(dir / "nlp.txt");
    if (!q_in || !std::getline(q_in, v.query) || v.query.empty())
      throw DataError("video '" + id + "': missing or empty nlp.txt");
    while (!v.query.empty() && v.query.back() == '\r') v.query.pop_back();

    out.push_back(std::move(v));
  }
  return out;
}

void write_benchmark_video(const VideoSample& video, const fs::path& root) {
  const fs::path dir = root / video.id;
  fs::create_directories(dir / "img");
  char name[32];
  for (std::size_t t = 0; t < video.frames.size(); ++t) {
    std::snprintf(name, sizeof name, "%08zu.png", t + 1);
    save_image(video.frames[t], dir / "img" / name);
  }
  std::ofstream gt(dir / "groundtruth.txt");
  for (const auto& e : video.gt) {
    if (!e.present) {
      gt << "absent\n";
    } else {
      gt << e.box.x1 << ',' << e.box.y1 << ',' << e.box.width() << ','
         << e.box.height() << '\n';
    }
  }
  std::ofstream q(dir / "nlp.txt");
  q << video.query << '\n';
}

const std::vector<std::string>& synth_colors() {
  static const std::vector<std::string> c{"red",    "green",   "blue",
                                          "yellow", "magenta", "cyan"};
  return c;
}

const std::vector<std::string>& synth_shapes() {
  static const std::vector<std::string> s{"square", "circle", "triangle"};
  return s;
}

namespace {

std::array<double, 3> color_rgb(const std::string& name) {
  if (name == "red") return {0.9, 0.1, 0.1};
  if (name == "green") return {0.1, 0.8, 0.1};
  if (name == "blue") return {0.15, 0.25, 0.9};
  if (name == "yellow") return {0.9, 0.85, 0.1};
  if (name == "magenta") return {0.85, 0.15, 0.8};
  if (name == "cyan") return {0.1, 0.8, 0.85};
  throw DataError("unknown color: " + name);
}

struct SceneObject {
  std::string shape, color;
  double size;      // bounding square side
  double cx, cy;    // center
  double vx, vy;    // px/frame
};

void draw_object(Image& img, const SceneObject& o) {
  const auto rgb = color_rgb(o.color);
  const double half = o.size * 0.5;
  const int y0 = std::max(0, static_cast<int>(std::floor(o.cy - half)));
  const int y1 = std::min(img.h - 1, static_cast<int>(std::ceil(o.cy + half)));
  const int x0 = std::max(0, static_cast<int>(std::floor(o.cx - half)));
  const int x1 = std::min(img.w - 1, static_cast<int>(std::ceil(o.cx + half)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = x + 0.5 - o.cx;
      const double dy = y + 0.5 - o.cy;
      bool inside = false;
      if (o.shape == "square") {
        inside = std::abs(dx) <= half && std::abs(dy) <= half;
      } else if (o.shape == "circle") {
        inside = dx * dx + dy * dy <= half * half;
      } else if (o.shape == "triangle") {
        // Upward triangle: apex at the top of the bounding square.
        const double fy = (dy + half) / o.size;  // 0 at apex row, 1 at base
        inside = fy >= 0.0 && fy <= 1.0 && std::abs(dx) <= half * fy;
      }
      if (inside)
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = rgb[c];
    }
  }
}

void bounce(SceneObject& o, int canvas) {
  o.cx += o.vx;
  o.cy += o.vy;
  const double half = o.size * 0.5;
  if (o.cx - half < 0) { o.cx = half; o.vx = std::abs(o.vx); }
  if (o.cx + half > canvas) { o.cx = canvas - half; o.vx = -std::abs(o.vx); }
  if (o.cy - half < 0) { o.cy = half; o.vy = std::abs(o.vy); }
  if (o.cy + half > canvas) { o.cy = canvas - half; o.vy = -std::abs(o.vy); }
}

}  // namespace

VideoSample generate_synthetic(const SynthConfig& cfg) {
  if (cfg.frames < 2) throw DataError("synth: frame count must be >= 2");
  if (cfg.canvas < 16) throw DataError("synth: canvas too small");
  color_rgb(cfg.target_color);
  if (std::find(synth_shapes().begin(), synth_shapes().end(),
                cfg.target_shape) == synth_shapes().end())
    throw DataError("synth: unknown shape " + cfg.target_shape);

  std::mt19937_64 rng(cfg.seed);
  auto unif = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  auto pick = [&](const std::vector<std::string>& v) {
    return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
  };

  SceneObject target;
  target.shape = cfg.target_shape;
  target.color = cfg.target_color;
  target.size = unif(12.0, 18.0) * cfg.canvas / 64.0;
  target.cx = unif(target.size, cfg.canvas - target.size);
  target.cy = unif(target.size, cfg.canvas - target.size);
  target.vx = cfg.vx;
  target.vy = cfg.vy;

  std::vector<SceneObject> distractors;
  std::vector<std::pair<std::string, std::string>> specs = cfg.distractor_spec;
  if (specs.empty()) {
    for (int i = 0; i < cfg.distractors; ++i) {
      std::string color = pick(synth_colors());
      while (color == cfg.target_color) color = pick(synth_colors());
      specs.emplace_back(color, pick(synth_shapes()));
    }
  }
  for (const auto& [color, shape] : specs) {
    if (color == cfg.target_color && shape == cfg.target_shape)
      throw DataError("synth: ambiguous scene, a distractor matches the query");
    SceneObject d;
    d.color = color;
    d.shape = shape;
    d.size = unif(10.0, 16.0) * cfg.canvas / 64.0;
    d.cx = unif(d.size, cfg.canvas - d.size);
    d.cy = unif(d.size, cfg.canvas - d.size);
    d.vx = unif(-2.0, 2.0);
    d.vy = unif(-2.0, 2.0);
    distractors.push_back(d);
  }

  VideoSample v;
  v.id = "synth_" + std::to_string(cfg.seed);
  v.query = "track the " + cfg.target_color + " " + cfg.target_shape;

  // Static textured background shared by all frames: a coarse noise grid
  // upsampled bilinearly. Per-pixel noise would dominate max-pooled region
  // features; a low-frequency texture keeps the background non-trivial
  // without drowning object appearance.
  Image background(cfg.canvas, cfg.canvas);
  const int grid = 8;
  std::vector<double> knots(static_cast<std::size_t>(grid + 1) * (grid + 1) * 3);
  for (double& k : knots) k = unif(0.3, 0.5);
  for (int y = 0; y < cfg.canvas; ++y) {
    const double gy = static_cast<double>(y) * grid / cfg.canvas;
    const int y0 = static_cast<int>(gy);
    const double fy = gy - y0;
    for (int x = 0; x < cfg.canvas; ++x) {
      const double gx = static_cast<double>(x) * grid / cfg.canvas;
      const int x0 = static_cast<int>(gx);
      const double fx = gx - x0;
      for (int c = 0; c < 3; ++c) {
        auto at = [&](int yy, int xx) {
          return knots[(static_cast<std::size_t>(yy) * (grid + 1) + xx) * 3 + c];
        };
        background.at(y, x, c) =
            (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
            fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
      }
    }
  }

  for (int t = 0; t < cfg.frames; ++t) {
    Image frame = background;
    for (const auto& d : distractors) draw_object(frame, d);
    draw_object(frame, target);

    const bool occluded = cfg.occlude_start >= 0 && t >= cfg.occlude_start &&
                          t < cfg.occlude_start + cfg.occlude_len;
    GtEntry e;
    if (occluded) {
      // The frame shows the occluder, so the entry is marked absent for
      // evaluation purposes, but the target's true (hidden) position is
      // still recorded: sequence training supervises every time step and
      // uses it as the regression target through the occlusion.
      e.box = clip_box(Box{target.cx - target.size * 0.5,
                           target.cy - target.size * 0.5,
                           target.cx + target.size * 0.5,
                           target.cy + target.size * 0.5},
                       cfg.canvas, cfg.canvas);
      const double m = 3.0;
      const int y0 = std::max(0, static_cast<int>(target.cy - target.size * 0.5 - m));
      const int y1 = std::min(cfg.canvas - 1,
                              static_cast<int>(target.cy + target.size * 0.5 + m));
      const int x0 = std::max(0, static_cast<int>(target.cx - target.size * 0.5 - m));
      const int x1 = std::min(cfg.canvas - 1,
                              static_cast<int>(target.cx + target.size * 0.5 + m));
      // The occluder is a bright, object-like patch: a real thing passing in
      // front of the target. Keeping it salient lets the proposal stage see
      // it, so during the occlusion the gated detections stay at the
      // target's position instead of wandering to distractors, and the
      // tracker re-attaches naturally when the target reappears.
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x)
          for (int c = 0; c < 3; ++c) frame.at(y, x, c) = 0.95;
    } else {
      e.present = true;
      e.box = clip_box(Box{target.cx - target.size * 0.5,
                           target.cy - target.size * 0.5,
                           target.cx + target.size * 0.5,
                           target.cy + target.size * 0.5},
                       cfg.canvas, cfg.canvas);
    }
    v.frames.push_back(std::move(frame));
    v.gt.push_back(e);

    for (auto& d : distractors) bounce(d, cfg.canvas);
    bounce(target, cfg.canvas);
  }
  return v;
}

}  // namespace nltrack
