#include "nltrack/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace nltrack {

bool Box::valid() const {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
         std::isfinite(y2) && x2 > x1 && y2 > y1;
}

Box box_from_xywh(double x, double y, double w, double h) {
  return Box{x, y, x + w, y + h};
}

double iou(const Box& a, const Box& b) {
  const double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

double center_distance(const Box& a, const Box& b) {
  return std::hypot(a.cx() - b.cx(), a.cy() - b.cy());
}

Box clip_box(const Box& b, double img_w, double img_h) {
  Box c;
  c.x1 = std::clamp(b.x1, 0.0, img_w);
  c.y1 = std::clamp(b.y1, 0.0, img_h);
  c.x2 = std::clamp(b.x2, 0.0, img_w);
  c.y2 = std::clamp(b.y2, 0.0, img_h);
  return c;
}

const std::vector<double>& default_anchor_sizes() {
  static const std::vector<double> sizes{32.0, 64.0, 128.0, 256.0, 512.0};
  return sizes;
}

const std::vector<double>& default_anchor_ratios() {
  // width:height
  static const std::vector<double> ratios{1.0, 0.5, 2.0};
  return ratios;
}

AnchorSet generate_anchors(int map_height, int map_width, double stride,
                           const std::vector<double>& sizes,
                           const std::vector<double>& ratios) {
  if (map_height <= 0 || map_width <= 0 || stride <= 0.0)
    throw std::invalid_argument("generate_anchors: non-positive dimensions");
  if (sizes.empty() || ratios.empty())
    throw std::invalid_argument("generate_anchors: empty sizes or ratios");

  AnchorSet set;
  set.stride = stride;
  set.map_height = map_height;
  set.map_width = map_width;
  set.per_cell = static_cast<int>(sizes.size() * ratios.size());
  set.anchors.reserve(static_cast<std::size_t>(map_height) * map_width *
                      set.per_cell);
  for (int i = 0; i < map_height; ++i) {
    for (int j = 0; j < map_width; ++j) {
      const double cx = (j + 0.5) * stride;
      const double cy = (i + 0.5) * stride;
      for (double s : sizes) {
        for (double r : ratios) {
          // Area-preserving: width s*sqrt(r), height s/sqrt(r).
          const double w = s * std::sqrt(r);
          const double h = s / std::sqrt(r);
          set.anchors.push_back(
              Box{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h});
        }
      }
    }
  }
  return set;
}

Deltas encode_deltas(const Box& anchor, const Box& target) {
  const double aw = anchor.width(), ah = anchor.height();
  return Deltas{(target.cx() - anchor.cx()) / aw,
                (target.cy() - anchor.cy()) / ah,
                std::log(target.width() / aw),
                std::log(target.height() / ah)};
}

Box decode_deltas(const Box& anchor, const Deltas& d) {
  for (double v : d)
    if (!std::isfinite(v))
      throw std::invalid_argument("decode_deltas: non-finite deltas");
  const double aw = anchor.width(), ah = anchor.height();
  const double cx = anchor.cx() + d[0] * aw;
  const double cy = anchor.cy() + d[1] * ah;
  const double w = aw * std::exp(d[2]);
  const double h = ah * std::exp(d[3]);
  return Box{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

Box decode_deltas(const Box& anchor, const Deltas& d, double img_w,
                  double img_h) {
  return clip_box(decode_deltas(anchor, d), img_w, img_h);
}

std::vector<std::size_t> nms(const std::vector<Box>& boxes,
                             const std::vector<double>& scores,
                             double iou_threshold) {
  if (boxes.size() != scores.size())
    throw std::invalid_argument("nms: boxes/scores length mismatch");
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     if (scores[a] != scores[b]) return scores[a] > scores[b];
                     return a < b;
                   });
  std::vector<std::size_t> keep;
  std::vector<char> suppressed(boxes.size(), 0);
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (suppressed[i]) continue;
    keep.push_back(i);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (!suppressed[j] && iou(boxes[i], boxes[j]) > iou_threshold)
        suppressed[j] = 1;
    }
  }
  return keep;
}

}  // namespace nltrack
