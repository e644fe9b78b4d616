#pragma once

#include <array>
#include <cstddef>
#include <vector>

namespace nltrack {

// Axis-aligned box, corner format, origin at the image top-left.
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  double area() const { return width() * height(); }
  bool valid() const;

  bool operator==(const Box&) const = default;
};

// Converts an "x,y,w,h" style rectangle to corner format.
Box box_from_xywh(double x, double y, double w, double h);

double iou(const Box& a, const Box& b);
double center_distance(const Box& a, const Box& b);

Box clip_box(const Box& b, double img_w, double img_h);

// Anchors for one feature map, row-major over cells, then sizes, then ratios.
struct AnchorSet {
  std::vector<Box> anchors;
  double stride = 0.0;
  int map_height = 0;
  int map_width = 0;
  int per_cell = 0;
};

// The full-scale defaults: 5 sizes, 3 aspect ratios.
const std::vector<double>& default_anchor_sizes();
const std::vector<double>& default_anchor_ratios();

AnchorSet generate_anchors(int map_height, int map_width, double stride,
                           const std::vector<double>& sizes,
                           const std::vector<double>& ratios);

using Deltas = std::array<double, 4>;

Deltas encode_deltas(const Box& anchor, const Box& target);
Box decode_deltas(const Box& anchor, const Deltas& d);
Box decode_deltas(const Box& anchor, const Deltas& d, double img_w, double img_h);

// Greedy NMS. Returns surviving indices sorted by descending score,
// ties broken by lower original index. Suppression uses IoU > threshold.
std::vector<std::size_t> nms(const std::vector<Box>& boxes,
                             const std::vector<double>& scores,
                             double iou_threshold);

}  // namespace nltrack
