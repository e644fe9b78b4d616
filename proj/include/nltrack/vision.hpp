#pragma once

#include <optional>
#include <vector>

#include "nltrack/data.hpp"
#include "nltrack/geometry.hpp"
#include "nltrack/nn.hpp"

namespace nltrack {

struct FeatureMap {
  int h = 0, w = 0, d = 0;
  double stride = 1.0;
  nn::Vec v;  // h * w * d, channel-last
};

struct RegionFeature {
  int a = 0, d = 0;
  nn::Vec v;  // a * a * d, channel-last
};

// Stack of stride-2 3x3 conv + ReLU blocks; overall stride 2^blocks.
struct Backbone {
  std::vector<nn::Conv2d> convs;

  Backbone() = default;
  Backbone(const std::vector<int>& channels, nn::Rng& rng);

  int stride() const { return 1 << static_cast<int>(convs.size()); }
  int out_depth() const { return convs.back().out_ch; }

  struct Cache {
    std::vector<nn::Vec> acts;  // post-ReLU per layer, acts[0] = input
    std::vector<std::pair<int, int>> dims;
  };

  FeatureMap forward(const Image& img) const;
  FeatureMap forward(const Image& img, Cache& cache) const;
  void backward(const Cache& cache, const nn::Vec& dfeat);
};

// 3x3 shared conv then 1x1 objectness / regression heads, per-cell anchors.
struct RpnHead {
  nn::Conv2d conv;
  nn::Conv2d cls;  // per_cell logits
  nn::Conv2d reg;  // 4 * per_cell deltas

  RpnHead() = default;
  RpnHead(int depth, int mid, int anchors_per_cell, nn::Rng& rng);

  struct Raw {
    nn::Vec mid;     // post-ReLU
    nn::Vec logits;  // (h*w*per_cell), anchor order matches AnchorSet
    nn::Vec deltas;  // (h*w*per_cell*4)
    int h = 0, w = 0;
  };

  Raw forward(const FeatureMap& f) const;
  void backward(const FeatureMap& f, const Raw& raw, const nn::Vec& dlogits,
                const nn::Vec& ddeltas, nn::Vec* dfeat);
};

struct ProposalSet {
  std::vector<Box> boxes;          // clipped to image, descending objectness
  std::vector<double> objectness;  // sigmoid scores
};

ProposalSet rpn_forward(const FeatureMap& f, const AnchorSet& anchors,
                        const RpnHead& head, double img_w, double img_h,
                        int pre_nms_k, int post_nms_k, double nms_threshold);

RegionFeature roi_pool(const FeatureMap& f, const Box& box, int a, double img_w,
                       double img_h);

// Anchor labels and sampled training batch for one (frame, gt) pair.
struct RpnBatch {
  std::vector<int> pos;              // sampled positive anchor indices
  std::vector<int> neg;              // sampled negative anchor indices
  std::vector<Deltas> pos_targets;   // encoded gt deltas, aligned with pos
};

RpnBatch assign_rpn_targets(const AnchorSet& anchors, const Box& gt,
                            int max_positives, int batch_size, nn::Rng& rng);

// Objectness cross-entropy averaged over the sampled batch plus smoothed-L1
// regression averaged over positives. Gradients w.r.t. the raw outputs are
// written when the pointers are non-null.
double rpn_loss(const nn::Vec& logits, const nn::Vec& deltas,
                const RpnBatch& batch, nn::Vec* dlogits, nn::Vec* ddeltas);

}  // namespace nltrack
