#pragma once

#include <optional>
#include <vector>

#include "nltrack/data.hpp"
#include "nltrack/geometry.hpp"
#include "nltrack/language.hpp"
#include "nltrack/vision.hpp"

namespace nltrack {

struct DetectConfig {
  std::vector<double> anchor_sizes;
  std::vector<double> anchor_ratios;
  int pre_nms_k = 256;
  int post_nms_k = 64;
  double nms_threshold = 0.7;
  int roi_size = 7;
  int top_n = 5;
};

// Motion gating floors and cap: Eq-style v/d is unbounded as d -> 0 and
// vanishes for a stationary target, so both are floored at one pixel and the
// factor is capped.
inline constexpr double kGateFloor = 1.0;
inline constexpr double kGateCap = 10.0;

struct GateContext {
  Box prev;   // prediction at t-1
  Box prev2;  // prediction at t-2
};

struct DetectionSet {
  std::vector<Box> boxes;
  std::vector<RegionFeature> features;
  std::vector<double> scores;  // fused, descending
  int pad_count = 0;
};

std::vector<double> fuse_scores(const std::vector<double>& objectness,
                                const std::vector<double>& similarity);

std::vector<double> relaxed_gate(const std::vector<double>& similarity,
                                 const std::vector<Box>& boxes,
                                 const Box& prev, const Box& prev2);

DetectionSet select_top_n(const std::vector<Box>& boxes,
                          const std::vector<RegionFeature>& features,
                          const std::vector<double>& fused_scores, int n);

// Gate-independent part of the detection phase for one frame: the feature
// map plus proposal boxes with objectness and ungated language similarity.
// Everything expensive lives here; callers that need to score the same frame
// against several prediction histories (e.g. a recurrent unroll driving its
// own gate) can cache this and re-gate cheaply.
struct FrameCandidates {
  FeatureMap fmap;
  std::vector<Box> boxes;
  std::vector<double> objectness;
  std::vector<double> similarity;
};

FrameCandidates detect_candidates(const Image& frame,
                                  const nn::Vec& sentence_embedding,
                                  const Backbone& backbone, const RpnHead& rpn,
                                  const SimilarityHead& sim,
                                  const DetectConfig& cfg);

// Optional gating -> fusion -> top N, pooling region features for the
// selected boxes only.
DetectionSet gate_and_select(const FrameCandidates& candidates,
                             const std::optional<GateContext>& gate,
                             const DetectConfig& cfg, double img_w,
                             double img_h);

// Full detection phase for one frame: features -> proposals -> pooled region
// features -> language similarity -> optional gating -> fusion -> top N.
DetectionSet detect(const Image& frame, const nn::Vec& sentence_embedding,
                    const Backbone& backbone, const RpnHead& rpn,
                    const SimilarityHead& sim, const DetectConfig& cfg,
                    const std::optional<GateContext>& gate);

}  // namespace nltrack
