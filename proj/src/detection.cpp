#include "nltrack/detection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace nltrack {

std::vector<double> fuse_scores(const std::vector<double>& objectness,
                                const std::vector<double>& similarity) {
  if (objectness.size() != similarity.size())
    throw std::invalid_argument("fuse_scores: length mismatch");
  std::vector<double> fused(objectness.size());
  for (std::size_t i = 0; i < fused.size(); ++i)
    fused[i] = objectness[i] * similarity[i];
  return fused;
}

std::vector<double> relaxed_gate(const std::vector<double>& similarity,
                                 const std::vector<Box>& boxes,
                                 const Box& prev, const Box& prev2) {
  if (similarity.size() != boxes.size())
    throw std::invalid_argument("relaxed_gate: length mismatch");
  const double v = std::max(center_distance(prev, prev2), kGateFloor);
  std::vector<double> gated(similarity.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const double d = std::max(center_distance(boxes[i], prev), kGateFloor);
    gated[i] = similarity[i] * std::min(v / d, kGateCap);
  }
  return gated;
}

DetectionSet select_top_n(const std::vector<Box>& boxes,
                          const std::vector<RegionFeature>& features,
                          const std::vector<double>& fused_scores, int n) {
  if (boxes.empty()) throw std::runtime_error("select_top_n: no proposals");
  if (boxes.size() != features.size() || boxes.size() != fused_scores.size())
    throw std::invalid_argument("select_top_n: length mismatch");
  for (double s : fused_scores)
    if (!std::isfinite(s))
      throw std::invalid_argument("select_top_n: non-finite score");

  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (fused_scores[a] != fused_scores[b])
      return fused_scores[a] > fused_scores[b];
    return a < b;
  });

  DetectionSet out;
  const int real = std::min<int>(n, static_cast<int>(boxes.size()));
  for (int k = 0; k < real; ++k) {
    const std::size_t i = order[k];
    out.boxes.push_back(boxes[i]);
    out.features.push_back(features[i]);
    out.scores.push_back(fused_scores[i]);
  }
  while (static_cast<int>(out.boxes.size()) < n) {
    out.boxes.push_back(out.boxes.back());
    out.features.push_back(out.features.back());
    out.scores.push_back(out.scores.back());
    ++out.pad_count;
  }
  return out;
}

FrameCandidates detect_candidates(const Image& frame,
                                  const nn::Vec& sentence_embedding,
                                  const Backbone& backbone, const RpnHead& rpn,
                                  const SimilarityHead& sim,
                                  const DetectConfig& cfg) {
  FrameCandidates c;
  c.fmap = backbone.forward(frame);
  const AnchorSet anchors = generate_anchors(
      c.fmap.h, c.fmap.w, c.fmap.stride, cfg.anchor_sizes, cfg.anchor_ratios);
  ProposalSet proposals =
      rpn_forward(c.fmap, anchors, rpn, frame.w, frame.h, cfg.pre_nms_k,
                  cfg.post_nms_k, cfg.nms_threshold);
  if (proposals.boxes.empty())
    throw std::runtime_error("detect: RPN produced no proposals");

  c.similarity.reserve(proposals.boxes.size());
  for (const auto& b : proposals.boxes) {
    const RegionFeature rf = roi_pool(c.fmap, b, cfg.roi_size, frame.w, frame.h);
    c.similarity.push_back(sim.score(sentence_embedding, rf));
  }
  c.boxes = std::move(proposals.boxes);
  c.objectness = std::move(proposals.objectness);
  return c;
}

DetectionSet gate_and_select(const FrameCandidates& candidates,
                             const std::optional<GateContext>& gate,
                             const DetectConfig& cfg, double img_w,
                             double img_h) {
  if (candidates.boxes.empty())
    throw std::runtime_error("gate_and_select: no candidates");
  const std::vector<double> similarity =
      gate ? relaxed_gate(candidates.similarity, candidates.boxes, gate->prev,
                          gate->prev2)
           : candidates.similarity;
  const auto fused = fuse_scores(candidates.objectness, similarity);
  for (double s : fused)
    if (!std::isfinite(s))
      throw std::invalid_argument("gate_and_select: non-finite score");

  // Same ranking as select_top_n, but region features are pooled for the
  // selected boxes only; re-gating a cached frame stays cheap.
  std::vector<std::size_t> order(candidates.boxes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     if (fused[a] != fused[b]) return fused[a] > fused[b];
                     return a < b;
                   });

  DetectionSet out;
  const int real =
      std::min<int>(cfg.top_n, static_cast<int>(candidates.boxes.size()));
  for (int k = 0; k < real; ++k) {
    const std::size_t i = order[k];
    out.boxes.push_back(candidates.boxes[i]);
    out.features.push_back(
        roi_pool(candidates.fmap, candidates.boxes[i], cfg.roi_size, img_w,
                 img_h));
    out.scores.push_back(fused[i]);
  }
  while (static_cast<int>(out.boxes.size()) < cfg.top_n) {
    out.boxes.push_back(out.boxes.back());
    out.features.push_back(out.features.back());
    out.scores.push_back(out.scores.back());
    ++out.pad_count;
  }
  return out;
}

DetectionSet detect(const Image& frame, const nn::Vec& sentence_embedding,
                    const Backbone& backbone, const RpnHead& rpn,
                    const SimilarityHead& sim, const DetectConfig& cfg,
                    const std::optional<GateContext>& gate) {
  const FrameCandidates c =
      detect_candidates(frame, sentence_embedding, backbone, rpn, sim, cfg);
  return gate_and_select(c, gate, cfg, frame.w, frame.h);
}

}  // namespace nltrack
