#include "nltrack/vision.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace nltrack {

Backbone::Backbone(const std::vector<int>& channels, nn::Rng& rng) {
  int in_c = 3;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    convs.emplace_back("backbone.conv" + std::to_string(i), in_c, channels[i],
                       3, 2);
    const double scale = std::sqrt(2.0 / (in_c * 9));
    nn::init_uniform(convs.back().w, scale, rng);
    in_c = channels[i];
  }
}

FeatureMap Backbone::forward(const Image& img) const {
  Cache cache;
  return forward(img, cache);
}

FeatureMap Backbone::forward(const Image& img, Cache& cache) const {
  if (img.w < stride() || img.h < stride())
    throw std::invalid_argument("Backbone: image smaller than one stride");
  cache.acts.clear();
  cache.dims.clear();
  cache.acts.push_back(img.rgb);
  cache.dims.emplace_back(img.h, img.w);
  int h = img.h, w = img.w;
  for (const auto& conv : convs) {
    nn::Vec y;
    conv.forward(cache.acts.back(), h, w, y);
    for (double& v : y) v = std::max(v, 0.0);
    h = conv.out_dim(h);
    w = conv.out_dim(w);
    cache.acts.push_back(std::move(y));
    cache.dims.emplace_back(h, w);
  }
  FeatureMap f;
  f.h = h;
  f.w = w;
  f.d = out_depth();
  f.stride = stride();
  f.v = cache.acts.back();
  return f;
}

void Backbone::backward(const Cache& cache, const nn::Vec& dfeat) {
  nn::Vec dy = dfeat;
  for (int li = static_cast<int>(convs.size()) - 1; li >= 0; --li) {
    const nn::Vec& act = cache.acts[li + 1];
    for (std::size_t i = 0; i < dy.size(); ++i)
      if (act[i] <= 0.0) dy[i] = 0.0;
    nn::Vec dx;
    convs[li].backward(cache.acts[li], cache.dims[li].first,
                       cache.dims[li].second, dy, li > 0 ? &dx : nullptr);
    dy = std::move(dx);
  }
}

RpnHead::RpnHead(int depth, int mid, int anchors_per_cell, nn::Rng& rng)
    : conv("rpn.conv", depth, mid, 3, 1),
      cls("rpn.cls", mid, anchors_per_cell, 1, 1),
      reg("rpn.reg", mid, 4 * anchors_per_cell, 1, 1) {
  nn::init_uniform(conv.w, std::sqrt(2.0 / (depth * 9)), rng);
  nn::init_uniform(cls.w, 0.05, rng);
  nn::init_uniform(reg.w, 0.05, rng);
}

RpnHead::Raw RpnHead::forward(const FeatureMap& f) const {
  Raw raw;
  raw.h = f.h;
  raw.w = f.w;
  conv.forward(f.v, f.h, f.w, raw.mid);
  for (double& v : raw.mid) v = std::max(v, 0.0);
  cls.forward(raw.mid, f.h, f.w, raw.logits);
  reg.forward(raw.mid, f.h, f.w, raw.deltas);
  return raw;
}

void RpnHead::backward(const FeatureMap& f, const Raw& raw,
                       const nn::Vec& dlogits, const nn::Vec& ddeltas,
                       nn::Vec* dfeat) {
  nn::Vec dmid_cls, dmid_reg;
  cls.backward(raw.mid, raw.h, raw.w, dlogits, &dmid_cls);
  reg.backward(raw.mid, raw.h, raw.w, ddeltas, &dmid_reg);
  for (std::size_t i = 0; i < dmid_cls.size(); ++i) {
    dmid_cls[i] += dmid_reg[i];
    if (raw.mid[i] <= 0.0) dmid_cls[i] = 0.0;
  }
  conv.backward(f.v, f.h, f.w, dmid_cls, dfeat);
}

ProposalSet rpn_forward(const FeatureMap& f, const AnchorSet& anchors,
                        const RpnHead& head, double img_w, double img_h,
                        int pre_nms_k, int post_nms_k, double nms_threshold) {
  if (anchors.map_height != f.h || anchors.map_width != f.w)
    throw std::invalid_argument("rpn_forward: anchors do not match feature map");
  const RpnHead::Raw raw = head.forward(f);
  const std::size_t n = anchors.anchors.size();

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (raw.logits[a] != raw.logits[b]) return raw.logits[a] > raw.logits[b];
    return a < b;
  });

  std::vector<Box> cand;
  std::vector<double> cand_logit;
  for (std::size_t oi = 0; oi < n && static_cast<int>(cand.size()) < pre_nms_k;
       ++oi) {
    const std::size_t i = order[oi];
    Deltas d;
    for (int k = 0; k < 4; ++k)
      d[k] = std::clamp(raw.deltas[i * 4 + k], -4.0, 4.0);
    Box b = decode_deltas(anchors.anchors[i], d, img_w, img_h);
    if (b.width() < 1e-6 || b.height() < 1e-6) continue;
    cand.push_back(b);
    cand_logit.push_back(raw.logits[i]);
  }

  const auto keep = nms(cand, cand_logit, nms_threshold);
  ProposalSet out;
  for (std::size_t k = 0; k < keep.size() && static_cast<int>(out.boxes.size()) < post_nms_k; ++k) {
    out.boxes.push_back(cand[keep[k]]);
    out.objectness.push_back(nn::sigmoid(cand_logit[keep[k]]));
  }
  return out;
}

RegionFeature roi_pool(const FeatureMap& f, const Box& box, int a, double img_w,
                       double img_h) {
  if (box.x2 <= 0.0 || box.y2 <= 0.0 || box.x1 >= img_w || box.y1 >= img_h)
    throw std::invalid_argument("roi_pool: box fully outside image");
  const double x1f = std::clamp(box.x1 / f.stride, 0.0, static_cast<double>(f.w));
  const double x2f = std::clamp(box.x2 / f.stride, 0.0, static_cast<double>(f.w));
  const double y1f = std::clamp(box.y1 / f.stride, 0.0, static_cast<double>(f.h));
  const double y2f = std::clamp(box.y2 / f.stride, 0.0, static_cast<double>(f.h));

  RegionFeature rf;
  rf.a = a;
  rf.d = f.d;
  rf.v.assign(static_cast<std::size_t>(a) * a * f.d, 0.0);
  const double bw = (x2f - x1f) / a;
  const double bh = (y2f - y1f) / a;
  for (int by = 0; by < a; ++by) {
    int y0 = static_cast<int>(std::floor(y1f + by * bh));
    int y1 = static_cast<int>(std::ceil(y1f + (by + 1) * bh));
    if (y1 <= y0) y1 = y0 + 1;  // empty bin takes the nearest cell
    y0 = std::clamp(y0, 0, f.h - 1);
    y1 = std::clamp(y1, y0 + 1, f.h);
    for (int bx = 0; bx < a; ++bx) {
      int x0 = static_cast<int>(std::floor(x1f + bx * bw));
      int x1 = static_cast<int>(std::ceil(x1f + (bx + 1) * bw));
      if (x1 <= x0) x1 = x0 + 1;
      x0 = std::clamp(x0, 0, f.w - 1);
      x1 = std::clamp(x1, x0 + 1, f.w);
      double* out = &rf.v[(static_cast<std::size_t>(by) * a + bx) * f.d];
      for (int d = 0; d < f.d; ++d) out[d] = -1e300;
      for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
          const double* cell = &f.v[(static_cast<std::size_t>(y) * f.w + x) * f.d];
          for (int d = 0; d < f.d; ++d) out[d] = std::max(out[d], cell[d]);
        }
      }
    }
  }
  return rf;
}

RpnBatch assign_rpn_targets(const AnchorSet& anchors, const Box& gt,
                            int max_positives, int batch_size, nn::Rng& rng) {
  const std::size_t n = anchors.anchors.size();
  std::vector<double> ious(n);
  double best = -1.0;
  std::size_t best_idx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ious[i] = iou(anchors.anchors[i], gt);
    if (ious[i] > best) {
      best = ious[i];
      best_idx = i;
    }
  }
  std::vector<int> pos, neg;
  for (std::size_t i = 0; i < n; ++i) {
    if (ious[i] >= 0.7) pos.push_back(static_cast<int>(i));
  }
  if (std::find(pos.begin(), pos.end(), static_cast<int>(best_idx)) == pos.end())
    pos.push_back(static_cast<int>(best_idx));
  std::sort(pos.begin(), pos.end());
  for (std::size_t i = 0; i < n; ++i) {
    if (ious[i] < 0.3 &&
        std::find(pos.begin(), pos.end(), static_cast<int>(i)) == pos.end())
      neg.push_back(static_cast<int>(i));
  }

  std::shuffle(pos.begin(), pos.end(), rng.eng);
  if (static_cast<int>(pos.size()) > max_positives) pos.resize(max_positives);
  std::shuffle(neg.begin(), neg.end(), rng.eng);
  const int want_neg = std::max(0, batch_size - static_cast<int>(pos.size()));
  if (static_cast<int>(neg.size()) > want_neg) neg.resize(want_neg);

  RpnBatch batch;
  batch.pos = std::move(pos);
  batch.neg = std::move(neg);
  for (int i : batch.pos)
    batch.pos_targets.push_back(encode_deltas(anchors.anchors[i], gt));
  return batch;
}

double rpn_loss(const nn::Vec& logits, const nn::Vec& deltas,
                const RpnBatch& batch, nn::Vec* dlogits, nn::Vec* ddeltas) {
  const int n_cls = static_cast<int>(batch.pos.size() + batch.neg.size());
  if (n_cls == 0) return 0.0;
  if (dlogits) dlogits->assign(logits.size(), 0.0);
  if (ddeltas) ddeltas->assign(deltas.size(), 0.0);

  auto bce = [](double z, double y) {
    // Numerically stable  -(y log s(z) + (1-y) log(1-s(z)))
    return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  };

  double loss = 0.0;
  for (int i : batch.pos) {
    loss += bce(logits[i], 1.0) / n_cls;
    if (dlogits) (*dlogits)[i] += (nn::sigmoid(logits[i]) - 1.0) / n_cls;
  }
  for (int i : batch.neg) {
    loss += bce(logits[i], 0.0) / n_cls;
    if (dlogits) (*dlogits)[i] += nn::sigmoid(logits[i]) / n_cls;
  }

  const int n_pos = static_cast<int>(batch.pos.size());
  if (n_pos > 0) {
    for (std::size_t k = 0; k < batch.pos.size(); ++k) {
      const int i = batch.pos[k];
      for (int j = 0; j < 4; ++j) {
        const double diff = deltas[i * 4 + j] - batch.pos_targets[k][j];
        loss += nn::smooth_l1(diff) / n_pos;
        if (ddeltas) (*ddeltas)[i * 4 + j] += nn::smooth_l1_grad(diff) / n_pos;
      }
    }
  }
  return loss;
}

}  // namespace nltrack
