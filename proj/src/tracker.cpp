#include "nltrack/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nltrack {

TrackerNet::TrackerNet(int rf_size, int p_dim, int n, int hidden, nn::Rng& rng)
    : proj("tracker.proj", rf_size, p_dim),
      cell("tracker.lstm", n * (5 + p_dim), hidden),
      head("tracker.head", hidden, 4),
      top_n(n),
      p(p_dim) {
  nn::init_uniform(proj.w, std::sqrt(1.0 / rf_size), rng);
  cell.init(std::sqrt(1.0 / (n * (5 + p_dim))), rng);
  nn::init_uniform(head.w, std::sqrt(1.0 / hidden), rng);
}

TrackerState initial_state(const TrackerNet& net) {
  TrackerState s;
  s.h.assign(net.cell.hidden, 0.0);
  s.c.assign(net.cell.hidden, 0.0);
  return s;
}

nn::Vec pack_input(const DetectionSet& d, double img_w, double img_h,
                   const TrackerNet& net) {
  PackCache cache;
  return pack_input(d, img_w, img_h, net, cache);
}

nn::Vec pack_input(const DetectionSet& d, double img_w, double img_h,
                   const TrackerNet& net, PackCache& cache) {
  if (static_cast<int>(d.boxes.size()) != net.top_n)
    throw std::invalid_argument("pack_input: detection set size mismatch");
  cache.rf_flat.clear();
  nn::Vec input;
  input.reserve(net.input_size());
  for (int i = 0; i < net.top_n; ++i) {
    const Box& b = d.boxes[i];
    input.push_back(b.x1 / img_w);
    input.push_back(b.y1 / img_h);
    input.push_back(b.x2 / img_w);
    input.push_back(b.y2 / img_h);
    input.push_back(d.scores[i]);
    cache.rf_flat.push_back(d.features[i].v);
    nn::Vec pr;
    net.proj.forward(cache.rf_flat.back(), pr);
    for (double& v : pr) v *= kPackFeatureScale;
    input.insert(input.end(), pr.begin(), pr.end());
  }
  return input;
}

void pack_backward(const PackCache& cache, const nn::Vec& dinput,
                   TrackerNet& net) {
  const int block = 5 + net.p;
  for (std::size_t i = 0; i < cache.rf_flat.size(); ++i) {
    nn::Vec dpr(dinput.begin() + i * block + 5, dinput.begin() + (i + 1) * block);
    for (double& v : dpr) v *= kPackFeatureScale;
    net.proj.backward(cache.rf_flat[i], dpr, nullptr);
  }
}

Box denormalize_prediction(const nn::Vec& norm4, double img_w, double img_h) {
  double x1 = norm4[0] * img_w, y1 = norm4[1] * img_h;
  double x2 = norm4[2] * img_w, y2 = norm4[3] * img_h;
  if (x2 < x1) std::swap(x1, x2);
  if (y2 < y1) std::swap(y1, y2);
  auto separate = [](double& lo, double& hi, double limit) {
    if (hi - lo < 1.0) {
      const double c = std::clamp(0.5 * (lo + hi), 0.5, limit - 0.5);
      lo = c - 0.5;
      hi = c + 0.5;
    }
  };
  x1 = std::clamp(x1, 0.0, img_w);
  x2 = std::clamp(x2, 0.0, img_w);
  y1 = std::clamp(y1, 0.0, img_h);
  y2 = std::clamp(y2, 0.0, img_h);
  separate(x1, x2, img_w);
  separate(y1, y2, img_h);
  return Box{x1, y1, x2, y2};
}

TrackerState tracker_step(const TrackerState& state, const nn::Vec& input,
                          const TrackerNet& net, double img_w, double img_h,
                          Prediction* prediction, StepCache* cache) {
  if (static_cast<int>(input.size()) != net.input_size())
    throw std::invalid_argument("tracker_step: input dimension mismatch");
  StepCache local;
  StepCache& sc = cache ? *cache : local;
  net.cell.forward(input, state.h, state.c, sc.cell);
  nn::Vec raw;
  net.head.forward(sc.cell.h, raw);
  sc.norm4.assign(4, 0.0);
  for (int i = 0; i < 4; ++i) sc.norm4[i] = nn::sigmoid(raw[i]);

  TrackerState next;
  next.h = sc.cell.h;
  next.c = sc.cell.c;
  next.frame_index = state.frame_index + 1;

  Prediction pred;
  pred.box = denormalize_prediction(sc.norm4, img_w, img_h);
  pred.frame_index = next.frame_index;
  if (prediction) *prediction = pred;

  next.history = state.history;
  next.history.push_back(pred.box);
  if (next.history.size() > 2)
    next.history.erase(next.history.begin(),
                       next.history.end() - 2);
  return next;
}

void tracker_step_backward(TrackerNet& net, const StepCache& cache,
                           const std::array<double, 4>& dnorm4,
                           TrackerGradState& gs, nn::Vec* dinput) {
  nn::Vec draw(4, 0.0);
  for (int i = 0; i < 4; ++i)
    draw[i] = dnorm4[i] * cache.norm4[i] * (1.0 - cache.norm4[i]);
  nn::Vec dh_head;
  net.head.backward(cache.cell.h, draw, &dh_head);
  nn::Vec dh = gs.dh.empty() ? nn::Vec(net.cell.hidden, 0.0) : gs.dh;
  nn::Vec dc = gs.dc.empty() ? nn::Vec(net.cell.hidden, 0.0) : gs.dc;
  for (int i = 0; i < net.cell.hidden; ++i) dh[i] += dh_head[i];
  net.cell.backward(cache.cell, dh, dc, dinput, gs.dh, gs.dc);
}

double tracker_loss(const std::vector<Prediction>& predictions,
                    const std::vector<Box>& gts, double img_w, double img_h) {
  if (predictions.size() != gts.size())
    throw std::invalid_argument("tracker_loss: length mismatch");
  double loss = 0.0;
  for (std::size_t t = 0; t < predictions.size(); ++t) {
    const Box& p = predictions[t].box;
    const Box& g = gts[t];
    const double diffs[4] = {(p.x1 - g.x1) / img_w, (p.y1 - g.y1) / img_h,
                             (p.x2 - g.x2) / img_w, (p.y2 - g.y2) / img_h};
    for (double d : diffs) loss += nn::smooth_l1(d);
  }
  return loss;
}

double tracker_loss_norm(const std::vector<nn::Vec>& norm_preds,
                         const std::vector<std::array<double, 4>>& norm_gts,
                         const std::vector<char>& mask,
                         std::vector<std::array<double, 4>>* dnorm) {
  if (norm_preds.size() != norm_gts.size() || norm_preds.size() != mask.size())
    throw std::invalid_argument("tracker_loss_norm: length mismatch");
  if (dnorm) dnorm->assign(norm_preds.size(), {0.0, 0.0, 0.0, 0.0});
  double loss = 0.0;
  for (std::size_t t = 0; t < norm_preds.size(); ++t) {
    if (!mask[t]) continue;
    for (int i = 0; i < 4; ++i) {
      const double d = norm_preds[t][i] - norm_gts[t][i];
      loss += nn::smooth_l1(d);
      if (dnorm) (*dnorm)[t][i] = nn::smooth_l1_grad(d);
    }
  }
  return loss;
}

}  // namespace nltrack
