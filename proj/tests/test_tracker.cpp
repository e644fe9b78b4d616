#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "grad_check.hpp"
#include "nltrack/tracker.hpp"

using namespace nltrack;
using nltrack::testing::fd_max_rel_err;

namespace {

DetectionSet random_detections(int n, int a, int d, double img_w, double img_h,
                               nn::Rng& rng) {
  DetectionSet out;
  for (int i = 0; i < n; ++i) {
    const double x = rng.uniform(0, img_w - 8);
    const double y = rng.uniform(0, img_h - 8);
    out.boxes.push_back(Box{x, y, x + rng.uniform(2, 8), y + rng.uniform(2, 8)});
    RegionFeature rf;
    rf.a = a;
    rf.d = d;
    rf.v.resize(static_cast<std::size_t>(a) * a * d);
    for (double& v : rf.v) v = nn::as_f32(rng.uniform(-1, 1));
    out.features.push_back(rf);
    out.scores.push_back(rng.uniform(0, 1));
  }
  std::sort(out.scores.rbegin(), out.scores.rend());
  return out;
}

}  // namespace

TEST_CASE("pack_input layout") {
  nn::Rng rng(1);
  const int a = 2, d = 3, rf_size = a * a * d;
  TrackerNet net(rf_size, 64, 5, 8, rng);
  CHECK(net.input_size() == 5 * (5 + 64));  // 345

  const double img_w = 64, img_h = 32;
  DetectionSet dets = random_detections(5, a, d, img_w, img_h, rng);
  dets.boxes[0] = Box{0, 0, img_w, img_h};  // full image
  const nn::Vec input = pack_input(dets, img_w, img_h, net);
  REQUIRE(static_cast<int>(input.size()) == net.input_size());

  SUBCASE("full-image box normalizes to (0,0,1,1) followed by its score") {
    CHECK(input[0] == 0.0);
    CHECK(input[1] == 0.0);
    CHECK(input[2] == 1.0);
    CHECK(input[3] == 1.0);
    CHECK(input[4] == dets.scores[0]);
  }
  SUBCASE("each block is corners, score, projected feature") {
    const int block = 5 + net.p;
    for (int i = 0; i < 5; ++i) {
      const Box& b = dets.boxes[i];
      CHECK(input[i * block + 0] == b.x1 / img_w);
      CHECK(input[i * block + 1] == b.y1 / img_h);
      CHECK(input[i * block + 2] == b.x2 / img_w);
      CHECK(input[i * block + 3] == b.y2 / img_h);
      CHECK(input[i * block + 4] == dets.scores[i]);
      nn::Vec pr;
      net.proj.forward(dets.features[i].v, pr);
      for (int j = 0; j < net.p; ++j)
        CHECK(input[i * block + 5 + j] == pr[j] * kPackFeatureScale);
    }
  }
  SUBCASE("swapping two detections swaps exactly their blocks") {
    DetectionSet swapped = dets;
    std::swap(swapped.boxes[1], swapped.boxes[3]);
    std::swap(swapped.features[1], swapped.features[3]);
    std::swap(swapped.scores[1], swapped.scores[3]);
    const nn::Vec other = pack_input(swapped, img_w, img_h, net);
    const int block = 5 + net.p;
    for (int j = 0; j < block; ++j) {
      CHECK(other[1 * block + j] == input[3 * block + j]);
      CHECK(other[3 * block + j] == input[1 * block + j]);
      CHECK(other[0 * block + j] == input[0 * block + j]);
    }
  }
  SUBCASE("wrong detection count rejected") {
    DetectionSet four = dets;
    four.boxes.pop_back();
    four.features.pop_back();
    four.scores.pop_back();
    CHECK_THROWS_AS(pack_input(four, img_w, img_h, net), std::invalid_argument);
  }
}

TEST_CASE("denormalize_prediction") {
  SUBCASE("reorders swapped corners") {
    const Box b = denormalize_prediction({0.8, 0.1, 0.2, 0.5}, 100, 50);
    CHECK(b == Box{20, 5, 80, 25});
  }
  SUBCASE("degenerate output becomes a centered one-pixel box") {
    const Box b = denormalize_prediction({0.5, 0.5, 0.5, 0.5}, 100, 50);
    CHECK(b == Box{49.5, 24.5, 50.5, 25.5});
    CHECK(b.valid());
  }
  SUBCASE("degenerate output at the border stays inside the image") {
    const Box b = denormalize_prediction({0.0, 0.0, 0.0, 0.0}, 100, 50);
    CHECK(b == Box{0, 0, 1, 1});
  }
}

TEST_CASE("tracker_step") {
  nn::Rng rng(2);
  const int a = 2, d = 2, rf_size = a * a * d;
  TrackerNet net(rf_size, 4, 5, 6, rng);
  const double img_w = 64, img_h = 64;
  const DetectionSet dets = random_detections(5, a, d, img_w, img_h, rng);
  const nn::Vec input = pack_input(dets, img_w, img_h, net);

  SUBCASE("zero parameters predict the centered one-pixel box") {
    TrackerNet zero(rf_size, 4, 5, 6, rng);
    for (nn::ParamBlock* b : {&zero.proj.w, &zero.proj.b, &zero.cell.wx,
                              &zero.cell.wh, &zero.cell.b, &zero.head.w,
                              &zero.head.b})
      std::fill(b->w.begin(), b->w.end(), 0.0);
    Prediction pred;
    tracker_step(initial_state(zero), pack_input(dets, img_w, img_h, zero),
                 zero, img_w, img_h, &pred);
    // sigmoid(0) = 0.5 on all four outputs -> degenerate centered box.
    CHECK(pred.box == Box{31.5, 31.5, 32.5, 32.5});
  }
  SUBCASE("deterministic and advances frame index and history") {
    Prediction p1, p2;
    const TrackerState s1 =
        tracker_step(initial_state(net), input, net, img_w, img_h, &p1);
    const TrackerState s2 =
        tracker_step(initial_state(net), input, net, img_w, img_h, &p2);
    CHECK(p1.box == p2.box);
    CHECK(s1.h == s2.h);
    CHECK(s1.frame_index == 1);
    CHECK(p1.frame_index == 1);
    REQUIRE(s1.history.size() == 1);
    CHECK(s1.history[0] == p1.box);

    const TrackerState s3 = tracker_step(s1, input, net, img_w, img_h, nullptr);
    const TrackerState s4 = tracker_step(s3, input, net, img_w, img_h, nullptr);
    CHECK(s4.frame_index == 3);
    CHECK(s4.history.size() == 2);  // capped at the last two predictions
  }
  SUBCASE("resuming from a saved state replays identically") {
    TrackerState cont = initial_state(net);
    std::vector<Box> boxes_cont;
    for (int t = 0; t < 4; ++t) {
      Prediction p;
      cont = tracker_step(cont, input, net, img_w, img_h, &p);
      boxes_cont.push_back(p.box);
    }
    TrackerState first = initial_state(net);
    first = tracker_step(first, input, net, img_w, img_h, nullptr);
    first = tracker_step(first, input, net, img_w, img_h, nullptr);
    TrackerState resumed = first;  // copy is the whole state
    std::vector<Box> boxes_resumed;
    for (int t = 0; t < 2; ++t) {
      Prediction p;
      resumed = tracker_step(resumed, input, net, img_w, img_h, &p);
      boxes_resumed.push_back(p.box);
    }
    CHECK(boxes_resumed[0] == boxes_cont[2]);
    CHECK(boxes_resumed[1] == boxes_cont[3]);
  }
  SUBCASE("input size mismatch rejected") {
    CHECK_THROWS_AS(tracker_step(initial_state(net), nn::Vec(7, 0.0), net,
                                 img_w, img_h, nullptr),
                    std::invalid_argument);
  }
}

TEST_CASE("tracker_loss hand values") {
  // One coordinate off by 0.5 normalized: quadratic region, 0.5 * 0.5^2.
  std::vector<Prediction> preds{{Box{50, 0, 100, 100}, 1}};
  CHECK(tracker_loss(preds, {Box{0, 0, 100, 100}}, 100, 100) ==
        doctest::Approx(0.125));
  // Off by 2.0 normalized: linear region, 2.0 - 0.5.
  preds[0].box = Box{200, 0, 100, 100};
  CHECK(tracker_loss(preds, {Box{0, 0, 100, 100}}, 100, 100) ==
        doctest::Approx(1.5));
  CHECK_THROWS_AS(tracker_loss(preds, {}, 100, 100), std::invalid_argument);
}

TEST_CASE("tracker_loss_norm masking and gradients") {
  const std::vector<nn::Vec> preds{{0.5, 0.5, 0.5, 0.5}, {0.9, 0.1, 0.2, 0.3}};
  const std::vector<std::array<double, 4>> gts{{0.5, 0.5, 0.5, 0.5},
                                               {0.1, 0.1, 0.2, 0.3}};
  std::vector<std::array<double, 4>> dnorm;

  CHECK(tracker_loss_norm(preds, gts, {1, 0}, &dnorm) == 0.0);
  CHECK(dnorm[1] == std::array<double, 4>{0, 0, 0, 0});

  const double loss = tracker_loss_norm(preds, gts, {1, 1}, &dnorm);
  CHECK(loss == doctest::Approx(0.5 * 0.8 * 0.8));
  CHECK(dnorm[1][0] == doctest::Approx(0.8));
  CHECK(dnorm[0] == std::array<double, 4>{0, 0, 0, 0});
}

TEST_CASE("3-frame unroll gradients match finite differences") {
  nn::Rng rng(3);
  const int a = 2, d = 2, rf_size = a * a * d;
  TrackerNet net(rf_size, 3, 5, 4, rng);
  const double img_w = 64, img_h = 64;
  std::vector<DetectionSet> frames;
  for (int t = 0; t < 3; ++t)
    frames.push_back(random_detections(5, a, d, img_w, img_h, rng));
  const std::vector<std::array<double, 4>> gts{
      {0.2, 0.3, 0.4, 0.5}, {0.25, 0.3, 0.45, 0.5}, {0.3, 0.35, 0.5, 0.55}};
  const std::vector<char> mask{1, 0, 1};  // middle frame occluded

  auto loss = [&] {
    TrackerState state = initial_state(net);
    std::vector<nn::Vec> norms;
    for (const auto& dets : frames) {
      StepCache sc;
      state = tracker_step(state, pack_input(dets, img_w, img_h, net), net,
                           img_w, img_h, nullptr, &sc);
      norms.push_back(sc.norm4);
    }
    return tracker_loss_norm(norms, gts, mask, nullptr);
  };

  // Analytic pass: forward with caches, then BPTT with pack backward.
  TrackerState state = initial_state(net);
  std::vector<StepCache> caches(3);
  std::vector<PackCache> packs(3);
  std::vector<nn::Vec> norms;
  for (int t = 0; t < 3; ++t) {
    state = tracker_step(state, pack_input(frames[t], img_w, img_h, net, packs[t]),
                         net, img_w, img_h, nullptr, &caches[t]);
    norms.push_back(caches[t].norm4);
  }
  std::vector<std::array<double, 4>> dnorm;
  tracker_loss_norm(norms, gts, mask, &dnorm);
  for (nn::ParamBlock* b : {&net.proj.w, &net.proj.b, &net.cell.wx, &net.cell.wh,
                            &net.cell.b, &net.head.w, &net.head.b})
    b->zero_grad();
  TrackerGradState gs;
  for (int t = 2; t >= 0; --t) {
    nn::Vec dinput;
    tracker_step_backward(net, caches[t], dnorm[t], gs, &dinput);
    pack_backward(packs[t], dinput, net);
  }

  std::mt19937_64 check_rng(4);
  CHECK(fd_max_rel_err(net.proj.w, net.proj.w.g, loss, check_rng, 20) < 1e-4);
  CHECK(fd_max_rel_err(net.cell.wx, net.cell.wx.g, loss, check_rng, 30) < 1e-4);
  CHECK(fd_max_rel_err(net.cell.wh, net.cell.wh.g, loss, check_rng, 20) < 1e-4);
  CHECK(fd_max_rel_err(net.cell.b, net.cell.b.g, loss, check_rng, 8) < 1e-4);
  CHECK(fd_max_rel_err(net.head.w, net.head.w.g, loss, check_rng, 10) < 1e-4);
  CHECK(fd_max_rel_err(net.head.b, net.head.b.g, loss, check_rng, 4) < 1e-4);
}
