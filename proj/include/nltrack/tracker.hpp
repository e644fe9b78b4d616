#pragma once

#include <array>
#include <vector>

#include "nltrack/detection.hpp"
#include "nltrack/geometry.hpp"
#include "nltrack/nn.hpp"

namespace nltrack {

struct Prediction {
  Box box;
  int frame_index = 0;
};

// Detection-set packing projection + recurrent cell + 4-neuron output head.
struct TrackerNet {
  nn::Linear proj;    // flattened region feature -> p dims
  nn::LstmCell cell;  // top_n * (5 + p) -> hidden
  nn::Linear head;    // hidden -> 4 (sigmoid, normalized corners)
  int top_n = 5, p = 64;

  TrackerNet() = default;
  TrackerNet(int rf_size, int p_dim, int n, int hidden, nn::Rng& rng);
  int input_size() const { return top_n * (5 + p); }
};

struct TrackerState {
  nn::Vec h, c;
  std::vector<Box> history;  // last two predictions, most recent last
  int frame_index = 0;
};

TrackerState initial_state(const TrackerNet& net);

struct PackCache {
  std::vector<nn::Vec> rf_flat;
};

// Attenuation applied to the projected region-feature block when packing.
// The packed vector mixes 4 + 1 geometry/score dims with p projected feature
// dims per detection; at initialization the feature block would otherwise
// dominate the recurrent cell's pre-activations ~sqrt(top_n * p / 5)-fold and
// the coordinate signal never trains through. The projection itself stays
// learnable, so capacity is unchanged.
inline constexpr double kPackFeatureScale = 0.1;

// Per detection in rank order: normalized corners, fused score, attenuated
// projected region feature; concatenated.
nn::Vec pack_input(const DetectionSet& d, double img_w, double img_h,
                   const TrackerNet& net);
nn::Vec pack_input(const DetectionSet& d, double img_w, double img_h,
                   const TrackerNet& net, PackCache& cache);
void pack_backward(const PackCache& cache, const nn::Vec& dinput,
                   TrackerNet& net);

struct StepCache {
  nn::LstmCell::Cache cell;
  nn::Vec norm4;  // sigmoid outputs, the training-time prediction
};

// Enforces corner ordering and a 1-px minimum extent inside the image.
Box denormalize_prediction(const nn::Vec& norm4, double img_w, double img_h);

TrackerState tracker_step(const TrackerState& state, const nn::Vec& input,
                          const TrackerNet& net, double img_w, double img_h,
                          Prediction* prediction, StepCache* cache = nullptr);

// Gradient flowing backwards through the recurrent unroll.
struct TrackerGradState {
  nn::Vec dh, dc;
};

void tracker_step_backward(TrackerNet& net, const StepCache& cache,
                           const std::array<double, 4>& dnorm4,
                           TrackerGradState& gs, nn::Vec* dinput);

// Smoothed L1 in normalized coordinates, summed over frames and coordinates.
double tracker_loss(const std::vector<Prediction>& predictions,
                    const std::vector<Box>& gts, double img_w, double img_h);

// Training-time variant on raw normalized outputs; masked frames contribute
// nothing. Gradients per step are written to `dnorm` when non-null.
double tracker_loss_norm(const std::vector<nn::Vec>& norm_preds,
                         const std::vector<std::array<double, 4>>& norm_gts,
                         const std::vector<char>& mask,
                         std::vector<std::array<double, 4>>* dnorm);

}  // namespace nltrack
