#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "nltrack/data.hpp"
#include "nltrack/detection.hpp"
#include "nltrack/language.hpp"
#include "nltrack/tracker.hpp"
#include "nltrack/vision.hpp"

namespace nltrack {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Stage : std::uint32_t {
  fresh = 0,
  rpn = 1,
  language = 2,
  tracker = 3,
  complete = 4,
};

struct ModelConfig {
  std::vector<int> backbone_channels{24, 32, 32};
  std::vector<double> anchor_sizes{10.0, 16.0, 24.0};
  std::vector<double> anchor_ratios{1.0, 0.5, 2.0};
  int rpn_mid = 32;
  int pre_nms_k = 256;
  int post_nms_k = 64;
  double nms_threshold = 0.7;
  int roi_size = 7;     // A
  int embed_dim = 300;  // sentence embedding size
  int top_n = 5;        // N
  int feature_proj = 64;  // P
  int tracker_hidden = 64;
  double max_side = 128.0;

  int depth() const { return backbone_channels.back(); }
  int rf_size() const { return roi_size * roi_size * depth(); }
  std::uint64_t fingerprint() const;
  DetectConfig detect_config() const;
};

// Desk scale trains on CPU in minutes; full scale is the same code with
// production capacity.
ModelConfig desk_config();
ModelConfig full_config();

struct Model {
  ModelConfig cfg;
  Backbone backbone;
  RpnHead rpn;
  EmbeddingTable table;
  SentenceEncoder encoder;
  SimilarityHead sim;
  TrackerNet tracker;
  Stage stage = Stage::fresh;

  std::vector<nn::ParamBlock*> rpn_blocks();
  std::vector<nn::ParamBlock*> language_blocks();
  std::vector<nn::ParamBlock*> tracker_blocks();
  std::vector<nn::ParamBlock*> all_blocks();
  void zero_grads();
};

Model init_model(const ModelConfig& cfg, const std::vector<std::string>& vocab,
                 std::uint64_t seed);

struct TrainConfig {
  double lr = 0.01;
  int iters_rpn = 2000;
  int iters_language = 2000;
  int iters_tracker = 1000;
  int bptt = 16;
  std::uint64_t seed = 0;
};

void train_stage_rpn(Model& model, const std::vector<VideoSample>& data,
                     const TrainConfig& cfg);
void train_stage_language(Model& model, const std::vector<VideoSample>& data,
                          const TrainConfig& cfg);
void train_stage_tracker(Model& model, const std::vector<VideoSample>& data,
                         const TrainConfig& cfg);

// One prediction per frame. With an initial box the first prediction is that
// box exactly and no gating is applied to initialize the tracker.
std::vector<Prediction> track_video(const std::vector<Image>& frames,
                                    const std::string& query,
                                    const std::optional<Box>& init_box,
                                    const Model& model);

// Per-frame wall-clock seconds recorded by the last argument when non-null.
std::vector<Prediction> track_video(const std::vector<Image>& frames,
                                    const std::string& query,
                                    const std::optional<Box>& init_box,
                                    const Model& model,
                                    std::vector<double>* frame_seconds);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace nltrack
