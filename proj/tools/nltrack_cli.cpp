#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "nltrack/evaluation.hpp"
#include "nltrack/pipeline.hpp"

namespace fs = std::filesystem;
using namespace nltrack;

namespace {

Box parse_box_arg(const std::string& s) {
  double f[4];
  char c[3];
  std::istringstream is(s);
  is >> f[0] >> c[0] >> f[1] >> c[1] >> f[2] >> c[2] >> f[3];
  if (!is || c[0] != ',' || c[1] != ',' || c[2] != ',')
    throw CLI::ValidationError("--init-box", "expected x,y,w,h");
  return box_from_xywh(f[0], f[1], f[2], f[3]);
}

std::vector<std::string> dataset_vocabulary(const std::vector<VideoSample>& data) {
  std::set<std::string> words;
  for (const auto& v : data)
    for (const auto& tok : tokenize(v.query).tokens) words.insert(tok);
  return {words.begin(), words.end()};
}

int run_synth(const std::string& out, int videos, int frames, int canvas,
              int distractors, int occlude_start, int occlude_len,
              std::uint64_t seed) {
  nn::Rng rng(seed);
  for (int i = 0; i < videos; ++i) {
    SynthConfig cfg;
    cfg.canvas = canvas;
    cfg.frames = frames;
    cfg.distractors = distractors;
    cfg.occlude_start = occlude_start;
    cfg.occlude_len = occlude_len;
    cfg.seed = seed * 1000003ull + static_cast<std::uint64_t>(i);
    cfg.target_color = synth_colors()[rng.uniform_int(0, static_cast<int>(synth_colors().size()) - 1)];
    cfg.target_shape = synth_shapes()[rng.uniform_int(0, static_cast<int>(synth_shapes().size()) - 1)];
    cfg.vx = rng.uniform(-2.0, 2.0);
    cfg.vy = rng.uniform(-2.0, 2.0);
    VideoSample v = generate_synthetic(cfg);
    v.id = "video_" + std::to_string(i);
    write_benchmark_video(v, out);
  }
  std::cout << "wrote " << videos << " videos under " << out << "\n";
  return 0;
}

int run_train(const std::string& data_dir, const std::string& out,
              const std::string& embeddings, bool full, TrainConfig tc) {
  auto data = load_benchmark_dir(data_dir);
  for (auto& v : data) v.load_frames();
  // Resize per the configured cap before training.
  ModelConfig mc = full ? full_config() : desk_config();
  for (auto& v : data) {
    for (std::size_t t = 0; t < v.frames.size(); ++t) {
      auto [img, scale] = preprocess(v.frames[t], mc.max_side);
      v.frames[t] = std::move(img);
      if (v.gt[t].present && scale != 1.0) {
        Box& b = v.gt[t].box;
        b = Box{b.x1 * scale, b.y1 * scale, b.x2 * scale, b.y2 * scale};
      }
    }
  }

  Model model = [&] {
    if (!embeddings.empty()) {
      Model m = init_model(mc, {}, tc.seed);
      m.table = load_embedding_text(embeddings);
      return m;
    }
    return init_model(mc, dataset_vocabulary(data), tc.seed);
  }();

  std::cout << "stage 1/3: rpn (" << tc.iters_rpn << " iterations)\n";
  train_stage_rpn(model, data, tc);
  std::cout << "stage 2/3: language (" << tc.iters_language << " iterations)\n";
  train_stage_language(model, data, tc);
  std::cout << "stage 3/3: tracker (" << tc.iters_tracker << " iterations)\n";
  train_stage_tracker(model, data, tc);
  save_checkpoint(model, out);
  std::cout << "checkpoint written to " << out << "\n";
  return 0;
}

int run_track(const std::string& video_dir, const std::string& checkpoint,
              std::string query, const std::string& init_box_arg,
              const std::string& output) {
  const Model model = load_checkpoint(checkpoint);

  const fs::path dir(video_dir);
  VideoSample v;
  v.id = dir.filename().string();
  auto loaded = load_benchmark_dir(dir.parent_path());
  auto it = std::find_if(loaded.begin(), loaded.end(),
                         [&](const VideoSample& s) { return s.id == v.id; });
  if (it == loaded.end())
    throw DataError("video directory not found: " + video_dir);
  v = std::move(*it);
  v.load_frames();
  if (query.empty()) query = v.query;

  std::vector<Image> frames;
  std::vector<double> scales;
  for (const auto& f : v.frames) {
    auto [img, scale] = preprocess(f, model.cfg.max_side);
    frames.push_back(std::move(img));
    scales.push_back(scale);
  }

  std::optional<Box> init;
  if (!init_box_arg.empty()) {
    Box b = parse_box_arg(init_box_arg);
    init = Box{b.x1 * scales[0], b.y1 * scales[0], b.x2 * scales[0],
               b.y2 * scales[0]};
  }

  const auto preds = track_video(frames, query, init, model);
  PredictionList out;
  for (std::size_t t = 0; t < preds.size(); ++t) {
    const Box& b = preds[t].box;
    const double s = scales[t];
    out.push_back(Box{b.x1 / s, b.y1 / s, b.x2 / s, b.y2 / s});
  }
  write_predictions(out, output);
  std::cout << "wrote " << out.size() << " predictions to " << output << "\n";
  return 0;
}

int run_eval(const std::string& preds_dir, const std::string& data_dir,
             const std::string& out_dir) {
  const auto data = load_benchmark_dir(data_dir);
  fs::create_directories(out_dir);

  std::vector<MetricCurve> success, precision, norm_precision;
  for (const auto& v : data) {
    fs::path pred_path = fs::path(preds_dir) / (v.id + ".txt");
    if (!fs::exists(pred_path) && fs::is_regular_file(preds_dir))
      pred_path = preds_dir;  // single-file mode
    const auto preds = read_predictions(pred_path);
    if (preds.size() != v.gt.size())
      throw EvalError("video '" + v.id + "': " + std::to_string(preds.size()) +
                      " predictions for " + std::to_string(v.gt.size()) +
                      " frames");
    success.push_back(success_curve(preds, v.gt));
    precision.push_back(precision_curve(preds, v.gt, false));
    norm_precision.push_back(precision_curve(preds, v.gt, true));
    const auto series = iou_over_time(preds, v.gt);
    std::ofstream iou_csv(fs::path(out_dir) / ("iou_time_" + v.id + ".csv"));
    iou_csv << "frame,iou\n";
    for (std::size_t t = 0; t < series.iou.size(); ++t) {
      iou_csv << (t + 1) << ',';
      if (series.iou[t]) iou_csv << *series.iou[t];
      else iou_csv << "absent";
      iou_csv << '\n';
    }
  }

  const auto s = average_curves(success);
  const auto p = average_curves(precision);
  const auto np = average_curves(norm_precision);
  write_curve_csv(s, fs::path(out_dir) / "success.csv");
  write_curve_csv(p, fs::path(out_dir) / "precision.csv");
  write_curve_csv(np, fs::path(out_dir) / "norm_precision.csv");
  write_summary({{"success_auc", s.auc},
                 {"precision_at_20", curve_value_at(p, 20.0)},
                 {"precision_auc", p.auc},
                 {"norm_precision_auc", np.auc}},
                fs::path(out_dir) / "summary.csv");
  std::cout << "success_auc " << s.auc << "\n"
            << "precision_at_20 " << curve_value_at(p, 20.0) << "\n"
            << "precision_auc " << p.auc << "\n"
            << "norm_precision_auc " << np.auc << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Language-conditioned tracking-by-detection toolkit"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  std::string synth_out;
  int videos = 1, frames = 30, canvas = 64, distractors = 2;
  int occlude_start = -1, occlude_len = 0;
  std::uint64_t seed = 0;
  synth->add_option("--out", synth_out, "output dataset root")->required();
  synth->add_option("--videos", videos);
  synth->add_option("--frames", frames);
  synth->add_option("--canvas", canvas);
  synth->add_option("--distractors", distractors);
  synth->add_option("--occlude-start", occlude_start);
  synth->add_option("--occlude-len", occlude_len);
  synth->add_option("--seed", seed);

  // train
  auto* train = app.add_subcommand("train", "run the three-stage curriculum");
  std::string train_data, train_out, embeddings;
  bool full = false;
  TrainConfig tc;
  train->add_option("--data", train_data, "dataset root")->required();
  train->add_option("--out", train_out, "checkpoint path")->required();
  train->add_option("--embeddings", embeddings, "pretrained embedding text file");
  train->add_flag("--full", full, "full-scale model configuration");
  train->add_option("--lr", tc.lr);
  train->add_option("--iters-rpn", tc.iters_rpn);
  train->add_option("--iters-language", tc.iters_language);
  train->add_option("--iters-tracker", tc.iters_tracker);
  train->add_option("--bptt", tc.bptt);
  train->add_option("--seed", tc.seed);

  // track
  auto* track = app.add_subcommand("track", "track one video");
  std::string video_dir, checkpoint, query, init_box_arg, output = "predictions.txt";
  track->add_option("--video", video_dir, "video directory (benchmark layout)")
      ->required();
  track->add_option("--checkpoint", checkpoint)->required();
  track->add_option("--query", query, "overrides the video's nlp.txt");
  track->add_option("--init-box", init_box_arg, "x,y,w,h (optional)");
  track->add_option("--output", output);

  // eval
  auto* eval = app.add_subcommand("eval", "score predictions against a dataset");
  std::string preds, eval_data, eval_out = "report";
  eval->add_option("--preds", preds, "predictions dir (<id>.txt) or single file")
      ->required();
  eval->add_option("--data", eval_data, "dataset root")->required();
  eval->add_option("--out", eval_out, "report directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed())
      return run_synth(synth_out, videos, frames, canvas, distractors,
                       occlude_start, occlude_len, seed);
    if (train->parsed())
      return run_train(train_data, train_out, embeddings, full, tc);
    if (track->parsed())
      return run_track(video_dir, checkpoint, query, init_box_arg, output);
    if (eval->parsed()) return run_eval(preds, eval_data, eval_out);
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return 4;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const EvalError& e) {
    std::cerr << "evaluation error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
