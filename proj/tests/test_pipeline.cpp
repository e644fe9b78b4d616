#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "nltrack/pipeline.hpp"

using namespace nltrack;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.backbone_channels = {4, 8};
  c.anchor_sizes = {8.0, 12.0};
  c.anchor_ratios = {1.0, 0.5};
  c.rpn_mid = 8;
  c.pre_nms_k = 32;
  c.post_nms_k = 8;
  c.roi_size = 3;
  c.embed_dim = 16;
  c.top_n = 3;
  c.feature_proj = 8;
  c.tracker_hidden = 8;
  c.max_side = 64.0;
  return c;
}

std::vector<std::string> tiny_vocab() {
  return {"track", "the", "red", "square", "blue", "circle"};
}

std::vector<VideoSample> tiny_dataset(int videos, int frames) {
  std::vector<VideoSample> out;
  for (int i = 0; i < videos; ++i) {
    SynthConfig sc;
    sc.canvas = 32;
    sc.frames = frames;
    sc.distractors = 1;
    sc.seed = 100 + i;
    out.push_back(generate_synthetic(sc));
  }
  return out;
}

std::vector<std::uint64_t> hashes(Model& m,
                                  std::vector<nn::ParamBlock*> blocks) {
  std::vector<std::uint64_t> h;
  for (const auto* b : blocks) h.push_back(nn::block_hash(*b));
  return h;
  (void)m;
}

struct TempFile {
  fs::path path;
  explicit TempFile(const std::string& name)
      : path(fs::temp_directory_path() / name) {}
  ~TempFile() { fs::remove(path); }
};

}  // namespace

TEST_CASE("config fingerprints distinguish configurations") {
  CHECK(desk_config().fingerprint() == desk_config().fingerprint());
  CHECK(desk_config().fingerprint() != full_config().fingerprint());
  ModelConfig tweaked = desk_config();
  tweaked.roi_size = 5;
  CHECK(tweaked.fingerprint() != desk_config().fingerprint());
  // Desk and full scale differ only in the config values.
  CHECK(full_config().max_side == 1333.0);
  CHECK(full_config().anchor_sizes.size() == 5);
}

TEST_CASE("init_model is seed-deterministic") {
  Model a = init_model(tiny_config(), tiny_vocab(), 7);
  Model b = init_model(tiny_config(), tiny_vocab(), 7);
  Model c = init_model(tiny_config(), tiny_vocab(), 8);
  CHECK(hashes(a, a.all_blocks()) == hashes(b, b.all_blocks()));
  CHECK(hashes(a, a.all_blocks()) != hashes(c, c.all_blocks()));
  CHECK(a.stage == Stage::fresh);
}

TEST_CASE("checkpoint save/load round-trips bit-identically") {
  TempFile ckpt("nltrack_ckpt_roundtrip.bin");
  Model m = init_model(tiny_config(), tiny_vocab(), 3);
  m.stage = Stage::language;
  save_checkpoint(m, ckpt.path);
  Model back = load_checkpoint(ckpt.path);

  CHECK(back.stage == Stage::language);
  CHECK(back.cfg.fingerprint() == m.cfg.fingerprint());
  CHECK(back.table.words == m.table.words);
  const auto ba = back.all_blocks();
  const auto ma = m.all_blocks();
  REQUIRE(ba.size() == ma.size());
  for (std::size_t i = 0; i < ba.size(); ++i) {
    CHECK(ba[i]->name == ma[i]->name);
    CHECK(ba[i]->w == ma[i]->w);  // exact: parameters are f32-valued
  }

  // Stability: a second save/load cycle produces the same bytes on disk.
  TempFile again("nltrack_ckpt_again.bin");
  save_checkpoint(back, again.path);
  std::ifstream f1(ckpt.path, std::ios::binary), f2(again.path, std::ios::binary);
  const std::string b1((std::istreambuf_iterator<char>(f1)), {});
  const std::string b2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(b1 == b2);
}

TEST_CASE("checkpoint corruption is reported distinctly") {
  TempFile ckpt("nltrack_ckpt_corrupt.bin");
  Model m = init_model(tiny_config(), tiny_vocab(), 3);
  save_checkpoint(m, ckpt.path);
  std::ifstream in(ckpt.path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  in.close();

  auto rewrite = [&](const std::string& b) {
    std::ofstream out(ckpt.path, std::ios::binary | std::ios::trunc);
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
  };

  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_checkpoint(ckpt.path.string() + ".nope"),
                    CheckpointError);
  }
  SUBCASE("bad magic") {
    std::string b = bytes;
    b[0] = 'X';
    rewrite(b);
    CHECK_THROWS_WITH_AS(load_checkpoint(ckpt.path),
                         doctest::Contains("magic"), CheckpointError);
  }
  SUBCASE("unsupported version") {
    std::string b = bytes;
    b[8] = 99;
    rewrite(b);
    CHECK_THROWS_WITH_AS(load_checkpoint(ckpt.path),
                         doctest::Contains("version"), CheckpointError);
  }
  SUBCASE("fingerprint mismatch") {
    std::string b = bytes;
    b[12] ^= 0x5a;  // stored fingerprint no longer matches the config
    rewrite(b);
    CHECK_THROWS_WITH_AS(load_checkpoint(ckpt.path),
                         doctest::Contains("fingerprint"), CheckpointError);
  }
  SUBCASE("truncation") {
    rewrite(bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_WITH_AS(load_checkpoint(ckpt.path),
                         doctest::Contains("end of file"), CheckpointError);
  }
}

TEST_CASE("stage order is enforced") {
  const auto data = tiny_dataset(1, 4);
  TrainConfig tc;
  tc.lr = 0.0;
  tc.iters_rpn = tc.iters_language = tc.iters_tracker = 1;

  Model m = init_model(tiny_config(), tiny_vocab(), 1);
  CHECK_THROWS_AS(train_stage_language(m, data, tc), std::runtime_error);
  CHECK_THROWS_AS(train_stage_tracker(m, data, tc), std::runtime_error);
  CHECK_THROWS_AS(track_video(data[0].frames, data[0].query, {}, m),
                  CheckpointError);

  train_stage_rpn(m, data, tc);
  CHECK(m.stage == Stage::rpn);
  CHECK_THROWS_AS(train_stage_rpn(m, data, tc), std::runtime_error);
  CHECK_THROWS_AS(train_stage_tracker(m, data, tc), std::runtime_error);

  train_stage_language(m, data, tc);
  CHECK(m.stage == Stage::language);
  train_stage_tracker(m, data, tc);
  CHECK(m.stage == Stage::complete);
  CHECK_NOTHROW(track_video(data[0].frames, data[0].query, {}, m));

  CHECK_THROWS_AS(train_stage_rpn(m, {}, tc), std::invalid_argument);
}

TEST_CASE("zero learning rate leaves every parameter bit-identical") {
  const auto data = tiny_dataset(2, 4);
  TrainConfig tc;
  tc.lr = 0.0;
  tc.iters_rpn = tc.iters_language = 5;
  tc.iters_tracker = 2;

  Model m = init_model(tiny_config(), tiny_vocab(), 2);
  const auto before = hashes(m, m.all_blocks());
  train_stage_rpn(m, data, tc);
  train_stage_language(m, data, tc);
  train_stage_tracker(m, data, tc);
  CHECK(hashes(m, m.all_blocks()) == before);
  CHECK(m.stage == Stage::complete);
}

TEST_CASE("later stages freeze earlier parameters exactly") {
  const auto data = tiny_dataset(2, 4);
  TrainConfig tc;
  tc.lr = 0.05;
  tc.iters_rpn = tc.iters_language = 8;
  tc.iters_tracker = 2;

  Model m = init_model(tiny_config(), tiny_vocab(), 4);
  train_stage_rpn(m, data, tc);
  const auto rpn_after_1 = hashes(m, m.rpn_blocks());

  train_stage_language(m, data, tc);
  CHECK(hashes(m, m.rpn_blocks()) == rpn_after_1);
  const auto lang_after_2 = hashes(m, m.language_blocks());

  train_stage_tracker(m, data, tc);
  CHECK(hashes(m, m.rpn_blocks()) == rpn_after_1);
  CHECK(hashes(m, m.language_blocks()) == lang_after_2);
}

TEST_CASE("training is deterministic for fixed seeds") {
  const auto data = tiny_dataset(2, 4);
  TrainConfig tc;
  tc.lr = 0.05;
  tc.iters_rpn = tc.iters_language = 4;
  tc.iters_tracker = 1;
  tc.seed = 9;

  auto run = [&] {
    Model m = init_model(tiny_config(), tiny_vocab(), 4);
    train_stage_rpn(m, data, tc);
    train_stage_language(m, data, tc);
    train_stage_tracker(m, data, tc);
    return m;
  };
  Model a = run();
  Model b = run();
  CHECK(hashes(a, a.all_blocks()) == hashes(b, b.all_blocks()));

  TrainConfig other = tc;
  other.seed = 10;
  Model c = init_model(tiny_config(), tiny_vocab(), 4);
  train_stage_rpn(c, data, other);
  CHECK(hashes(a, a.rpn_blocks()) != hashes(c, c.rpn_blocks()));
}

TEST_CASE("track_video") {
  const auto data = tiny_dataset(1, 6);
  TrainConfig tc;
  tc.lr = 0.0;  // stage markers only; weights stay at init
  tc.iters_rpn = tc.iters_language = tc.iters_tracker = 1;
  Model m = init_model(tiny_config(), tiny_vocab(), 5);
  train_stage_rpn(m, data, tc);
  train_stage_language(m, data, tc);
  train_stage_tracker(m, data, tc);
  const auto& video = data[0];

  SUBCASE("one prediction per frame, 1-based frame indices") {
    const auto preds = track_video(video.frames, video.query, {}, m);
    REQUIRE(preds.size() == video.frames.size());
    for (std::size_t t = 0; t < preds.size(); ++t) {
      CHECK(preds[t].frame_index == static_cast<int>(t) + 1);
      CHECK(preds[t].box.valid());
      CHECK(preds[t].box.x1 >= 0.0);
      CHECK(preds[t].box.x2 <= video.frames[0].w);
    }
  }
  SUBCASE("init box is returned exactly on the first frame") {
    const Box init{4, 5, 14, 15};
    const auto preds = track_video(video.frames, video.query, init, m);
    CHECK(preds[0].box == init);
    CHECK(preds[0].frame_index == 1);
  }
  SUBCASE("bit-identical across repeated runs") {
    const auto a = track_video(video.frames, video.query, {}, m);
    const auto b = track_video(video.frames, video.query, {}, m);
    REQUIRE(a.size() == b.size());
    for (std::size_t t = 0; t < a.size(); ++t) CHECK(a[t].box == b[t].box);
  }
  SUBCASE("per-frame timings are recorded") {
    std::vector<double> secs;
    track_video(video.frames, video.query, {}, m, &secs);
    REQUIRE(secs.size() == video.frames.size());
    for (double s : secs) CHECK(s >= 0.0);
  }
  SUBCASE("frame errors carry the frame number") {
    const Box outside{200, 200, 210, 210};
    CHECK_THROWS_WITH_AS(track_video(video.frames, video.query, outside, m),
                         doctest::Contains("frame 1"), std::runtime_error);
  }
  SUBCASE("empty input rejected") {
    CHECK_THROWS_AS(track_video({}, video.query, {}, m), std::invalid_argument);
  }
  SUBCASE("a loaded checkpoint tracks identically") {
    TempFile ckpt("nltrack_ckpt_track.bin");
    save_checkpoint(m, ckpt.path);
    Model loaded = load_checkpoint(ckpt.path);
    const auto a = track_video(video.frames, video.query, {}, m);
    const auto b = track_video(video.frames, video.query, {}, loaded);
    for (std::size_t t = 0; t < a.size(); ++t) CHECK(a[t].box == b[t].box);
  }
}
