#include "nltrack/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_map>

namespace nltrack {

namespace {

void append_bytes(std::string& buf, const void* p, std::size_t n) {
  buf.append(static_cast<const char*>(p), n);
}
template <typename T>
void append_pod(std::string& buf, T v) {
  append_bytes(buf, &v, sizeof v);
}

std::string serialize_config(const ModelConfig& c) {
  std::string buf;
  append_pod<std::uint32_t>(buf, static_cast<std::uint32_t>(c.backbone_channels.size()));
  for (int ch : c.backbone_channels) append_pod<std::int32_t>(buf, ch);
  append_pod<std::uint32_t>(buf, static_cast<std::uint32_t>(c.anchor_sizes.size()));
  for (double s : c.anchor_sizes) append_pod<double>(buf, s);
  append_pod<std::uint32_t>(buf, static_cast<std::uint32_t>(c.anchor_ratios.size()));
  for (double r : c.anchor_ratios) append_pod<double>(buf, r);
  append_pod<std::int32_t>(buf, c.rpn_mid);
  append_pod<std::int32_t>(buf, c.pre_nms_k);
  append_pod<std::int32_t>(buf, c.post_nms_k);
  append_pod<double>(buf, c.nms_threshold);
  append_pod<std::int32_t>(buf, c.roi_size);
  append_pod<std::int32_t>(buf, c.embed_dim);
  append_pod<std::int32_t>(buf, c.top_n);
  append_pod<std::int32_t>(buf, c.feature_proj);
  append_pod<std::int32_t>(buf, c.tracker_hidden);
  append_pod<double>(buf, c.max_side);
  return buf;
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 1099511628211ull;
  }
  return h;
}

constexpr char kMagic[8] = {'N', 'L', 'T', 'R', 'A', 'C', 'K', '1'};
constexpr std::uint32_t kVersion = 1;

struct Reader {
  std::ifstream in;
  explicit Reader(const std::filesystem::path& p)
      : in(p, std::ios::binary) {
    if (!in) throw CheckpointError("cannot open checkpoint: " + p.string());
  }
  void bytes(void* dst, std::size_t n) {
    in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (!in) throw CheckpointError("corrupt checkpoint: unexpected end of file");
  }
  template <typename T>
  T pod() {
    T v;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str(std::size_t n) {
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
};

// Present-gt (video, frame) index pairs for the per-frame training stages.
std::vector<std::pair<int, int>> present_samples(
    const std::vector<VideoSample>& data) {
  std::vector<std::pair<int, int>> out;
  for (std::size_t v = 0; v < data.size(); ++v)
    for (std::size_t f = 0; f < data[v].frames.size(); ++f)
      if (data[v].gt[f].present)
        out.emplace_back(static_cast<int>(v), static_cast<int>(f));
  return out;
}

}  // namespace

std::uint64_t ModelConfig::fingerprint() const {
  return fnv1a(serialize_config(*this));
}

DetectConfig ModelConfig::detect_config() const {
  DetectConfig d;
  d.anchor_sizes = anchor_sizes;
  d.anchor_ratios = anchor_ratios;
  d.pre_nms_k = pre_nms_k;
  d.post_nms_k = post_nms_k;
  d.nms_threshold = nms_threshold;
  d.roi_size = roi_size;
  d.top_n = top_n;
  return d;
}

ModelConfig desk_config() { return ModelConfig{}; }

ModelConfig full_config() {
  ModelConfig c;
  c.backbone_channels = {32, 64, 128, 256};
  c.anchor_sizes = default_anchor_sizes();
  c.anchor_ratios = default_anchor_ratios();
  c.rpn_mid = 256;
  c.pre_nms_k = 2000;
  c.post_nms_k = 300;
  c.tracker_hidden = 256;
  c.max_side = 1333.0;
  return c;
}

std::vector<nn::ParamBlock*> Model::rpn_blocks() {
  std::vector<nn::ParamBlock*> b;
  for (auto& c : backbone.convs) {
    b.push_back(&c.w);
    b.push_back(&c.b);
  }
  for (nn::Conv2d* c : {&rpn.conv, &rpn.cls, &rpn.reg}) {
    b.push_back(&c->w);
    b.push_back(&c->b);
  }
  return b;
}

std::vector<nn::ParamBlock*> Model::language_blocks() {
  return {&table.vectors, &table.unknown, &encoder.cell.wx, &encoder.cell.wh,
          &encoder.cell.b, &sim.proj.w,   &sim.proj.b,      &sim.out.w,
          &sim.out.b};
}

std::vector<nn::ParamBlock*> Model::tracker_blocks() {
  return {&tracker.proj.w, &tracker.proj.b, &tracker.cell.wx,
          &tracker.cell.wh, &tracker.cell.b, &tracker.head.w, &tracker.head.b};
}

std::vector<nn::ParamBlock*> Model::all_blocks() {
  auto b = rpn_blocks();
  for (auto* p : language_blocks()) b.push_back(p);
  for (auto* p : tracker_blocks()) b.push_back(p);
  return b;
}

void Model::zero_grads() {
  for (auto* b : all_blocks()) b->zero_grad();
}

Model init_model(const ModelConfig& cfg, const std::vector<std::string>& vocab,
                 std::uint64_t seed) {
  nn::Rng rng(seed);
  Model m;
  m.cfg = cfg;
  m.backbone = Backbone(cfg.backbone_channels, rng);
  const int per_cell =
      static_cast<int>(cfg.anchor_sizes.size() * cfg.anchor_ratios.size());
  m.rpn = RpnHead(cfg.depth(), cfg.rpn_mid, per_cell, rng);
  m.table = make_embedding_table(vocab, cfg.embed_dim, rng);
  m.encoder = SentenceEncoder(cfg.embed_dim, rng);
  m.sim = SimilarityHead(cfg.rf_size(), cfg.embed_dim, rng);
  m.tracker = TrackerNet(cfg.rf_size(), cfg.feature_proj, cfg.top_n,
                         cfg.tracker_hidden, rng);
  return m;
}

void train_stage_rpn(Model& model, const std::vector<VideoSample>& data,
                     const TrainConfig& cfg) {
  if (data.empty()) throw std::invalid_argument("train_stage_rpn: empty dataset");
  if (model.stage != Stage::fresh)
    throw std::runtime_error("train_stage_rpn: model already past this stage");
  const auto samples = present_samples(data);
  if (samples.empty())
    throw std::invalid_argument("train_stage_rpn: no frames with ground truth");

  nn::Rng rng(cfg.seed * 1000003ull + 1);
  nn::AdaGrad opt{cfg.lr};
  auto blocks = model.rpn_blocks();
  for (int iter = 0; iter < cfg.iters_rpn; ++iter) {
    const auto [vi, fi] =
        samples[rng.uniform_int(0, static_cast<int>(samples.size()) - 1)];
    const Image& img = data[vi].frames[fi];
    model.zero_grads();

    Backbone::Cache bc;
    const FeatureMap f = model.backbone.forward(img, bc);
    const RpnHead::Raw raw = model.rpn.forward(f);
    const AnchorSet anchors = generate_anchors(
        f.h, f.w, f.stride, model.cfg.anchor_sizes, model.cfg.anchor_ratios);
    const RpnBatch batch =
        assign_rpn_targets(anchors, data[vi].gt[fi].box, 32, 64, rng);

    nn::Vec dlogits, ddeltas;
    rpn_loss(raw.logits, raw.deltas, batch, &dlogits, &ddeltas);
    nn::Vec dfeat;
    model.rpn.backward(f, raw, dlogits, ddeltas, &dfeat);
    model.backbone.backward(bc, dfeat);
    opt.step(blocks);
  }
  model.stage = Stage::rpn;
}

void train_stage_language(Model& model, const std::vector<VideoSample>& data,
                          const TrainConfig& cfg) {
  if (data.empty())
    throw std::invalid_argument("train_stage_language: empty dataset");
  if (model.stage < Stage::rpn)
    throw std::runtime_error("train_stage_language: RPN stage not trained yet");
  const auto samples = present_samples(data);
  if (samples.empty())
    throw std::invalid_argument("train_stage_language: no frames with ground truth");

  nn::Rng rng(cfg.seed * 1000003ull + 2);
  nn::AdaGrad opt{cfg.lr};
  auto blocks = model.language_blocks();
  const DetectConfig dc = model.cfg.detect_config();
  for (int iter = 0; iter < cfg.iters_language; ++iter) {
    const auto [vi, fi] =
        samples[rng.uniform_int(0, static_cast<int>(samples.size()) - 1)];
    const Image& img = data[vi].frames[fi];

    const FeatureMap f = model.backbone.forward(img);
    const AnchorSet anchors = generate_anchors(
        f.h, f.w, f.stride, model.cfg.anchor_sizes, model.cfg.anchor_ratios);
    const ProposalSet proposals =
        rpn_forward(f, anchors, model.rpn, img.w, img.h, dc.pre_nms_k,
                    dc.post_nms_k, dc.nms_threshold);
    if (proposals.boxes.empty()) continue;

    model.zero_grads();
    const Query q = tokenize(data[vi].query);
    SentenceEncoder::Cache ec;
    const nn::Vec sent = model.encoder.embed(q, model.table, ec);

    // Balance the proposal batch: post-NMS sets are dominated by proposals
    // with near-zero IoU targets, and training on all of them biases every
    // similarity toward zero. Keep all positives (IoU >= 0.5 with the ground
    // truth, plus the best-IoU proposal), an equal number of hard negatives
    // (highest-objectness non-positives -- in practice the distractor
    // objects, which force the head to discriminate appearance rather than
    // objectness), and an equal number of random negatives.
    const auto all_targets =
        target_similarity(proposals.boxes, data[vi].gt[fi].box);
    std::vector<std::size_t> pos, neg;
    std::size_t best = 0;
    for (std::size_t i = 0; i < all_targets.size(); ++i) {
      if (all_targets[i] > all_targets[best]) best = i;
      (all_targets[i] >= 0.5 ? pos : neg).push_back(i);
    }
    if (pos.empty()) pos.push_back(best);
    std::vector<std::size_t> chosen = pos;
    // Proposals arrive sorted by descending objectness, so the front of
    // `neg` holds the hard negatives.
    const std::size_t hard = std::min(pos.size(), neg.size());
    chosen.insert(chosen.end(), neg.begin(), neg.begin() + hard);
    neg.erase(neg.begin(), neg.begin() + hard);
    for (std::size_t k = 0; k < pos.size() && !neg.empty(); ++k) {
      const std::size_t j =
          rng.uniform_int(0, static_cast<int>(neg.size()) - 1);
      chosen.push_back(neg[j]);
      neg.erase(neg.begin() + j);
    }

    std::vector<SimilarityHead::Cache> caches(chosen.size());
    std::vector<double> sims(chosen.size()), targets(chosen.size());
    for (std::size_t i = 0; i < chosen.size(); ++i) {
      const RegionFeature rf =
          roi_pool(f, proposals.boxes[chosen[i]], dc.roi_size, img.w, img.h);
      sims[i] = model.sim.score(sent, rf, caches[i]);
      targets[i] = all_targets[chosen[i]];
    }
    std::vector<double> dsim;
    language_loss(sims, targets, &dsim);

    nn::Vec dsent(model.cfg.embed_dim, 0.0);
    for (std::size_t i = 0; i < caches.size(); ++i)
      model.sim.backward(sent, caches[i], dsim[i], &dsent);
    model.encoder.backward(ec, dsent, model.table);
    opt.step(blocks);
  }
  if (model.stage < Stage::language) model.stage = Stage::language;
}

void train_stage_tracker(Model& model, const std::vector<VideoSample>& data,
                         const TrainConfig& cfg) {
  if (data.empty())
    throw std::invalid_argument("train_stage_tracker: empty dataset");
  if (model.stage < Stage::language)
    throw std::runtime_error(
        "train_stage_tracker: language stage not trained yet");
  for (const auto& v : data)
    if (v.frames.size() < 2)
      throw std::invalid_argument("train_stage_tracker: sequence '" + v.id +
                                  "' shorter than 2 frames");

  nn::Rng rng(cfg.seed * 1000003ull + 3);
  nn::AdaGrad opt{cfg.lr};
  auto blocks = model.tracker_blocks();
  const DetectConfig dc = model.cfg.detect_config();

  // Everything upstream of the tracker is frozen, so the gate-independent
  // part of detection (proposals, objectness, language similarity) is
  // constant per frame and computed once up front. Gating and top-N selection
  // depend on the prediction history and are re-run cheaply per visit.
  std::unordered_map<std::string, nn::Vec> embeddings;
  auto sentence = [&](const std::string& query) -> const nn::Vec& {
    auto it = embeddings.find(query);
    if (it == embeddings.end())
      it = embeddings.emplace(query, model.encoder.embed(tokenize(query),
                                                         model.table)).first;
    return it->second;
  };

  std::vector<std::vector<FrameCandidates>> candidates(data.size());
  std::vector<std::vector<Box>> teacher_refs(data.size());
  for (std::size_t vi = 0; vi < data.size(); ++vi) {
    const VideoSample& v = data[vi];
    const nn::Vec& sent = sentence(v.query);
    auto& refs = teacher_refs[vi];  // last-known gt, carried through gaps
    for (std::size_t k = 0; k < v.frames.size(); ++k) {
      candidates[vi].push_back(detect_candidates(
          v.frames[k], sent, model.backbone, model.rpn, model.sim, dc));
      const GtEntry& g = v.gt[k];
      refs.push_back(g.present || g.box.valid()
                         ? g.box
                         : (refs.empty() ? Box{} : refs.back()));
    }
  }

  // The gate is teacher-forced from ground-truth history: the untrained
  // tracker's own predictions would gate away the correct detections and the
  // tracker collapses to regressing the dataset-mean box. (Self-forced and
  // scheduled-sampling gates were both tried and measurably hurt held-out
  // accuracy even after long training.) Inference gates on predicted history.
  for (int iter = 0; iter < cfg.iters_tracker; ++iter) {
    const int vi = rng.uniform_int(0, static_cast<int>(data.size()) - 1);
    const VideoSample& v = data[vi];
    const double w = v.frames[0].w, h = v.frames[0].h;
    const int frames = static_cast<int>(v.frames.size());

    TrackerState state = initial_state(model.tracker);
    int t = 0;
    while (t < frames) {
      const int end = std::min(t + cfg.bptt, frames);
      std::vector<PackCache> packs(end - t);
      std::vector<StepCache> steps(end - t);
      std::vector<nn::Vec> norm_preds;
      std::vector<std::array<double, 4>> norm_gts;
      std::vector<char> mask;

      for (int k = t; k < end; ++k) {
        std::optional<GateContext> gate;
        if (k >= 2)
          gate = GateContext{teacher_refs[vi][k - 1], teacher_refs[vi][k - 2]};
        const DetectionSet det =
            gate_and_select(candidates[vi][k], gate, dc, w, h);
        const nn::Vec input =
            pack_input(det, w, h, model.tracker, packs[k - t]);
        Prediction pred;
        state = tracker_step(state, input, model.tracker, w, h, &pred,
                             &steps[k - t]);
        norm_preds.push_back(steps[k - t].norm4);
        const GtEntry& g = v.gt[k];
        mask.push_back(g.present ? 1 : 0);
        norm_gts.push_back(g.present
                               ? std::array<double, 4>{g.box.x1 / w, g.box.y1 / h,
                                                       g.box.x2 / w, g.box.y2 / h}
                               : std::array<double, 4>{0, 0, 0, 0});
      }

      std::vector<std::array<double, 4>> dnorm;
      tracker_loss_norm(norm_preds, norm_gts, mask, &dnorm);

      model.zero_grads();
      TrackerGradState gs;
      for (int k = end - 1; k >= t; --k) {
        nn::Vec dinput;
        tracker_step_backward(model.tracker, steps[k - t], dnorm[k - t], gs,
                              &dinput);
        pack_backward(packs[k - t], dinput, model.tracker);
      }
      opt.step(blocks);
      t = end;
    }
  }
  model.stage = Stage::complete;
}

std::vector<Prediction> track_video(const std::vector<Image>& frames,
                                    const std::string& query,
                                    const std::optional<Box>& init_box,
                                    const Model& model) {
  return track_video(frames, query, init_box, model, nullptr);
}

std::vector<Prediction> track_video(const std::vector<Image>& frames,
                                    const std::string& query,
                                    const std::optional<Box>& init_box,
                                    const Model& model,
                                    std::vector<double>* frame_seconds) {
  if (model.stage != Stage::complete)
    throw CheckpointError("track_video: incomplete model (stage marker " +
                          std::to_string(static_cast<int>(model.stage)) + ")");
  if (frames.empty())
    throw std::invalid_argument("track_video: no frames");

  const nn::Vec sent = model.encoder.embed(tokenize(query), model.table);
  const DetectConfig dc = model.cfg.detect_config();
  std::vector<Prediction> preds;
  if (frame_seconds) frame_seconds->clear();

  TrackerState state = initial_state(model.tracker);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    const auto started = std::chrono::steady_clock::now();
    const Image& img = frames[t];
    try {
      if (t == 0 && init_box) {
        // Alg-style init branch: the first prediction is the given box and
        // the recurrent state is seeded from that box alone.
        const FeatureMap f = model.backbone.forward(img);
        const RegionFeature rf =
            roi_pool(f, *init_box, dc.roi_size, img.w, img.h);
        const DetectionSet d =
            select_top_n({*init_box}, {rf}, {1.0}, model.cfg.top_n);
        const nn::Vec input = pack_input(d, img.w, img.h, model.tracker);
        state = tracker_step(state, input, model.tracker, img.w, img.h, nullptr);
        state.history = {*init_box};
        preds.push_back(Prediction{*init_box, 1});
      } else {
        std::optional<GateContext> gate;
        if (t >= 1 && state.history.size() >= 2)
          gate = GateContext{state.history.back(),
                             state.history[state.history.size() - 2]};
        const DetectionSet d = detect(img, sent, model.backbone, model.rpn,
                                      model.sim, dc, gate);
        const nn::Vec input = pack_input(d, img.w, img.h, model.tracker);
        Prediction pred;
        state = tracker_step(state, input, model.tracker, img.w, img.h, &pred);
        preds.push_back(pred);
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("track_video: frame " + std::to_string(t + 1) +
                               ": " + e.what());
    }
    if (frame_seconds)
      frame_seconds->push_back(
          std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                        started)
              .count());
  }
  return preds;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::string buf;
  append_bytes(buf, kMagic, sizeof kMagic);
  append_pod<std::uint32_t>(buf, kVersion);
  append_pod<std::uint64_t>(buf, model.cfg.fingerprint());
  append_pod<std::uint32_t>(buf, static_cast<std::uint32_t>(model.stage));
  buf += serialize_config(model.cfg);

  append_pod<std::uint32_t>(buf, static_cast<std::uint32_t>(model.table.words.size()));
  for (const auto& w : model.table.words) {
    append_pod<std::uint32_t>(buf, static_cast<std::uint32_t>(w.size()));
    append_bytes(buf, w.data(), w.size());
  }

  Model& m = const_cast<Model&>(model);
  const auto blocks = m.all_blocks();
  append_pod<std::uint32_t>(buf, static_cast<std::uint32_t>(blocks.size()));
  for (const nn::ParamBlock* b : blocks) {
    append_pod<std::uint32_t>(buf, static_cast<std::uint32_t>(b->name.size()));
    append_bytes(buf, b->name.data(), b->name.size());
    append_pod<std::uint32_t>(buf, static_cast<std::uint32_t>(b->shape.size()));
    for (int d : b->shape) append_pod<std::uint32_t>(buf, static_cast<std::uint32_t>(d));
    for (double v : b->w) append_pod<float>(buf, static_cast<float>(v));
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint: " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw CheckpointError("write failed: " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  Reader r(path);
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw CheckpointError("corrupt checkpoint: bad magic");
  const auto version = r.pod<std::uint32_t>();
  if (version != kVersion)
    throw CheckpointError("unsupported checkpoint version " +
                          std::to_string(version));
  const auto fingerprint = r.pod<std::uint64_t>();
  const auto stage = r.pod<std::uint32_t>();
  if (stage > static_cast<std::uint32_t>(Stage::complete))
    throw CheckpointError("corrupt checkpoint: bad stage marker");

  ModelConfig cfg;
  cfg.backbone_channels.resize(r.pod<std::uint32_t>());
  for (int& c : cfg.backbone_channels) c = r.pod<std::int32_t>();
  cfg.anchor_sizes.resize(r.pod<std::uint32_t>());
  for (double& s : cfg.anchor_sizes) s = r.pod<double>();
  cfg.anchor_ratios.resize(r.pod<std::uint32_t>());
  for (double& x : cfg.anchor_ratios) x = r.pod<double>();
  cfg.rpn_mid = r.pod<std::int32_t>();
  cfg.pre_nms_k = r.pod<std::int32_t>();
  cfg.post_nms_k = r.pod<std::int32_t>();
  cfg.nms_threshold = r.pod<double>();
  cfg.roi_size = r.pod<std::int32_t>();
  cfg.embed_dim = r.pod<std::int32_t>();
  cfg.top_n = r.pod<std::int32_t>();
  cfg.feature_proj = r.pod<std::int32_t>();
  cfg.tracker_hidden = r.pod<std::int32_t>();
  cfg.max_side = r.pod<double>();
  if (cfg.fingerprint() != fingerprint)
    throw CheckpointError("corrupt checkpoint: config fingerprint mismatch");

  std::vector<std::string> vocab(r.pod<std::uint32_t>());
  for (auto& w : vocab) w = r.str(r.pod<std::uint32_t>());

  Model model = init_model(cfg, vocab, 0);
  model.stage = static_cast<Stage>(stage);

  const auto blocks = model.all_blocks();
  const auto count = r.pod<std::uint32_t>();
  if (count != blocks.size())
    throw CheckpointError("corrupt checkpoint: parameter block count mismatch");
  for (nn::ParamBlock* b : blocks) {
    const std::string name = r.str(r.pod<std::uint32_t>());
    if (name != b->name)
      throw CheckpointError("corrupt checkpoint: expected block '" + b->name +
                            "', found '" + name + "'");
    std::vector<int> shape(r.pod<std::uint32_t>());
    for (int& d : shape) d = static_cast<int>(r.pod<std::uint32_t>());
    if (shape != b->shape)
      throw CheckpointError("checkpoint block '" + name +
                            "' shape does not match the config fingerprint");
    for (double& v : b->w) v = static_cast<double>(r.pod<float>());
    b->zero_grad();
  }
  return model;
}

}  // namespace nltrack
