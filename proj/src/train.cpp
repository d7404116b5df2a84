#include "freehead/train.hpp"

#include "freehead/image_io.hpp"
#include "freehead/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace freehead {

namespace fs = std::filesystem;
using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

// ---------------------------------------------------------------------------
// Configuration

TrainConfig TrainConfig::canonical() {
  TrainConfig c;
  c.steps = 2000;
  c.batch_size = 8;
  return c;
}

TrainConfig TrainConfig::gaze() {
  TrainConfig c;
  c.adam.beta1 = 0.9;
  c.adam.lr = 1e-4;
  c.steps = 5000;
  c.batch_size = 16;
  return c;
}

TrainConfig TrainConfig::generator() {
  TrainConfig c;
  c.steps = 2000;
  c.batch_size = 4;
  return c;
}

TrainConfig TrainConfig::nshot() {
  TrainConfig c = generator();
  c.shots = 2;
  c.steps = 500;
  return c;
}

void TrainConfig::validate() const {
  model.validate();
  weights.validate();
  if (steps < 0) throw std::invalid_argument("steps must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (shots < 1) throw std::invalid_argument("shots must be >= 1");
  if (checkpoint_every < 0) throw std::invalid_argument("checkpoint_every must be >= 0");
  if (!(adam.lr > 0) || !(adam.beta1 >= 0 && adam.beta1 < 1) || !(adam.beta2 >= 0 && adam.beta2 < 1)) {
    throw std::invalid_argument("optimizer needs lr > 0 and betas in [0, 1)");
  }
  if (adam.grad_clip < 0) throw std::invalid_argument("grad_clip must be >= 0");
}

// ---------------------------------------------------------------------------
// Data

std::vector<TrainingClip> training_clips(const std::vector<FixtureClip>& fixtures) {
  std::vector<TrainingClip> out;
  for (const auto& f : fixtures) out.push_back({f.record, f.images});
  return out;
}

std::vector<TrainingClip> load_training_clips(const std::string& root) {
  std::vector<fs::path> dirs;
  if (!fs::is_directory(root)) throw DataError("not a directory: " + root);
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "landmarks.json")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw DataError("no clips under " + root);
  std::vector<TrainingClip> out;
  for (const auto& d : dirs) {
    TrainingClip c;
    c.record = ingest_clip(d.string());
    for (const auto& f : c.record.frames) c.images.push_back(read_png(f));
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<int> train_frames(const ClipRecord& r) {
  std::vector<int> v;
  for (int i = 0; i < r.size(); ++i)
    if (!is_held_out(i)) v.push_back(i);
  return v;
}

std::vector<int> held_out_frames(const ClipRecord& r) {
  std::vector<int> v;
  for (int i = 0; i < r.size(); ++i)
    if (is_held_out(i)) v.push_back(i);
  return v;
}

double StepLog::operator[](const std::string& name) const {
  for (const auto& [n, v] : values)
    if (n == name) return v;
  throw std::out_of_range("no logged value " + name);
}

namespace {

// (B,3,R,R) in [-1,1] from images in [0,1], resized when needed.
Tensor<float> image_batch(const std::vector<const Tensor<float>*>& images, int res) {
  Tensor<float> out(Shape{int(images.size()), 3, res, res});
  const Index plane = Index(3) * res * res;
  for (std::size_t b = 0; b < images.size(); ++b) {
    const Tensor<float>* img = images[b];
    Tensor<float> resized;
    if (img->dim(1) != res || img->dim(2) != res) {
      resized = resize_image(*img, res, res);
      img = &resized;
    }
    out.array().segment(Index(b) * plane, plane) = img->array() * 2.0f - 1.0f;
  }
  return out;
}

// Raw (3,R,R) tensors stacked as-is.
Tensor<float> stack(const std::vector<const Tensor<float>*>& items) {
  Shape s = items.front()->shape();
  s.insert(s.begin(), int(items.size()));
  Tensor<float> out(s);
  const Index n = items.front()->size();
  for (std::size_t b = 0; b < items.size(); ++b) out.array().segment(Index(b) * n, n) = items[b]->array();
  return out;
}

Tensor<float> points_batch(const std::vector<const Keypoints3D*>& pts) {
  Tensor<float> out(Shape{int(pts.size()), kKeypoints, 3});
  for (std::size_t b = 0; b < pts.size(); ++b)
    for (int k = 0; k < kKeypoints; ++k)
      for (int c = 0; c < 3; ++c) out[(Index(b) * kKeypoints + k) * 3 + c] = float((*pts[b])(k, c));
  return out;
}

Tensor<float> euler_batch(const std::vector<EulerAngles>& e) {
  Tensor<float> out(Shape{int(e.size()), 3});
  for (std::size_t b = 0; b < e.size(); ++b) {
    out[Index(b) * 3] = float(e[b].pitch);
    out[Index(b) * 3 + 1] = float(e[b].yaw);
    out[Index(b) * 3 + 2] = float(e[b].roll);
  }
  return out;
}

std::vector<std::pair<std::string, double>> loss_values(const LossTerms<float>& terms) {
  std::vector<std::pair<std::string, double>> v{{"total", double(terms.total.value().item())}};
  for (const auto& [n, c] : terms.components) v.emplace_back(n, double(c.value().item()));
  return v;
}

bool all_finite(const std::vector<std::pair<std::string, double>>& v) {
  return std::all_of(v.begin(), v.end(), [](const auto& p) { return std::isfinite(p.second); });
}

// Shared bookkeeping: timing, JSONL log, last-good snapshot and rollback.
class Run {
 public:
  Run(const TrainConfig& cfg, std::string kind, std::function<Checkpoint()> snapshot,
      std::function<void(const Checkpoint&)> restore, const StepCallback& on_step)
      : cfg_(cfg), kind_(std::move(kind)), snapshot_(std::move(snapshot)), restore_(std::move(restore)),
        on_step_(on_step), t0_(Clock::now()) {
    cfg.validate();
    if (!cfg.log_path.empty()) {
      log_.open(cfg.log_path, std::ios::app);
      if (!log_) throw std::runtime_error("cannot open log " + cfg.log_path);
    }
    last_good_ = snapshot_();
  }

  // Returns false when the run must stop (non-finite loss or callback).
  bool record(int step, const std::string& phase, std::vector<std::pair<std::string, double>> values) {
    StepLog s{step, phase, std::move(values), elapsed()};
    if (log_) {
      json j{{"step", s.step}, {"phase", s.phase}, {"seconds", s.seconds}};
      for (const auto& [n, v] : s.values) j[n] = std::isfinite(v) ? json(v) : json(nullptr);
      log_ << j.dump() << "\n";
      log_.flush();
    }
    result_.history.push_back(s);
    if (!all_finite(s.values)) {
      restore_(last_good_);
      result_.aborted = true;
      result_.message = "non-finite loss at step " + std::to_string(step) + "; restored last good weights";
      persist(last_good_);
      return false;
    }
    return !on_step_ || on_step_(s);
  }

  void after_step(int step) {
    if (cfg_.checkpoint_every > 0 && step % cfg_.checkpoint_every == 0) {
      last_good_ = snapshot_();
      persist(last_good_);
    }
  }

  TrainResult finish() {
    if (!result_.aborted) {
      last_good_ = snapshot_();
      persist(last_good_);
    }
    result_.seconds = elapsed();
    return std::move(result_);
  }

 private:
  double elapsed() const { return std::chrono::duration<double>(Clock::now() - t0_).count(); }

  void persist(Checkpoint& c) {
    if (cfg_.checkpoint_path.empty()) return;
    json totals = json::array();
    for (const auto& s : result_.history) {
      for (const auto& [n, v] : s.values)
        if (n == "total") totals.push_back(std::isfinite(v) ? json(v) : json(nullptr));
    }
    c.extra = json{{"kind", kind_}, {"steps", result_.history.size()}, {"seed", cfg_.seed}, {"loss_history", totals}}.dump();
    save_checkpoint(cfg_.checkpoint_path, c);
  }

  const TrainConfig& cfg_;
  std::string kind_;
  std::function<Checkpoint()> snapshot_;
  std::function<void(const Checkpoint&)> restore_;
  const StepCallback& on_step_;
  Clock::time_point t0_;
  std::ofstream log_;
  Checkpoint last_good_;
  TrainResult result_;
};

template <typename M>
Checkpoint module_checkpoint(const std::string& kind, const std::string& prefix, const ModelConfig& cfg, M& m) {
  Checkpoint c;
  c.kind = kind;
  c.config = cfg;
  store_module(c, prefix, m);
  return c;
}

void require_clips(const std::vector<TrainingClip>& data, int min_frames) {
  if (data.empty()) throw DataError("no training clips");
  for (const auto& c : data) {
    if (int(c.images.size()) != c.record.size()) throw DataError("clip " + c.record.id + ": frames and annotations differ");
    if (int(train_frames(c.record).size()) < min_frames) {
      throw DataError("clip " + c.record.id + " has too few training frames");
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Canonical key-point estimator

TrainResult train_canonical(CanonicalEstimator<float>& model, const std::vector<TrainingClip>& data,
                            const TrainConfig& cfg, const StepCallback& on_step) {
  require_clips(data, 2);
  const int res = cfg.model.resolution;
  Run run(
      cfg, "canonical", [&] { return module_checkpoint("canonical", "ecan.", cfg.model, model); },
      [&](const Checkpoint& c) { load_module(c, "ecan.", model); }, on_step);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::vector<int>> frames;
  for (const auto& c : data) frames.push_back(train_frames(c.record));
  std::uniform_int_distribution<int> pick_clip(0, int(data.size()) - 1);
  Adam<float> opt(model.parameters(), cfg.adam);
  model.train();

  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<const Tensor<float>*> xs, xt;
    std::vector<const Keypoints3D*> ls, lt;
    std::vector<EulerAngles> et;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const int c = pick_clip(rng);
      const TrainingPair p = sample_pair(int(frames[c].size()), 1, rng);
      const int s = frames[c][p.sources[0]], t = frames[c][p.target];
      xs.push_back(&data[c].images[s]);
      xt.push_back(&data[c].images[t]);
      ls.push_back(&data[c].record.keypoints[s]);
      lt.push_back(&data[c].record.keypoints[t]);
      et.push_back(data[c].record.euler[t]);
    }
    const auto out_s = model.forward(constant(image_batch(xs, res)));
    const auto out_t = model.forward(constant(image_batch(xt, res)));
    const auto terms = canonical_losses(out_s, out_t, constant(points_batch(ls)), constant(points_batch(lt)),
                                        constant(euler_batch(et)), cfg.weights);
    auto values = loss_values(terms);
    if (std::isfinite(values.front().second)) {
      opt.zero_grad();
      terms.total.backward();
      values.emplace_back("grad_norm", opt.grad_norm());
      opt.step();
    }
    if (!run.record(step, "canonical", std::move(values))) break;
    run.after_step(step);
  }
  model.eval();
  return run.finish();
}

double evaluate_canonical(CanonicalEstimator<float>& model, const std::vector<TrainingClip>& data,
                          const ModelConfig& cfg) {
  NoGradGuard ng;
  model.eval();
  double sum = 0;
  int n = 0;
  for (const auto& c : data) {
    const auto held = held_out_frames(c.record);
    if (held.size() < 2) continue;
    for (std::size_t i = 0; i < held.size(); ++i) {
      const int s = held[i], t = held[(i + 1) % held.size()];
      const auto os = model.forward(constant(image_batch({&c.images[s]}, cfg.resolution)));
      const auto ot = model.forward(constant(image_batch({&c.images[t]}, cfg.resolution)));
      const auto terms = canonical_losses(os, ot, constant(points_batch({&c.record.keypoints[s]})),
                                          constant(points_batch({&c.record.keypoints[t]})),
                                          constant(euler_batch({c.record.euler[t]})));
      sum += terms["points"].value().item();
      ++n;
    }
  }
  if (n == 0) throw DataError("no held-out frame pairs");
  return sum / n;
}

// ---------------------------------------------------------------------------
// Gaze estimator

std::vector<EyeSample> make_eye_set(int count, std::uint64_t seed, const EyeSampleOptions& opt) {
  std::mt19937_64 rng(seed);
  std::vector<EyeSample> v;
  for (int i = 0; i < count; ++i) v.push_back(make_eye_sample(rng, opt));
  return v;
}

namespace {

Tensor<float> mesh_batch(const std::vector<const EyeMesh*>& meshes) {
  const int V = int(meshes.front()->rows());
  Tensor<float> out(Shape{int(meshes.size()), V, 3});
  for (std::size_t b = 0; b < meshes.size(); ++b)
    for (int v = 0; v < V; ++v)
      for (int c = 0; c < 3; ++c) out[(Index(b) * V + v) * 3 + c] = float((*meshes[b])(v, c));
  return out;
}

}  // namespace

TrainResult train_gaze(GazeEstimator<float>& model, const EyeSampleOptions& eyes, const TrainConfig& cfg,
                       const StepCallback& on_step) {
  if (eyes.resolution != cfg.model.eye_resolution) {
    throw std::invalid_argument("eye samples must match the model eye resolution");
  }
  Run run(
      cfg, "gaze", [&] { return module_checkpoint("gaze", "egaze.", cfg.model, model); },
      [&](const Checkpoint& c) { load_module(c, "egaze.", model); }, on_step);
  std::mt19937_64 rng(cfg.seed);
  Adam<float> opt(model.parameters(), cfg.adam);
  const auto& tpl = default_eye_template();
  model.train();
  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<EyeSample> batch;
    for (int b = 0; b < cfg.batch_size; ++b) batch.push_back(make_eye_sample(rng, eyes));
    std::vector<const Tensor<float>*> imgs;
    std::vector<const EyeMesh*> meshes;
    for (const auto& s : batch) imgs.push_back(&s.image), meshes.push_back(&s.mesh);
    const auto pred = model.forward(constant(image_batch(imgs, eyes.resolution)));
    const auto terms = gaze_losses(pred, constant(mesh_batch(meshes)), tpl, cfg.weights);
    auto values = loss_values(terms);
    if (std::isfinite(values.front().second)) {
      opt.zero_grad();
      terms.total.backward();
      const double gn = opt.grad_norm();
      values.emplace_back("grad_norm", gn);
      opt.step();
    }
    if (!run.record(step, "gaze", std::move(values))) break;
    run.after_step(step);
  }
  model.eval();
  return run.finish();
}

double evaluate_gaze(GazeEstimator<float>& model, const std::vector<EyeSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("no eye samples");
  NoGradGuard ng;
  model.eval();
  const auto& tpl = default_eye_template();
  std::vector<Eigen::Vector3d> pred, truth;
  const int E = samples.front().image.dim(1);
  for (std::size_t i0 = 0; i0 < samples.size(); i0 += 16) {
    std::vector<const Tensor<float>*> imgs;
    for (std::size_t i = i0; i < std::min(samples.size(), i0 + 16); ++i) imgs.push_back(&samples[i].image);
    const Tensor<float> out = model.forward(constant(image_batch(imgs, E))).value();
    const int V = out.dim(1);
    for (std::size_t b = 0; b < imgs.size(); ++b) {
      EyeMesh m(V, 3);
      for (int v = 0; v < V; ++v)
        for (int c = 0; c < 3; ++c) m(v, c) = out[(Index(b) * V + v) * 3 + c];
      pred.push_back(mesh_to_gaze_vector(m, tpl));
      truth.push_back(samples[i0 + b].gaze);
    }
  }
  return agd(pred, truth);
}

// ---------------------------------------------------------------------------
// Generator and critics

GanModels::GanModels(const ModelConfig& cfg, std::uint64_t seed)
    : config(cfg), init_rng(seed), generator(cfg, init_rng), image_critic(cfg, init_rng), mouth_critic(cfg, init_rng) {}

Checkpoint GanModels::checkpoint(const std::string& kind) {
  Checkpoint c;
  c.kind = kind;
  c.config = config;
  store_module(c, "generator.", generator);
  store_module(c, "image_critic.", image_critic);
  store_module(c, "mouth_critic.", mouth_critic);
  return c;
}

void GanModels::load(const Checkpoint& ckpt, bool force) {
  check_config(ckpt, config, force);
  if (ckpt.has_prefix("generator.flow.weight_head.") && !generator.flow().has_weight_head()) {
    generator.flow().add_weight_head();
  }
  load_module(ckpt, "generator.", generator);
  load_module(ckpt, "image_critic.", image_critic);
  load_module(ckpt, "mouth_critic.", mouth_critic);
}

Tensor<float> annotation_sketch(const ClipRecord& r, int frame, int resolution) {
  SketchSpec spec;
  spec.height = spec.width = resolution;
  const GazeAngles none{0, 0};
  const GazeAngles gl = r.gaze_left.size() > std::size_t(frame) && r.gaze_left[frame] ? *r.gaze_left[frame] : none;
  const GazeAngles gr = r.gaze_right.size() > std::size_t(frame) && r.gaze_right[frame] ? *r.gaze_right[frame] : none;
  return draw_sketch(r.keypoints[frame], gl, gr, spec).pixels;
}

namespace {

struct PairRef {
  int clip;
  std::vector<int> sources;
  int target;
};

struct GanBatch {
  std::vector<GeneratorSource<float>> sources;
  Var<float> target, target_sketch;
  std::vector<CropBox> mouth;
};

class SketchCache {
 public:
  SketchCache(const std::vector<TrainingClip>& data, int res) : data_(data), res_(res), cache_(data.size()) {
    for (std::size_t c = 0; c < data.size(); ++c) cache_[c].resize(data[c].record.size());
  }
  const Tensor<float>& get(int clip, int frame) {
    Tensor<float>& t = cache_[clip][frame];
    if (t.empty()) t = annotation_sketch(data_[clip].record, frame, res_);
    return t;
  }

 private:
  const std::vector<TrainingClip>& data_;
  int res_;
  std::vector<std::vector<Tensor<float>>> cache_;
};

GanBatch make_gan_batch(const std::vector<TrainingClip>& data, SketchCache& sketches, const std::vector<PairRef>& refs,
                        int res) {
  GanBatch b;
  const std::size_t M = refs.front().sources.size();
  for (std::size_t m = 0; m < M; ++m) {
    std::vector<const Tensor<float>*> imgs, sks;
    for (const auto& r : refs) {
      imgs.push_back(&data[r.clip].images[r.sources[m]]);
      sks.push_back(&sketches.get(r.clip, r.sources[m]));
    }
    b.sources.push_back({constant(image_batch(imgs, res)), constant(stack(sks))});
  }
  std::vector<const Tensor<float>*> imgs, sks;
  for (const auto& r : refs) {
    imgs.push_back(&data[r.clip].images[r.target]);
    sks.push_back(&sketches.get(r.clip, r.target));
    b.mouth.push_back(mouth_box(data[r.clip].record.keypoints[r.target], res, res));
  }
  b.target = constant(image_batch(imgs, res));
  b.target_sketch = constant(stack(sks));
  return b;
}

CriticPair<float> critic_pair(Discriminator<float>& d, const Var<float>& real, const Var<float>& fake,
                              const Var<float>& cond) {
  return {d.forward(real, cond), d.forward(fake, cond)};
}

// Alternating G/D updates shared by one-shot training and n-shot fine-tuning.
TrainResult run_gan(GanModels& models, const std::vector<TrainingClip>& data, const TrainConfig& cfg,
                    FeatureExtractor<float>& extractor, const StepCallback& on_step, const std::string& kind,
                    std::vector<Var<float>> generator_params) {
  require_clips(data, cfg.shots + 1);
  if (models.config.hash() != cfg.model.hash()) throw std::invalid_argument("training config does not match the model");
  const int res = cfg.model.resolution, mouth_res = res / 2;
  Run run(
      cfg, kind, [&] { return models.checkpoint(kind); }, [&](const Checkpoint& c) { models.load(c); }, on_step);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::vector<int>> frames;
  for (const auto& c : data) frames.push_back(train_frames(c.record));
  std::uniform_int_distribution<int> pick_clip(0, int(data.size()) - 1);
  auto draw = [&] {
    const int c = pick_clip(rng);
    const TrainingPair p = sample_pair(int(frames[c].size()), cfg.shots, rng);
    PairRef r{c, {}, frames[c][p.target]};
    for (int s : p.sources) r.sources.push_back(frames[c][s]);
    return r;
  };
  std::vector<PairRef> fixed;
  if (cfg.overfit)
    for (int b = 0; b < cfg.batch_size; ++b) fixed.push_back(draw());

  SketchCache sketches(data, res);
  Generator<float>& G = models.generator;
  std::vector<Var<float>> critic_params = models.image_critic.parameters();
  for (const auto& p : models.mouth_critic.parameters()) critic_params.push_back(p);
  Adam<float> opt_g(std::move(generator_params), cfg.adam), opt_d(critic_params, cfg.adam);
  G.train();
  models.image_critic.train();
  models.mouth_critic.train();

  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<PairRef> refs = fixed;
    if (refs.empty())
      for (int b = 0; b < cfg.batch_size; ++b) refs.push_back(draw());
    const GanBatch b = make_gan_batch(data, sketches, refs, res);
    const Var<float> mouth_sketch = crop_resize(b.target_sketch, b.mouth, mouth_res);
    const Var<float> mouth_real = crop_resize(b.target, b.mouth, mouth_res);

    // Generator step, critics frozen.
    for (auto& p : critic_params) p.set_requires_grad(false);
    const auto out = G.forward(b.sources, b.target_sketch);
    std::vector<CriticPair<float>> critics{
        critic_pair(models.image_critic, b.target, out.generated, b.target_sketch),
        critic_pair(models.mouth_critic, mouth_real, crop_resize(out.generated, b.mouth, mouth_res), mouth_sketch)};
    const auto terms = generator_losses(out.generated, out.warped, b.target, critics, extractor, cfg.weights);
    auto values = loss_values(terms);
    const bool g_ok = std::isfinite(values.front().second);
    if (g_ok) {
      opt_g.zero_grad();
      terms.total.backward();
      opt_g.step();
    }
    for (auto& p : critic_params) p.set_requires_grad(true);

    // Critic step on the detached output.
    const Var<float> fake = constant(out.generated.value());
    std::vector<CriticPair<float>> dcrit{
        critic_pair(models.image_critic, b.target, fake, b.target_sketch),
        critic_pair(models.mouth_critic, mouth_real, crop_resize(fake, b.mouth, mouth_res), mouth_sketch)};
    const Var<float> dloss = discriminator_loss(dcrit);
    const double d = dloss.value().item();
    if (g_ok && std::isfinite(d)) {
      opt_d.zero_grad();
      dloss.backward();
      opt_d.step();
    }
    values.emplace_back("critic", d);
    values.emplace_back("l1", 127.5 * (out.generated.value().array() - b.target.value().array()).abs().mean());
    if (!run.record(step, kind, std::move(values))) break;
    run.after_step(step);
  }
  G.eval();
  models.image_critic.eval();
  models.mouth_critic.eval();
  return run.finish();
}

}  // namespace

TrainResult train_generator(GanModels& models, const std::vector<TrainingClip>& data, const TrainConfig& cfg,
                            FeatureExtractor<float>& extractor, const StepCallback& on_step) {
  return run_gan(models, data, cfg, extractor, on_step, "generator", models.generator.parameters());
}

TrainResult finetune_nshot(GanModels& models, const std::vector<TrainingClip>& data, const TrainConfig& cfg,
                           FeatureExtractor<float>& extractor, const StepCallback& on_step) {
  FlowNet<float>& flow = models.generator.flow();
  if (!flow.has_weight_head()) flow.add_weight_head();
  for (auto& p : flow.core_parameters()) p.set_requires_grad(false);
  std::vector<Var<float>> trainable;
  for (const auto& p : models.generator.parameters())
    if (p.requires_grad()) trainable.push_back(p);
  TrainResult r = run_gan(models, data, cfg, extractor, on_step, "nshot", std::move(trainable));
  for (auto& p : flow.core_parameters()) p.set_requires_grad(true);
  return r;
}

namespace {

Var<float> run_generator(GanModels& models, const TrainingClip& clip, const std::vector<int>& sources, int target) {
  const int res = models.config.resolution;
  std::vector<GeneratorSource<float>> src;
  for (int s : sources) {
    const Tensor<float> sk = annotation_sketch(clip.record, s, res);
    src.push_back({constant(image_batch({&clip.images[s]}, res)), constant(stack({&sk}))});
  }
  const Tensor<float> sk = annotation_sketch(clip.record, target, res);
  return models.generator.forward(src, constant(stack({&sk}))).generated;
}

}  // namespace

Tensor<float> generate_from_annotations(GanModels& models, const TrainingClip& clip, const std::vector<int>& sources,
                                        int target) {
  NoGradGuard ng;
  models.generator.eval();
  return from_network_range(run_generator(models, clip, sources, target).value());
}

double evaluate_reconstruction(GanModels& models, const std::vector<TrainingClip>& data, int shots,
                               std::uint64_t seed) {
  NoGradGuard ng;
  models.generator.eval();
  const int res = models.config.resolution;
  double sum = 0;
  int n = 0;
  for (std::size_t c = 0; c < data.size(); ++c) {
    const auto train = train_frames(data[c].record);
    if (int(train.size()) < shots) throw DataError("too few source frames for evaluation");
    for (int t : held_out_frames(data[c].record)) {
      // The first k of one shuffled order: k-shot sources nest inside (k+1)-shot ones.
      std::vector<int> order = train;
      std::mt19937_64 rng(seed + 7919 * c + t);
      std::shuffle(order.begin(), order.end(), rng);
      order.resize(shots);
      Tensor<float> gen = generate_from_annotations(models, data[c], order, t);
      const Tensor<float>* truth = &data[c].images[t];
      Tensor<float> resized;
      if (truth->dim(1) != res) resized = resize_image(*truth, res, res), truth = &resized;
      gen.array() *= 255.0f;
      Tensor<float> ref = *truth;
      ref.array() *= 255.0f;
      sum += l1_distance(gen, ref);
      ++n;
    }
  }
  if (n == 0) throw DataError("no held-out frames");
  return sum / n;
}

}  // namespace freehead
