#include "freehead/networks.hpp"

#include "freehead/gaze_geometry.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdio>

namespace freehead {

// ---------------------------------------------------------------------------
// Configuration

int ModelConfig::ch(int full) const { return std::max(8, int(std::lround(full * width))); }

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
  if (resolution < 32 || resolution % 4 != 0) fail("resolution must be a multiple of 4 and at least 32");
  if (eye_resolution < 32 || eye_resolution % 32 != 0) fail("eye_resolution must be a multiple of 32");
  if (!(width > 0.0 && width <= 1.0)) fail("width must lie in (0, 1]");
  if (keypoints != kKeypoints) fail("only 68 key-points are supported");
  if (n_deg < 1 || n_deg > 89) fail("n_deg must lie in [1, 89]");
  for (int b : ecan_blocks)
    if (b < 0) fail("negative block count");
  for (int b : gaze_blocks)
    if (b < 1) fail("gaze stages need at least one block");
  if (discriminator_layers < 2) fail("discriminator needs at least two layers");
  if (discriminator_scales < 1) fail("discriminator needs at least one scale");
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["resolution"] = resolution;
  j["eye_resolution"] = eye_resolution;
  j["width"] = width;
  j["keypoints"] = keypoints;
  j["n_deg"] = n_deg;
  j["ecan_blocks"] = ecan_blocks;
  j["gaze_blocks"] = gaze_blocks;
  j["discriminator_layers"] = discriminator_layers;
  j["discriminator_scales"] = discriminator_scales;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  ModelConfig c;
  c.resolution = j.at("resolution").get<int>();
  c.eye_resolution = j.at("eye_resolution").get<int>();
  c.width = j.at("width").get<double>();
  c.keypoints = j.at("keypoints").get<int>();
  c.n_deg = j.at("n_deg").get<int>();
  c.ecan_blocks = j.at("ecan_blocks").get<std::array<int, 4>>();
  c.gaze_blocks = j.at("gaze_blocks").get<std::array<int, 4>>();
  c.discriminator_layers = j.at("discriminator_layers").get<int>();
  c.discriminator_scales = j.at("discriminator_scales").get<int>();
  c.validate();
  return c;
}

std::string ModelConfig::hash() const {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : to_json()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.resolution = 64;
  c.eye_resolution = 64;
  c.width = 0.25;
  return c;
}

// ---------------------------------------------------------------------------
// Canonical key-point estimator

template <typename T>
ResBottleneck<T>::ResBottleneck(int in, int out, int stride, std::mt19937_64& rng) : stride_(stride) {
  if (stride == 1 && in != out) throw std::invalid_argument("residual bottleneck must keep its width");
  const int inner = std::max(8, out / 4);
  c1_ = this->register_child("conv1", std::make_unique<Conv2d<T>>(in, inner, 1, 1, 0, rng, Init::Kaiming, false));
  n1_ = this->register_child("norm1", std::make_unique<BatchNorm2d<T>>(inner));
  c2_ = this->register_child("conv2", std::make_unique<Conv2d<T>>(inner, inner, 3, stride, 1, rng, Init::Kaiming, false));
  n2_ = this->register_child("norm2", std::make_unique<BatchNorm2d<T>>(inner));
  c3_ = this->register_child("conv3", std::make_unique<Conv2d<T>>(inner, out, 1, 1, 0, rng, Init::Kaiming, false));
  n3_ = this->register_child("norm3", std::make_unique<BatchNorm2d<T>>(out));
}

template <typename T>
Var<T> ResBottleneck<T>::forward(const Var<T>& x) {
  Var<T> h = relu(n1_->forward(c1_->forward(x)));
  h = relu(n2_->forward(c2_->forward(h)));
  h = n3_->forward(c3_->forward(h));
  return downsample() ? relu(h) : x + h;
}

template <typename T>
CanonicalEstimator<T>::CanonicalEstimator(const ModelConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  cfg_.validate();
  const int c0 = cfg.ch(32);
  stem_ = this->register_child("stem", std::make_unique<Conv2d<T>>(3, c0, 7, 2, 3, rng, Init::Kaiming, false));
  stem_norm_ = this->register_child("stem_norm", std::make_unique<BatchNorm2d<T>>(c0));
  const int widths[4] = {cfg.ch(128), cfg.ch(256), cfg.ch(512), cfg.ch(1024)};
  int in = c0;
  for (int s = 0; s < 4; ++s) {
    const std::string stage = "stage" + std::to_string(s);
    blocks_.push_back(this->register_child(stage + ".down", std::make_unique<ResBottleneck<T>>(in, widths[s], 2, rng)));
    for (int b = 0; b < cfg.ecan_blocks[s]; ++b) {
      blocks_.push_back(this->register_child(stage + ".res" + std::to_string(b),
                                             std::make_unique<ResBottleneck<T>>(widths[s], widths[s], 1, rng)));
    }
    in = widths[s];
  }
  feature_dim_ = in;
  const int bins = 2 * cfg.n_deg + 1;
  const char* names[3] = {"pitch", "yaw", "roll"};
  for (int a = 0; a < 3; ++a) {
    angle_heads_[a] = this->register_child(std::string(names[a]) + "_head", std::make_unique<Linear<T>>(in, bins, rng, Init::Normal002));
  }
  // Heads start near a centred, undeformed, unit-scale face.
  translation_head_ = this->register_child("translation_head", std::make_unique<Linear<T>>(in, 3, rng, Init::Zero));
  scale_head_ = this->register_child("scale_head", std::make_unique<Linear<T>>(in, 1, rng, Init::Zero));
  // softplus(0.5413) = 1: start at unit scale.
  scale_head_->bias.mutable_value()[0] = T(0.5413248546129181);
  deform_head_ =
      this->register_child("deform_head", std::make_unique<Linear<T>>(in, 3 * cfg.keypoints, rng, Init::Zero));
  points_head_ =
      this->register_child("points_head", std::make_unique<Linear<T>>(in, 3 * cfg.keypoints, rng, Init::Normal002));
}

template <typename T>
CanonicalOutput<T> CanonicalEstimator<T>::forward(const Var<T>& image) {
  const int R = cfg_.resolution;
  if (image.ndim() != 4 || image.dim(1) != 3 || image.dim(2) != R || image.dim(3) != R) {
    throw ShapeError("canonical estimator expects (B,3," + std::to_string(R) + "," + std::to_string(R) + "), got " +
                     shape_str(image.shape()));
  }
  const int B = image.dim(0), K = cfg_.keypoints;
  Var<T> h = relu(stem_norm_->forward(stem_->forward(image)));
  for (auto* b : blocks_) h = b->forward(h);
  const Var<T> f = global_avg_pool(h);

  const int bins = 2 * cfg_.n_deg + 1;
  Tensor<T> centres(Shape{1, bins});
  for (int i = 0; i < bins; ++i) centres[i] = T(i - cfg_.n_deg);
  const Var<T> c = constant(centres);

  CanonicalOutput<T> out;
  std::array<Var<T>, 3> angles;
  for (int a = 0; a < 3; ++a) {
    out.logits[a] = angle_heads_[a]->forward(f);
    angles[a] = sum_dim(softmax_last(out.logits[a]) * c, 1);  // (B,1)
  }
  out.euler = concat<T>({angles[0], angles[1], angles[2]}, 1);
  out.pitch = reshape(angles[0], Shape{B});
  out.yaw = reshape(angles[1], Shape{B});
  out.roll = reshape(angles[2], Shape{B});
  out.rotation = rotation_from_euler(out.pitch, out.yaw, out.roll);
  out.translation = reshape(translation_head_->forward(f), Shape{B, 1, 3});
  out.scale = reshape(softplus(scale_head_->forward(f)) + T(1e-4), Shape{B, 1, 1});
  out.deformation = reshape(deform_head_->forward(f), Shape{B, K, 3});
  out.points = reshape(points_head_->forward(f), Shape{B, K, 3});
  return out;
}

// ---------------------------------------------------------------------------
// Gaze estimator

template <typename T>
BasicBlock<T>::BasicBlock(int in, int out, int stride, std::mt19937_64& rng) {
  c1_ = this->register_child("conv1", std::make_unique<Conv2d<T>>(in, out, 3, stride, 1, rng, Init::Kaiming, false));
  n1_ = this->register_child("norm1", std::make_unique<BatchNorm2d<T>>(out));
  c2_ = this->register_child("conv2", std::make_unique<Conv2d<T>>(out, out, 3, 1, 1, rng, Init::Kaiming, false));
  n2_ = this->register_child("norm2", std::make_unique<BatchNorm2d<T>>(out));
  if (stride != 1 || in != out) {
    skip_ = this->register_child("skip", std::make_unique<Conv2d<T>>(in, out, 1, stride, 0, rng, Init::Kaiming, false));
    skip_norm_ = this->register_child("skip_norm", std::make_unique<BatchNorm2d<T>>(out));
  }
}

template <typename T>
Var<T> BasicBlock<T>::forward(const Var<T>& x) {
  Var<T> h = relu(n1_->forward(c1_->forward(x)));
  h = n2_->forward(c2_->forward(h));
  const Var<T> s = skip_ ? skip_norm_->forward(skip_->forward(x)) : x;
  return relu(h + s);
}

template <typename T>
GazeEstimator<T>::GazeEstimator(const ModelConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  cfg_.validate();
  const int c0 = cfg.ch(64);
  stem_ = this->register_child("stem", std::make_unique<Conv2d<T>>(3, c0, 7, 2, 3, rng, Init::Kaiming, false));
  stem_norm_ = this->register_child("stem_norm", std::make_unique<BatchNorm2d<T>>(c0));
  const int widths[4] = {cfg.ch(64), cfg.ch(128), cfg.ch(256), cfg.ch(512)};
  int in = c0;
  for (int s = 0; s < 4; ++s) {
    for (int b = 0; b < cfg.gaze_blocks[s]; ++b) {
      const int stride = (b == 0 && s > 0) ? 2 : 1;
      blocks_.push_back(this->register_child("layer" + std::to_string(s + 1) + "." + std::to_string(b),
                                             std::make_unique<BasicBlock<T>>(in, widths[s], stride, rng)));
      in = widths[s];
    }
  }
  reduce_ = this->register_child("reduce", std::make_unique<Conv2d<T>>(in, widths[3], 3, 2, 1, rng));
  const int side = (cfg.eye_resolution / 32 + 1) / 2;
  head_ = this->register_child("head", std::make_unique<Linear<T>>(widths[3] * side * side, 3 * kEyeVertices, rng));
}

template <typename T>
Var<T> GazeEstimator<T>::forward(const Var<T>& x) {
  const int E = cfg_.eye_resolution;
  if (x.ndim() != 4 || x.dim(1) != 3 || x.dim(2) != E || x.dim(3) != E) {
    throw ShapeError("gaze estimator expects (B,3," + std::to_string(E) + "," + std::to_string(E) + "), got " +
                     shape_str(x.shape()));
  }
  const int B = x.dim(0);
  Var<T> h = max_pool2d(relu(stem_norm_->forward(stem_->forward(x))), 3, 2, 1);
  for (auto* b : blocks_) h = b->forward(h);
  h = reduce_->forward(h);
  const int flat = h.dim(1) * h.dim(2) * h.dim(3);
  return reshape(head_->forward(reshape(h, Shape{B, flat})), Shape{B, kEyeVertices, 3});
}

// ---------------------------------------------------------------------------
// Generator blocks

namespace {

// Resizes a conditioning map to (H, W): box average for whole-number
// reductions, so thin sketch lines survive, bilinear otherwise.
template <typename T>
Var<T> fit_condition(const Var<T>& cond, int H, int W) {
  const int h = cond.dim(2), w = cond.dim(3);
  if (h == H && w == W) return cond;
  if (h > H && h % H == 0 && w % W == 0 && h / H == w / W) {
    const int f = h / H;
    return avg_pool2d(cond, f, f, 0);
  }
  return resize_bilinear(cond, H, W);
}

template <typename T>
void require_image(const Var<T>& x, int channels, int res, const char* what) {
  if (x.ndim() != 4 || x.dim(1) != channels || x.dim(2) != res || x.dim(3) != res) {
    throw ShapeError(std::string(what) + " must be (B," + std::to_string(channels) + "," + std::to_string(res) + "," +
                     std::to_string(res) + "), got " + shape_str(x.shape()));
  }
}

}  // namespace

template <typename T>
SpadeNorm<T>::SpadeNorm(int channels, int label_channels, int hidden, std::mt19937_64& rng, Init scheme) {
  shared_ = this->register_child("shared", std::make_unique<Conv2d<T>>(label_channels, hidden, 3, 1, 1, rng, scheme));
  gamma_ = this->register_child("gamma", std::make_unique<Conv2d<T>>(hidden, channels, 3, 1, 1, rng, scheme));
  beta_ = this->register_child("beta", std::make_unique<Conv2d<T>>(hidden, channels, 3, 1, 1, rng, scheme));
}

template <typename T>
Var<T> SpadeNorm<T>::forward(const Var<T>& x, const Var<T>& cond) {
  const Var<T> c = fit_condition(cond, x.dim(2), x.dim(3));
  const Var<T> a = relu(shared_->forward(c));
  return instance_norm(x) * (gamma_->forward(a) + T(1)) + beta_->forward(a);
}

template <typename T>
SpadeBlock<T>::SpadeBlock(int in, int out, int label_channels, int hidden, std::mt19937_64& rng, Init scheme) {
  const int mid = std::min(in, out);
  norm0_ = this->register_child("norm0", std::make_unique<SpadeNorm<T>>(in, label_channels, hidden, rng, scheme));
  conv0_ = this->register_child("conv0", std::make_unique<Conv2d<T>>(in, mid, 3, 1, 1, rng, scheme));
  norm1_ = this->register_child("norm1", std::make_unique<SpadeNorm<T>>(mid, label_channels, hidden, rng, scheme));
  conv1_ = this->register_child("conv1", std::make_unique<Conv2d<T>>(mid, out, 3, 1, 1, rng, scheme));
  if (in != out) {
    norm_skip_ = this->register_child("norm_skip", std::make_unique<SpadeNorm<T>>(in, label_channels, hidden, rng, scheme));
    conv_skip_ = this->register_child("conv_skip", std::make_unique<Conv2d<T>>(in, out, 1, 1, 0, rng, scheme, false));
  }
}

template <typename T>
Var<T> SpadeBlock<T>::forward(const Var<T>& x, const Var<T>& cond) {
  const Var<T> skip = conv_skip_ ? conv_skip_->forward(norm_skip_->forward(x, cond)) : x;
  Var<T> h = conv0_->forward(leaky_relu(norm0_->forward(x, cond)));
  h = conv1_->forward(leaky_relu(norm1_->forward(h, cond)));
  return skip + h;
}

template <typename T>
SketchEncoder<T>::SketchEncoder(int in, const ModelConfig& cfg, std::mt19937_64& rng) {
  const int c1 = cfg.generator_c1(), c2 = cfg.generator_c2(), c3 = cfg.generator_c3();
  convs_[0] = this->register_child("conv0", std::make_unique<Conv2d<T>>(in, c1, 7, 1, 3, rng, Init::Orthogonal, false));
  convs_[1] = this->register_child("conv1", std::make_unique<Conv2d<T>>(c1, c2, 3, 2, 1, rng, Init::Orthogonal, false));
  convs_[2] = this->register_child("conv2", std::make_unique<Conv2d<T>>(c2, c3, 3, 2, 1, rng, Init::Orthogonal, false));
}

template <typename T>
std::array<Var<T>, 3> SketchEncoder<T>::forward(const Var<T>& x) {
  std::array<Var<T>, 3> out;
  Var<T> h = x;
  for (int i = 0; i < 3; ++i) {
    h = relu(instance_norm(convs_[i]->forward(h)));
    out[i] = h;
  }
  return out;
}

template <typename T>
FlowNet<T>::FlowNet(const ModelConfig& cfg, std::mt19937_64& rng, bool with_weight_head) : cfg_(cfg) {
  cfg_.validate();
  const int c1 = cfg.generator_c1(), c2 = cfg.generator_c2(), c3 = cfg.generator_c3(), hid = cfg.spade_hidden();
  encoder_ = this->register_child("encoder", std::make_unique<SketchEncoder<T>>(6, cfg, rng));
  for (int i = 0; i < 3; ++i) {
    low_blocks_.push_back(
        this->register_child("spade" + std::to_string(i), std::make_unique<SpadeBlock<T>>(c3, c3, 3, hid, rng)));
  }
  mid_block_ = this->register_child("spade3", std::make_unique<SpadeBlock<T>>(c2, c2, 3, hid, rng));
  flow_head_ = this->register_child("flow_head", std::make_unique<Conv2d<T>>(c1, 2, 7, 1, 3, rng, Init::Zero));
  if (with_weight_head) add_weight_head();
}

template <typename T>
void FlowNet<T>::add_weight_head() {
  if (weight_head_) return;
  std::mt19937_64 unused(0);
  weight_head_ = this->register_child(
      "weight_head", std::make_unique<Conv2d<T>>(cfg_.generator_c1(), 1, 7, 1, 3, unused, Init::Zero));
}

template <typename T>
std::vector<Var<T>> FlowNet<T>::core_parameters() const {
  std::vector<Var<T>> out;
  for (const auto& [name, p] : this->named_parameters())
    if (name.rfind("weight_head.", 0) != 0) out.push_back(p);
  return out;
}

template <typename T>
std::vector<Var<T>> FlowNet<T>::weight_head_parameters() const {
  return weight_head_ ? weight_head_->parameters() : std::vector<Var<T>>{};
}

template <typename T>
FlowOutput<T> FlowNet<T>::forward(const Var<T>& source_image, const Var<T>& source_sketch, const Var<T>& target_sketch) {
  const int R = cfg_.resolution;
  require_image(source_image, 3, R, "flow source image");
  require_image(source_sketch, 3, R, "flow source sketch");
  require_image(target_sketch, 3, R, "flow target sketch");
  if (source_image.dim(0) != source_sketch.dim(0) || source_image.dim(0) != target_sketch.dim(0)) {
    throw ShapeError("flow network inputs disagree on batch size");
  }
  FlowOutput<T> out;
  out.features = encoder_->forward(concat<T>({source_image, source_sketch}, 1));
  Var<T> h = out.features[2];
  for (auto* b : low_blocks_) h = b->forward(h, target_sketch);
  h = mid_block_->forward(pixel_shuffle(h, 2), target_sketch);
  h = leaky_relu(pixel_shuffle(h, 2));
  out.flow = flow_head_->forward(h);
  if (weight_head_) out.logits = tanh(weight_head_->forward(h));
  return out;
}

template <typename T>
RenderNet<T>::RenderNet(const ModelConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  cfg_.validate();
  const int c1 = cfg.generator_c1(), c2 = cfg.generator_c2(), c3 = cfg.generator_c3(), hid = cfg.spade_hidden();
  encoder_ = this->register_child("encoder", std::make_unique<SketchEncoder<T>>(9, cfg, rng));
  b3_ = this->register_child("spade0", std::make_unique<SpadeBlock<T>>(c3, c3, c3, hid, rng));
  b2_ = this->register_child("spade1", std::make_unique<SpadeBlock<T>>(c2, c2, c2, hid, rng));
  b1_ = this->register_child("spade2", std::make_unique<SpadeBlock<T>>(c1, c1, c1, hid, rng));
  bimg_ = this->register_child("spade3", std::make_unique<SpadeBlock<T>>(c1, c1, 3, hid, rng));
  out_ = this->register_child("out", std::make_unique<Conv2d<T>>(c1, 3, 7, 1, 3, rng, Init::Orthogonal));
}

template <typename T>
Var<T> RenderNet<T>::forward(const Var<T>& target_sketch, const Var<T>& warped_image, const Var<T>& source_sketch,
                             const std::array<Var<T>, 3>& warped_features) {
  const int R = cfg_.resolution;
  require_image(target_sketch, 3, R, "render target sketch");
  require_image(warped_image, 3, R, "render warped image");
  require_image(source_sketch, 3, R, "render source sketch");
  const int chans[3] = {cfg_.generator_c1(), cfg_.generator_c2(), cfg_.generator_c3()};
  for (int i = 0; i < 3; ++i) require_image(warped_features[i], chans[i], R >> i, "render warped feature");
  Var<T> h = encoder_->forward(concat<T>({target_sketch, warped_image, source_sketch}, 1))[2];
  h = b3_->forward(h, warped_features[2]);
  h = b2_->forward(pixel_shuffle(h, 2), warped_features[1]);
  h = b1_->forward(pixel_shuffle(h, 2), warped_features[0]);
  h = bimg_->forward(h, warped_image);
  return tanh(out_->forward(leaky_relu(h)));
}

template <typename T>
Generator<T>::Generator(const ModelConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
  flow_ = this->register_child("flow", std::make_unique<FlowNet<T>>(cfg, rng));
  render_ = this->register_child("render", std::make_unique<RenderNet<T>>(cfg, rng));
}

template <typename T>
GeneratorOutput<T> Generator<T>::forward(const std::vector<GeneratorSource<T>>& sources, const Var<T>& target_sketch) {
  if (sources.empty()) throw std::invalid_argument("generator needs at least one source");
  GeneratorOutput<T> out;
  std::vector<Var<T>> warped_images;
  std::array<std::vector<Var<T>>, 3> warped_maps;
  for (const auto& src : sources) {
    if (src.image.shape() != sources[0].image.shape()) throw ShapeError("sources have mixed resolutions");
    FlowOutput<T> f = flow_->forward(src.image, src.sketch, target_sketch);
    warped_images.push_back(backward_warp(src.image, f.flow));
    for (int i = 0; i < 3; ++i) {
      const Var<T>& h = f.features[i];
      warped_maps[i].push_back(backward_warp(h, resize_flow(f.flow, h.dim(2), h.dim(3))));
    }
    out.flows.push_back(f.flow);
    out.logits.push_back(f.logits.defined() ? f.logits
                                            : constant(Tensor<T>(Shape{f.flow.dim(0), 1, f.flow.dim(2), f.flow.dim(3)})));
  }
  if (sources.size() == 1) {
    out.warped = warped_images[0];
    for (int i = 0; i < 3; ++i) out.warped_features[i] = warped_maps[i][0];
  } else {
    out.warped = attention_blend(warped_images, out.logits);
    for (int i = 0; i < 3; ++i) out.warped_features[i] = attention_blend(warped_maps[i], out.logits);
  }
  out.generated = render_->forward(target_sketch, out.warped, sources[0].sketch, out.warped_features);
  return out;
}

// ---------------------------------------------------------------------------
// Discriminators

template <typename T>
PatchDiscriminator<T>::PatchDiscriminator(int in, const ModelConfig& cfg, std::mt19937_64& rng)
    : n_layers_(cfg.discriminator_layers) {
  int c = in;
  for (int i = 0; i < n_layers_; ++i) {
    const bool strided = i < n_layers_ - 1;
    const int out = cfg.ch(std::min(512, 64 << i));
    convs_.push_back(this->register_child("conv" + std::to_string(i),
                                          std::make_unique<Conv2d<T>>(c, out, strided ? 4 : 3, strided ? 2 : 1, 1, rng,
                                                                      Init::Normal002)));
    c = out;
  }
  convs_.push_back(this->register_child("score", std::make_unique<Conv2d<T>>(c, 1, 3, 1, 1, rng, Init::Normal002)));
}

template <typename T>
std::vector<Var<T>> PatchDiscriminator<T>::forward(const Var<T>& x) {
  std::vector<Var<T>> out;
  Var<T> h = x;
  for (int i = 0; i < n_layers_; ++i) {
    h = convs_[i]->forward(h);
    if (i > 0) h = instance_norm(h);
    h = leaky_relu(h);
    out.push_back(h);
  }
  out.push_back(convs_.back()->forward(h));
  return out;
}

template <typename T>
Discriminator<T>::Discriminator(const ModelConfig& cfg, std::mt19937_64& rng) {
  for (int s = 0; s < cfg.discriminator_scales; ++s) {
    scales_.push_back(this->register_child("scale" + std::to_string(s), std::make_unique<PatchDiscriminator<T>>(6, cfg, rng)));
  }
}

template <typename T>
DiscriminatorOutput<T> Discriminator<T>::forward(const Var<T>& image, const Var<T>& condition) {
  if (image.ndim() != 4 || image.dim(1) != 3 || condition.shape() != image.shape()) {
    throw ShapeError("discriminator expects matching (B,3,H,W) image and sketch, got " + shape_str(image.shape()) +
                     " and " + shape_str(condition.shape()));
  }
  DiscriminatorOutput<T> out;
  Var<T> x = concat<T>({image, condition}, 1);
  for (std::size_t s = 0; s < scales_.size(); ++s) {
    if (s > 0) x = avg_pool2d(x, 3, 2, 1);
    auto layers = scales_[s]->forward(x);
    out.scores.push_back(layers.back());
    layers.pop_back();
    out.features.push_back(std::move(layers));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mouth crop

CropBox mouth_box(const Keypoints3D& p, int height, int width) {
  CropBox b;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  bool finite = p.rows() == kKeypoints;
  for (int k = 48; finite && k < 68; ++k) {
    if (!std::isfinite(p(k, 0)) || !std::isfinite(p(k, 1))) {
      finite = false;
      break;
    }
    const double x = (p(k, 0) + 1.0) / 2.0 * (width - 1), y = (p(k, 1) + 1.0) / 2.0 * (height - 1);
    xmin = std::min(xmin, x), xmax = std::max(xmax, x);
    ymin = std::min(ymin, y), ymax = std::max(ymax, y);
  }
  const double w = xmax - xmin, h = ymax - ymin;
  if (!finite || w < 1.0 || h < 1.0) {
    b.x0 = width / 4.0 - 0.5, b.x1 = 3.0 * width / 4.0 - 0.5;
    b.y0 = height / 4.0 - 0.5, b.y1 = 3.0 * height / 4.0 - 0.5;
    b.fallback = true;
    return b;
  }
  b.x0 = xmin - 0.1 * w - 0.5, b.x1 = xmax + 0.1 * w + 0.5;
  b.y0 = ymin - 0.1 * h - 0.5, b.y1 = ymax + 0.1 * h + 0.5;
  return b;
}

template <typename T>
Var<T> crop_resize(const Var<T>& x, const std::vector<CropBox>& boxes, int out) {
  if (x.ndim() != 4 || int(boxes.size()) != x.dim(0)) throw ShapeError("crop_resize needs one box per batch item");
  const int B = x.dim(0);
  Tensor<T> coords(Shape{B, 2, out, out});
  const Index plane = Index(out) * out;
  for (int n = 0; n < B; ++n) {
    const CropBox& b = boxes[n];
    const double sx = (b.x1 - b.x0) / out, sy = (b.y1 - b.y0) / out;
    T* cx = coords.data() + Index(n) * 2 * plane;
    T* cy = cx + plane;
    for (int i = 0; i < out; ++i)
      for (int j = 0; j < out; ++j) {
        cx[Index(i) * out + j] = T(b.x0 + (j + 0.5) * sx);
        cy[Index(i) * out + j] = T(b.y0 + (i + 0.5) * sy);
      }
  }
  return grid_sample(x, constant(std::move(coords)));
}

#define FREEHEAD_INSTANTIATE_NETWORKS(T)                                                 \
  template class ResBottleneck<T>;                                                       \
  template class CanonicalEstimator<T>;                                                  \
  template class BasicBlock<T>;                                                          \
  template class GazeEstimator<T>;                                                       \
  template class SpadeNorm<T>;                                                           \
  template class SpadeBlock<T>;                                                          \
  template class SketchEncoder<T>;                                                       \
  template class FlowNet<T>;                                                             \
  template class RenderNet<T>;                                                           \
  template class Generator<T>;                                                           \
  template class PatchDiscriminator<T>;                                                  \
  template class Discriminator<T>;                                                       \
  template Var<T> crop_resize(const Var<T>&, const std::vector<CropBox>&, int);

FREEHEAD_INSTANTIATE_NETWORKS(float)
FREEHEAD_INSTANTIATE_NETWORKS(double)

}  // namespace freehead
