#include "freehead/pipeline.hpp"

#include "freehead/image_io.hpp"

#include <cmath>
#include <sstream>

namespace freehead {

ModelSet::ModelSet(const ModelConfig& cfg, std::uint64_t seed)
    : config(cfg), init_rng(seed), canonical(cfg, init_rng), gaze(cfg, init_rng), gan(cfg, seed + 1) {
  canonical.eval();
  gaze.eval();
  gan.generator.eval();
}

std::unique_ptr<ModelSet> ModelSet::load(const std::string& canonical_path, const std::string& gaze_path,
                                         const std::string& generator_path, bool force) {
  // The first checkpoint present fixes the config; the rest must agree.
  std::optional<Checkpoint> can, gz, gen;
  if (!canonical_path.empty()) can = load_checkpoint(canonical_path);
  if (!gaze_path.empty()) gz = load_checkpoint(gaze_path);
  if (!generator_path.empty()) gen = load_checkpoint(generator_path);
  ModelConfig cfg = ModelConfig::desk();
  for (const auto* c : {&can, &gz, &gen})
    if (*c) {
      cfg = (*c)->config;
      break;
    }
  auto set = std::make_unique<ModelSet>(cfg);
  if (can) {
    check_config(*can, cfg, force);
    load_module(*can, "ecan.", set->canonical);
  }
  if (gz) {
    check_config(*gz, cfg, force);
    load_module(*gz, "egaze.", set->gaze);
  }
  if (gen) set->gan.load(*gen, force);
  set->canonical.eval();
  set->gaze.eval();
  set->gan.generator.eval();
  return set;
}

void validate_edit(const EditRequest& req) {
  auto bad = [](const std::string& what) { throw RangeError(what); };
  if (req.euler) {
    const double v[3] = {req.euler->pitch, req.euler->yaw, req.euler->roll};
    const char* names[3] = {"pitch", "yaw", "roll"};
    for (int i = 0; i < 3; ++i) {
      if (!std::isfinite(v[i]) || std::abs(v[i]) > PoseBounds::kEuler) {
        std::ostringstream os;
        os << names[i] << " " << v[i] << " outside [-60, 60] degrees";
        bad(os.str());
      }
    }
  }
  if (req.gaze) {
    const GazeAngles& g = *req.gaze;
    if (!std::isfinite(g.theta) || !std::isfinite(g.phi) || std::abs(g.theta) >= PoseBounds::kGaze ||
        std::abs(g.phi) >= PoseBounds::kGaze) {
      std::ostringstream os;
      os << "gaze (" << g.theta << ", " << g.phi << ") outside (-80, 80) degrees";
      bad(os.str());
    }
    if (!gaze_angles_feasible(g)) {
      std::ostringstream os;
      os << "gaze (" << g.theta << ", " << g.phi << ") infeasible: |phi| must not exceed |theta|";
      bad(os.str());
    }
  }
  if (req.deform_scale) {
    const double d = *req.deform_scale;
    if (!std::isfinite(d) || d < 0.0 || d > PoseBounds::kDeformScale) {
      std::ostringstream os;
      os << "deform_scale " << d << " outside [0, 3]";
      bad(os.str());
    }
  }
}

Pipeline::Pipeline(ModelSet& models) : models_(models) {}

namespace {

Keypoints3D to_points(const Tensor<float>& t, int b = 0) {
  const int K = t.dim(1);
  Keypoints3D p(K, 3);
  for (int k = 0; k < K; ++k)
    for (int c = 0; c < 3; ++c) p(k, c) = t[(Index(b) * K + k) * 3 + c];
  return p;
}

// (1,3,R,R) in [-1,1].
Tensor<float> net_input(const Tensor<float>& image) { return to_network_range(image); }

Tensor<float> channel_stack(const Tensor<float>& image) {
  Shape s = image.shape();
  s.insert(s.begin(), 1);
  return image.reshaped(s);
}

}  // namespace

Tensor<float> Pipeline::prepare(const Tensor<float>& image) const {
  if (image.ndim() != 3 || image.dim(0) != 3) throw PipelineError("expected an RGB image");
  if (image.dim(1) != image.dim(2)) throw PipelineError("expected a square image");
  const int R = models_.config.resolution;
  return image.dim(1) == R ? image : resize_image(image, R, R);
}

FaceEstimate Pipeline::estimate(const Tensor<float>& raw) {
  const Tensor<float> image = prepare(raw);
  const int R = image.dim(1);
  const Index plane = Index(R) * R;
  double spread = 0;
  for (int c = 0; c < 3; ++c) {
    const auto ch = image.array().segment(c * plane, plane).cast<double>();
    spread = std::max(spread, std::sqrt((ch - ch.mean()).square().mean()));
  }
  if (spread < 0.01) throw PipelineError("no face signal: image is flat");

  NoGradGuard ng;
  models_.canonical.eval();
  models_.gaze.eval();
  const auto out = models_.canonical.forward(constant(net_input(image)));
  FaceEstimate f;
  f.points = to_points(out.points.value()).cast<double>();
  f.deformation = to_points(out.deformation.value()).cast<double>();
  const Tensor<float>& rot = out.rotation.value();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) f.pose.rotation(i, j) = rot[i * 3 + j];
  const Tensor<float>& tr = out.translation.value();
  f.pose.translation = Eigen::Vector3d(tr[0], tr[1], tr[2]);
  f.pose.scale = out.scale.value()[0];
  f.euler = {out.euler.value()[0], out.euler.value()[1], out.euler.value()[2]};
  const Eigen::Vector2d sd(std::sqrt((f.points.col(0).array() - f.points.col(0).mean()).square().mean()),
                           std::sqrt((f.points.col(1).array() - f.points.col(1).mean()).square().mean()));
  if (!f.points.allFinite() || sd.minCoeff() < 0.02) throw PipelineError("no face signal: key-points collapsed");
  f.canonical = to_canonical(f.points, f.pose, f.deformation);

  // Gaze from square eye crops around the predicted eye points.
  const int E = models_.config.eye_resolution;
  const auto& tpl = default_eye_template();
  GazeAngles* out_gaze[2] = {&f.gaze_left, &f.gaze_right};
  for (int eye = 0; eye < 2; ++eye) {
    const EyeCrop box = eye_crop(f.points, eye == 0, R, R);
    const Tensor<float> crop = crop_square(image, box.cx, box.cy, box.side, E);
    const Tensor<float> mesh = models_.gaze.forward(constant(net_input(crop))).value();
    EyeMesh m(mesh.dim(1), 3);
    for (int v = 0; v < mesh.dim(1); ++v)
      for (int c = 0; c < 3; ++c) m(v, c) = mesh[Index(v) * 3 + c];
    Eigen::Vector3d g = mesh_to_gaze_vector(m, tpl);
    if (!g.allFinite() || g.norm() == 0.0) g = Eigen::Vector3d(0, 0, 1);
    // The sketch encodes angles for gaze toward the camera hemisphere.
    if (g.z() <= 1e-6) g.z() = 1e-6;
    *out_gaze[eye] = gaze_vector_to_angles(g.normalized());
  }
  return f;
}

std::shared_ptr<const SourceSession> Pipeline::create_session(const std::vector<Tensor<float>>& images,
                                                               std::string id) {
  if (images.empty()) throw PipelineError("a session needs at least one source image");
  auto s = std::make_shared<SourceSession>();
  s->id = std::move(id);
  const int R = models_.config.resolution;
  SketchSpec spec;
  spec.height = spec.width = R;
  for (const auto& img : images) {
    SourceView v;
    v.image = prepare(img);
    v.input_height = img.dim(1);
    v.input_width = img.dim(2);
    v.face = estimate(img);
    const Keypoints3D back = from_canonical(v.face.canonical, v.face.pose, v.face.deformation);
    if ((back - v.face.points).cwiseAbs().maxCoeff() > 1e-5) {
      throw PipelineError("session invariant violated: canonical points do not re-pose to the estimate");
    }
    v.sketch = draw_sketch(v.face.points, v.face.gaze_left, v.face.gaze_right, spec).pixels;
    s->sources.push_back(std::move(v));
  }
  return s;
}

Keypoints3D Pipeline::adapt_keypoints(const SourceSession& s, const PoseTransform<double>& pose,
                                      const Keypoints3D& deformation, int source) {
  if (source < 0 || source >= int(s.sources.size())) throw PipelineError("source index out of range");
  return from_canonical(s.sources[source].face.canonical, pose, deformation);
}

RenderResult Pipeline::render(const std::vector<const SourceView*>& sources, const Keypoints3D& driving,
                              const GazeAngles& gl, const GazeAngles& gr) {
  const int R = models_.config.resolution;
  SketchSpec spec;
  spec.height = spec.width = R;
  RenderResult r;
  r.driving = driving;
  r.gaze_left = gl;
  r.gaze_right = gr;
  r.sketch = draw_sketch(driving, gl, gr, spec).pixels;

  NoGradGuard ng;
  models_.gan.generator.eval();
  std::vector<GeneratorSource<float>> src;
  for (const SourceView* v : sources) src.push_back({constant(net_input(v->image)), constant(channel_stack(v->sketch))});
  const auto out = models_.gan.generator.forward(src, constant(channel_stack(r.sketch)));
  r.image = from_network_range(out.generated.value());
  r.warped = from_network_range(out.warped.value());
  return r;
}

RenderResult Pipeline::reenact(const SourceSession& s, const Tensor<float>& target, bool adapt) {
  return reenact_nshot({&s}, target, adapt);
}

RenderResult Pipeline::reenact_nshot(const std::vector<const SourceSession*>& sessions, const Tensor<float>& target,
                                     bool adapt) {
  std::vector<const SourceView*> views;
  for (const SourceSession* s : sessions) {
    if (!s || s->sources.empty()) throw PipelineError("empty source session");
    for (const auto& v : s->sources) {
      if (!views.empty() && (v.input_height != views.front()->input_height || v.input_width != views.front()->input_width)) {
        throw PipelineError("sources differ in resolution");
      }
      views.push_back(&v);
    }
  }
  const FaceEstimate t = estimate(target);
  const Keypoints3D driving =
      adapt ? from_canonical(views.front()->face.canonical, t.pose, t.deformation) : t.points;
  return render(views, driving, t.gaze_left, t.gaze_right);
}

RenderResult Pipeline::edit(const SourceSession& s, const EditRequest& req) {
  validate_edit(req);
  if (s.sources.empty()) throw PipelineError("empty source session");
  const FaceEstimate& f = s.sources.front().face;
  PoseTransform<double> pose = f.pose;
  if (req.euler) pose.rotation = euler_to_matrix<double>(*req.euler);
  Keypoints3D d = f.deformation;
  if (req.deform_scale) d *= *req.deform_scale;
  const Keypoints3D driving = from_canonical(f.canonical, pose, d);
  const GazeAngles gl = req.gaze ? *req.gaze : f.gaze_left;
  const GazeAngles gr = req.gaze ? *req.gaze : f.gaze_right;
  std::vector<const SourceView*> views;
  for (const auto& v : s.sources) views.push_back(&v);
  return render(views, driving, gl, gr);
}

std::vector<char> Pipeline::eye_mask(const Keypoints3D& p, int res) {
  std::vector<char> m(std::size_t(res) * res, 0);
  for (bool left : {true, false}) {
    const EyeCrop c = eye_crop(p, left, res, res);
    const double h = c.side / 2;
    for (int y = std::max(0, int(std::ceil(c.cy - h))); y <= std::min(res - 1, int(std::floor(c.cy + h))); ++y)
      for (int x = std::max(0, int(std::ceil(c.cx - h))); x <= std::min(res - 1, int(std::floor(c.cx + h))); ++x)
        m[std::size_t(y) * res + x] = 1;
  }
  return m;
}

}  // namespace freehead
