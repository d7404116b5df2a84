#include "freehead/cli.hpp"

#include "freehead/image_io.hpp"
#include "freehead/metrics.hpp"
#include "freehead/pipeline.hpp"
#include "freehead/service.hpp"

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <optional>

namespace freehead {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Bad arguments, config values or inputs discovered before work starts.
struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ModelOptions {
  ModelConfig cfg = ModelConfig::desk();

  void add(CLI::App* app) {
    app->add_option("--resolution", cfg.resolution, "generator and E_can input side")->capture_default_str();
    app->add_option("--eye-resolution", cfg.eye_resolution, "E_gaze eye crop side")->capture_default_str();
    app->add_option("--width", cfg.width, "channel multiplier in (0, 1]")->capture_default_str();
  }
};

struct TrainOptions {
  int steps = 0, batch_size = 0, checkpoint_every = 0, print_every = 50;
  double lr = 0;
  std::uint64_t seed = 1;
  std::string log;

  void add(CLI::App* app, const TrainConfig& preset) {
    steps = preset.steps;
    batch_size = preset.batch_size;
    lr = preset.adam.lr;
    app->add_option("--steps", steps, "optimizer steps")->capture_default_str();
    app->add_option("--batch-size", batch_size)->capture_default_str();
    app->add_option("--lr", lr, "Adam learning rate")->capture_default_str();
    app->add_option("--seed", seed)->capture_default_str();
    app->add_option("--log", log, "JSONL training log");
    app->add_option("--checkpoint-every", checkpoint_every, "0: only at the end")->capture_default_str();
    app->add_option("--print-every", print_every, "progress line cadence (0: silent)")->capture_default_str();
  }

  TrainConfig apply(TrainConfig c, const ModelConfig& model, const std::string& out) const {
    c.model = model;
    c.steps = steps;
    c.batch_size = batch_size;
    c.adam.lr = lr;
    c.seed = seed;
    c.log_path = log;
    c.checkpoint_every = checkpoint_every;
    c.checkpoint_path = out;
    c.model.validate();
    c.validate();
    return c;
  }

  StepCallback progress(std::ostream& err) const {
    const int every = print_every;
    return [&err, every](const StepLog& s) {
      if (every > 0 && (s.step % every == 0 || s.step == 1)) {
        err << s.phase << " step " << s.step;
        for (const auto& [k, v] : s.values) err << " " << k << "=" << v;
        err << " t=" << s.seconds << "s\n";
      }
      return true;
    };
  }
};

struct CheckpointOptions {
  std::string dir, canonical, gaze, generator;
  bool force = false;

  void add_dir(CLI::App* app) {
    app->add_option("--checkpoint-dir", dir, "default location of {canonical,gaze,generator}.ckpt")
        ->envname("FREEHEAD_CHECKPOINT_DIR");
  }
  void add_inputs(CLI::App* app) {
    add_dir(app);
    app->add_option("--canonical", canonical, "E_can checkpoint");
    app->add_option("--gaze", gaze, "E_gaze checkpoint");
    app->add_option("--generator", generator, "generator checkpoint");
    app->add_flag("--force", force, "load despite a config hash mismatch");
  }

  // Explicit paths must exist; defaults under the directory are optional.
  std::string input(const std::string& explicit_path, const std::string& name, std::ostream& err) const {
    if (!explicit_path.empty()) {
      if (!fs::is_regular_file(explicit_path)) throw ValidationError("checkpoint not found: " + explicit_path);
      return explicit_path;
    }
    if (!dir.empty()) {
      const fs::path p = fs::path(dir) / (name + ".ckpt");
      if (fs::is_regular_file(p)) return p.string();
    }
    err << "warning: no " << name << " checkpoint; using untrained weights\n";
    return "";
  }

  std::string output(const std::string& explicit_path, const std::string& name) const {
    if (!explicit_path.empty()) return explicit_path;
    if (!dir.empty()) return (fs::path(dir) / (name + ".ckpt")).string();
    throw ValidationError("--out is required (or set --checkpoint-dir / FREEHEAD_CHECKPOINT_DIR)");
  }

  std::unique_ptr<ModelSet> load(std::ostream& err) const {
    const std::string c = input(canonical, "canonical", err), g = input(gaze, "gaze", err),
                      n = input(generator, "generator", err);
    return ModelSet::load(c, g, n, force);
  }
};

void require_dir(const std::string& path) {
  if (!fs::is_directory(path)) throw ValidationError("not a directory: " + path);
}

void require_file(const std::string& path) {
  if (!fs::is_regular_file(path)) throw ValidationError("file not found: " + path);
}

void ensure_parent(const std::string& path) {
  const fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

std::vector<TrainingClip> load_clips(const std::string& root) {
  require_dir(root);
  if (fs::exists(fs::path(root) / "landmarks.json")) {
    TrainingClip c;
    c.record = ingest_clip(root);
    for (const auto& f : c.record.frames) c.images.push_back(read_png(f));
    return {std::move(c)};
  }
  return load_training_clips(root);
}

void finish(const TrainResult& r, std::ostream& out, json summary) {
  summary["steps"] = r.history.size();
  summary["seconds"] = r.seconds;
  if (!r.history.empty())
    for (const auto& [k, v] : r.history.back().values) summary["final"][k] = v;
  out << summary.dump(2) << "\n";
  if (r.aborted) throw std::runtime_error(r.message);
}

std::unique_ptr<FeatureExtractor<float>> make_extractor(const std::string& vgg_weights) {
  if (!vgg_weights.empty()) return std::make_unique<Vgg19Extractor<float>>(vgg_weights);
  return std::make_unique<RandomFeatureExtractor<float>>();
}

std::vector<std::string> png_names(const std::string& dir) {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  return names;
}

Tensor<float> at_resolution(const Tensor<float>& img, int res) {
  return img.dim(1) == res && img.dim(2) == res ? img : resize_image(img, res, res);
}

// Flat `key = value` files: keys are scoped to the subcommand being run.
class ScopedConfig : public CLI::ConfigBase {
 public:
  explicit ScopedConfig(std::string command) : command_(std::move(command)) {}
  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    auto items = CLI::ConfigBase::from_config(input);
    for (auto& it : items)
      if (it.parents.empty() && it.name != "++" && it.name != "--") it.parents = {command_};
    return items;
  }

 private:
  std::string command_;
};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Free-view head reenactment and editing: training, evaluation and inference service", "freehead"};
  app.allow_config_extras(CLI::config_extras_mode::error);  // inherited by subcommands
  app.require_subcommand(1);
  app.fallthrough();  // --config may follow the subcommand
  app.set_config("--config", "", "flat key = value file; keys are long option names of the command");
  std::string command_name;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      ++i;
      continue;
    }
    if (!args[i].empty() && args[i][0] != '-') {
      command_name = args[i];
      break;
    }
  }
  app.config_formatter(std::make_shared<ScopedConfig>(command_name));
  std::function<void()> action;

  auto command = [&](const std::string& name, const std::string& help) { return app.add_subcommand(name, help); };

  // make-fixtures
  FixtureOptions fx;
  std::string fx_out;
  {
    auto* c = command("make-fixtures", "write the synthetic fixture set");
    c->add_option("--out", fx_out, "output directory")->required();
    c->add_option("--identities", fx.identities)->capture_default_str();
    c->add_option("--frames", fx.frames)->capture_default_str();
    c->add_option("--resolution", fx.resolution)->capture_default_str();
    c->add_option("--seed", fx.seed)->capture_default_str();
    c->callback([&] {
      action = [&] {
        if (fx.identities < 1 || fx.frames < 2 || fx.resolution < 16)
          throw ValidationError("need identities >= 1, frames >= 2, resolution >= 16");
        write_fixture_set(fx_out, make_synthetic_fixture_set(fx));
        out << json{{"out", fx_out}, {"identities", fx.identities}, {"frames", fx.frames}}.dump() << "\n";
      };
    });
  }

  ModelOptions model;
  CheckpointOptions ckpt;
  std::string data, out_path, init, vgg;

  // train-canonical
  TrainOptions can_opt;
  {
    auto* c = command("train-canonical", "train the canonical key-point estimator");
    c->add_option("--data", data, "fixture root or clip directory")->required();
    c->add_option("--out", out_path, "checkpoint to write");
    ckpt.add_dir(c);
    model.add(c);
    can_opt.add(c, TrainConfig::canonical());
    c->callback([&] {
      action = [&] {
        const TrainConfig cfg = can_opt.apply(TrainConfig::canonical(), model.cfg, ckpt.output(out_path, "canonical"));
        const auto clips = load_clips(data);
        ensure_parent(cfg.checkpoint_path);
        std::mt19937_64 rng(cfg.seed);
        CanonicalEstimator<float> m(cfg.model, rng);
        const TrainResult r = train_canonical(m, clips, cfg, can_opt.progress(err));
        finish(r, out, {{"checkpoint", cfg.checkpoint_path}, {"held_out_points", evaluate_canonical(m, clips, cfg.model)}});
      };
    });
  }

  // train-gaze
  TrainOptions gaze_opt;
  int eval_count = 256;
  {
    auto* c = command("train-gaze", "train the gaze estimator on synthetic eyes");
    c->add_option("--out", out_path, "checkpoint to write");
    c->add_option("--eval-count", eval_count, "held-out synthetic eyes")->capture_default_str();
    ckpt.add_dir(c);
    model.add(c);
    gaze_opt.add(c, TrainConfig::gaze());
    c->callback([&] {
      action = [&] {
        const TrainConfig cfg = gaze_opt.apply(TrainConfig::gaze(), model.cfg, ckpt.output(out_path, "gaze"));
        if (eval_count < 1) throw ValidationError("--eval-count must be >= 1");
        ensure_parent(cfg.checkpoint_path);
        EyeSampleOptions eyes;
        eyes.resolution = cfg.model.eye_resolution;
        std::mt19937_64 rng(cfg.seed);
        GazeEstimator<float> m(cfg.model, rng);
        const TrainResult r = train_gaze(m, eyes, cfg, gaze_opt.progress(err));
        const double agd_deg = evaluate_gaze(m, make_eye_set(eval_count, cfg.seed + 1000003, eyes));
        finish(r, out, {{"checkpoint", cfg.checkpoint_path}, {"held_out_agd_degrees", agd_deg}});
      };
    });
  }

  // train-generator
  TrainOptions gen_opt;
  bool overfit = false;
  {
    auto* c = command("train-generator", "train the generator against both critics");
    c->add_option("--data", data, "fixture root or clip directory")->required();
    c->add_option("--out", out_path, "checkpoint to write");
    c->add_option("--init", init, "resume from a generator checkpoint");
    c->add_option("--vgg-weights", vgg, "VGG19 weights for the perceptual loss (default: fixed random features)");
    c->add_flag("--overfit", overfit, "train on one fixed pair");
    ckpt.add_dir(c);
    model.add(c);
    gen_opt.add(c, TrainConfig::generator());
    c->callback([&] {
      action = [&] {
        if (!init.empty()) require_file(init);
        std::optional<Checkpoint> start;
        if (!init.empty()) start = load_checkpoint(init);
        const ModelConfig mc = start ? start->config : model.cfg;
        TrainConfig cfg = gen_opt.apply(TrainConfig::generator(), mc, ckpt.output(out_path, "generator"));
        cfg.overfit = overfit;
        const auto clips = load_clips(data);
        ensure_parent(cfg.checkpoint_path);
        GanModels g(cfg.model, cfg.seed);
        if (start) g.load(*start, ckpt.force);
        auto fx = make_extractor(vgg);
        const TrainResult r = train_generator(g, clips, cfg, *fx, gen_opt.progress(err));
        finish(r, out, {{"checkpoint", cfg.checkpoint_path}, {"held_out_l1", evaluate_reconstruction(g, clips, 1)}});
      };
    });
  }

  // finetune-nshot
  TrainOptions nshot_opt;
  int shots = 2;
  {
    auto* c = command("finetune-nshot", "add and train the multi-source attention head");
    c->add_option("--data", data, "fixture root or clip directory")->required();
    c->add_option("--init", init, "generator checkpoint to start from (default: <checkpoint-dir>/generator.ckpt)");
    c->add_option("--out", out_path, "checkpoint to write");
    c->add_option("--shots", shots, "sources per training pair")->capture_default_str();
    c->add_option("--vgg-weights", vgg);
    c->add_flag("--force", ckpt.force);
    ckpt.add_dir(c);
    nshot_opt.add(c, TrainConfig::nshot());
    c->callback([&] {
      action = [&] {
        const std::string from = init.empty() ? ckpt.output("", "generator") : init;
        require_file(from);
        const Checkpoint start = load_checkpoint(from);
        TrainConfig cfg = nshot_opt.apply(TrainConfig::nshot(), start.config, ckpt.output(out_path, "generator"));
        cfg.shots = shots;
        cfg.validate();
        const auto clips = load_clips(data);
        ensure_parent(cfg.checkpoint_path);
        GanModels g(cfg.model, cfg.seed);
        g.load(start, ckpt.force);
        auto fx = make_extractor(vgg);
        const double before = evaluate_reconstruction(g, clips, shots);
        const TrainResult r = finetune_nshot(g, clips, cfg, *fx, nshot_opt.progress(err));
        finish(r, out,
               {{"checkpoint", cfg.checkpoint_path},
                {"held_out_l1_1shot", evaluate_reconstruction(g, clips, 1)},
                {"held_out_l1_nshot_before", before},
                {"held_out_l1_nshot", evaluate_reconstruction(g, clips, shots)}});
      };
    });
  }

  // Inference commands share checkpoint inputs.
  std::vector<std::string> sources;
  std::string target;
  bool no_adapt = false;

  // self-reenact
  int self_shots = 1;
  {
    auto* c = command("self-reenact", "reenact held-out frames of each clip from its own training frames");
    c->add_option("--data", data, "fixture root or clip directory")->required();
    c->add_option("--out", out_path, "directory for pred/ and gt/ frames")->required();
    c->add_option("--shots", self_shots, "source frames per clip")->capture_default_str();
    c->add_flag("--no-adapt", no_adapt, "drive with the target's own key-points");
    ckpt.add_inputs(c);
    c->callback([&] {
      action = [&] {
        if (self_shots < 1) throw ValidationError("--shots must be >= 1");
        const auto clips = load_clips(data);
        auto models = ckpt.load(err);
        Pipeline pipe(*models);
        const int R = models->config.resolution;
        fs::create_directories(fs::path(out_path) / "pred");
        fs::create_directories(fs::path(out_path) / "gt");
        std::vector<Tensor<float>> pred, gt;
        for (const auto& clip : clips) {
          const auto train = train_frames(clip.record);
          if (int(train.size()) < self_shots) throw ValidationError("clip " + clip.record.id + " has too few frames");
          std::vector<Tensor<float>> src;
          for (int i = 0; i < self_shots; ++i) src.push_back(clip.images[train[i]]);
          const auto session = pipe.create_session(src, clip.record.id);
          for (int t : held_out_frames(clip.record)) {
            pred.push_back(pipe.reenact(*session, clip.images[t], !no_adapt).image);
            gt.push_back(at_resolution(clip.images[t], R));
            const std::string name = clip.record.id + "_" + std::to_string(t) + ".png";
            write_png((fs::path(out_path) / "pred" / name).string(), pred.back());
            write_png((fs::path(out_path) / "gt" / name).string(), gt.back());
          }
        }
        MetricReport rep = evaluate_frames(pred, gt);
        rep.metadata["adapt"] = no_adapt ? "no" : "yes";
        out << rep.to_json() << "\n";
      };
    });
  }

  // reenact
  {
    auto* c = command("reenact", "drive source image(s) with a target image");
    c->add_option("--source", sources, "source PNG (repeat for n-shot)")->required();
    c->add_option("--target", target, "driving PNG")->required();
    c->add_option("--out", out_path, "output PNG")->required();
    c->add_flag("--no-adapt", no_adapt, "drive with the target's own key-points");
    ckpt.add_inputs(c);
    c->callback([&] {
      action = [&] {
        for (const auto& s : sources) require_file(s);
        require_file(target);
        auto models = ckpt.load(err);
        Pipeline pipe(*models);
        std::vector<Tensor<float>> src;
        for (const auto& s : sources) src.push_back(read_png(s));
        const auto session = pipe.create_session(src, "cli");
        ensure_parent(out_path);
        write_png(out_path, pipe.reenact(*session, read_png(target), !no_adapt).image);
      };
    });
  }

  // edit
  std::optional<double> pitch, yaw, roll, theta, phi, deform;
  {
    auto* c = command("edit", "re-render a source with pose, gaze or expression overrides");
    c->add_option("--source", sources, "source PNG")->required()->expected(1);
    c->add_option("--out", out_path, "output PNG")->required();
    c->add_option("--pitch", pitch, "degrees, [-60, 60]");
    c->add_option("--yaw", yaw, "degrees, [-60, 60]");
    c->add_option("--roll", roll, "degrees, [-60, 60]");
    c->add_option("--gaze-theta", theta, "degrees, (-80, 80)");
    c->add_option("--gaze-phi", phi, "degrees, (-80, 80), |phi| <= |theta|");
    c->add_option("--deform-scale", deform, "expression scale, [0, 3]");
    ckpt.add_inputs(c);
    c->callback([&] {
      action = [&] {
        require_file(sources.at(0));
        if (theta.has_value() != phi.has_value()) throw ValidationError("--gaze-theta and --gaze-phi go together");
        EditRequest req;
        if (theta) req.gaze = GazeAngles{*theta, *phi};
        req.deform_scale = deform;
        // Checked with placeholder angles so bad input fails before models load.
        if (pitch || yaw || roll) req.euler = EulerAngles{pitch.value_or(0), yaw.value_or(0), roll.value_or(0)};
        validate_edit(req);
        auto models = ckpt.load(err);
        Pipeline pipe(*models);
        const auto session = pipe.create_session({read_png(sources[0])}, "cli");
        if (req.euler) {
          const EulerAngles& e = session->sources[0].face.euler;  // unspecified angles keep the source's
          req.euler = EulerAngles{pitch.value_or(e.pitch), yaw.value_or(e.yaw), roll.value_or(e.roll)};
        }
        ensure_parent(out_path);
        write_png(out_path, pipe.edit(*session, req).image);
      };
    });
  }

  // evaluate
  std::string pred_dir, gt_dir;
  bool pixel_only = false;
  {
    auto* c = command("evaluate", "metric report for paired frame directories (matched by file name)");
    c->add_option("--pred", pred_dir, "predicted frames")->required();
    c->add_option("--gt", gt_dir, "ground-truth frames")->required();
    c->add_flag("--pixel-only", pixel_only, "skip CSIM/FID");
    c->callback([&] {
      action = [&] {
        require_dir(pred_dir);
        require_dir(gt_dir);
        const auto names = png_names(pred_dir);
        if (names.empty()) throw ValidationError("no PNG frames in " + pred_dir);
        std::vector<Tensor<float>> pred, gt;
        for (const auto& n : names) {
          const fs::path g = fs::path(gt_dir) / n;
          if (!fs::is_regular_file(g)) throw ValidationError("ground truth missing for " + n);
          pred.push_back(read_png((fs::path(pred_dir) / n).string()));
          gt.push_back(read_png(g.string()));
          if (pred.back().shape() != gt.back().shape()) throw ValidationError("size mismatch for " + n);
        }
        PooledFeatureEmbedder embedder;
        out << evaluate_frames(pred, gt, pixel_only ? nullptr : &embedder).to_json() << "\n";
      };
    });
  }

  // serve
  ServiceConfig svc;
  {
    auto* c = command("serve", "HTTP inference service");
    c->add_option("--host", svc.host)->capture_default_str();
    c->add_option("--port", svc.port)->capture_default_str();
    c->add_option("--max-sessions", svc.max_sessions)->capture_default_str();
    c->add_option("--queue-depth", svc.queue_depth)->capture_default_str();
    c->add_option("--session-ttl", svc.session_ttl_seconds, "seconds")->capture_default_str();
    c->add_option("--device", svc.device)->capture_default_str();
    ckpt.add_inputs(c);
    c->callback([&] {
      action = [&] {
        svc.force = ckpt.force;
        svc.validate();
        auto models = ckpt.load(err);
        InferenceService service(std::move(models), svc);
        auto server = make_http_server(service);
        if (!server->bind_to_port(svc.host, svc.port))
          throw std::runtime_error("cannot bind " + svc.host + ":" + std::to_string(svc.port));
        err << "listening on http://" << svc.host << ":" << svc.port << " (config " << service.model_config().hash()
            << ")\n";
        server->listen_after_bind();
      };
    });
  }

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitValidation;
  }

  try {
    action();
    return kExitOk;
  } catch (const std::invalid_argument& e) {  // includes ValidationError and RangeError
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace freehead
