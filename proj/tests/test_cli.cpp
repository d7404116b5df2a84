#include <doctest.h>

#include "freehead/cli.hpp"
#include "freehead/image_io.hpp"
#include "test_support.hpp"

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace freehead;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("freehead_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Small fixture tree shared by the tests below.
const fs::path& fixture_root() {
  static const fs::path root = [] {
    const fs::path r = scratch("fixtures");
    REQUIRE(cli({"make-fixtures", "--out", r.string(), "--identities", "2", "--frames", "8"}).code == 0);
    return r;
  }();
  return root;
}

}  // namespace

TEST_CASE("make-fixtures is deterministic") {
  const fs::path a = scratch("fx_a"), b = scratch("fx_b");
  for (const auto& d : {a, b}) {
    const Run r = cli({"make-fixtures", "--out", d.string(), "--identities", "2", "--frames", "4", "--seed", "7"});
    CHECK(r.code == 0);
  }
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    CHECK(slurp(e.path()) == slurp(b / fs::relative(e.path(), a)));
  }
  CHECK(files == 2 * 5);  // four frames and landmarks.json per clip
}

TEST_CASE("argument and config validation exit with 2") {
  CHECK(cli({}).code == 2);
  CHECK(cli({"no-such-command"}).code == 2);
  CHECK(cli({"make-fixtures", "--out", "x", "--bogus", "1"}).code == 2);
  CHECK(cli({"make-fixtures", "--identities", "2"}).code == 2);  // --out missing
  CHECK(cli({"make-fixtures", "--out", "x", "--frames", "many"}).code == 2);
  CHECK(cli({"train-canonical", "--data", "/nonexistent", "--out", "a.ckpt"}).code == 2);
  CHECK(cli({"--help"}).code == 0);

  const fs::path dir = scratch("cfg");
  std::ofstream(dir / "bad.cfg") << "steps = 3\nnonsense = 2\n";
  CHECK(cli({"train-canonical", "--config", (dir / "bad.cfg").string(), "--data", fixture_root().string(), "--out",
             (dir / "c.ckpt").string()})
            .code == 2);
  CHECK_FALSE(fs::exists(dir / "c.ckpt"));
  std::ofstream(dir / "zero.cfg") << "batch-size = 0\n";
  CHECK(cli({"train-canonical", "--config", (dir / "zero.cfg").string(), "--data", fixture_root().string(), "--out",
             (dir / "c.ckpt").string()})
            .code == 2);
}

TEST_CASE("config file values apply and flags override them") {
  const fs::path dir = scratch("train");
  std::ofstream(dir / "run.cfg") << "# tiny run\nsteps = 3\nbatch-size = 1\nwidth = 0.125\nprint-every = 0\ndata = "
                                 << fixture_root().string() << "\n";
  const std::string cfg = (dir / "run.cfg").string();
  Run r = cli({"train-canonical", "--config", cfg, "--out", (dir / "a.ckpt").string()});
  REQUIRE(r.code == 0);
  CHECK(json::parse(r.out)["steps"] == 3);
  r = cli({"train-canonical", "--config", cfg, "--steps", "2", "--out", (dir / "b.ckpt").string()});
  REQUIRE(r.code == 0);
  CHECK(json::parse(r.out)["steps"] == 2);
  CHECK(load_checkpoint((dir / "b.ckpt").string()).kind == "canonical");
}

TEST_CASE("checkpoint directory comes from the environment") {
  const fs::path dir = scratch("env");
  ::setenv("FREEHEAD_CHECKPOINT_DIR", dir.c_str(), 1);
  const Run r = cli({"train-canonical", "--data", fixture_root().string(), "--steps", "1", "--batch-size", "1",
                     "--width", "0.125", "--print-every", "0"});
  ::unsetenv("FREEHEAD_CHECKPOINT_DIR");
  CHECK(r.code == 0);
  CHECK(fs::is_regular_file(dir / "canonical.ckpt"));
}

TEST_CASE("evaluate prints a metric report") {
  const fs::path clip = fixture_root() / "clip_00";
  Run r = cli({"evaluate", "--pred", clip.string(), "--gt", clip.string()});
  REQUIRE(r.code == 0);
  const json j = json::parse(r.out);
  CHECK(j["l1"] == 0.0);
  CHECK(j.contains("fid"));
  const fs::path other = scratch("eval_gt");
  fs::copy_file(clip / "frame_0000.png", other / "frame_0000.png");
  CHECK(cli({"evaluate", "--pred", clip.string(), "--gt", other.string()}).code == 2);
}

TEST_CASE("inference commands: ablation switch, bounds and runtime failures") {
  const fs::path dir = scratch("infer");
  // A face-like canonical estimator so the estimates are usable.
  auto models = testing::face_like_models();
  Checkpoint c;
  c.kind = "canonical";
  c.config = models->config;
  store_module(c, "ecan.", models->canonical);
  const std::string can = (dir / "canonical.ckpt").string();
  save_checkpoint(can, c);

  const std::string src = (fixture_root() / "clip_00" / "frame_0000.png").string();
  const std::string tgt = (fixture_root() / "clip_01" / "frame_0003.png").string();
  const std::string a = (dir / "a.png").string(), b = (dir / "b.png").string();
  CHECK(cli({"reenact", "--canonical", can, "--source", src, "--target", tgt, "--out", a}).code == 0);
  CHECK(cli({"reenact", "--canonical", can, "--source", src, "--target", tgt, "--out", b, "--no-adapt"}).code == 0);
  CHECK(slurp(a) != slurp(b));

  CHECK(cli({"edit", "--canonical", can, "--source", src, "--yaw", "200", "--out", a}).code == 2);
  CHECK(cli({"edit", "--canonical", can, "--source", src, "--gaze-theta", "10", "--out", a}).code == 2);
  CHECK(cli({"edit", "--canonical", can, "--source", src, "--yaw", "15", "--out", a}).code == 0);
  CHECK(cli({"edit", "--canonical", (dir / "missing.ckpt").string(), "--source", src, "--out", a}).code == 2);

  std::ofstream(dir / "broken.png") << "not an image";
  CHECK(cli({"reenact", "--canonical", can, "--source", (dir / "broken.png").string(), "--target", tgt, "--out", a})
            .code == 3);
  std::ofstream(dir / "broken.ckpt") << "junk";
  CHECK(cli({"edit", "--canonical", (dir / "broken.ckpt").string(), "--source", src, "--out", a}).code == 3);
}
