#include <doctest.h>

#include "freehead/image_io.hpp"
#include "freehead/service.hpp"
#include "test_support.hpp"

#include <httplib.h>
#include <json.hpp>

#include <random>
#include <thread>

using namespace freehead;
using freehead::testing::face_like_models;
using json = nlohmann::json;

namespace {

const std::vector<FixtureClip>& fixtures() {
  static const auto set = [] {
    FixtureOptions o;
    o.identities = 2;
    o.frames = 4;
    o.resolution = 64;
    return make_synthetic_fixture_set(o);
  }();
  return set;
}

std::string png_of(const Tensor<float>& image) {
  const auto b = encode_png(image);
  return std::string(b.begin(), b.end());
}

std::unique_ptr<InferenceService> make_service(ServiceConfig cfg = {}) {
  return std::make_unique<InferenceService>(face_like_models(), cfg);
}

std::string create(InferenceService& svc, const Tensor<float>& image, const std::string& key = "") {
  const HttpReply r = svc.create_session(png_of(image), key);
  REQUIRE(r.status / 100 == 2);
  return json::parse(r.body)["session_id"].get<std::string>();
}

}  // namespace

TEST_CASE("base64 round trip and reference vectors") {
  CHECK(base64_encode("Man") == "TWFu");
  CHECK(base64_encode("Ma") == "TWE=");
  CHECK(base64_encode("M") == "TQ==");
  CHECK(base64_decode("TWE=") == "Ma");
  CHECK(base64_decode("data:image/png;base64,TQ==") == "M");
  std::mt19937 rng(3);
  std::string bytes(1001, '\0');
  for (auto& c : bytes) c = char(rng() & 0xff);
  CHECK(base64_decode(base64_encode(bytes)) == bytes);
  CHECK_THROWS(base64_decode("TW!u"));
}

TEST_CASE("service config validation") {
  ServiceConfig c;
  CHECK_NOTHROW(c.validate());
  c.queue_depth = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.device = "cuda:0";
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.port = 70000;
  CHECK_THROWS_AS(make_service(c), std::invalid_argument);
}

TEST_CASE("render contract") {
  auto svc = make_service();
  const Tensor<float>& src = fixtures()[0].images[1];
  const HttpReply created = svc->create_session(png_of(src));
  REQUIRE(created.status == 201);
  const json info = json::parse(created.body);
  const std::string id = info["session_id"];
  CHECK(info["euler"].size() == 3);
  CHECK(info["gaze"]["left"].contains("theta"));

  SUBCASE("empty body reconstructs the source frame") {
    auto models = face_like_models();
    Pipeline ref(*models);
    // The service sees the 8-bit upload.
    const std::string up = png_of(src);
    const Tensor<float> uploaded = decode_png(std::vector<std::uint8_t>(up.begin(), up.end()));
    const auto s = ref.create_session({uploaded}, "ref");
    const HttpReply r = svc->render(id, "");
    REQUIRE(r.status == 200);
    CHECK(r.content_type == "image/png");
    CHECK(r.body == png_of(ref.reenact(*s, uploaded).image));
    CHECK(svc->render(id, "{}").body == r.body);
    bool latency = false;
    for (const auto& [k, v] : r.headers) latency |= k == "X-Latency-Ms" && std::stod(v) >= 0.0;
    CHECK(latency);
  }
  SUBCASE("identical requests give identical bytes") {
    const std::string body = R"({"euler": [5, -15, 3], "gaze": {"theta": 10, "phi": 5}, "deform_scale": 0.5})";
    const HttpReply a = svc->render(id, body), b = svc->render(id, body);
    REQUIRE(a.status == 200);
    CHECK(a.body == b.body);
    CHECK(a.body != svc->render(id, "").body);
  }
  SUBCASE("out-of-range overrides are 422 with the bounds echoed") {
    const HttpReply r = svc->render(id, R"({"euler": [0, 200, 0]})");
    CHECK(r.status == 422);
    const json j = json::parse(r.body);
    CHECK(j["bounds"]["euler_degrees"] == json::array({-60.0, 60.0}));
    CHECK(std::string(j["error"]).find("yaw") != std::string::npos);
    CHECK(svc->render(id, R"({"gaze": {"theta": 85, "phi": 0}})").status == 422);
    CHECK(svc->render(id, R"({"deform_scale": 4})").status == 422);
  }
  SUBCASE("malformed bodies are 400") {
    CHECK(svc->render(id, "{").status == 400);
    CHECK(svc->render(id, R"({"euler": [1, 2]})").status == 400);
    CHECK(svc->render(id, R"({"zoom": 2})").status == 400);
  }
  SUBCASE("unknown and deleted sessions are 404") {
    CHECK(svc->render("nope", "").status == 404);
    CHECK(svc->remove_session(id).status == 204);
    CHECK(svc->render(id, "").status == 404);
    CHECK(svc->remove_session(id).status == 404);
  }
}

TEST_CASE("session creation is idempotent per content under a repeated key") {
  auto svc = make_service();
  const auto& imgs = fixtures()[0].images;
  const std::string a = create(*svc, imgs[0], "k1");
  const HttpReply again = svc->create_session(png_of(imgs[0]), "k1");
  CHECK(again.status == 200);
  CHECK(json::parse(again.body)["session_id"] == a);
  CHECK(svc->create_session(png_of(imgs[1]), "k1").status == 409);
  CHECK(create(*svc, imgs[0]) != a);  // no key, new session
  CHECK(svc->session_count() == 2);
  CHECK(svc->create_session("not a png").status == 400);
  CHECK(svc->create_session(png_of(Tensor<float>(Shape{3, 64, 64}, 0.5f))).status == 422);
}

TEST_CASE("full queue answers 503 immediately") {
  ServiceConfig cfg;
  cfg.queue_depth = 1;
  auto svc = make_service(cfg);
  const std::string id = create(*svc, fixtures()[0].images[0]);
  {
    auto held = svc->queue().try_enter();
    REQUIRE(held);
    CHECK_FALSE(svc->queue().try_enter());
    const HttpReply r = svc->render(id, "");
    CHECK(r.status == 503);
    CHECK(svc->create_session(png_of(fixtures()[0].images[1])).status == 503);
  }
  CHECK(svc->queue().pending() == 0);
  CHECK(svc->render(id, "").status == 200);
}

TEST_CASE("sessions expire and are capped") {
  ServiceConfig cfg;
  cfg.session_ttl_seconds = 0.05;
  auto svc = make_service(cfg);
  const std::string id = create(*svc, fixtures()[0].images[0]);
  std::this_thread::sleep_for(std::chrono::milliseconds(120));
  CHECK(svc->render(id, "").status == 404);

  cfg = {};
  cfg.max_sessions = 2;
  svc = make_service(cfg);
  const std::string first = create(*svc, fixtures()[0].images[0]);
  create(*svc, fixtures()[0].images[1]);
  create(*svc, fixtures()[0].images[2]);
  CHECK(svc->session_count() == 2);
  CHECK(svc->render(first, "").status == 404);  // least recently used went first
}

TEST_CASE("HTTP routes over loopback") {
  auto svc = make_service();
  auto server = make_http_server(*svc);
  const int port = server->bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread loop([&] { server->listen_after_bind(); });
  server->wait_until_ready();
  httplib::Client cli("127.0.0.1", port);

  const auto health = cli.Get("/health");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(json::parse(health->body)["config_hash"] == svc->model_config().hash());

  const std::string png = png_of(fixtures()[0].images[0]);
  const json up = {{"image", base64_encode(png)}};
  httplib::Headers key = {{"Idempotency-Key", "same"}};
  const auto s1 = cli.Post("/sessions", key, up.dump(), "application/json");
  REQUIRE(s1);
  CHECK(s1->status == 201);
  const std::string id = json::parse(s1->body)["session_id"];

  httplib::MultipartFormDataItems form = {{"image", png, "face.png", "image/png"}};
  const auto s2 = cli.Post("/sessions", key, form);
  REQUIRE(s2);
  CHECK(s2->status == 200);
  CHECK(json::parse(s2->body)["session_id"] == id);

  const auto r1 = cli.Post("/sessions/" + id + "/render", R"({"euler": [0, 20, 0]})", "application/json");
  const auto r2 = cli.Post("/sessions/" + id + "/render", R"({"euler": [0, 20, 0]})", "application/json");
  REQUIRE(r1);
  REQUIRE(r2);
  CHECK(r1->status == 200);
  CHECK(r1->get_header_value("Content-Type") == "image/png");
  CHECK(r1->has_header("X-Latency-Ms"));
  CHECK(r1->body == r2->body);
  CHECK(decode_png(std::vector<std::uint8_t>(r1->body.begin(), r1->body.end())).shape() == Shape{3, 64, 64});

  const auto bad = cli.Post("/sessions/" + id + "/render", R"({"euler": [0, 200, 0]})", "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 422);
  CHECK(json::parse(bad->body).contains("bounds"));

  httplib::MultipartFormDataItems pair = {{"source", png, "s.png", "image/png"},
                                          {"target", png_of(fixtures()[1].images[2]), "t.png", "image/png"}};
  const auto re = cli.Post("/reenact", pair);
  const auto re_plain = cli.Post("/reenact?adapt=0", pair);
  REQUIRE(re);
  REQUIRE(re_plain);
  CHECK(re->status == 200);
  CHECK(re_plain->status == 200);
  CHECK(re->body != re_plain->body);

  const auto del = cli.Delete("/sessions/" + id);
  REQUIRE(del);
  CHECK(del->status == 204);
  const auto gone = cli.Post("/sessions/" + id + "/render", "", "application/json");
  REQUIRE(gone);
  CHECK(gone->status == 404);

  server->stop();
  loop.join();
}
