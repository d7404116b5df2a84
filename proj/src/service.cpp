#include "freehead/service.hpp"

#include "freehead/image_io.hpp"

#include <httplib.h>
#include <json.hpp>

#include <cmath>
#include <cstring>
#include <functional>
#include <iomanip>
#include <random>
#include <sstream>
#include <stdexcept>

namespace freehead {

using json = nlohmann::json;

void ServiceConfig::validate() const {
  auto bad = [](const std::string& m) { throw std::invalid_argument(m); };
  if (host.empty()) bad("host must not be empty");
  if (port < 0 || port > 65535) bad("port must be in [0, 65535]");
  if (max_sessions < 1) bad("max_sessions must be >= 1");
  if (queue_depth < 1) bad("queue_depth must be >= 1");
  if (!(session_ttl_seconds > 0)) bad("session_ttl must be > 0 seconds");
  if (device != "cpu") bad("device '" + device + "' not available (only cpu)");
}

InferenceQueue::InferenceQueue(int depth) : depth_(depth) {
  if (depth < 1) throw std::invalid_argument("queue depth must be >= 1");
}

InferenceQueue::Ticket::~Ticket() {
  if (!q_) return;
  std::lock_guard lk(q_->m_);
  --q_->pending_;
}

std::optional<InferenceQueue::Ticket> InferenceQueue::try_enter() {
  std::lock_guard lk(m_);
  if (pending_ >= depth_) return std::nullopt;
  ++pending_;
  return std::optional<Ticket>(std::in_place, this);
}

int InferenceQueue::pending() {
  std::lock_guard lk(m_);
  return pending_;
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

HttpReply json_reply(int status, const json& body) {
  HttpReply r;
  r.status = status;
  r.body = body.dump();
  return r;
}

HttpReply error_reply(int status, const std::string& message) { return json_reply(status, {{"error", message}}); }

json bounds_json() {
  return {{"euler_degrees", {-PoseBounds::kEuler, PoseBounds::kEuler}},
          {"gaze_degrees_exclusive", {-PoseBounds::kGaze, PoseBounds::kGaze}},
          {"gaze_rule", "|phi| <= |theta|"},
          {"deform_scale", {0.0, PoseBounds::kDeformScale}}};
}

HttpReply range_reply(const std::string& message) {
  return json_reply(422, {{"error", message}, {"bounds", bounds_json()}});
}

HttpReply busy_reply() {
  HttpReply r = error_reply(503, "inference queue full");
  r.headers.emplace_back("Retry-After", "1");
  return r;
}

std::string latency_ms(InferenceService::Clock::time_point start) {
  const double ms = std::chrono::duration<double, std::milli>(InferenceService::Clock::now() - start).count();
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << ms;
  return os.str();
}

HttpReply png_reply(const Tensor<float>& image, InferenceService::Clock::time_point start) {
  const auto bytes = encode_png(image);
  HttpReply r;
  r.content_type = "image/png";
  r.body.assign(bytes.begin(), bytes.end());
  r.headers.emplace_back("X-Latency-Ms", latency_ms(start));
  return r;
}

Tensor<float> decode_upload(const std::string& png) {
  return decode_png(std::vector<std::uint8_t>(png.begin(), png.end()));
}

json gaze_json(const GazeAngles& g) { return {{"theta", g.theta}, {"phi", g.phi}}; }

struct BadRequest : std::runtime_error {
  using std::runtime_error::runtime_error;
};

double number(const json& v, const char* what) {
  if (!v.is_number()) throw BadRequest(std::string(what) + " must be a number");
  return v.get<double>();
}

EditRequest parse_edit(const std::string& body) {
  EditRequest req;
  if (body.find_first_not_of(" \t\r\n") == std::string::npos) return req;
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    throw BadRequest(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw BadRequest("body must be a JSON object");
  for (const auto& [key, v] : j.items()) {
    if (key == "euler") {
      if (v.is_null()) continue;
      if (!v.is_array() || v.size() != 3) throw BadRequest("euler must be [pitch, yaw, roll]");
      req.euler = EulerAngles{number(v[0], "euler[0]"), number(v[1], "euler[1]"), number(v[2], "euler[2]")};
    } else if (key == "gaze") {
      if (v.is_null()) continue;
      if (!v.is_object() || !v.contains("theta") || !v.contains("phi")) throw BadRequest("gaze must be {theta, phi}");
      req.gaze = GazeAngles{number(v["theta"], "gaze.theta"), number(v["phi"], "gaze.phi")};
    } else if (key == "deform_scale") {
      if (v.is_null()) continue;
      req.deform_scale = number(v, "deform_scale");
    } else {
      throw BadRequest("unknown field '" + key + "'");
    }
  }
  return req;
}

}  // namespace

std::string base64_encode(const std::string& bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const unsigned v = (std::uint8_t(bytes[i]) << 16) | (std::uint8_t(bytes[i + 1]) << 8) | std::uint8_t(bytes[i + 2]);
    for (int s = 18; s >= 0; s -= 6) out += kAlphabet[(v >> s) & 63];
  }
  if (i < bytes.size()) {
    unsigned v = std::uint8_t(bytes[i]) << 16;
    if (i + 1 < bytes.size()) v |= std::uint8_t(bytes[i + 1]) << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += i + 1 < bytes.size() ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::string base64_decode(const std::string& text) {
  std::string in = text;
  // Accept data URLs.
  if (in.rfind("data:", 0) == 0) {
    const auto comma = in.find(',');
    if (comma == std::string::npos) throw std::invalid_argument("malformed data URL");
    in = in.substr(comma + 1);
  }
  std::string out;
  unsigned acc = 0;
  int bits = 0;
  bool padding = false;
  for (char c : in) {
    if (c == ' ' || c == '\n' || c == '\r' || c == '\t') continue;
    if (c == '=') {
      padding = true;
      continue;
    }
    const char* p = std::strchr(kAlphabet, c);
    if (c == '\0' || !p || padding) throw std::invalid_argument("invalid base64");
    acc = (acc << 6) | unsigned(p - kAlphabet);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out += char((acc >> bits) & 0xff);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

InferenceService::InferenceService(std::unique_ptr<ModelSet> models, ServiceConfig cfg)
    : cfg_((cfg.validate(), std::move(cfg))),
      models_(std::move(models)),
      pipeline_(*models_),
      queue_(cfg_.queue_depth),
      id_rng_(std::random_device{}()) {}

InferenceService::~InferenceService() = default;

HttpReply InferenceService::health() {
  evict_expired();
  return json_reply(200, {{"status", "ok"},
                          {"config_hash", models_->config.hash()},
                          {"resolution", models_->config.resolution},
                          {"sessions", session_count()},
                          {"queue_depth", queue_.depth()}});
}

std::string InferenceService::new_id() {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << id_rng_();
  return os.str();
}

std::shared_ptr<const SourceSession> InferenceService::find(const std::string& id) {
  std::lock_guard lk(sessions_mu_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) return nullptr;
  it->second.last_used = Clock::now();
  return it->second.session;
}

std::size_t InferenceService::session_count() {
  std::lock_guard lk(sessions_mu_);
  return sessions_.size();
}

void InferenceService::evict_expired() {
  const auto now = Clock::now();
  const auto ttl = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(cfg_.session_ttl_seconds));
  std::lock_guard lk(sessions_mu_);
  for (auto it = sessions_.begin(); it != sessions_.end();)
    it = now - it->second.last_used > ttl ? sessions_.erase(it) : std::next(it);
  for (auto it = idempotency_.begin(); it != idempotency_.end();)
    it = sessions_.count(it->second.session_id) ? std::next(it) : idempotency_.erase(it);
}

HttpReply InferenceService::create_session(const std::string& png, const std::string& idempotency_key) {
  evict_expired();
  const std::size_t content = std::hash<std::string>{}(png);
  auto replay = [&]() -> std::optional<HttpReply> {
    std::lock_guard lk(sessions_mu_);
    const auto it = idempotency_.find(idempotency_key);
    if (it == idempotency_.end()) return std::nullopt;
    if (!sessions_.count(it->second.session_id)) {
      idempotency_.erase(it);  // session dropped since; upload again
      return std::nullopt;
    }
    if (it->second.content_hash != content)
      return error_reply(409, "Idempotency-Key reused with different image content");
    auto& e = sessions_.at(it->second.session_id);
    e.last_used = Clock::now();
    HttpReply r;
    r.body = e.summary;
    return r;
  };
  if (!idempotency_key.empty())
    if (auto r = replay()) return *r;

  Tensor<float> image;
  try {
    image = decode_upload(png);
  } catch (const std::exception& e) {
    return error_reply(400, e.what());
  }
  auto ticket = queue_.try_enter();
  if (!ticket) return busy_reply();

  const std::string id = [&] {
    std::lock_guard lk(sessions_mu_);
    std::string s;
    do s = new_id();
    while (sessions_.count(s));
    return s;
  }();
  std::shared_ptr<const SourceSession> session;
  try {
    std::lock_guard run(queue_.run_mutex());
    session = pipeline_.create_session({image}, id);
  } catch (const PipelineError& e) {
    return error_reply(422, e.what());
  }

  const FaceEstimate& f = session->sources.front().face;
  const json summary = {{"session_id", id},
                        {"euler", {f.euler.pitch, f.euler.yaw, f.euler.roll}},
                        {"gaze", {{"left", gaze_json(f.gaze_left)}, {"right", gaze_json(f.gaze_right)}}},
                        {"width", image.dim(2)},
                        {"height", image.dim(1)}};

  std::lock_guard lk(sessions_mu_);
  if (!idempotency_key.empty()) {
    // A concurrent upload with the same key may have finished first.
    const auto it = idempotency_.find(idempotency_key);
    if (it != idempotency_.end() && sessions_.count(it->second.session_id)) {
      if (it->second.content_hash != content)
        return error_reply(409, "Idempotency-Key reused with different image content");
      HttpReply r;
      r.body = sessions_.at(it->second.session_id).summary;
      return r;
    }
    idempotency_[idempotency_key] = {content, id};
  }
  while (int(sessions_.size()) >= cfg_.max_sessions) {
    auto lru = sessions_.begin();
    for (auto it = sessions_.begin(); it != sessions_.end(); ++it)
      if (it->second.last_used < lru->second.last_used) lru = it;
    sessions_.erase(lru);
  }
  sessions_[id] = {session, summary.dump(), Clock::now()};
  return json_reply(201, summary);
}

HttpReply InferenceService::render(const std::string& id, const std::string& json_body) {
  const auto start = Clock::now();
  evict_expired();
  const auto session = find(id);
  if (!session) return error_reply(404, "unknown session '" + id + "'");
  EditRequest req;
  try {
    req = parse_edit(json_body);
    validate_edit(req);
  } catch (const BadRequest& e) {
    return error_reply(400, e.what());
  } catch (const RangeError& e) {
    return range_reply(e.what());
  }
  auto ticket = queue_.try_enter();
  if (!ticket) return busy_reply();
  Tensor<float> image;
  {
    std::lock_guard run(queue_.run_mutex());
    image = pipeline_.edit(*session, req).image;
  }
  return png_reply(image, start);
}

HttpReply InferenceService::reenact(const std::string& source_png, const std::string& target_png, bool adapt) {
  const auto start = Clock::now();
  Tensor<float> source, target;
  try {
    source = decode_upload(source_png);
    target = decode_upload(target_png);
  } catch (const std::exception& e) {
    return error_reply(400, e.what());
  }
  auto ticket = queue_.try_enter();
  if (!ticket) return busy_reply();
  Tensor<float> image;
  try {
    std::lock_guard run(queue_.run_mutex());
    const auto s = pipeline_.create_session({source}, "reenact");
    image = pipeline_.reenact(*s, target, adapt).image;
  } catch (const PipelineError& e) {
    return error_reply(422, e.what());
  }
  return png_reply(image, start);
}

HttpReply InferenceService::remove_session(const std::string& id) {
  std::lock_guard lk(sessions_mu_);
  if (!sessions_.erase(id)) return error_reply(404, "unknown session '" + id + "'");
  HttpReply r;
  r.status = 204;
  r.content_type.clear();
  return r;
}

// ---------------------------------------------------------------------------

namespace {

void send(httplib::Response& res, const HttpReply& r) {
  res.status = r.status;
  for (const auto& [k, v] : r.headers) res.set_header(k, v);
  if (!r.content_type.empty()) res.set_content(r.body, r.content_type);
}

bool is_json(const httplib::Request& req) {
  return req.get_header_value("Content-Type").rfind("application/json", 0) == 0;
}

// Image field from a multipart form, a JSON body holding base64, or (for a
// single-image endpoint) the raw request body.
std::optional<std::string> image_field(const httplib::Request& req, const std::string& name, bool raw_ok,
                                       std::string& error) {
  if (req.is_multipart_form_data()) {
    if (req.has_file(name)) return req.get_file_value(name).content;
    error = "multipart form lacks field '" + name + "'";
    return std::nullopt;
  }
  if (is_json(req)) {
    try {
      const json j = json::parse(req.body);
      if (!j.is_object() || !j.contains(name) || !j[name].is_string()) {
        error = "JSON body lacks base64 string field '" + name + "'";
        return std::nullopt;
      }
      return base64_decode(j[name].get<std::string>());
    } catch (const std::exception& e) {
      error = e.what();
      return std::nullopt;
    }
  }
  if (raw_ok && !req.body.empty()) return req.body;
  error = "expected multipart/form-data or application/json with base64 field '" + name + "'";
  return std::nullopt;
}

bool flag_off(const std::string& v) { return v == "0" || v == "false" || v == "no"; }

}  // namespace

std::unique_ptr<httplib::Server> make_http_server(InferenceService& service) {
  auto srv = std::make_unique<httplib::Server>();
  InferenceService* svc = &service;

  srv->Get("/health", [svc](const httplib::Request&, httplib::Response& res) { send(res, svc->health()); });

  srv->Post("/sessions", [svc](const httplib::Request& req, httplib::Response& res) {
    std::string err;
    const auto png = image_field(req, "image", true, err);
    if (!png) return send(res, error_reply(400, err));
    send(res, svc->create_session(*png, req.get_header_value("Idempotency-Key")));
  });

  srv->Post(R"(/sessions/([^/]+)/render)", [svc](const httplib::Request& req, httplib::Response& res) {
    send(res, svc->render(req.matches[1], req.body));
  });

  srv->Delete(R"(/sessions/([^/]+))", [svc](const httplib::Request& req, httplib::Response& res) {
    send(res, svc->remove_session(req.matches[1]));
  });

  srv->Post("/reenact", [svc](const httplib::Request& req, httplib::Response& res) {
    std::string err;
    const auto source = image_field(req, "source", false, err);
    if (!source) return send(res, error_reply(400, err));
    const auto target = image_field(req, "target", false, err);
    if (!target) return send(res, error_reply(400, err));
    bool adapt = !(req.has_param("adapt") && flag_off(req.get_param_value("adapt")));
    if (req.is_multipart_form_data() && req.has_file("adapt")) adapt = !flag_off(req.get_file_value("adapt").content);
    if (is_json(req)) {
      const json j = json::parse(req.body);
      if (j.contains("adapt") && j["adapt"].is_boolean()) adapt = j["adapt"].get<bool>();
    }
    send(res, svc->reenact(*source, *target, adapt));
  });

  srv->set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    send(res, error_reply(500, what));
  });
  return srv;
}

}  // namespace freehead
