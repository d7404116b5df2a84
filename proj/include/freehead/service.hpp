#pragma once

#include "freehead/pipeline.hpp"

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace httplib {
class Server;
}

namespace freehead {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string canonical_checkpoint, gaze_checkpoint, generator_checkpoint;  // empty: untrained
  int max_sessions = 64;          // least recently used session is dropped beyond this
  int queue_depth = 4;            // requests waiting or running inference
  double session_ttl_seconds = 1800;
  std::string device = "cpu";
  bool force = false;             // load checkpoints despite a config hash mismatch

  /// Throws std::invalid_argument.
  void validate() const;
};

/// Admission control in front of serialized inference. At most `depth`
/// requests hold a ticket at once; the rest are refused immediately.
class InferenceQueue {
 public:
  explicit InferenceQueue(int depth);

  class Ticket {
   public:
    explicit Ticket(InferenceQueue* q) : q_(q) {}
    Ticket(Ticket&& o) noexcept : q_(std::exchange(o.q_, nullptr)) {}
    Ticket& operator=(Ticket&&) = delete;
    ~Ticket();

   private:
    InferenceQueue* q_;
  };

  std::optional<Ticket> try_enter();
  /// Held while a model runs.
  std::mutex& run_mutex() { return run_; }
  int depth() const { return depth_; }
  int pending();

 private:
  std::mutex m_, run_;
  int depth_;
  int pending_ = 0;
};

struct HttpReply {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
  std::vector<std::pair<std::string, std::string>> headers;
};

/// Transport-free request handlers; make_http_server wires them to routes.
class InferenceService {
 public:
  using Clock = std::chrono::steady_clock;

  InferenceService(std::unique_ptr<ModelSet> models, ServiceConfig cfg);
  ~InferenceService();

  HttpReply health();
  /// `png` is the raw file content. A repeated idempotency key with the same
  /// bytes returns the original session.
  HttpReply create_session(const std::string& png, const std::string& idempotency_key = "");
  /// Body: {"euler": [p,y,r], "gaze": {"theta", "phi"}, "deform_scale"}, all optional.
  HttpReply render(const std::string& id, const std::string& json_body);
  HttpReply reenact(const std::string& source_png, const std::string& target_png, bool adapt = true);
  HttpReply remove_session(const std::string& id);

  std::size_t session_count();
  void evict_expired();
  InferenceQueue& queue() { return queue_; }
  const ServiceConfig& config() const { return cfg_; }
  const ModelConfig& model_config() const { return models_->config; }

 private:
  struct Entry {
    std::shared_ptr<const SourceSession> session;
    std::string summary;  // JSON returned on creation
    Clock::time_point last_used;
  };
  struct IdempotentUpload {
    std::size_t content_hash;
    std::string session_id;
  };

  std::shared_ptr<const SourceSession> find(const std::string& id);
  std::string new_id();

  ServiceConfig cfg_;
  std::unique_ptr<ModelSet> models_;
  Pipeline pipeline_;
  InferenceQueue queue_;
  std::mutex sessions_mu_;
  std::map<std::string, Entry> sessions_;
  std::map<std::string, IdempotentUpload> idempotency_;
  std::mt19937_64 id_rng_;
};

/// Routes: GET /health, POST /sessions, POST /sessions/{id}/render,
/// DELETE /sessions/{id}, POST /reenact.
std::unique_ptr<httplib::Server> make_http_server(InferenceService& service);

std::string base64_decode(const std::string& text);
std::string base64_encode(const std::string& bytes);

}  // namespace freehead
