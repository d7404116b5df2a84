#include "freehead/checkpoint.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace freehead {

namespace {

constexpr char kMagic[8] = {'F', 'H', 'G', 'C', 'K', 'P', 'T', '\0'};
static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <typename U>
U get(std::istream& is) {
  U v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw CheckpointError("truncated checkpoint");
  return v;
}

}  // namespace

const Tensor<float>* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

bool Checkpoint::has_prefix(const std::string& prefix) const {
  for (const auto& [n, t] : tensors)
    if (n.compare(0, prefix.size(), prefix) == 0) return true;
  return false;
}

void store_module(Checkpoint& ckpt, const std::string& prefix, Module<float>& m) {
  for (const auto& [n, p] : m.named_parameters(prefix)) ckpt.tensors.emplace_back(n, p.value());
  for (const auto& [n, b] : m.named_buffers(prefix)) ckpt.tensors.emplace_back(n, *b);
}

void load_module(const Checkpoint& ckpt, const std::string& prefix, Module<float>& m) {
  auto fetch = [&](const std::string& n, const Shape& shape) -> const Tensor<float>& {
    const Tensor<float>* t = ckpt.find(n);
    if (!t) throw CheckpointError("checkpoint lacks tensor " + n);
    if (t->shape() != shape) {
      throw CheckpointError("tensor " + n + " has shape " + shape_str(t->shape()) + ", model expects " + shape_str(shape));
    }
    return *t;
  };
  for (auto& [n, p] : m.named_parameters(prefix)) {
    Var<float> v = p;
    v.mutable_value() = fetch(n, p.value().shape());
  }
  for (auto& [n, b] : m.named_buffers(prefix)) *b = fetch(n, b->shape());
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json h;
  h["version"] = Checkpoint::kVersion;
  h["kind"] = ckpt.kind;
  h["config"] = nlohmann::json::parse(ckpt.config.to_json());
  h["config_hash"] = ckpt.config.hash();
  h["extra"] = nlohmann::json::parse(ckpt.extra);
  nlohmann::json table = nlohmann::json::array();
  Index offset = 0;
  for (const auto& [n, t] : ckpt.tensors) {
    table.push_back({{"name", n}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size();
  }
  h["tensors"] = std::move(table);
  const std::string header = h.dump();

  // Write beside the target and rename, so a crash never leaves a torn file.
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot write " + tmp);
    os.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(os, Checkpoint::kVersion);
    put<std::uint64_t>(os, header.size());
    os.write(header.data(), std::streamsize(header.size()));
    for (const auto& [n, t] : ckpt.tensors) os.write(reinterpret_cast<const char*>(t.data()), std::streamsize(t.size() * sizeof(float)));
    if (!os) throw CheckpointError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path);
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMagic, sizeof magic) != 0) throw CheckpointError(path + " is not a checkpoint");
  const auto version = get<std::uint32_t>(is);
  if (version != Checkpoint::kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto len = get<std::uint64_t>(is);
  if (len > (std::uint64_t(1) << 30)) throw CheckpointError("corrupt checkpoint header");
  std::string header(len, '\0');
  is.read(header.data(), std::streamsize(len));
  if (!is) throw CheckpointError("truncated checkpoint");

  Checkpoint c;
  try {
    const auto h = nlohmann::json::parse(header);
    c.kind = h.at("kind").get<std::string>();
    c.config = ModelConfig::from_json(h.at("config").dump());
    if (h.at("config_hash").get<std::string>() != c.config.hash()) throw CheckpointError("checkpoint config hash is inconsistent");
    c.extra = h.value("extra", nlohmann::json::object()).dump();
    for (const auto& e : h.at("tensors")) {
      Tensor<float> t(e.at("shape").get<Shape>());
      is.read(reinterpret_cast<char*>(t.data()), std::streamsize(t.size() * sizeof(float)));
      if (!is) throw CheckpointError("truncated checkpoint data");
      c.tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  }
  return c;
}

void check_config(const Checkpoint& ckpt, const ModelConfig& expected, bool force) {
  if (force || ckpt.config.hash() == expected.hash()) return;
  throw CheckpointError("config hash mismatch: checkpoint " + ckpt.config.hash() + ", expected " + expected.hash() +
                        " (use --force to load anyway)");
}

}  // namespace freehead
