#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include "mio/model.hpp"

namespace mio::model {

namespace fs = std::filesystem;

namespace {

constexpr std::array<char, 4> kMagic = {'M', 'I', 'O', '1'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

[[noreturn]] void fail(const fs::path& path, const std::string& what) {
  throw std::runtime_error("checkpoint " + path.string() + ": " + what);
}

template <std::floating_point T>
void store_params(Checkpoint& ck, const std::vector<const Parameter<T>*>& params) {
  for (const auto* p : params) {
    if (p->value.empty()) continue;
    ck.tensors.push_back({p->name, p->value.template cast<float>()});
  }
}

template <std::floating_point T>
void load_params(const Checkpoint& ck, const std::vector<Parameter<T>*>& params) {
  for (auto* p : params) {
    if (p->value.empty()) continue;
    if (!ck.has(p->name)) throw std::runtime_error("checkpoint is missing tensor '" + p->name + "'");
    const auto& t = ck.get(p->name);
    if (t.shape() != p->value.shape()) {
      throw std::runtime_error("checkpoint tensor '" + p->name + "' has shape " + t.shape().str() + ", expected " +
                               p->value.shape().str());
    }
    p->value = t.template cast<T>();
    p->grad = Tensor<T>(t.shape());
  }
}

}  // namespace

const Tensor<float>& Checkpoint::get(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.value;
  }
  throw std::out_of_range("checkpoint has no tensor '" + name + "'");
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return true;
  }
  return false;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  nlohmann::json dir = nlohmann::json::array();
  for (const auto& t : ckpt.tensors) {
    const Shape& s = t.value.shape();
    dir.push_back({{"name", t.name}, {"shape", {s.n, s.c, s.h, s.w}}});
  }
  const std::string header = nlohmann::json{{"meta", ckpt.meta}, {"tensors", dir}}.dump();

  std::string bytes(kMagic.begin(), kMagic.end());
  put_u32(bytes, Checkpoint::kVersion);
  put_u32(bytes, static_cast<std::uint32_t>(header.size()));
  bytes += header;
  for (const auto& t : ckpt.tensors) {
    for (float f : t.value.values()) put_u32(bytes, std::bit_cast<std::uint32_t>(f));
  }

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(path, "cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(path, "write failed");
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open");
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 12) fail(path, "truncated header");
  if (std::memcmp(p, kMagic.data(), 4) != 0) fail(path, "bad magic (not a checkpoint)");
  const std::uint32_t version = get_u32(p + 4);
  if (version != Checkpoint::kVersion) fail(path, "unsupported version " + std::to_string(version));
  const std::size_t hlen = get_u32(p + 8);
  if (bytes.size() < 12 + hlen) fail(path, "truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(12, hlen));
  } catch (const nlohmann::json::exception& e) {
    fail(path, std::string("corrupt header: ") + e.what());
  }

  Checkpoint ck;
  ck.meta = header.value("meta", nlohmann::json::object());
  std::size_t offset = 12 + hlen;
  for (const auto& entry : header.at("tensors")) {
    const auto dims = entry.at("shape").get<std::vector<int>>();
    if (dims.size() != 4) fail(path, "tensor shape must have 4 dimensions");
    const Shape s{dims[0], dims[1], dims[2], dims[3]};
    Tensor<float> t(s);
    if (bytes.size() < offset + 4 * t.size()) fail(path, "truncated payload");
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::bit_cast<float>(get_u32(p + offset + 4 * i));
    offset += 4 * t.size();
    ck.tensors.push_back({entry.at("name").get<std::string>(), std::move(t)});
  }
  if (offset != bytes.size()) fail(path, "trailing bytes after payload");
  return ck;
}

Checkpoint restorer_checkpoint(const Restorer<float>& model) {
  Checkpoint ck;
  ck.meta = {{"kind", "restorer"}, {"config", model.config().to_json()}};
  store_params(ck, model.parameters());
  return ck;
}

Restorer<float> restorer_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.meta.value("kind", "") != "restorer") throw std::runtime_error("checkpoint does not hold a restorer");
  Restorer<float> model(BackboneConfig::from_json(ckpt.meta.at("config")), 0);
  load_params(ckpt, model.parameters());
  return model;
}

Checkpoint classifier_checkpoint(const Classifier<float>& model) {
  Checkpoint ck;
  ck.meta = {{"kind", "classifier"}, {"config", model.config().to_json()}, {"trained", model.trained()}};
  store_params(ck, model.parameters());
  return ck;
}

Classifier<float> classifier_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.meta.value("kind", "") != "classifier") throw std::runtime_error("checkpoint does not hold a classifier");
  Classifier<float> model(ClassifierConfig::from_json(ckpt.meta.at("config")), 0);
  load_params(ckpt, model.parameters());
  model.set_trained(ckpt.meta.value("trained", false));
  return model;
}

}  // namespace mio::model
