#include "userllm/training/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <openssl/sha.h>

namespace userllm {

namespace {

constexpr char kMagic[8] = {'U', 'L', 'L', 'M', 'C', 'K', 'P', 'T'};
static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T value) {
  char buffer[sizeof(T)];
  std::memcpy(buffer, &value, sizeof(T));
  out.append(buffer, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    T value;
    std::memcpy(&value, take(sizeof(T)).data(), sizeof(T));
    return value;
  }

  std::string_view take(std::size_t n) {
    if (n > bytes_.size() - pos_) throw CheckpointError("checkpoint truncated");
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::string describe(const nlohmann::json& j) { return j.dump(); }

}  // namespace

const Matrix<float>* Checkpoint::find(std::string_view name) const {
  for (const auto& [key, value] : tensors) {
    if (key == name) return &value;
  }
  return nullptr;
}

template <typename Scalar>
Checkpoint make_checkpoint(const nlohmann::json& config, const ParameterSet<Scalar>& params) {
  Checkpoint c;
  c.config = config;
  for (const auto& [name, tensor] : params.entries()) c.tensors.emplace_back(name, tensor->data.template cast<float>());
  return c;
}

std::string serialize_checkpoint(const Checkpoint& c) {
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string config = c.config.dump();
  put<std::uint64_t>(out, config.size());
  out += config;
  put<std::uint64_t>(out, c.tensors.size());
  for (const auto& [name, m] : c.tensors) {
    put<std::uint64_t>(out, name.size());
    out += name;
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
    out.append(reinterpret_cast<const char*>(m.data()), sizeof(float) * static_cast<std::size_t>(m.size()));
  }
  return out;
}

Checkpoint parse_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(sizeof kMagic) != std::string_view(kMagic, sizeof kMagic)) throw CheckpointError("not a checkpoint file");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint c;
  const auto config_size = r.get<std::uint64_t>();
  try {
    c.config = nlohmann::json::parse(r.take(config_size));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name(r.take(r.get<std::uint64_t>()));
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    if (cols != 0 && rows > (bytes.size() / sizeof(float)) / cols) throw CheckpointError("checkpoint truncated");
    Matrix<float> m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    const auto raw = r.take(sizeof(float) * rows * cols);
    std::memcpy(m.data(), raw.data(), raw.size());
    c.tensors.emplace_back(std::move(name), std::move(m));
  }
  if (!r.done()) throw CheckpointError("trailing bytes after checkpoint tensors");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const std::string bytes = serialize_checkpoint(checkpoint);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_checkpoint(buffer.str());
}

void require_config_match(const nlohmann::json& stored, const nlohmann::json& expected, const std::string& path) {
  const std::string here = path.empty() ? "<root>" : path;
  if (expected.is_object()) {
    if (!stored.is_object()) throw CheckpointError(here + ": checkpoint has " + describe(stored) + ", config has an object");
    for (const auto& [key, value] : expected.items()) {
      const std::string child = path.empty() ? key : path + "." + key;
      auto it = stored.find(key);
      if (it == stored.end()) throw CheckpointError(child + ": missing from checkpoint config");
      require_config_match(*it, value, child);
    }
    for (const auto& [key, value] : stored.items()) {
      if (!expected.contains(key)) throw CheckpointError((path.empty() ? key : path + "." + key) + ": not in config");
    }
    return;
  }
  if (stored != expected) {
    throw CheckpointError(here + ": checkpoint has " + describe(stored) + ", config has " + describe(expected));
  }
}

template <typename Scalar>
std::size_t load_parameters(const Checkpoint& checkpoint, ParameterSet<Scalar>& params, std::string_view prefix) {
  std::size_t loaded = 0;
  for (const auto& [name, m] : checkpoint.tensors) {
    if (!name.starts_with(prefix)) continue;
    auto tensor = params.find(name);
    if (!tensor) throw CheckpointError("checkpoint tensor " + name + " has no matching parameter");
    if (tensor->rows() != m.rows() || tensor->cols() != m.cols()) {
      throw CheckpointError("shape mismatch for " + name + ": checkpoint [" + std::to_string(m.rows()) + "," +
                            std::to_string(m.cols()) + "], model [" + std::to_string(tensor->rows()) + "," +
                            std::to_string(tensor->cols()) + "]");
    }
    tensor->data = m.template cast<Scalar>();
    ++loaded;
  }
  return loaded;
}

std::string sha256_hex(const void* data, std::size_t size) {
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(static_cast<const unsigned char*>(data), size, digest);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned char b : digest) {
    out += hex[b >> 4];
    out += hex[b & 15];
  }
  return out;
}

template Checkpoint make_checkpoint<float>(const nlohmann::json&, const ParameterSet<float>&);
template Checkpoint make_checkpoint<double>(const nlohmann::json&, const ParameterSet<double>&);
template std::size_t load_parameters<float>(const Checkpoint&, ParameterSet<float>&, std::string_view);
template std::size_t load_parameters<double>(const Checkpoint&, ParameterSet<double>&, std::string_view);

}  // namespace userllm
