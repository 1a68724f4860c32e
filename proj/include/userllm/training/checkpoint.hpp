#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "userllm/numerics/tensor.hpp"

namespace userllm {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary container: magic "ULLMCKPT", u32 version, u64-length config JSON,
/// u64 tensor count, then per tensor (u64-length name, u64 rows, u64 cols,
/// float32 values row-major). Little-endian.
struct Checkpoint {
  nlohmann::json config;
  std::vector<std::pair<std::string, Matrix<float>>> tensors;

  const Matrix<float>* find(std::string_view name) const;
};

template <typename Scalar>
Checkpoint make_checkpoint(const nlohmann::json& config, const ParameterSet<Scalar>& params);

std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint parse_checkpoint(std::string_view bytes);

/// Written via a temporary file and rename.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws CheckpointError naming the first field where `stored` differs
/// from `expected` (e.g. "encoder.d_model: checkpoint has 64, config has 128").
void require_config_match(const nlohmann::json& stored, const nlohmann::json& expected, const std::string& path = "");

/// Copies every checkpoint tensor whose name starts with `prefix` into the
/// parameter of the same name. Missing parameters and shape mismatches throw.
/// Returns the number of tensors loaded.
template <typename Scalar>
std::size_t load_parameters(const Checkpoint& checkpoint, ParameterSet<Scalar>& params, std::string_view prefix = "");

std::string sha256_hex(const void* data, std::size_t size);

template <typename Scalar>
std::string tensor_sha256(const Tensor<Scalar>& tensor) {
  return sha256_hex(tensor.data.data(), sizeof(Scalar) * static_cast<std::size_t>(tensor.size()));
}

}  // namespace userllm
