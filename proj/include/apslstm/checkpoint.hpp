#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "apslstm/data.hpp"
#include "apslstm/model.hpp"

namespace apslstm {

// Layout, all integers little-endian:
//   "APSL" | u32 version | config block | tensor records until EOF
// config block: u32 per ModelConfig field in kCheckpointConfigFields order, then u64 seed.
// tensor record: u32 name_len | name | u32 rank | u32 dims[rank] | f64 data[numel]
// Besides the learnable parameters the file carries the Laplacian eigenvectors
// and eigenvalues, and the scaler extrema when one is supplied.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelState model;
  std::optional<MinMaxScaler> scaler;
};

std::vector<std::uint8_t> serialize_checkpoint(const ModelState& model, const MinMaxScaler* scaler = nullptr);
void save_checkpoint(const std::filesystem::path& path, const ModelState& model,
                     const MinMaxScaler* scaler = nullptr);

// When `expected` is given, every config field must match before any tensor
// is read; the ConfigError names the first mismatched field. Corrupt or
// truncated files raise DataError mentioning "checkpoint".
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes, const ModelConfig* expected = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

// Name of the first field where the configs differ, or empty.
std::string first_config_mismatch(const ModelConfig& stored, const ModelConfig& expected);

}  // namespace apslstm
