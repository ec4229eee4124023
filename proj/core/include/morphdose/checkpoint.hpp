#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "morphdose/mdp.hpp"
#include "morphdose/qnet.hpp"

namespace morphdose {

/// Network weights plus the input normalization they were trained with.
struct QModel {
  QParams params;
  Normalizer normalizer;

  /// Normalizes a raw state and returns its Q-values.
  Eigen::VectorXd q_values(const StateVector& raw_state) const;
};

/// Model file contents. `metadata` carries the training configuration for provenance.
struct Checkpoint {
  QModel model;
  std::map<std::string, std::string> metadata;
};

// Binary layout, all integers and doubles little-endian:
//   "MDQN" magic, u32 version (= 1)
//   u32 input_dim, hidden_dim, stream_dim, num_actions; f64 leaky_slope
//   u32 norm_dim; f64[norm_dim] mean; f64[norm_dim] scale
//   u32 metadata_count; per entry: u32 key_len, key bytes, u32 value_len, value bytes
//   for each of the six layers (trunk1, trunk2, value_hidden, value_out,
//   advantage_hidden, advantage_out): u32 rows, u32 cols, f64 weight[rows*cols] in
//   row-major order, f64 bias[rows]
// Optimizer state is not stored.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace morphdose
