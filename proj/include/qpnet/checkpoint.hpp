#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "qpnet/net.hpp"

namespace qpnet {

// Adaptive-moment optimiser state, one (m, v) pair per trainable tensor.
struct AdamState {
    std::uint64_t step = 0;
    std::vector<Tensor<float>> m, v;

    friend bool operator==(const AdamState&, const AdamState&) = default;
};

AdamState make_adam_state(const ModelParams<float>& p);

// "[net]" section text holding every NetConfig field, one "key = value" per line.
std::string net_config_text(const NetConfig& cfg);
NetConfig parse_net_config_text(const std::string& text);

// QPW1 layout (little endian):
//   "QPW1" | u32 n, n bytes config text | u32 tensor count
//   | per tensor: u32 rows, u32 cols, rows*cols f32
//   | u8 has_optimizer [ u64 step | m tensors | v tensors ]
//   | u64 FNV-1a of everything before it
struct Checkpoint {
    ModelParams<float> params;
    std::optional<AdamState> optimizer;
};

std::vector<std::uint8_t> checkpoint_bytes(const ModelParams<float>& p, const AdamState* opt = nullptr);
Checkpoint parse_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& p, const AdamState* opt = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::uint64_t fnv1a64(const std::uint8_t* data, std::size_t n);

}  // namespace qpnet
