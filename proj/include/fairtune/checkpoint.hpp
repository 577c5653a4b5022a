#pragma once

// Binary checkpoint: magic "FTCKPT\0\0", u32 version, u64 header length, JSON header (net config, mitigation,
// free-form metadata), u32 tensor count, then per tensor: u32 name length, name, u32 rank, u64 dims,
// row-major float64 little-endian values.

#include <filesystem>

#include <nlohmann/json.hpp>

#include "fairtune/nnet.hpp"

namespace fairtune::nnet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

nlohmann::json net_config_to_json(const NetConfig& c);
NetConfig net_config_from_json(const nlohmann::json& j);

struct Checkpoint {
    TinyPpgNet net;
    nlohmann::json mitigation;
    nlohmann::json meta;
};

std::string serialize_checkpoint(const TinyPpgNet& net, const nlohmann::json& mitigation,
                                 const nlohmann::json& meta = nlohmann::json::object());
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const TinyPpgNet& net, const nlohmann::json& mitigation,
                     const nlohmann::json& meta = nlohmann::json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace fairtune::nnet
