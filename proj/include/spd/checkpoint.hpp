#pragma once

#include "spd/lm.hpp"
#include "spd/tensor.hpp"

#include <nlohmann/json_fwd.hpp>

#include <string>

namespace spd {

// Versioned binary checkpoint:
//   8-byte magic "SPDCKPT\0" | u32 version | u64 header length |
//   JSON header (config echo + parameter manifest with shapes/offsets) |
//   little-endian fp32 arrays in manifest order.
// fp64 parameters are truncated to fp32 on write; a load/save round trip is
// byte-identical.

void write_checkpoint(const std::string & path, const nlohmann::json & meta,
                      const ParamStore & store);

struct LoadedCheckpoint {
    std::string meta_json;   // raw header text, parse with nlohmann::json
    ParamStore store;
};

LoadedCheckpoint read_checkpoint(const std::string & path);

// ToyLM wrappers (hybrid wrappers live with the hybrid model)
void save_model(const std::string & path, const ToyLM & model);
ToyLM load_model(const std::string & path);

} // namespace spd
