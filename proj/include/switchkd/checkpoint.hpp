#pragma once

#include <string>

#include "switchkd/toy_vlm.hpp"

namespace switchkd {

// Checkpoint = JSON manifest (groups, parameter names, shapes, byte offsets,
// model config, blob filename) + one raw little-endian f64 blob next to it.
// Round-trips bit-exactly.
void save_checkpoint(const ToyVLM& model, const std::string& manifest_path);
ToyVLM load_checkpoint(const std::string& manifest_path);

} // namespace switchkd
