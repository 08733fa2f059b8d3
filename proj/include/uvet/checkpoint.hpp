#pragma once

#include <string>
#include <utility>

#include "uvet/encoder.hpp"

namespace uvet {

// Checkpoint file: magic "UVET1", then a table of (name, dtype=f64, shape)
// entries, then the raw little-endian f64 payloads in table order. Encoder
// config scalars ride along as 1-element entries so a checkpoint is
// self-describing. Save/load round-trips are bitwise stable.
void save_checkpoint(const std::string& path, const EncoderConfig& config,
                     const EncoderParams& params);

std::pair<EncoderConfig, EncoderParams> load_checkpoint(const std::string& path);

}  // namespace uvet
