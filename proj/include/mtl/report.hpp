// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "mtl/trainer.hpp"

namespace mtl {

/// Canonical config echo; data_provenance is embedded as the "data" object.
std::string train_config_to_json(const TrainConfig& cfg,
                                 const std::string& data_provenance);

/// Strict parse (unknown keys rejected); absent keys take documented
/// defaults. input_dim and head dims are derived from the dataset at run
/// time, never from the config.
TrainConfig train_config_from_json(const std::string& json);

/// Serializes a report with stable key order and 17-significant-digit
/// floats. omit_timing zeroes wall_seconds so byte comparison across runs is
/// meaningful.
std::string emit_report(const RunReport& rep, bool omit_timing = false);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace mtl
