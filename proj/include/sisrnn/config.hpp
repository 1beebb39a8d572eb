#pragma once

#include "sisrnn/training.hpp"

#include <string>
#include <vector>

namespace sisrnn {

/// Parses the flat `key = value` config format ('#' comments, blank lines
/// ignored), then applies `key=value` overrides in order. Unknown keys are
/// rejected with a nearest-key suggestion; out-of-range values are rejected
/// with the offending line. An empty file yields the defaults.
TrainConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides);

/// File variant; parse errors carry the line number.
TrainConfig parse_config(const std::string& path, const std::vector<std::string>& overrides);

/// Serializes every key with its current value; parse(serialize(c)) == c.
std::string serialize_config(const TrainConfig& cfg);

/// Fills auto fields (obs_dim = 0, emission auto) from the dataset the config
/// selects, then validates the result.
void finalize_config(TrainConfig& cfg, const SequenceDataset& ds);

/// One "key  default  description" line per known key.
std::string config_key_help();

}  // namespace sisrnn
