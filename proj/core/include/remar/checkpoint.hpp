#pragma once

#include <filesystem>

#include "remar/network.hpp"

namespace remar {

// Checkpoint layout (text header, then binary payload):
//
//   REMAR-CHECKPOINT 1
//   [config]
//   key=value ...            ModelConfig, enough to rebuild the network
//   [tensors]
//   name dims offset         dims like 16x1x3x3; offset into the payload
//   [payload]
//   RMDS records back to back
//
// Parameters and batch-norm running statistics are both stored.
void save_checkpoint(const std::filesystem::path& path, const ReMarNet& net);
ReMarNet load_checkpoint(const std::filesystem::path& path);

}  // namespace remar
