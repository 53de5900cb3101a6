#pragma once

#include "setcomm/nn/layers.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace setcomm::nn {

using StateDict = std::vector<std::pair<std::string, Mat>>;

StateDict state_dict(Module& module);
// Copies values into the module. Names and shapes must match exactly.
void load_state_dict(Module& module, const StateDict& state);

// Binary checkpoint: a JSON metadata block followed by named float tensors.
void write_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta,
                      const StateDict& state);
std::pair<nlohmann::json, StateDict> read_checkpoint(const std::filesystem::path& path);

}  // namespace setcomm::nn
