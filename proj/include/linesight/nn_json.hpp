#pragma once

#include "json.hpp"
#include "linesight/nn.hpp"

// Architecture descriptions for model sidecar files. Weights travel
// separately in the binary weight format.
namespace linesight::nn {

nlohmann::json spec_to_json(const ConvSpec& spec);
ConvSpec spec_from_json(const nlohmann::json& j);

nlohmann::json network_to_json(const Network& net);
// Builds the layer stack with zero weights.
Network network_from_json(const nlohmann::json& j);

}  // namespace linesight::nn
