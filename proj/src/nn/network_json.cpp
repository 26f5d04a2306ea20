#include "linesight/errors.hpp"
#include "linesight/nn_json.hpp"

namespace linesight::nn {

using nlohmann::json;

json spec_to_json(const ConvSpec& s) {
  return {{"in_channels", s.in_channels},
          {"out_channels", s.out_channels},
          {"kernel", {s.kernel_h, s.kernel_w}},
          {"stride", s.stride},
          {"rate", s.rate},
          {"groups", s.groups},
          {"padding", {s.padding.top, s.padding.bottom, s.padding.left, s.padding.right}}};
}

ConvSpec spec_from_json(const json& j) {
  try {
    ConvSpec s;
    s.in_channels = j.at("in_channels").get<std::size_t>();
    s.out_channels = j.at("out_channels").get<std::size_t>();
    s.kernel_h = j.at("kernel").at(0).get<std::size_t>();
    s.kernel_w = j.at("kernel").at(1).get<std::size_t>();
    s.stride = j.at("stride").get<std::size_t>();
    s.rate = j.at("rate").get<std::size_t>();
    s.groups = j.at("groups").get<std::size_t>();
    const auto& p = j.at("padding");
    s.padding = {p.at(0).get<std::size_t>(), p.at(1).get<std::size_t>(),
                 p.at(2).get<std::size_t>(), p.at(3).get<std::size_t>()};
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed conv spec: ") + e.what());
  }
}

json network_to_json(const Network& net) {
  json layers = json::array();
  for (const auto& l : net.layers()) {
    layers.push_back({{"name", l.name},
                      {"kind", l.kind == LayerKind::Conv ? "conv" : "transposed_conv"},
                      {"spec", spec_to_json(l.spec)},
                      {"activation", to_string(l.activation)}});
  }
  return layers;
}

Network network_from_json(const json& j) {
  Network net;
  try {
    for (const auto& lj : j) {
      Layer l;
      l.name = lj.at("name").get<std::string>();
      const auto kind = lj.at("kind").get<std::string>();
      if (kind == "conv") {
        l.kind = LayerKind::Conv;
      } else if (kind == "transposed_conv") {
        l.kind = LayerKind::TransposedConv;
      } else {
        throw ConfigError("unknown layer kind '" + kind + "'");
      }
      l.spec = spec_from_json(lj.at("spec"));
      l.activation = activation_from_string(lj.at("activation").get<std::string>());
      l.weights.kernel = Tensor(l.spec.kernel_shape(), 0.0);
      l.weights.bias = Tensor({l.output_channels()}, 0.0);
      net.add(std::move(l));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed network description: ") + e.what());
  }
  return net;
}

}  // namespace linesight::nn
