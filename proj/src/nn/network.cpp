#include "linesight/errors.hpp"
#include "linesight/nn.hpp"

namespace linesight::nn {

using imagecore::shape_to_string;

Shape Layer::output_shape(const Shape& input) const {
  if (input.size() != 3) {
    throw DimensionError("layer " + name + " expects [H,W,C] input, got " +
                         shape_to_string(input));
  }
  if (kind == LayerKind::Conv) {
    if (input[2] != spec.in_channels) {
      throw DimensionError("layer " + name + ": input " + shape_to_string(input) +
                           " vs in_channels " + std::to_string(spec.in_channels));
    }
    return {spec.out_height(input[0]), spec.out_width(input[1]), spec.out_channels};
  }
  if (input[2] != spec.out_channels) {
    throw DimensionError("layer " + name + ": input " + shape_to_string(input) +
                         " vs channels " + std::to_string(spec.out_channels));
  }
  return {transposed_extent(input[0], spec.kernel_h, spec.stride, spec.rate,
                            spec.padding.top + spec.padding.bottom),
          transposed_extent(input[1], spec.kernel_w, spec.stride, spec.rate,
                            spec.padding.left + spec.padding.right),
          spec.in_channels};
}

Layer make_layer(std::string name, LayerKind kind, const ConvSpec& spec,
                 Activation activation, std::mt19937_64& rng) {
  Layer layer{std::move(name), kind, spec, init_weights(spec, rng), activation};
  if (kind == LayerKind::TransposedConv) layer.weights.bias = Tensor({spec.in_channels}, 0.0);
  return layer;
}

Shape Network::output_shape(const Shape& input) const {
  Shape s = input;
  for (const auto& l : layers_) s = l.output_shape(s);
  return s;
}

namespace {

Tensor layer_pre_activation(const Layer& l, const Tensor& x) {
  if (l.kind == LayerKind::Conv) return conv2d(x, l.spec, l.weights);
  const Shape out = l.output_shape(x.shape());
  Tensor y = transposed_conv2d(x, l.spec, l.weights.kernel, out[0], out[1]);
  const std::size_t c = out[2];
  for (std::size_t p = 0; p < y.size() / c; ++p) {
    for (std::size_t k = 0; k < c; ++k) y[p * c + k] += l.weights.bias[k];
  }
  return y;
}

void accumulate(Tensor& into, const Tensor& g) {
  auto d = into.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
}

}  // namespace

Tensor Network::forward(const Tensor& x) const {
  Tensor h = x;
  for (const auto& l : layers_) h = activate(layer_pre_activation(l, h), l.activation);
  return h;
}

Tensor Network::forward(const Tensor& x, Trace& trace) const {
  trace.inputs.clear();
  trace.pre.clear();
  trace.outputs.clear();
  Tensor h = x;
  for (const auto& l : layers_) {
    trace.inputs.push_back(h);
    Tensor pre = layer_pre_activation(l, h);
    h = activate(pre, l.activation);
    trace.pre.push_back(std::move(pre));
    trace.outputs.push_back(h);
  }
  return h;
}

Tensor Network::backward(const Trace& trace, const Tensor& grad_out,
                         std::vector<LayerWeights>* grads) const {
  if (trace.inputs.size() != layers_.size()) {
    throw StateError("network backward: trace does not belong to this network");
  }
  if (grads && grads->size() != layers_.size()) {
    throw DimensionError("network backward: gradient list has wrong length");
  }
  Tensor g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    const Layer& l = layers_[i];
    g = activation_backward(trace.pre[i], trace.outputs[i], g, l.activation);
    if (l.kind == LayerKind::Conv) {
      ConvGrads cg = conv2d_backward(trace.inputs[i], l.spec, l.weights.kernel, g);
      if (grads) {
        accumulate((*grads)[i].kernel, cg.kernel);
        accumulate((*grads)[i].bias, cg.bias);
      }
      g = std::move(cg.input);
    } else {
      if (grads) {
        const std::size_t c = l.spec.in_channels;
        Tensor& db = (*grads)[i].bias;
        for (std::size_t p = 0; p < g.size() / c; ++p) {
          for (std::size_t k = 0; k < c; ++k) db[k] += g[p * c + k];
        }
      }
      TransposedConvGrads tg =
          transposed_conv2d_backward(trace.inputs[i], l.spec, l.weights.kernel, g);
      if (grads) accumulate((*grads)[i].kernel, tg.kernel);
      g = std::move(tg.input);
    }
  }
  return g;
}

std::vector<LayerWeights> Network::zero_grads() const {
  std::vector<LayerWeights> out;
  out.reserve(layers_.size());
  for (const auto& l : layers_) {
    out.push_back({Tensor(l.weights.kernel.shape(), 0.0), Tensor(l.weights.bias.shape(), 0.0)});
  }
  return out;
}

NetworkOptimizer::NetworkOptimizer(const Network& net, AdamConfig config) : config_(config) {
  for (const auto& l : net.layers()) {
    kernel_states_.emplace_back(l.weights.kernel.shape(), config);
    bias_states_.emplace_back(l.weights.bias.shape(), config);
  }
}

void NetworkOptimizer::set_learning_rate(double lr) {
  for (auto& s : kernel_states_) s.set_learning_rate(lr);
  for (auto& s : bias_states_) s.set_learning_rate(lr);
  config_.lr = lr;
}

void NetworkOptimizer::step(Network& net, const std::vector<LayerWeights>& grads,
                            double scale) {
  auto& layers = net.layers();
  if (grads.size() != layers.size() || kernel_states_.size() != layers.size()) {
    throw DimensionError("optimizer step: network/gradient/state count mismatch");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Tensor gk = grads[i].kernel;
    Tensor gb = grads[i].bias;
    if (scale != 1.0) {
      for (double& v : gk.data()) v *= scale;
      for (double& v : gb.data()) v *= scale;
    }
    adam_step(layers[i].weights.kernel, gk, kernel_states_[i]);
    adam_step(layers[i].weights.bias, gb, bias_states_[i]);
  }
}

}  // namespace linesight::nn
