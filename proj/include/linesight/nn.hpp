#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "linesight/imagecore.hpp"

// Differentiable building blocks. Every forward op has a matching backward
// that returns analytic gradients; there is no autodiff graph. Activations
// use channel-last [H,W,C] layout, kernels are [out_c, in_c/groups, kh, kw],
// and convolution is cross-correlation (no kernel flip).
namespace linesight::nn {

using imagecore::Shape;
using imagecore::Tensor;

struct Padding {
  std::size_t top = 0, bottom = 0, left = 0, right = 0;

  static Padding uniform(std::size_t p) { return {p, p, p, p}; }
  // Stride-1 "same" padding for an odd dilated kernel.
  static Padding same(std::size_t kh, std::size_t kw, std::size_t rate = 1);

  friend bool operator==(const Padding&, const Padding&) = default;
};

struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t rate = 1;  // atrous dilation; 1 is the standard convolution
  std::size_t groups = 1;
  Padding padding{};

  void validate() const;
  bool is_depthwise() const noexcept {
    return groups == in_channels && groups == out_channels;
  }
  bool is_pointwise() const noexcept {
    return kernel_h == 1 && kernel_w == 1 && rate == 1;
  }
  Shape kernel_shape() const {
    return {out_channels, in_channels / groups, kernel_h, kernel_w};
  }
  // floor((in + pad - rate*(k-1) - 1) / stride) + 1
  std::size_t out_height(std::size_t in_h) const;
  std::size_t out_width(std::size_t in_w) const;

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

ConvSpec depthwise_spec(std::size_t channels, std::size_t k, std::size_t stride,
                        std::size_t rate, Padding padding);
ConvSpec pointwise_spec(std::size_t in_channels, std::size_t out_channels);

struct LayerWeights {
  Tensor kernel;
  Tensor bias;
};

// Uniform in [-s, s], s = sqrt(6 / (fan_in + fan_out)); zero bias.
LayerWeights init_weights(const ConvSpec& spec, std::mt19937_64& rng);

Tensor conv2d(const Tensor& x, const ConvSpec& spec, const LayerWeights& w);

struct ConvGrads {
  Tensor input;
  Tensor kernel;
  Tensor bias;
};

// Gradients of <grad_out, conv2d(x)> with respect to x, kernel and bias.
ConvGrads conv2d_backward(const Tensor& x, const ConvSpec& spec, const Tensor& kernel,
                          const Tensor& grad_out);

// Spatial extent that a conv with `spec` maps onto an input of size `in`,
// i.e. the smallest x extent for which conv2d produces `in` outputs.
std::size_t transposed_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                              std::size_t rate, std::size_t pad_total);

// Adjoint of conv2d (bias excluded): for x of shape [out_h,out_w,spec.in_channels]
// and y of shape conv2d(x).shape, <conv2d(x), y> == <x, transposed_conv2d(y)>.
Tensor transposed_conv2d(const Tensor& y, const ConvSpec& spec, const Tensor& kernel,
                         std::size_t out_h, std::size_t out_w);
Tensor transposed_conv2d(const Tensor& y, const ConvSpec& spec, const Tensor& kernel);

struct TransposedConvGrads {
  Tensor input;   // w.r.t. y
  Tensor kernel;
};
TransposedConvGrads transposed_conv2d_backward(const Tensor& y, const ConvSpec& spec,
                                               const Tensor& kernel,
                                               const Tensor& grad_out);

// Depthwise spatial filter followed by a 1x1 channel mix.
struct SeparableConv {
  ConvSpec depthwise;
  LayerWeights depthwise_weights;
  ConvSpec pointwise;
  LayerWeights pointwise_weights;

  void validate() const;
};

Tensor separable_conv2d(const Tensor& x, const SeparableConv& conv);

enum class Activation { Identity, Relu, LeakyRelu, Sigmoid, Tanh };

constexpr double kLeakySlope = 0.2;

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

double sigmoid(double x);
Tensor activate(const Tensor& x, Activation kind, double slope = kLeakySlope);
// `x` is the pre-activation input, `y` = activate(x).
Tensor activation_backward(const Tensor& x, const Tensor& y, const Tensor& grad_y,
                           Activation kind, double slope = kLeakySlope);

// Mean over elements of max(l,0) - l*t + log(1 + exp(-|l|)).
double sigmoid_ce_with_logits(const Tensor& logits, const Tensor& targets);
double sigmoid_ce_with_logits(double logit, double target);
// d(mean loss)/d logits = (sigmoid(l) - t) / n.
Tensor sigmoid_ce_grad(const Tensor& logits, const Tensor& targets);

// Row-wise softmax over the last axis of a [N,K] tensor.
Tensor softmax_rows(const Tensor& logits);

// Smooth-L1 (Huber with delta 1) summed over elements, and its gradient.
double smooth_l1(double diff);
double smooth_l1_grad(double diff);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class AdamState {
 public:
  AdamState() = default;
  AdamState(const Shape& shape, AdamConfig config);

  const Tensor& m() const noexcept { return m_; }
  const Tensor& v() const noexcept { return v_; }
  std::size_t t() const noexcept { return t_; }
  const AdamConfig& config() const noexcept { return config_; }
  void set_learning_rate(double lr);

  friend void adam_step(Tensor& params, const Tensor& grads, AdamState& state);

 private:
  Tensor m_, v_;
  std::size_t t_ = 0;
  AdamConfig config_;
};

// Bias-corrected Adam update in place. Throws DimensionError on shape
// mismatch and ValidationError on a non-finite gradient.
void adam_step(Tensor& params, const Tensor& grads, AdamState& state);

enum class LayerKind { Conv, TransposedConv };

// One convolution followed by an activation.
// For TransposedConv the spec describes the forward convolution that this
// layer is the adjoint of: the layer maps spec.out_channels inputs to
// spec.in_channels outputs, and the bias has spec.in_channels entries.
struct Layer {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  ConvSpec spec;
  LayerWeights weights;
  Activation activation = Activation::Identity;

  std::size_t output_channels() const {
    return kind == LayerKind::Conv ? spec.out_channels : spec.in_channels;
  }
  Shape output_shape(const Shape& input) const;
};

Layer make_layer(std::string name, LayerKind kind, const ConvSpec& spec,
                 Activation activation, std::mt19937_64& rng);

// Sequential stack of layers.
class Network {
 public:
  struct Trace {
    std::vector<Tensor> inputs;       // input to each layer
    std::vector<Tensor> pre;          // pre-activation output
    std::vector<Tensor> outputs;      // post-activation output
  };

  void add(Layer layer) { layers_.push_back(std::move(layer)); }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::vector<Layer>& layers() noexcept { return layers_; }

  Shape output_shape(const Shape& input) const;

  Tensor forward(const Tensor& x) const;
  Tensor forward(const Tensor& x, Trace& trace) const;

  // Back-propagates grad_out through the traced pass. Parameter gradients are
  // accumulated into `grads` (one entry per layer) when it is non-null.
  // Returns the gradient with respect to the network input.
  Tensor backward(const Trace& trace, const Tensor& grad_out,
                  std::vector<LayerWeights>* grads) const;

  std::vector<LayerWeights> zero_grads() const;

 private:
  std::vector<Layer> layers_;
};

// One Adam state per parameter tensor of a network.
class NetworkOptimizer {
 public:
  NetworkOptimizer(const Network& net, AdamConfig config);
  // Applies grads * scale.
  void step(Network& net, const std::vector<LayerWeights>& grads, double scale = 1.0);
  const AdamConfig& config() const noexcept { return config_; }
  void set_learning_rate(double lr);

 private:
  AdamConfig config_;
  std::vector<AdamState> kernel_states_;
  std::vector<AdamState> bias_states_;
};

// Weight file: "LSCW", u32 version (1), u32 tensor count, then per tensor
// u32 name length, UTF-8 name, u8 rank, u64 dims, little-endian f64 values.
using NamedTensor = std::pair<std::string, Tensor>;

std::vector<std::uint8_t> encode_weights(std::span<const NamedTensor> tensors);
std::vector<NamedTensor> decode_weights(std::span<const std::uint8_t> bytes);
void save_weights(std::span<const NamedTensor> tensors, const std::filesystem::path& path);
std::vector<NamedTensor> load_weights(const std::filesystem::path& path);

// "<prefix><layer>.kernel" / ".bias" for every layer.
void append_named(const Network& net, const std::string& prefix,
                  std::vector<NamedTensor>& out);
// Fills the weights of an architecture-only network; shapes must match.
void assign_named(Network& net, const std::string& prefix,
                  std::span<const NamedTensor> tensors);

}  // namespace linesight::nn
