#include "linesight/errors.hpp"
#include "linesight/nn.hpp"

#include <algorithm>
#include <cmath>

namespace linesight::nn {

using imagecore::shape_to_string;

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::Relu: return "relu";
    case Activation::LeakyRelu: return "leaky_relu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Tanh: return "tanh";
  }
  return "identity";
}

Activation activation_from_string(const std::string& name) {
  if (name == "identity") return Activation::Identity;
  if (name == "relu") return Activation::Relu;
  if (name == "leaky_relu") return Activation::LeakyRelu;
  if (name == "sigmoid") return Activation::Sigmoid;
  if (name == "tanh") return Activation::Tanh;
  throw ValidationError("unknown activation '" + name + "'");
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor activate(const Tensor& x, Activation kind, double slope) {
  if (kind == Activation::Identity) return x;
  Tensor y = x;
  for (double& v : y.data()) {
    switch (kind) {
      case Activation::Relu: v = v > 0.0 ? v : 0.0; break;
      case Activation::LeakyRelu: v = v > 0.0 ? v : slope * v; break;
      case Activation::Sigmoid: v = sigmoid(v); break;
      case Activation::Tanh: v = std::tanh(v); break;
      case Activation::Identity: break;
    }
  }
  return y;
}

Tensor activation_backward(const Tensor& x, const Tensor& y, const Tensor& grad_y,
                           Activation kind, double slope) {
  if (x.shape() != grad_y.shape() || y.shape() != grad_y.shape()) {
    throw DimensionError("activation backward: " + shape_to_string(x.shape()) + " vs " +
                         shape_to_string(grad_y.shape()));
  }
  if (kind == Activation::Identity) return grad_y;
  Tensor g = grad_y;
  for (std::size_t i = 0; i < g.size(); ++i) {
    switch (kind) {
      case Activation::Relu: g[i] *= x[i] > 0.0 ? 1.0 : 0.0; break;
      case Activation::LeakyRelu: g[i] *= x[i] > 0.0 ? 1.0 : slope; break;
      case Activation::Sigmoid: g[i] *= y[i] * (1.0 - y[i]); break;
      case Activation::Tanh: g[i] *= 1.0 - y[i] * y[i]; break;
      case Activation::Identity: break;
    }
  }
  return g;
}

double sigmoid_ce_with_logits(double l, double t) {
  return std::max(l, 0.0) - l * t + std::log1p(std::exp(-std::abs(l)));
}

double sigmoid_ce_with_logits(const Tensor& logits, const Tensor& targets) {
  if (logits.shape() != targets.shape()) {
    throw DimensionError("sigmoid CE: logits " + shape_to_string(logits.shape()) +
                         " vs targets " + shape_to_string(targets.shape()));
  }
  if (logits.empty()) throw ValidationError("sigmoid CE of an empty tensor");
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double t = targets[i];
    if (!(t >= 0.0 && t <= 1.0)) throw ValidationError("sigmoid CE target outside [0,1]");
    sum += sigmoid_ce_with_logits(logits[i], t);
  }
  return sum / static_cast<double>(logits.size());
}

Tensor sigmoid_ce_grad(const Tensor& logits, const Tensor& targets) {
  if (logits.shape() != targets.shape()) {
    throw DimensionError("sigmoid CE grad: logits " + shape_to_string(logits.shape()) +
                         " vs targets " + shape_to_string(targets.shape()));
  }
  Tensor g(logits.shape());
  const double n = static_cast<double>(logits.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = (sigmoid(logits[i]) - targets[i]) / n;
  return g;
}

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) {
    throw DimensionError("softmax_rows expects [N,K], got " + shape_to_string(logits.shape()));
  }
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const double* l = &logits.data()[r * k];
    double* o = &out.data()[r * k];
    const double m = *std::max_element(l, l + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += (o[j] = std::exp(l[j] - m));
    for (std::size_t j = 0; j < k; ++j) o[j] /= sum;
  }
  return out;
}

double smooth_l1(double d) {
  const double a = std::abs(d);
  return a < 1.0 ? 0.5 * d * d : a - 0.5;
}

double smooth_l1_grad(double d) {
  if (d > 1.0) return 1.0;
  if (d < -1.0) return -1.0;
  return d;
}

AdamState::AdamState(const Shape& shape, AdamConfig config)
    : m_(shape, 0.0), v_(shape, 0.0), config_(config) {
  if (!(config.lr > 0.0) || !(config.beta1 >= 0.0 && config.beta1 < 1.0) ||
      !(config.beta2 >= 0.0 && config.beta2 < 1.0) || !(config.eps > 0.0)) {
    throw ValidationError("invalid Adam configuration");
  }
}

void AdamState::set_learning_rate(double lr) {
  if (!(lr > 0.0)) throw ValidationError("learning rate must be positive");
  config_.lr = lr;
}

void adam_step(Tensor& params, const Tensor& grads, AdamState& s) {
  if (params.shape() != grads.shape() || params.shape() != s.m_.shape()) {
    throw DimensionError("adam: params " + shape_to_string(params.shape()) + ", grads " +
                         shape_to_string(grads.shape()) + ", state " +
                         shape_to_string(s.m_.shape()));
  }
  if (!grads.all_finite()) throw ValidationError("adam: non-finite gradient");
  const AdamConfig& c = s.config_;
  ++s.t_;
  const double t = static_cast<double>(s.t_);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  auto p = params.data();
  auto m = s.m_.data();
  auto v = s.v_.data();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double g = grads[i];
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    p[i] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
  }
}

}  // namespace linesight::nn
