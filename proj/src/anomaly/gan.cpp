#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>

#include "linesight/anomaly.hpp"
#include "linesight/errors.hpp"
#include "linesight/nn_json.hpp"

namespace linesight::anomaly {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_shape(const Tensor& t, const Shape& expected, const char* what) {
  if (t.shape() != expected) {
    throw DimensionError(std::string(what) + ": expected " + imagecore::shape_to_string(expected) +
                         ", got " + imagecore::shape_to_string(t.shape()));
  }
}

void validate_config(const GanConfig& c) {
  if (c.latent_dim < 1) throw ConfigError("latent_dim must be >= 1");
  if (c.channels != 1 && c.channels != 3) throw ConfigError("channels must be 1 or 3");
  if (c.generator_channels.empty() || c.discriminator_channels.empty()) {
    throw ConfigError("GAN needs at least one block per network");
  }
  const std::size_t blocks = c.generator_channels.size();
  if (c.image_size != (std::size_t{4} << blocks)) {
    throw ConfigError("image_size must be 4 * 2^" + std::to_string(blocks) + " for " +
                      std::to_string(blocks) + " generator blocks");
  }
  if (c.image_size != (std::size_t{4} << c.discriminator_channels.size())) {
    throw ConfigError("discriminator blocks do not reduce image_size to 4");
  }
}

// avg <- decay * avg + (1 - decay) * net
void blend(nn::Network& avg, const nn::Network& net, double decay) {
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    auto& a = avg.layers()[l].weights;
    const auto& w = net.layers()[l].weights;
    for (std::size_t i = 0; i < w.kernel.size(); ++i) {
      a.kernel[i] = decay * a.kernel[i] + (1.0 - decay) * w.kernel[i];
    }
    for (std::size_t i = 0; i < w.bias.size(); ++i) {
      a.bias[i] = decay * a.bias[i] + (1.0 - decay) * w.bias[i];
    }
  }
}

double bce(double logit, double target) { return nn::sigmoid_ce_with_logits(logit, target); }

}  // namespace

NetworkGenerator::NetworkGenerator(nn::Network net, std::size_t latent_dim, Shape image_shape)
    : net_(std::move(net)), latent_dim_(latent_dim), image_shape_(std::move(image_shape)) {
  if (net_.output_shape(latent_shape()) != image_shape_) {
    throw DimensionError("generator maps " + imagecore::shape_to_string(latent_shape()) + " to " +
                         imagecore::shape_to_string(net_.output_shape(latent_shape())) +
                         ", expected " + imagecore::shape_to_string(image_shape_));
  }
}

Evaluated NetworkGenerator::evaluate(const Tensor& z) const {
  check_shape(z, latent_shape(), "generator latent");
  auto trace = std::make_shared<nn::Network::Trace>();
  Tensor out = net_.forward(z, *trace);
  for (double& v : out.data()) v = 0.5 * (v + 1.0);
  return {std::move(out), [this, trace](const Tensor& g) {
            Tensor scaled = g;
            for (double& v : scaled.data()) v *= 0.5;
            return net_.backward(*trace, scaled, nullptr);
          }};
}

NetworkDiscriminator::NetworkDiscriminator(nn::Network net, Shape image_shape)
    : net_(std::move(net)), image_shape_(std::move(image_shape)) {
  if (net_.output_shape(image_shape_) != Shape{1, 1, 1}) {
    throw DimensionError("discriminator must map " + imagecore::shape_to_string(image_shape_) +
                         " to [1,1,1], got " +
                         imagecore::shape_to_string(net_.output_shape(image_shape_)));
  }
}

Evaluated NetworkDiscriminator::evaluate(const Tensor& image) const {
  check_shape(image, image_shape_, "discriminator input");
  Tensor x = image;
  for (double& v : x.data()) v = 2.0 * v - 1.0;
  auto trace = std::make_shared<nn::Network::Trace>();
  Tensor out = net_.forward(x, *trace);
  return {std::move(out), [this, trace](const Tensor& g) {
            Tensor gx = net_.backward(*trace, g, nullptr);
            for (double& v : gx.data()) v *= 2.0;
            return gx;
          }};
}

GanModel build_gan(const GanConfig& config, std::uint64_t seed) {
  validate_config(config);
  std::mt19937_64 rng(seed);
  using nn::Activation;
  using nn::LayerKind;

  // Transposed layers are described by the forward conv they invert.
  nn::Network g;
  const auto& gc = config.generator_channels;
  g.add(nn::make_layer("project", LayerKind::TransposedConv,
                       {gc[0], config.latent_dim, 4, 4, 1, 1, 1, {}}, Activation::Relu, rng));
  for (std::size_t i = 0; i < gc.size(); ++i) {
    const bool last = i + 1 == gc.size();
    const std::size_t out = last ? config.channels : gc[i + 1];
    g.add(nn::make_layer("up" + std::to_string(i + 1), LayerKind::TransposedConv,
                         {out, gc[i], 4, 4, 2, 1, 1, nn::Padding::uniform(1)},
                         last ? Activation::Tanh : Activation::Relu, rng));
  }

  nn::Network d;
  std::size_t in = config.channels;
  for (std::size_t i = 0; i < config.discriminator_channels.size(); ++i) {
    const std::size_t out = config.discriminator_channels[i];
    d.add(nn::make_layer("down" + std::to_string(i + 1), LayerKind::Conv,
                         {in, out, 4, 4, 2, 1, 1, nn::Padding::uniform(1)},
                         Activation::LeakyRelu, rng));
    in = out;
  }
  d.add(nn::make_layer("logit", LayerKind::Conv, {in, 1, 4, 4, 1, 1, 1, {}},
                       Activation::Identity, rng));

  const Shape image{config.image_size, config.image_size, config.channels};
  return {config, NetworkGenerator(std::move(g), config.latent_dim, image),
          NetworkDiscriminator(std::move(d), image)};
}

Tensor sample_latent(const Shape& shape, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor z(shape);
  for (double& v : z.data()) v = u(rng);
  return z;
}

GanTrainResult train_gan(GanModel model, std::span<const Image> normals,
                         const GanTrainConfig& config) {
  if (normals.empty()) throw ValidationError("GAN training needs at least one image");
  if (config.steps < 1) throw ValidationError("GAN training needs steps >= 1");
  if (config.batch < 1) throw ValidationError("GAN training needs batch >= 1");
  if (!(config.generator_ema >= 0.0 && config.generator_ema < 1.0)) {
    throw ValidationError("generator_ema must be in [0,1)");
  }
  const Shape image_shape = model.generator.image_shape();
  for (const Image& img : normals) check_shape(img.pixels(), image_shape, "training image");

  nn::Network& gnet = model.generator.network();
  nn::Network& dnet = model.discriminator.network();
  nn::NetworkOptimizer g_opt(gnet, config.g_adam);
  nn::NetworkOptimizer d_opt(dnet, config.d_adam);
  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<std::size_t> pick(0, normals.size() - 1);
  const Shape latent = model.generator.latent_shape();
  const double scale = 1.0 / static_cast<double>(config.batch);

  nn::Network g_avg = gnet;
  std::vector<GanLossEntry> log;
  for (std::size_t step = 0; step < config.steps; ++step) {
    // Discriminator: real -> 1, fake -> 0. The generator's tanh output is
    // already the discriminator's [-1,1] input scale.
    auto d_grads = dnet.zero_grads();
    double d_loss = 0.0;
    for (std::size_t b = 0; b < config.batch; ++b) {
      Tensor real = normals[pick(rng)].pixels();
      for (double& v : real.data()) v = 2.0 * v - 1.0;
      nn::Network::Trace tr;
      const double lr = dnet.forward(real, tr)[0];
      d_loss += bce(lr, 1.0);
      dnet.backward(tr, Tensor({1, 1, 1}, nn::sigmoid(lr) - 1.0), &d_grads);

      const Tensor fake = gnet.forward(sample_latent(latent, rng));
      nn::Network::Trace tf;
      const double lf = dnet.forward(fake, tf)[0];
      d_loss += bce(lf, 0.0);
      dnet.backward(tf, Tensor({1, 1, 1}, nn::sigmoid(lf)), &d_grads);
    }
    d_loss *= scale;

    // Generator: fake -> 1 through the frozen discriminator.
    auto g_grads = gnet.zero_grads();
    double g_loss = 0.0;
    for (std::size_t b = 0; b < config.batch; ++b) {
      nn::Network::Trace tg, td;
      const Tensor fake = gnet.forward(sample_latent(latent, rng), tg);
      const double l = dnet.forward(fake, td)[0];
      g_loss += bce(l, 1.0);
      const Tensor gx = dnet.backward(td, Tensor({1, 1, 1}, nn::sigmoid(l) - 1.0), nullptr);
      gnet.backward(tg, gx, &g_grads);
    }
    g_loss *= scale;

    if (!std::isfinite(d_loss) || !std::isfinite(g_loss)) {
      throw DivergenceError("GAN loss is not finite", step);
    }
    d_opt.step(dnet, d_grads, scale);
    g_opt.step(gnet, g_grads, scale);
    log.push_back({d_loss, g_loss});
    if (config.generator_ema > 0.0) blend(g_avg, gnet, config.generator_ema);
  }
  if (config.generator_ema > 0.0) gnet = std::move(g_avg);
  return {std::move(model), std::move(log)};
}

GanTrainResult train_gan(std::span<const Image> normals, const GanTrainConfig& config,
                         const GanConfig& arch) {
  return train_gan(build_gan(arch, config.seed), normals, config);
}

void save_gan(const GanModel& model, const fs::path& path) {
  std::vector<nn::NamedTensor> tensors;
  nn::append_named(model.generator.network(), "generator.", tensors);
  nn::append_named(model.discriminator.network(), "discriminator.", tensors);
  nn::save_weights(tensors, path);
  const GanConfig& c = model.config;
  const json j = {{"latent_dim", c.latent_dim},
                  {"image_size", c.image_size},
                  {"channels", c.channels},
                  {"generator_channels", c.generator_channels},
                  {"discriminator_channels", c.discriminator_channels},
                  {"generator", nn::network_to_json(model.generator.network())},
                  {"discriminator", nn::network_to_json(model.discriminator.network())}};
  const fs::path side(path.string() + ".json");
  std::ofstream out(side);
  if (!out) throw IoError("cannot write " + side.string());
  out << j.dump(2) << "\n";
}

GanModel load_gan(const fs::path& path) {
  const fs::path side(path.string() + ".json");
  std::ifstream in(side);
  if (!in) throw IoError("cannot read GAN sidecar " + side.string());
  std::stringstream ss;
  ss << in.rdbuf();
  GanConfig c;
  nn::Network g, d;
  try {
    const json j = json::parse(ss.str());
    c.latent_dim = j.at("latent_dim").get<std::size_t>();
    c.image_size = j.at("image_size").get<std::size_t>();
    c.channels = j.at("channels").get<std::size_t>();
    c.generator_channels = j.at("generator_channels").get<std::vector<std::size_t>>();
    c.discriminator_channels = j.at("discriminator_channels").get<std::vector<std::size_t>>();
    g = nn::network_from_json(j.at("generator"));
    d = nn::network_from_json(j.at("discriminator"));
  } catch (const json::exception& e) {
    throw ValidationError("bad GAN sidecar " + side.string() + ": " + e.what());
  }
  validate_config(c);
  const auto tensors = nn::load_weights(path);
  nn::assign_named(g, "generator.", tensors);
  nn::assign_named(d, "discriminator.", tensors);
  const Shape image{c.image_size, c.image_size, c.channels};
  return {c, NetworkGenerator(std::move(g), c.latent_dim, image),
          NetworkDiscriminator(std::move(d), image)};
}

}  // namespace linesight::anomaly
