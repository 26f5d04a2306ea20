#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "linesight/imagecore.hpp"
#include "linesight/nn.hpp"

// GAN anomaly scoring: adversarial training on normal images, latent
// inversion, A(x) = (1 - lambda) * L_R + lambda * L_D, max-score threshold
// calibration and jet residual maps.
namespace linesight::anomaly {

using imagecore::Image;
using imagecore::Shape;
using imagecore::Tensor;

// Value of a map at a point plus its vector-Jacobian product there.
struct Evaluated {
  Tensor value;
  std::function<Tensor(const Tensor&)> pullback;
};

// z [1,1,latent] -> image tensor [H,W,C] with values in [0,1].
class Generator {
 public:
  virtual ~Generator() = default;
  virtual Shape latent_shape() const = 0;
  virtual Shape image_shape() const = 0;
  virtual Evaluated evaluate(const Tensor& z) const = 0;
  Tensor generate(const Tensor& z) const { return evaluate(z).value; }
};

// Image tensor [H,W,C] in [0,1] -> logit [1,1,1].
class Discriminator {
 public:
  virtual ~Discriminator() = default;
  virtual Shape image_shape() const = 0;
  virtual Evaluated evaluate(const Tensor& image) const = 0;
  double logit(const Tensor& image) const { return evaluate(image).value[0]; }
};

struct GanConfig {
  std::size_t latent_dim = 100;
  std::size_t image_size = 32;
  std::size_t channels = 3;
  // Channels entering each upsampling block; the first is the 4x4 projection.
  std::vector<std::size_t> generator_channels = {64, 32, 16};
  // Channels out of each stride-2 block.
  std::vector<std::size_t> discriminator_channels = {16, 32, 64};
};

// Transposed-conv stack; tanh output mapped to [0,1] by (t + 1) / 2.
class NetworkGenerator : public Generator {
 public:
  NetworkGenerator(nn::Network net, std::size_t latent_dim, Shape image_shape);
  Shape latent_shape() const override { return {1, 1, latent_dim_}; }
  Shape image_shape() const override { return image_shape_; }
  Evaluated evaluate(const Tensor& z) const override;

  const nn::Network& network() const noexcept { return net_; }
  nn::Network& network() noexcept { return net_; }

 private:
  nn::Network net_;
  std::size_t latent_dim_;
  Shape image_shape_;
};

// Conv stack on 2x - 1 scaled input.
class NetworkDiscriminator : public Discriminator {
 public:
  NetworkDiscriminator(nn::Network net, Shape image_shape);
  Shape image_shape() const override { return image_shape_; }
  Evaluated evaluate(const Tensor& image) const override;

  const nn::Network& network() const noexcept { return net_; }
  nn::Network& network() noexcept { return net_; }

 private:
  nn::Network net_;
  Shape image_shape_;
};

struct GanModel {
  GanConfig config;
  NetworkGenerator generator;
  NetworkDiscriminator discriminator;
};

// Glorot-initialized networks for `config`.
GanModel build_gan(const GanConfig& config, std::uint64_t seed);

struct GanTrainConfig {
  std::size_t steps = 1000;
  std::size_t batch = 16;
  nn::AdamConfig d_adam{1e-5, 0.1, 0.999, 1e-8};
  nn::AdamConfig g_adam{2e-4, 0.5, 0.999, 1e-8};
  // Decay of the generator weight average returned as the trained
  // generator; 0 returns the last iterate.
  double generator_ema = 0.0;
  std::uint64_t seed = 0;
};

struct GanLossEntry {
  double d_loss;
  double g_loss;
};

struct GanTrainResult {
  GanModel model;
  std::vector<GanLossEntry> loss_log;  // one per step
};

// Alternates a discriminator step (real -> 1, fake -> 0) and a generator
// step (fake -> 1). Latents are uniform in [-1,1].
GanTrainResult train_gan(GanModel model, std::span<const Image> normals,
                         const GanTrainConfig& config);
GanTrainResult train_gan(std::span<const Image> normals, const GanTrainConfig& config,
                         const GanConfig& arch = {});

Tensor sample_latent(const Shape& shape, std::mt19937_64& rng);

// Sum of absolute differences.
double residual_loss(const Tensor& x, const Tensor& gz);
// Sigmoid cross entropy of D(gz) against target 1.
double discrimination_loss(const Discriminator& d, const Tensor& gz);

double combine_score(double l_r, double l_d, double lambda);

struct InversionParams {
  std::size_t iterations = 300;
  double step_size = 0.05;
  std::uint64_t seed = 0;
  // Independent random starts; the best point over all of them wins.
  std::size_t restarts = 1;
  std::optional<Tensor> initial_z;  // first start only
};

struct InversionResult {
  Tensor best_z;
  double best_loss = 0.0;
  std::size_t best_iteration = 0;  // index into loss_trace
  // Loss at the start of every iteration plus the final point, per start.
  std::vector<double> loss_trace;
};

// Adam on z (learning rate step_size) minimizing the combined score, with z
// kept in [-1,1] and the best visited point returned.
InversionResult invert_latent(const Tensor& x, const Generator& g, const Discriminator& d,
                              double lambda, const InversionParams& params);

struct AnomalyReport {
  double score = 0.0;
  double residual_loss = 0.0;
  double discrimination_loss = 0.0;
  double lambda = 0.0;
  Tensor best_z;
  Tensor reconstruction;    // G(best_z)
  Tensor residual_signed;   // x - G(best_z) in [-1,1]
  std::vector<double> loss_trace;
};

AnomalyReport anomaly_score(const Image& x, const Generator& g, const Discriminator& d,
                            double lambda, const InversionParams& params);

struct CalibrationResult {
  double lambda = 0.0;
  double threshold = 0.0;
  std::size_t count = 0;
  double min = 0.0;
  double median = 0.0;
  double max = 0.0;
  std::vector<double> scores;

  std::string to_json() const;
  static CalibrationResult from_json(const std::string& text);
};

CalibrationResult calibration_from_scores(std::vector<double> scores, double lambda);
CalibrationResult calibrate_threshold(const Generator& g, const Discriminator& d,
                                      std::span<const Image> normals, double lambda,
                                      const InversionParams& params);

void save_calibration(const CalibrationResult& c, const std::filesystem::path& path);
CalibrationResult load_calibration(const std::filesystem::path& path);

// Jet lookup over [-1,1] of the per-pixel channel mean.
Image render_colormap(const Tensor& residual_signed);
std::array<double, 3> jet(double value);

struct ScoreRow {
  std::string image;
  double score;
  double l_r;
  double l_d;
  bool anomalous;
};
// Header: image,score,l_r,l_d,verdict
std::string score_rows_to_csv(std::span<const ScoreRow> rows);

// Weights at `path`, architecture at `path`.json.
void save_gan(const GanModel& model, const std::filesystem::path& path);
GanModel load_gan(const std::filesystem::path& path);

}  // namespace linesight::anomaly
