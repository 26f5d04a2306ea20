#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "acceptance.hpp"
#include "anomaly_doubles.hpp"
#include "linesight/anomaly.hpp"
#include "oracles.hpp"

namespace linesight::acceptance {

using anomaly::AnomalyReport;
using anomaly::InversionParams;
using imagecore::Image;
using imagecore::Tensor;

Outcome anomaly_math() {
  std::mt19937_64 rng(77);
  bool reductions = true;
  double consistency = 0.0;

  // A small convolutional GAN and a closed-form pair.
  anomaly::GanConfig arch;
  arch.latent_dim = 8;
  arch.image_size = 16;
  arch.generator_channels = {16, 8};
  arch.discriminator_channels = {8, 16};
  const anomaly::GanModel gan = anomaly::build_gan(arch, 3);
  testing::IdentityGenerator ig(3);
  testing::LinearDiscriminator ld(1.5, -0.5, 3);

  InversionParams p;
  p.iterations = 30;
  for (int trial = 0; trial < 6; ++trial) {
    p.seed = static_cast<std::uint64_t>(trial);
    const Image xg(testing::random_tensor({16, 16, 3}, rng, 0.0, 1.0));
    const Image xt(testing::random_tensor({1, 1, 3}, rng, 0.0, 1.0));
    for (double lambda : {0.0, 0.1, 0.37, 1.0}) {
      for (int which = 0; which < 2; ++which) {
        const AnomalyReport r =
            which == 0 ? anomaly_score(xg, gan.generator, gan.discriminator, lambda, p)
                       : anomaly_score(xt, ig, ld, lambda, p);
        const double expect = (1.0 - lambda) * r.residual_loss + lambda * r.discrimination_loss;
        consistency = std::max(consistency, std::abs(r.score - expect));
        if (lambda == 0.0) reductions = reductions && r.score == r.residual_loss;
        if (lambda == 1.0) reductions = reductions && r.score == r.discrimination_loss;
        // The components must agree with an independent evaluation at best_z.
        const anomaly::Generator& g = which == 0
                                          ? static_cast<const anomaly::Generator&>(gan.generator)
                                          : ig;
        const anomaly::Discriminator& d =
            which == 0 ? static_cast<const anomaly::Discriminator&>(gan.discriminator) : ld;
        const Tensor gz = g.generate(r.best_z);
        const Tensor& x = which == 0 ? xg.pixels() : xt.pixels();
        consistency = std::max(consistency,
                               std::abs(r.residual_loss - anomaly::residual_loss(x, gz)));
        consistency = std::max(consistency, std::abs(r.discrimination_loss -
                                                     nn::sigmoid_ce_with_logits(d.logit(gz), 1.0)));
      }
    }
  }

  // Threshold equals the maximum of independently recomputed scores.
  std::vector<Image> normals;
  for (int i = 0; i < 8; ++i) normals.emplace_back(testing::random_tensor({16, 16, 3}, rng, 0.0, 1.0));
  p.seed = 9;
  const anomaly::CalibrationResult cal =
      anomaly::calibrate_threshold(gan.generator, gan.discriminator, normals, 0.1, p);
  double recomputed = -1.0;
  for (const Image& img : normals) {
    recomputed = std::max(recomputed,
                          anomaly_score(img, gan.generator, gan.discriminator, 0.1, p).score);
  }
  const bool threshold_ok = cal.threshold == recomputed && cal.count == normals.size();

  // Toy inversion: with G = identity and lambda = 0 the optimum is z = x.
  double toy_err = 0.0;
  for (int trial = 0; trial < 8; ++trial) {
    const Tensor x = testing::random_tensor({1, 1, 3}, rng, -0.9, 0.9);
    InversionParams tp;
    tp.iterations = 500;
    tp.step_size = 0.01;
    tp.seed = static_cast<std::uint64_t>(trial);
    const anomaly::InversionResult r = anomaly::invert_latent(x, ig, ld, 0.0, tp);
    toy_err = std::max(toy_err, imagecore::max_abs_diff(r.best_z, x));
  }

  const bool ok = reductions && consistency <= 1e-12 && threshold_ok && toy_err <= 1e-3;
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "lambda 0/1 reductions %s; max consistency error %.2e; threshold %s max of "
                "%zu recomputed scores; toy inversion max |z-x| %.2e",
                reductions ? "exact" : "INEXACT", consistency, threshold_ok ? "equals" : "DIFFERS from",
                normals.size(), toy_err);
  return {ok, buf};
}

}  // namespace linesight::acceptance
