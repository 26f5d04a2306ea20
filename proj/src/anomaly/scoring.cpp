#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "linesight/anomaly.hpp"
#include "linesight/errors.hpp"

namespace linesight::anomaly {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": " + imagecore::shape_to_string(a.shape()) +
                         " vs " + imagecore::shape_to_string(b.shape()));
  }
}

void check_lambda(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ValidationError("lambda must be in [0,1], got " + std::to_string(lambda));
  }
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

double residual_loss(const Tensor& x, const Tensor& gz) {
  check_same_shape(x, gz, "residual_loss");
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += std::abs(x[i] - gz[i]);
  return s;
}

double discrimination_loss(const Discriminator& d, const Tensor& gz) {
  return nn::sigmoid_ce_with_logits(d.logit(gz), 1.0);
}

double combine_score(double l_r, double l_d, double lambda) {
  check_lambda(lambda);
  return (1.0 - lambda) * l_r + lambda * l_d;
}

InversionResult invert_latent(const Tensor& x, const Generator& g, const Discriminator& d,
                              double lambda, const InversionParams& params) {
  check_lambda(lambda);
  if (params.iterations < 1) throw ValidationError("inversion needs iterations >= 1");
  if (!(params.step_size > 0.0)) throw ValidationError("inversion step_size must be positive");
  if (x.shape() != g.image_shape()) {
    throw DimensionError("query " + imagecore::shape_to_string(x.shape()) +
                         " does not match generator output " +
                         imagecore::shape_to_string(g.image_shape()));
  }
  if (params.restarts < 1) throw ValidationError("inversion needs restarts >= 1");
  if (params.initial_z && params.initial_z->shape() != g.latent_shape()) {
    throw DimensionError("initial z has the wrong shape");
  }
  std::mt19937_64 rng(params.seed);
  InversionResult r;
  for (std::size_t start = 0; start < params.restarts; ++start) {
    Tensor z = start == 0 && params.initial_z ? *params.initial_z
                                              : sample_latent(g.latent_shape(), rng);
    nn::AdamState adam(z.shape(), {params.step_size, 0.9, 0.999, 1e-8});
    for (std::size_t it = 0;; ++it) {
      const Evaluated gz = g.evaluate(z);
      double loss = (1.0 - lambda) * residual_loss(x, gz.value);
      Tensor grad(gz.value.shape());
      for (std::size_t i = 0; i < grad.size(); ++i) {
        const double diff = gz.value[i] - x[i];
        grad[i] = (1.0 - lambda) * static_cast<double>((diff > 0.0) - (diff < 0.0));
      }
      if (lambda > 0.0) {
        const Evaluated dz = d.evaluate(gz.value);
        const double logit = dz.value[0];
        loss += lambda * nn::sigmoid_ce_with_logits(logit, 1.0);
        const Tensor gd = dz.pullback(Tensor({1, 1, 1}, lambda * (nn::sigmoid(logit) - 1.0)));
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += gd[i];
      }
      if (!std::isfinite(loss)) throw DivergenceError("inversion loss is not finite", it);
      if (r.loss_trace.empty() || loss < r.best_loss) {
        r.best_loss = loss;
        r.best_z = z;
        r.best_iteration = r.loss_trace.size();
      }
      r.loss_trace.push_back(loss);
      if (it == params.iterations) break;
      const Tensor gz_grad = gz.pullback(grad);
      if (!gz_grad.all_finite()) throw DivergenceError("inversion gradient is not finite", it);
      nn::adam_step(z, gz_grad, adam);
      for (double& v : z.data()) v = std::clamp(v, -1.0, 1.0);
    }
  }
  return r;
}

AnomalyReport anomaly_score(const Image& x, const Generator& g, const Discriminator& d,
                            double lambda, const InversionParams& params) {
  const Tensor& xt = x.pixels();
  InversionResult inv = invert_latent(xt, g, d, lambda, params);
  AnomalyReport rep;
  rep.lambda = lambda;
  rep.reconstruction = g.generate(inv.best_z);
  rep.residual_loss = residual_loss(xt, rep.reconstruction);
  rep.discrimination_loss = discrimination_loss(d, rep.reconstruction);
  rep.score = combine_score(rep.residual_loss, rep.discrimination_loss, lambda);
  rep.residual_signed = Tensor(xt.shape());
  for (std::size_t i = 0; i < xt.size(); ++i) {
    rep.residual_signed[i] = std::clamp(xt[i] - rep.reconstruction[i], -1.0, 1.0);
  }
  rep.best_z = std::move(inv.best_z);
  rep.loss_trace = std::move(inv.loss_trace);
  return rep;
}

CalibrationResult calibration_from_scores(std::vector<double> scores, double lambda) {
  check_lambda(lambda);
  if (scores.empty()) throw ValidationError("calibration needs at least one normal image");
  CalibrationResult c;
  c.lambda = lambda;
  c.count = scores.size();
  c.scores = scores;
  std::sort(scores.begin(), scores.end());
  c.min = scores.front();
  c.max = scores.back();
  const std::size_t n = scores.size();
  c.median = n % 2 ? scores[n / 2] : 0.5 * (scores[n / 2 - 1] + scores[n / 2]);
  c.threshold = c.max;
  return c;
}

CalibrationResult calibrate_threshold(const Generator& g, const Discriminator& d,
                                      std::span<const Image> normals, double lambda,
                                      const InversionParams& params) {
  if (normals.empty()) throw ValidationError("calibration needs at least one normal image");
  std::vector<double> scores;
  for (const Image& img : normals) scores.push_back(anomaly_score(img, g, d, lambda, params).score);
  return calibration_from_scores(std::move(scores), lambda);
}

std::string CalibrationResult::to_json() const {
  const json j = {{"lambda", lambda},
                  {"threshold", threshold},
                  {"n", count},
                  {"scores", {{"min", min}, {"median", median}, {"max", max}}}};
  return j.dump(2) + "\n";
}

CalibrationResult CalibrationResult::from_json(const std::string& text) {
  CalibrationResult c;
  try {
    const json j = json::parse(text);
    c.lambda = j.at("lambda").get<double>();
    c.threshold = j.at("threshold").get<double>();
    c.count = j.at("n").get<std::size_t>();
    const json& s = j.at("scores");
    c.min = s.at("min").get<double>();
    c.median = s.at("median").get<double>();
    c.max = s.at("max").get<double>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("bad calibration file: ") + e.what());
  }
  check_lambda(c.lambda);
  return c;
}

void save_calibration(const CalibrationResult& c, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << c.to_json();
}

CalibrationResult load_calibration(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read calibration " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return CalibrationResult::from_json(ss.str());
}

std::array<double, 3> jet(double value) {
  const double t = 0.5 * (value + 1.0);
  auto ramp = [t](double centre) { return std::clamp(1.5 - std::abs(4.0 * t - centre), 0.0, 1.0); };
  return {ramp(3.0), ramp(2.0), ramp(1.0)};
}

Image render_colormap(const Tensor& residual) {
  if (residual.rank() != 3) {
    throw DimensionError("residual must be [H,W,C], got " +
                         imagecore::shape_to_string(residual.shape()));
  }
  const std::size_t h = residual.dim(0), w = residual.dim(1), c = residual.dim(2);
  Image out(h, w, 3);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double m = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        const double v = residual.at(y, x, k);
        if (!(v >= -1.0 && v <= 1.0)) {
          throw ValidationError("residual value " + std::to_string(v) + " at (" +
                                std::to_string(y) + "," + std::to_string(x) +
                                ") outside [-1,1]");
        }
        m += v;
      }
      const auto rgb = jet(m / static_cast<double>(c));
      for (std::size_t k = 0; k < 3; ++k) out.set(y, x, k, rgb[k]);
    }
  }
  return out;
}

std::string score_rows_to_csv(std::span<const ScoreRow> rows) {
  std::string out = "image,score,l_r,l_d,verdict\n";
  for (const auto& r : rows) {
    out += r.image + "," + fmt(r.score) + "," + fmt(r.l_r) + "," + fmt(r.l_d) + "," +
           (r.anomalous ? "anomaly" : "normal") + "\n";
  }
  return out;
}

}  // namespace linesight::anomaly
