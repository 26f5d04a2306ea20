#include <cmath>
#include <cstdio>
#include <random>

#include "acceptance.hpp"
#include "linesight/detmetrics.hpp"
#include "linesight/kit_classes.hpp"
#include "linesight/temporalvote.hpp"
#include "video_tables.hpp"

namespace linesight::acceptance {

namespace {

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

}  // namespace

Outcome table_metrics() {
  struct Row {
    int class_id;
    detmetrics::ClassCounts counts;
    double precision, recall;
  };
  // Image-level detection results at probability threshold 0.9 with the
  // printed two-decimal precision and recall.
  const std::vector<Row> rows = {
      {0, {79, 0, 35}, 1.00, 0.69}, {1, {66, 0, 26}, 1.00, 0.72}, {2, {50, 0, 23}, 1.00, 0.68},
      {3, {89, 0, 8}, 1.00, 0.91},  {4, {66, 0, 11}, 1.00, 0.86}, {5, {49, 0, 12}, 1.00, 0.80},
  };
  double worst = 0.0;
  bool ok = true;
  std::string detail;
  for (const auto& r : rows) {
    const auto p = detmetrics::precision(r.counts);
    const auto rc = detmetrics::recall(r.counts);
    if (!p || !rc) {
      ok = false;
      continue;
    }
    const double err = std::max(std::abs(*p - r.precision), std::abs(*rc - r.recall));
    worst = std::max(worst, err);
    ok = ok && err <= 0.01;
    detail += kit::class_name(r.class_id) + fmt(" P=%.3f R=%.3f, ", *p, *rc);
  }
  return {ok, detail + fmt("max deviation %.4f (tolerance 0.01)", worst)};
}

Outcome table_vote_replay() {
  int correct = 0;
  const auto& videos = testsupport::reference_videos();
  temporalvote::VoteConfig cfg;  // patience 100, threshold 0.95
  bool counts_ok = true;
  for (std::size_t i = 0; i < videos.size(); ++i) {
    const auto frames = testsupport::replay_stream(videos[i].counts);
    const auto r = temporalvote::run_session(frames, cfg, "video_" + std::to_string(i + 1));
    for (int c = 0; c < kit::kNumClasses; ++c) {
      counts_ok = counts_ok && r.counts[static_cast<std::size_t>(c)] ==
                                   videos[i].counts[static_cast<std::size_t>(c)];
    }
    correct += r.disc == temporalvote::GroupDecision{temporalvote::GroupDecision::Kind::Decided,
                                                     videos[i].kit_type} &&
               r.calliper == temporalvote::GroupDecision{
                                 temporalvote::GroupDecision::Kind::Decided, videos[i].kit_type};
  }
  return {correct == 9 && counts_ok,
          std::to_string(correct) + "/9 kits correct, replayed counts " +
              (counts_ok ? "match" : "differ from") + " the table"};
}

Outcome vote_monte_carlo() {
  constexpr int kVideos = 1000;
  int correct = 0;
  std::size_t min_run = SIZE_MAX;
  double max_fn = 0.0;
  std::mt19937_64 rng(20240601);
  std::uniform_int_distribution<int> type(1, kit::kNumTypes);
  std::uniform_int_distribution<std::size_t> run(20, 150), lead(0, 40);
  std::uniform_real_distribution<double> fn(0.0, 0.3);
  for (int v = 0; v < kVideos; ++v) {
    temporalvote::StreamSimConfig sim;
    sim.disc_type = type(rng);
    sim.calliper_type = type(rng);
    sim.counting_frames = run(rng);
    sim.lead_in = lead(rng);
    sim.fn_probability = fn(rng);
    sim.tail = 100;
    std::mt19937_64 video_rng(1000003ULL * static_cast<std::uint64_t>(v + 1));
    const auto frames = temporalvote::simulate_stream(sim, video_rng);
    const auto r = temporalvote::run_session(frames);
    min_run = std::min(min_run, sim.counting_frames);
    max_fn = std::max(max_fn, sim.fn_probability);
    correct += r.disc.decided() && r.disc.type_id == sim.disc_type && r.calliper.decided() &&
               r.calliper.type_id == sim.calliper_type;
  }
  return {correct == kVideos,
          std::to_string(correct) + "/" + std::to_string(kVideos) +
              fmt(" correct, FN probability up to %.3f, at least %.0f counting frames", max_fn,
                  static_cast<double>(min_run))};
}

}  // namespace linesight::acceptance
