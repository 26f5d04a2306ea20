#include <chrono>
#include <cstdio>
#include <exception>
#include <vector>

#include "CLI11.hpp"
#include "acceptance.hpp"

using namespace linesight::acceptance;

namespace {

struct Criterion {
  int id;
  const char* name;
  double limit_s;
  Outcome (*run)();
};

const std::vector<Criterion> kCriteria = {
    {1, "detection metrics from count table", 1.0, table_metrics},
    {2, "vote replay of the video count table", 1.0, table_vote_replay},
    {3, "vote robustness Monte-Carlo", 30.0, vote_monte_carlo},
    {4, "kernel oracle suite", 60.0, kernel_oracles},
    {5, "anomaly score math", 10.0, anomaly_math},
    {6, "end-to-end desk study", 600.0, desk_study},
    {7, "segmentation harness", 60.0, segmentation_harness},
};

bool run_one(const Criterion& c) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = c.run();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const bool in_time = s <= c.limit_s;
  const bool pass = o.pass && in_time;
  std::printf("criterion %d %s: %s; %s; %.2f s of %.0f s%s\n", c.id, pass ? "PASS" : "FAIL", c.name,
              o.detail.c_str(), s, c.limit_s, in_time ? "" : " (over time limit)");
  std::fflush(stdout);
  return pass;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria runner"};
  int which = 0;
  app.add_option("--criterion", which, "Criterion 1-7; 0 runs all")->check(CLI::Range(0, 7));
  CLI11_PARSE(app, argc, argv);
  bool ok = true;
  for (const auto& c : kCriteria) {
    if (which == 0 || which == c.id) ok = run_one(c) && ok;
  }
  return ok ? 0 : 1;
}
