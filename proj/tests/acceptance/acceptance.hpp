#pragma once

#include <string>

namespace linesight::acceptance {

struct Outcome {
  bool pass = false;
  std::string detail;
};

Outcome table_metrics();         // 1
Outcome table_vote_replay();     // 2
Outcome vote_monte_carlo();      // 3
Outcome kernel_oracles();        // 4
Outcome anomaly_math();          // 5
Outcome desk_study();            // 6
Outcome segmentation_harness();  // 7

}  // namespace linesight::acceptance
