#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "linesight/detmetrics.hpp"
#include "linesight/kit_classes.hpp"

// Video vote protocol: the first confident detection starts counting, every
// frame adds at most one count per class, and the session ends after
// `patience` consecutive frames without a confident detection.
namespace linesight::temporalvote {

using detmetrics::Detection;

enum class SessionState { Idle, Counting, Finished };

std::string to_string(SessionState s);

struct VoteConfig {
  std::size_t patience = 100;
  double prob_threshold = 0.95;

  void validate() const;
};

class VoteSession {
 public:
  explicit VoteSession(VoteConfig config = {});

  // Throws StateError once Finished.
  void step(std::span<const Detection> frame_dets);
  // Ends the session early (end of stream). No-op when already Finished.
  void finish();

  SessionState state() const noexcept { return state_; }
  const VoteConfig& config() const noexcept { return config_; }
  std::size_t count(int class_id) const;
  const std::vector<std::size_t>& counts() const noexcept { return counts_; }
  std::size_t frames_since_last_detection() const noexcept { return since_last_; }
  std::size_t frames_seen() const noexcept { return frames_seen_; }
  // Frame index of the trigger, if any.
  std::optional<std::size_t> trigger_frame() const noexcept { return trigger_; }
  // Frames stepped while Counting, trigger included.
  std::size_t counting_frames() const noexcept { return counting_frames_; }

 private:
  VoteConfig config_;
  SessionState state_ = SessionState::Idle;
  std::vector<std::size_t> counts_;
  std::size_t since_last_ = 0;
  std::size_t frames_seen_ = 0;
  std::size_t counting_frames_ = 0;
  std::optional<std::size_t> trigger_;
};

VoteSession session_step(VoteSession s, std::span<const Detection> frame_dets);

struct GroupDecision {
  enum class Kind { Decided, Undecided, Tie };
  Kind kind = Kind::Undecided;
  int type_id = 0;  // 1-based part type when Decided

  bool decided() const noexcept { return kind == Kind::Decided; }
  // Type number, "undecided" or "tie".
  std::string to_string() const;
  friend bool operator==(const GroupDecision&, const GroupDecision&) = default;
};

// Majority over the classes of one part group. Throws StateError unless Finished.
GroupDecision session_decision(const VoteSession& s, kit::PartKind group);

struct SessionResult {
  std::string video;
  std::vector<std::size_t> counts;  // per class id
  GroupDecision disc;
  GroupDecision calliper;
  std::size_t frames_consumed = 0;
  std::optional<std::size_t> trigger_frame;
  std::size_t counting_frames = 0;

  bool kit_decided() const noexcept { return disc.decided() && calliper.decided(); }
};

// Replays frames until the session finishes; a stream that ends first forces
// the finish. Frames after the finish are not consumed.
SessionResult run_session(std::span<const std::vector<Detection>> frames,
                          const VoteConfig& config = {}, std::string video = "");
// Pulls frames from `source` until it returns nullopt or the session finishes.
SessionResult run_session(const std::function<std::optional<std::vector<Detection>>()>& source,
                          const VoteConfig& config = {}, std::string video = "");

// CSV `video,class,frames_counted`, one row per class per result.
std::string count_table_csv(std::span<const SessionResult> results);
// {"video": str, "disc": int|"undecided"|"tie", "calliper": ...}
std::string decision_json(const SessionResult& r);

// Synthetic detector output for one kit pass: empty lead-in, a counting run in
// which each part is missed with probability fn_probability, then empty
// frames. Misses and sub-threshold distractors never produce a confident
// detection of a wrong class.
struct StreamSimConfig {
  int disc_type = 1;
  int calliper_type = 1;
  std::size_t lead_in = 10;
  std::size_t counting_frames = 20;
  std::size_t tail = 120;
  double fn_probability = 0.3;
  double prob_threshold = 0.95;
  // Chance of an extra below-threshold detection of a random wrong class.
  double distractor_probability = 0.2;
};

std::vector<std::vector<Detection>> simulate_stream(const StreamSimConfig& config,
                                                    std::mt19937_64& rng);

}  // namespace linesight::temporalvote
