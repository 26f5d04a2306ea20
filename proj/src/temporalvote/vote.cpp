#include <algorithm>
#include <cmath>

#include "json.hpp"
#include "linesight/errors.hpp"
#include "linesight/temporalvote.hpp"

namespace linesight::temporalvote {

using nlohmann::json;

std::string to_string(SessionState s) {
  switch (s) {
    case SessionState::Idle: return "idle";
    case SessionState::Counting: return "counting";
    case SessionState::Finished: return "finished";
  }
  return "unknown";
}

void VoteConfig::validate() const {
  if (patience < 1) throw ValidationError("vote patience must be >= 1");
  if (!(prob_threshold >= 0.0 && prob_threshold <= 1.0)) {
    throw ValidationError("vote threshold must be in [0,1]");
  }
}

VoteSession::VoteSession(VoteConfig config) : config_(config), counts_(kit::kNumClasses, 0) {
  config_.validate();
}

std::size_t VoteSession::count(int class_id) const {
  if (!kit::valid_class(class_id)) {
    throw ValidationError("class id " + std::to_string(class_id) + " out of range");
  }
  return counts_[static_cast<std::size_t>(class_id)];
}

void VoteSession::step(std::span<const Detection> frame_dets) {
  if (state_ == SessionState::Finished) throw StateError("vote session already finished");
  std::vector<bool> seen(kit::kNumClasses, false);
  bool any = false;
  for (const auto& d : frame_dets) {
    if (d.probability < config_.prob_threshold) continue;
    if (!kit::valid_class(d.class_id)) {
      throw ValidationError("detection class " + std::to_string(d.class_id) + " out of range");
    }
    seen[static_cast<std::size_t>(d.class_id)] = true;
    any = true;
  }
  const std::size_t index = frames_seen_++;
  if (state_ == SessionState::Idle) {
    if (!any) return;
    state_ = SessionState::Counting;
    trigger_ = index;
  }
  ++counting_frames_;
  if (any) {
    for (std::size_t c = 0; c < seen.size(); ++c) counts_[c] += seen[c];
    since_last_ = 0;
    return;
  }
  if (++since_last_ >= config_.patience) state_ = SessionState::Finished;
}

void VoteSession::finish() { state_ = SessionState::Finished; }

VoteSession session_step(VoteSession s, std::span<const Detection> frame_dets) {
  s.step(frame_dets);
  return s;
}

std::string GroupDecision::to_string() const {
  switch (kind) {
    case Kind::Decided: return std::to_string(type_id);
    case Kind::Undecided: return "undecided";
    case Kind::Tie: return "tie";
  }
  return "undecided";
}

GroupDecision session_decision(const VoteSession& s, kit::PartKind group) {
  if (s.state() != SessionState::Finished) {
    throw StateError("vote decision requested in state " + to_string(s.state()));
  }
  std::size_t best = 0;
  int best_type = 0;
  bool tie = false;
  for (int c : kit::group_classes(group)) {
    const std::size_t n = s.count(c);
    if (n > best) {
      best = n;
      best_type = kit::type_of(c);
      tie = false;
    } else if (n == best && n > 0) {
      tie = true;
    }
  }
  if (best == 0) return {GroupDecision::Kind::Undecided, 0};
  if (tie) return {GroupDecision::Kind::Tie, 0};
  return {GroupDecision::Kind::Decided, best_type};
}

namespace {

SessionResult summarize(const VoteSession& s, std::string video) {
  SessionResult r;
  r.video = std::move(video);
  r.counts = s.counts();
  r.disc = session_decision(s, kit::PartKind::Disc);
  r.calliper = session_decision(s, kit::PartKind::Calliper);
  r.frames_consumed = s.frames_seen();
  r.trigger_frame = s.trigger_frame();
  r.counting_frames = s.counting_frames();
  return r;
}

json decision_value(const GroupDecision& d) {
  if (d.decided()) return d.type_id;
  return d.to_string();
}

}  // namespace

SessionResult run_session(std::span<const std::vector<Detection>> frames,
                          const VoteConfig& config, std::string video) {
  VoteSession s(config);
  for (const auto& f : frames) {
    s.step(f);
    if (s.state() == SessionState::Finished) break;
  }
  s.finish();
  return summarize(s, std::move(video));
}

SessionResult run_session(const std::function<std::optional<std::vector<Detection>>()>& source,
                          const VoteConfig& config, std::string video) {
  VoteSession s(config);
  while (s.state() != SessionState::Finished) {
    const auto frame = source();
    if (!frame) break;
    s.step(*frame);
  }
  s.finish();
  return summarize(s, std::move(video));
}

std::string count_table_csv(std::span<const SessionResult> results) {
  std::string out = "video,class,frames_counted\n";
  for (const auto& r : results) {
    for (int c = 0; c < kit::kNumClasses; ++c) {
      out += r.video + "," + kit::class_name(c) + "," +
             std::to_string(r.counts[static_cast<std::size_t>(c)]) + "\n";
    }
  }
  return out;
}

std::string decision_json(const SessionResult& r) {
  const json j = {{"video", r.video},
                  {"disc", decision_value(r.disc)},
                  {"calliper", decision_value(r.calliper)}};
  return j.dump(2) + "\n";
}

std::vector<std::vector<Detection>> simulate_stream(const StreamSimConfig& config,
                                                    std::mt19937_64& rng) {
  if (config.counting_frames < 1) throw ValidationError("simulated run needs frames >= 1");
  if (!(config.fn_probability >= 0.0 && config.fn_probability < 1.0)) {
    throw ValidationError("fn_probability must be in [0,1)");
  }
  if (!(config.prob_threshold > 0.0 && config.prob_threshold <= 1.0)) {
    throw ValidationError("simulated threshold must be in (0,1]");
  }
  const int disc = kit::class_id(kit::PartKind::Disc, config.disc_type);
  const int calliper = kit::class_id(kit::PartKind::Calliper, config.calliper_type);
  if (!kit::valid_class(disc) || !kit::valid_class(calliper)) {
    throw ValidationError("simulated part type out of range");
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> confident(config.prob_threshold, 1.0);
  std::uniform_real_distribution<double> weak(0.0, std::nextafter(config.prob_threshold, 0.0));
  std::uniform_int_distribution<int> any_class(0, kit::kNumClasses - 1);
  const detmetrics::BoundingBox calliper_box(4, 12, 12, 20), disc_box(12, 8, 28, 24);

  std::vector<std::vector<Detection>> frames(config.lead_in);
  for (std::size_t i = 0; i < config.counting_frames; ++i) {
    std::vector<Detection> f;
    bool hit_disc = unit(rng) >= config.fn_probability;
    const bool hit_calliper = unit(rng) >= config.fn_probability;
    // The run starts at its trigger frame.
    if (i == 0 && !hit_disc && !hit_calliper) hit_disc = true;
    if (hit_disc) f.emplace_back(disc_box, disc, confident(rng));
    if (hit_calliper) f.emplace_back(calliper_box, calliper, confident(rng));
    if (unit(rng) < config.distractor_probability) {
      int c = any_class(rng);
      while (c == disc || c == calliper) c = any_class(rng);
      f.emplace_back(kit::kind_of(c) == kit::PartKind::Disc ? disc_box : calliper_box, c,
                     weak(rng));
    }
    frames.push_back(std::move(f));
  }
  frames.resize(frames.size() + config.tail);
  return frames;
}

}  // namespace linesight::temporalvote
