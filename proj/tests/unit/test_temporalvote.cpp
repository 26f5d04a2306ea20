#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "json.hpp"
#include "linesight/errors.hpp"
#include "linesight/temporalvote.hpp"
#include "video_tables.hpp"

using namespace linesight;
using namespace linesight::temporalvote;
using detmetrics::BoundingBox;
using kit::PartKind;

namespace {

using Frame = std::vector<Detection>;

Detection det(int class_id, double p) { return Detection(BoundingBox(0, 0, 4, 4), class_id, p); }

const int kDisc1 = kit::class_id(PartKind::Disc, 1);
const int kDisc2 = kit::class_id(PartKind::Disc, 2);
const int kCal1 = kit::class_id(PartKind::Calliper, 1);
const int kCal2 = kit::class_id(PartKind::Calliper, 2);

// Independent tally: frames from the first confident detection up to the
// patience stop, each class at most once per frame.
std::vector<std::size_t> tally_oracle(const std::vector<Frame>& frames, const VoteConfig& cfg) {
  std::vector<std::size_t> counts(kit::kNumClasses, 0);
  bool started = false;
  std::size_t quiet = 0;
  for (const auto& f : frames) {
    std::vector<int> hit(kit::kNumClasses, 0);
    for (const auto& d : f) {
      if (d.probability >= cfg.prob_threshold) hit[static_cast<std::size_t>(d.class_id)] = 1;
    }
    const bool any = std::count(hit.begin(), hit.end(), 1) > 0;
    if (!started && !any) continue;
    started = true;
    if (any) {
      quiet = 0;
      for (std::size_t c = 0; c < hit.size(); ++c) counts[c] += static_cast<std::size_t>(hit[c]);
    } else if (++quiet >= cfg.patience) {
      break;
    }
  }
  return counts;
}

}  // namespace

TEST_CASE("idle session ignores empty frames") {
  VoteSession s;
  s.step(Frame{});
  CHECK(s.state() == SessionState::Idle);
  CHECK(s.count(kDisc1) == 0);
  s.step(Frame{det(kDisc1, 0.94)});
  CHECK(s.state() == SessionState::Idle);
}

TEST_CASE("first confident detection triggers counting") {
  VoteSession s;
  s.step(Frame{});
  s.step(Frame{det(kDisc1, 0.97)});
  CHECK(s.state() == SessionState::Counting);
  CHECK(s.count(kDisc1) == 1);
  CHECK(s.trigger_frame() == std::optional<std::size_t>(1));
}

TEST_CASE("patience window ends the session") {
  VoteSession s;
  s.step(Frame{det(kDisc1, 0.97)});
  for (int i = 0; i < 99; ++i) {
    s.step(Frame{});
    CHECK(s.state() == SessionState::Counting);
    CHECK(s.frames_since_last_detection() <= s.config().patience);
  }
  s.step(Frame{});
  CHECK(s.state() == SessionState::Finished);
  CHECK_THROWS_AS(s.step(Frame{}), StateError);
}

TEST_CASE("a detection resets the patience counter") {
  VoteSession s(VoteConfig{3, 0.95});
  s.step(Frame{det(kCal1, 0.99)});
  s.step(Frame{});
  s.step(Frame{});
  s.step(Frame{det(kCal1, 0.99)});
  CHECK(s.frames_since_last_detection() == 0);
  s.step(Frame{});
  s.step(Frame{});
  CHECK(s.state() == SessionState::Counting);
  s.step(Frame{});
  CHECK(s.state() == SessionState::Finished);
  CHECK(s.count(kCal1) == 2);
}

TEST_CASE("a class counts once per frame") {
  VoteSession s;
  s.step(Frame{det(kDisc1, 0.97), det(kDisc1, 0.99), det(kCal1, 0.96)});
  CHECK(s.count(kDisc1) == 1);
  CHECK(s.count(kCal1) == 1);
}

TEST_CASE("functional step leaves the input untouched") {
  const VoteSession a;
  const VoteSession b = session_step(a, Frame{det(kDisc2, 0.99)});
  CHECK(a.state() == SessionState::Idle);
  CHECK(b.state() == SessionState::Counting);
}

TEST_CASE("decision outcomes") {
  VoteSession s(VoteConfig{1, 0.95});
  CHECK_THROWS_AS(session_decision(s, PartKind::Disc), StateError);
  for (int i = 0; i < 5; ++i) s.step(Frame{det(kDisc1, 0.99), det(kDisc2, 0.99), det(kCal2, 0.99)});
  s.step(Frame{});
  REQUIRE(s.state() == SessionState::Finished);
  CHECK(session_decision(s, PartKind::Disc).kind == GroupDecision::Kind::Tie);
  CHECK(session_decision(s, PartKind::Calliper) == GroupDecision{GroupDecision::Kind::Decided, 2});
  VoteSession empty;
  empty.finish();
  CHECK(session_decision(empty, PartKind::Disc).kind == GroupDecision::Kind::Undecided);
}

TEST_CASE("configuration is validated") {
  CHECK_THROWS_AS(VoteSession(VoteConfig{0, 0.95}), ValidationError);
  CHECK_THROWS_AS(VoteSession(VoteConfig{10, 1.5}), ValidationError);
  VoteSession s;
  CHECK_THROWS_AS(s.step(Frame{det(9, 0.99)}), ValidationError);
}

TEST_CASE("reference count table replays to the expected kits") {
  VoteConfig cfg;
  for (const auto& v : testsupport::reference_videos()) {
    const auto frames = testsupport::replay_stream(v.counts);
    const SessionResult r = run_session(frames, cfg);
    for (int c = 0; c < kit::kNumClasses; ++c) {
      CHECK(r.counts[static_cast<std::size_t>(c)] == v.counts[static_cast<std::size_t>(c)]);
    }
    CHECK(r.disc == GroupDecision{GroupDecision::Kind::Decided, v.kit_type});
    CHECK(r.calliper == GroupDecision{GroupDecision::Kind::Decided, v.kit_type});
  }
}

TEST_CASE("video 4 decides type 2 for both parts") {
  const auto& v = testsupport::reference_videos()[3];
  const SessionResult r = run_session(testsupport::replay_stream(v.counts));
  CHECK(r.counts[static_cast<std::size_t>(kDisc2)] == 118);
  CHECK(r.counts[static_cast<std::size_t>(kCal2)] == 115);
  CHECK(r.kit_decided());
}

TEST_CASE("empty video is undecided") {
  const SessionResult r = run_session(std::vector<Frame>(50));
  CHECK(r.disc.kind == GroupDecision::Kind::Undecided);
  CHECK(r.calliper.kind == GroupDecision::Kind::Undecided);
  CHECK(!r.trigger_frame);
}

TEST_CASE("a dropout frame does not change the decision") {
  std::vector<Frame> frames(10, Frame{det(kDisc1, 0.98), det(kCal1, 0.98)});
  frames[4] = Frame{det(kCal1, 0.98)};
  const SessionResult r = run_session(frames, VoteConfig{3, 0.95});
  CHECK(r.counts[static_cast<std::size_t>(kDisc1)] == 9);
  CHECK(r.disc == GroupDecision{GroupDecision::Kind::Decided, 1});
  CHECK(r.calliper == GroupDecision{GroupDecision::Kind::Decided, 1});
}

TEST_CASE("frames after the finish are not consumed") {
  std::vector<Frame> frames = {Frame{det(kDisc1, 0.99)}, Frame{}, Frame{}, Frame{det(kDisc2, 0.99)}};
  const SessionResult r = run_session(frames, VoteConfig{2, 0.95});
  CHECK(r.frames_consumed == 3);
  CHECK(r.counts[static_cast<std::size_t>(kDisc2)] == 0);
}

TEST_CASE("streaming source matches the span replay") {
  const auto frames = testsupport::replay_stream(testsupport::reference_videos()[6].counts);
  std::size_t next = 0;
  const SessionResult a = run_session(
      [&]() -> std::optional<Frame> {
        if (next == frames.size()) return std::nullopt;
        return frames[next++];
      });
  const SessionResult b = run_session(frames);
  CHECK(a.counts == b.counts);
  CHECK(a.frames_consumed == b.frames_consumed);
}

TEST_CASE("counts equal the brute-force tally on random streams") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> cls(0, kit::kNumClasses - 1), n(0, 3), len(0, 60);
  std::uniform_real_distribution<double> prob(0.8, 1.0);
  std::bernoulli_distribution empty(0.4);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Frame> frames(static_cast<std::size_t>(len(rng)));
    for (auto& f : frames) {
      if (empty(rng)) continue;
      for (int i = n(rng); i > 0; --i) f.push_back(det(cls(rng), prob(rng)));
    }
    const VoteConfig cfg{static_cast<std::size_t>(1 + trial % 5), 0.9};
    const SessionResult r = run_session(frames, cfg);
    CHECK(r.counts == tally_oracle(frames, cfg));
  }
}

TEST_CASE("scaling confident probabilities keeps the decision") {
  std::mt19937_64 rng(12);
  const auto frames = simulate_stream(StreamSimConfig{3, 2}, rng);
  const SessionResult base = run_session(frames);
  auto scaled = frames;
  for (auto& f : scaled) {
    for (auto& d : f) {
      if (d.probability >= 0.95) d.probability = 0.95 + 0.5 * (d.probability - 0.95);
    }
  }
  const SessionResult r = run_session(scaled);
  CHECK(r.counts == base.counts);
  CHECK(r.disc == base.disc);
}

TEST_CASE("empty frames after the finish never change counts") {
  const auto frames = testsupport::replay_stream(testsupport::reference_videos()[0].counts);
  auto longer = frames;
  longer.resize(frames.size() + 500);
  CHECK(run_session(frames).counts == run_session(longer).counts);
}

TEST_CASE("simulated streams vote correctly") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    StreamSimConfig cfg;
    cfg.disc_type = 1 + trial % 3;
    cfg.calliper_type = 1 + (trial / 3) % 3;
    const SessionResult r = run_session(simulate_stream(cfg, rng));
    CHECK(r.disc == GroupDecision{GroupDecision::Kind::Decided, cfg.disc_type});
    CHECK(r.calliper == GroupDecision{GroupDecision::Kind::Decided, cfg.calliper_type});
    CHECK(r.trigger_frame == std::optional<std::size_t>(cfg.lead_in));
  }
}

TEST_CASE("report formats") {
  const auto& v = testsupport::reference_videos()[0];
  SessionResult r = run_session(testsupport::replay_stream(v.counts), {}, "video_1");
  const std::vector<SessionResult> rows = {r};
  const std::string csv = count_table_csv(rows);
  CHECK(csv.rfind("video,class,frames_counted\n", 0) == 0);
  CHECK(csv.find("video_1,disc_1,113\n") != std::string::npos);
  CHECK(csv.find("video_1,calliper_1,119\n") != std::string::npos);
  const auto j = nlohmann::json::parse(decision_json(r));
  CHECK(j.at("video") == "video_1");
  CHECK(j.at("disc") == 1);
  r.calliper = {GroupDecision::Kind::Tie, 0};
  CHECK(nlohmann::json::parse(decision_json(r)).at("calliper") == "tie");
}
