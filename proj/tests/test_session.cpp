#include <gtest/gtest.h>

#include <chrono>
#include <thread>

#include "annotrack/session.hpp"
#include "annotrack/synth.hpp"

using namespace annotrack;
using namespace std::chrono_literals;

namespace {

synth::SceneSpec two_blobs(std::int64_t frames = 30) {
  synth::SceneSpec s;
  s.name = "two";
  s.width = 160;
  s.height = 120;
  s.frame_count = frames;
  s.seed = 9;
  s.blobs = {{"blob_0", synth::Shape::Ellipse, 10, 7, {255, 85, 0}, 40, 30, 2, 1, synth::Motion::Bounce, 0, true, {}},
             {"blob_1", synth::Shape::Rectangle, 9, 8, {85, 170, 255}, 110, 85, -2, 1, synth::Motion::Bounce, 0, true, {}}};
  return s;
}

synth::SceneSpec behind_bar() {
  synth::SceneSpec s;
  s.name = "bar";
  s.width = 160;
  s.height = 120;
  s.frame_count = 50;
  s.seed = 4;
  s.blobs = {{"blob_0", synth::Shape::Rectangle, 6, 5, {255, 85, 0}, 30, 60, 2, 0, synth::Motion::Free, 0, true, {}}};
  s.occluders = {{{70, 0, 89, 119}, {170, 170, 170}}};
  return s;
}

struct Fixture {
  synth::SceneSpec spec;
  synth::SyntheticVideo synthetic;
  std::shared_ptr<InMemoryVideo> video;

  explicit Fixture(synth::SceneSpec s) : spec(std::move(s)), synthetic(synth::generate(spec)) {
    video = synth::to_video(spec, synthetic);
  }

  LabeledFrame truth_frame(std::int64_t t) const {
    LabeledFrame f;
    for (const auto& [name, counts] : synthetic.truth[t])
      if (!rle::empty(counts)) f.annotations[parse_label(name)].mask = rle::decode_counts(counts);
    return f;
  }
};

// Delays each frame so tests can act while prediction runs.
class SlowBackend final : public PropagationBackend {
 public:
  Prediction propagate(const MemoryBuffer& b, const Frame& q, const AdvancedParams& p) const override {
    std::this_thread::sleep_for(15ms);
    return inner_.propagate(b, q, p);
  }

 private:
  ColorTemplateBackend inner_;
};

template <class F>
ErrorKind kind_of(F f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::Io;
}

void wait_for_progress(const Session& s, std::int64_t frame) {
  std::uint64_t seen = 0;
  for (int i = 0; i < 400; ++i) {
    for (const auto& e : s.wait_events(seen, 50ms)) {
      seen = e.seq;
      if (e.kind == EventKind::Progress && e.frame >= frame) return;
    }
  }
  FAIL() << "no progress to frame " << frame;
}

}  // namespace

TEST(Session, FreshSessionHasNoEvents) {
  Fixture fx(two_blobs(5));
  Session s(fx.video, {});
  EXPECT_TRUE(s.poll_events(0).empty());
  EXPECT_EQ(s.state().status, SessionStatus::Idle);
  EXPECT_FALSE(s.last_predicted().has_value());
}

TEST(Session, RunsToCompletion) {
  Fixture fx(two_blobs());
  Session s(fx.video, {});
  s.set_annotation(0, fx.truth_frame(0));
  EXPECT_EQ(s.stored(0)->source, AnnotationSource::GroundTruth);
  s.start_prediction(0);
  ASSERT_TRUE(s.wait_until_settled(60s));
  EXPECT_EQ(s.state().status, SessionStatus::Completed);
  EXPECT_EQ(s.state().frame, 29);
  EXPECT_EQ(s.last_predicted(), 29);

  const auto events = s.poll_events(0);
  ASSERT_FALSE(events.empty());
  EXPECT_EQ(events.front().kind, EventKind::Truncated);
  EXPECT_EQ(events.back().kind, EventKind::Completed);
  EXPECT_EQ(events.back().frame, 29);
  std::int64_t prev = 0;
  for (std::size_t i = 0; i < events.size(); ++i) {
    EXPECT_EQ(events[i].seq, i + 1);
    if (events[i].kind == EventKind::Progress) {
      EXPECT_EQ(events[i].frame, prev + 1);
      prev = events[i].frame;
    }
    EXPECT_NE(events[i].kind, EventKind::Paused);
  }
  EXPECT_TRUE(s.poll_events(events.back().seq).empty());
  EXPECT_TRUE(s.poll_events(events.back().seq + 10).empty());

  // No gaps, and every prediction keeps the fixed instance set.
  EXPECT_EQ(s.annotated_frames(AnnotationSource::Predicted).size(), 29u);
  for (std::int64_t t = 1; t < 30; ++t) {
    const auto sf = s.stored(t);
    ASSERT_TRUE(sf.has_value()) << t;
    EXPECT_EQ(sf->prediction.size(), 2u);
    for (const auto& [name, counts] : fx.synthetic.truth[t])
      EXPECT_GE(iou(rle::decode_counts(sf->masks.at(parse_label(name))), rle::decode_counts(counts)),
                0.9)
          << name << " @" << t;
  }
}

TEST(Session, Deterministic) {
  Fixture fx(two_blobs(20));
  auto run = [&] {
    Session s(fx.video, {});
    s.set_annotation(0, fx.truth_frame(0));
    s.start_prediction(0);
    s.wait_until_settled();
    return s.snapshot();
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.frames.size(), b.frames.size());
  for (const auto& [t, fr] : a.frames) EXPECT_EQ(fr.masks, b.frames.at(t).masks) << t;
}

TEST(Session, StartPreconditions) {
  Fixture fx(two_blobs(10));
  Session s(fx.video, {});
  EXPECT_EQ(kind_of([&] { s.start_prediction(0); }), ErrorKind::Precondition);
  EXPECT_EQ(kind_of([&] { s.start_prediction(10); }), ErrorKind::NotFound);
  EXPECT_EQ(kind_of([&] { s.set_annotation(0, LabeledFrame{}); }), ErrorKind::InvalidArgument);
  s.set_annotation(0, fx.truth_frame(0));
  EXPECT_EQ(kind_of([&] { s.start_prediction(3); }), ErrorKind::Precondition);
}

TEST(Session, CommandsWhilePredictingAreBusy) {
  Fixture fx(two_blobs(60));
  Session s(fx.video, {}, std::make_shared<SlowBackend>());
  s.set_annotation(0, fx.truth_frame(0));
  s.start_prediction(0);
  wait_for_progress(s, 2);
  EXPECT_EQ(kind_of([&] { s.start_prediction(0); }), ErrorKind::Busy);
  EXPECT_EQ(kind_of([&] { s.set_params(AdvancedParams{}); }), ErrorKind::Busy);
  EXPECT_EQ(kind_of([&] { s.set_annotation(0, fx.truth_frame(0)); }), ErrorKind::Busy);
  s.stop();
}

TEST(Session, StopRetainsPredictions) {
  Fixture fx(two_blobs(80));
  Session s(fx.video, {}, std::make_shared<SlowBackend>());
  s.set_annotation(0, fx.truth_frame(0));
  s.start_prediction(0);
  wait_for_progress(s, 5);
  s.stop();
  s.stop();
  const auto st = s.state();
  EXPECT_EQ(st.status, SessionStatus::Paused);
  EXPECT_EQ(st.cause, PauseCause::UserStop);
  const auto last = s.last_predicted();
  ASSERT_TRUE(last.has_value());
  EXPECT_EQ(st.frame, *last);
  EXPECT_LT(*last, 79);
  for (std::int64_t t = 1; t <= *last; ++t) EXPECT_TRUE(s.stored(t).has_value()) << t;
  int stopped = 0;
  for (const auto& e : s.poll_events(0))
    if (e.kind == EventKind::Stopped) {
      ++stopped;
      EXPECT_EQ(e.frame, *last);
    }
  EXPECT_EQ(stopped, 1);
}

TEST(Session, CorrectionTruncatesAndRestarts) {
  Fixture fx(two_blobs(30));
  Session s(fx.video, {});
  s.set_annotation(0, fx.truth_frame(0));
  s.start_prediction(0);
  s.wait_until_settled();
  ASSERT_EQ(s.last_predicted(), 29);
  const auto seq = s.poll_events(0).back().seq;

  s.set_annotation(12, fx.truth_frame(12));
  EXPECT_EQ(s.stored(12)->source, AnnotationSource::Corrected);
  for (auto t : s.annotated_frames()) EXPECT_LE(t, 12);
  EXPECT_EQ(s.last_predicted(), 11);
  const auto ev = s.poll_events(seq);
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0].kind, EventKind::Truncated);
  EXPECT_EQ(ev[0].frame, 13);

  // Nothing downstream: still emits Truncated.
  s.set_annotation(29, fx.truth_frame(29));
  EXPECT_EQ(s.poll_events(ev[0].seq).back().kind, EventKind::Truncated);
  s.set_annotation(12, fx.truth_frame(12));

  s.start_prediction(12);
  s.wait_until_settled();
  EXPECT_EQ(s.state().status, SessionStatus::Completed);
  for (std::int64_t t = 13; t < 30; ++t) EXPECT_TRUE(s.stored(t).has_value()) << t;
}

TEST(Session, ParamsTakeEffectAndValidate) {
  Fixture fx(two_blobs(12));
  Session s(fx.video, {});
  AdvancedParams p;
  p.mem_every = 0;
  EXPECT_EQ(kind_of([&] { s.set_params(p); }), ErrorKind::InvalidArgument);
  s.set_annotation(0, fx.truth_frame(0));
  s.start_prediction(0);
  s.wait_until_settled();
  std::size_t v2 = 0, v8 = 0;
  const auto at2 = s.annotation(6);
  ASSERT_TRUE(at2.has_value());
  for (const auto& [l, a] : at2->annotations)
    for (const auto& poly : a.polygons) v2 += poly.vertices.size();
  p = AdvancedParams{};
  p.epsilon = 8.0;
  s.set_params(p);
  EXPECT_EQ(s.params().epsilon, 8.0);
  const auto at8 = s.annotation(6);
  for (const auto& [l, a] : at8->annotations)
    for (const auto& poly : a.polygons) v8 += poly.vertices.size();
  EXPECT_GT(v2, 0u);
  EXPECT_LE(v8, v2);
}

TEST(Session, AutoPauseOnFullOcclusion) {
  Fixture fx(behind_bar());
  std::int64_t hidden = -1;
  for (std::int64_t t = 0; t < 50 && hidden < 0; ++t)
    if (rle::empty(fx.synthetic.truth[t].at("blob_0"))) hidden = t;
  ASSERT_GT(hidden, 0);

  Session s(fx.video, {});
  s.set_annotation(0, fx.truth_frame(0));
  s.start_prediction(0);
  s.wait_until_settled();
  const auto st = s.state();
  EXPECT_EQ(st.status, SessionStatus::Paused);
  EXPECT_EQ(st.cause, PauseCause::Missing);
  EXPECT_EQ(st.frame, hidden);
  const auto ev = s.poll_events(0);
  ASSERT_EQ(ev.back().kind, EventKind::Paused);
  EXPECT_EQ(ev.back().instance, "blob_0");
  EXPECT_EQ(ev.back().frame, hidden);
  const auto sf = s.stored(hidden);
  ASSERT_TRUE(sf.has_value());
  EXPECT_EQ(sf->prediction.at({"blob", 0}).status, TrackStatus::Absent);
  ASSERT_EQ(s.failures().size(), 1u);
  EXPECT_EQ(s.failures()[0].frame, hidden);
}

TEST(Session, NoAutoPauseRegainsLabel) {
  Fixture fx(behind_bar());
  AdvancedParams p;
  p.auto_pause = false;
  Session s(fx.video, p);
  s.set_annotation(0, fx.truth_frame(0));
  s.start_prediction(0);
  s.wait_until_settled();
  EXPECT_EQ(s.state().status, SessionStatus::Completed);
  EXPECT_FALSE(s.failures().empty());
  std::int64_t back = -1;
  bool was_hidden = false;
  for (std::int64_t t = 0; t < 50; ++t) {
    const bool empty = rle::empty(fx.synthetic.truth[t].at("blob_0"));
    if (empty) was_hidden = true;
    if (was_hidden && !empty) {
      back = t;
      break;
    }
  }
  ASSERT_GT(back, 0);
  bool regained = false;
  for (std::int64_t t = back; t < back + 5 && !regained; ++t) {
    const auto sf = s.stored(t);
    const auto& m = sf->masks;
    auto it = m.find({"blob", 0});
    regained = it != m.end() &&
               iou(rle::decode_counts(it->second),
                   rle::decode_counts(fx.synthetic.truth[t].at("blob_0"))) >= 0.5;
  }
  EXPECT_TRUE(regained);
}

TEST(Session, WaitEventsWakesOnNewEvent) {
  Fixture fx(two_blobs(5));
  Session s(fx.video, {});
  std::thread t([&] {
    std::this_thread::sleep_for(50ms);
    s.set_annotation(0, fx.truth_frame(0));
  });
  const auto start = std::chrono::steady_clock::now();
  const auto ev = s.wait_events(0, 5s);
  t.join();
  EXPECT_EQ(ev.size(), 1u);
  EXPECT_LT(std::chrono::steady_clock::now() - start, 4s);
  EXPECT_TRUE(s.wait_events(ev.back().seq, 20ms).empty());
}
