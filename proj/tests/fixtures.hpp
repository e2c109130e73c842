#pragma once

// Hand-built sessions with known masks and known optical flow, shared by the
// format tests and the acceptance binary.

#include <memory>
#include <random>

#include "annotrack/annotation_io.hpp"
#include "annotrack/rle.hpp"
#include "annotrack/video.hpp"
#include "test_util.hpp"

namespace fixtures {

using namespace annotrack;

struct Session {
  std::shared_ptr<InMemoryVideo> video;
  TrackResults results;
};

namespace detail {

// Copies prev into cur over rows [y0, y1] and columns [x0, x1] displaced by (dx, dy).
inline void move_region(const Frame& prev, Frame& cur, int x0, int x1, int y0, int y1, int dx,
                        int dy) {
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) cur.set(x, y, prev.rgb(x - dx, y - dy));
}

}  // namespace detail

// Mouse and teaball over three frames at 125/3 fps. Every pixel is random
// texture, so block matching recovers the planted motion exactly: the mouse
// blocks move by (1,0) and (1,1) in chosen proportions, the teaball is static.
inline Session mouse_teaball() {
  constexpr int W = 352, H = 256;
  std::mt19937 rng(1040);
  std::uniform_int_distribution<int> v(0, 255);
  Frame f0(0, W, H);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      f0.set(x, y, {std::uint8_t(v(rng)), std::uint8_t(v(rng)), std::uint8_t(v(rng))});

  // Mouse block columns span 312..343.
  Frame f1 = f0;
  f1.index = 1;
  detail::move_region(f0, f1, 312, 343, 136, 151, 1, 0);
  detail::move_region(f0, f1, 312, 343, 152, 159, 1, 1);
  Frame f2 = f1;
  f2.index = 2;
  detail::move_region(f1, f2, 312, 343, 136, 143, 1, 1);
  detail::move_region(f1, f2, 312, 343, 144, 167, 1, 0);

  const Fps fps{125, 3};
  Session s;
  s.video = std::make_shared<InMemoryVideo>("mouse_teaball", std::vector<Frame>{f0, f1, f2}, fps);
  s.results.video_name = "mouse_teaball";
  s.results.fps = fps;
  s.results.width = W;
  s.results.height = H;
  const InstanceLabel mouse = parse_label("mouse"), ball = parse_label("teaball");
  auto frame = [&](std::int64_t t, Mask m, Mask b) {
    FrameResult fr;
    fr.masks[mouse] = rle::encode_counts(m);
    fr.masks[ball] = rle::encode_counts(b);
    s.results.frames[t] = std::move(fr);
  };
  using testutil::rect;
  // Mouse frame 1: 16 of 21 rows move by (1,0), 5 by (1,1) -> mean 1.0986.
  // Mouse frame 2: 7 of 26 rows move by (1,1), 19 by (1,0) -> mean 1.1115.
  frame(0, rect(W, H, 314, 131, 334, 151), rect(W, H, 90, 226, 108, 246));
  frame(1, rect(W, H, 316, 136, 336, 156), rect(W, H, 89, 226, 107, 246));
  frame(2, rect(W, H, 319, 137, 339, 162), rect(W, H, 89, 226, 107, 246));
  return s;
}

inline const char* const kMouseTeaballRows[] = {
    "0,mouse,324,141,-1.0,00:00:00",       "0,teaball,99,236,-1.0,00:00:00",
    "1,mouse,326,146,1.099,00:00:00.024",  "1,teaball,98,236,0.0,00:00:00.024",
    "2,mouse,329,150,1.112,00:00:00.048",  "2,teaball,98,236,0.0,00:00:00.048",
};

// Single-frame tracking fixture whose mouse1040 mask has bbox
// (117,148)-(175,227) and centroid (143.735, 185.358).
inline TrackResults mouse1040() {
  constexpr int W = 352, H = 256;
  Mask m = testutil::rect(W, H, 118, 148, 175, 187);
  m |= testutil::rect(W, H, 117, 188, 164, 227);
  for (int x = 139; x <= 164; ++x) m.set(x, 227, false);
  TrackResults r;
  r.video_name = "mouse1040";
  r.fps = Fps{30, 1};
  r.width = W;
  r.height = H;
  r.frames[0].masks[parse_label("mouse1040")] = rle::encode_counts(m);
  return r;
}

}  // namespace fixtures
