#pragma once

// Block-matching optical flow and the per-instance motion index.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "annotrack/core.hpp"

namespace annotrack {

struct FlowVector {
  double dx{0}, dy{0};
};

// Displacement from frame t-1 to frame t for every pixel.
struct FlowField {
  int width{0};
  int height{0};
  std::vector<FlowVector> vectors;

  FlowField() = default;
  FlowField(int w, int h) : width(w), height(h), vectors(static_cast<std::size_t>(w) * h) {}

  const FlowVector& at(int x, int y) const {
    return vectors[static_cast<std::size_t>(y) * width + x];
  }
  FlowVector& at(int x, int y) { return vectors[static_cast<std::size_t>(y) * width + x]; }
};

namespace detail {

struct Candidate {
  int dx, dy;
};

// Smallest magnitude first, then raster order (dy, dx).
inline std::vector<Candidate> search_order(int radius) {
  std::vector<Candidate> c;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx) c.push_back({dx, dy});
  std::stable_sort(c.begin(), c.end(), [](const Candidate& a, const Candidate& b) {
    return a.dx * a.dx + a.dy * a.dy < b.dx * b.dx + b.dy * b.dy;
  });
  return c;
}

inline Candidate match_block(const Frame& prev, const Frame& cur, int x0, int y0, int bw, int bh,
                             const std::vector<Candidate>& order) {
  std::int64_t best = std::numeric_limits<std::int64_t>::max();
  Candidate arg{0, 0};
  for (const auto& c : order) {
    const int sx = x0 - c.dx, sy = y0 - c.dy;
    if (sx < 0 || sy < 0 || sx + bw > prev.width || sy + bh > prev.height) continue;
    std::int64_t sad = 0;
    for (int y = 0; y < bh && sad < best; ++y) {
      const std::uint8_t* a = cur.at(x0, y0 + y);
      const std::uint8_t* b = prev.at(sx, sy + y);
      for (int i = 0; i < bw * 3; ++i) sad += std::abs(int(a[i]) - int(b[i]));
    }
    if (sad < best) {
      best = sad;
      arg = c;
      if (best == 0) break;
    }
  }
  return arg;
}

inline FlowField block_flow(const Frame& prev, const Frame& cur, int block, int radius,
                            const Mask* roi) {
  if (prev.width != cur.width || prev.height != cur.height)
    throw Error(ErrorKind::InvalidArgument, "dense_flow: frame dimensions differ");
  if (block <= 0 || radius < 0)
    throw Error(ErrorKind::InvalidArgument, "dense_flow: block must be > 0, radius >= 0");
  if (roi && (roi->width() != cur.width || roi->height() != cur.height))
    throw Error(ErrorKind::InvalidArgument, "dense_flow: roi dimensions differ");
  FlowField flow(cur.width, cur.height);
  const auto order = search_order(radius);
  for (int by = 0; by < cur.height; by += block) {
    for (int bx = 0; bx < cur.width; bx += block) {
      const int bw = std::min(block, cur.width - bx), bh = std::min(block, cur.height - by);
      if (roi) {
        bool touched = false;
        for (int y = by; y < by + bh && !touched; ++y)
          for (int x = bx; x < bx + bw; ++x)
            if (roi->get(x, y)) {
              touched = true;
              break;
            }
        if (!touched) continue;
      }
      const Candidate c = match_block(prev, cur, bx, by, bw, bh, order);
      for (int y = by; y < by + bh; ++y)
        for (int x = bx; x < bx + bw; ++x) flow.at(x, y) = {double(c.dx), double(c.dy)};
    }
  }
  return flow;
}

}  // namespace detail

// Per block, the displacement within +-radius minimizing the sum of absolute
// RGB differences; ties go to the smaller displacement, then raster order.
inline FlowField dense_flow(const Frame& prev, const Frame& cur, int block = 8, int radius = 32) {
  return detail::block_flow(prev, cur, block, radius, nullptr);
}

// Same field restricted to blocks touching roi; other blocks stay zero.
inline FlowField dense_flow(const Frame& prev, const Frame& cur, const Mask& roi, int block = 8,
                            int radius = 32) {
  return detail::block_flow(prev, cur, block, radius, &roi);
}

// Mean flow magnitude over the mask; 0 for an empty mask.
inline double motion_index(const FlowField& flow, const Mask& mask) {
  if (flow.width != mask.width() || flow.height != mask.height())
    throw Error(ErrorKind::InvalidArgument, "motion_index: dimensions differ");
  double sum = 0.0;
  std::int64_t n = 0;
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      if (mask.get(x, y)) {
        const auto& v = flow.at(x, y);
        sum += std::sqrt(v.dx * v.dx + v.dy * v.dy);
        ++n;
      }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

}  // namespace annotrack
