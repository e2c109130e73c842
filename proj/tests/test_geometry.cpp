#include <gtest/gtest.h>

#include <cmath>
#include <queue>
#include <random>
#include <set>

#include "annotrack/geometry.hpp"
#include "test_util.hpp"

using namespace annotrack;
using testutil::rect;

namespace {

// Independent oracle: BFS over 8-neighbours, returns component areas.
std::vector<std::int64_t> flood_areas(const Mask& m) {
  std::vector<char> seen(m.size(), 0);
  std::vector<std::int64_t> areas;
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) {
      if (!m.get(x, y) || seen[y * m.width() + x]) continue;
      std::queue<std::pair<int, int>> q;
      q.push({x, y});
      seen[y * m.width() + x] = 1;
      std::int64_t n = 0;
      while (!q.empty()) {
        auto [cx, cy] = q.front();
        q.pop();
        ++n;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = cx + dx, ny = cy + dy;
            if (nx < 0 || ny < 0 || nx >= m.width() || ny >= m.height()) continue;
            if (m.get(nx, ny) && !seen[ny * m.width() + nx]) {
              seen[ny * m.width() + nx] = 1;
              q.push({nx, ny});
            }
          }
      }
      areas.push_back(n);
    }
  std::sort(areas.rbegin(), areas.rend());
  return areas;
}

// Independent oracle: ray crossing at the pixel center, plus points lying on
// an edge.
bool inside_polygon(const std::vector<Point2d>& v, double px, double py) {
  for (std::size_t i = 0; i < v.size(); ++i)
    if (detail::segment_distance({px, py}, v[i], v[(i + 1) % v.size()]) < 1e-9) return true;
  bool in = false;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    if ((v[i].y > py) != (v[j].y > py) &&
        px < (v[j].x - v[i].x) * (py - v[i].y) / (v[j].y - v[i].y) + v[i].x)
      in = !in;
  }
  return in;
}

double closed_polyline_distance(const Point2d& p, const std::vector<Point2d>& poly) {
  double best = 1e300;
  for (std::size_t i = 0; i < poly.size(); ++i)
    best = std::min(best, detail::segment_distance(p, poly[i], poly[(i + 1) % poly.size()]));
  return best;
}

}  // namespace

TEST(Components, EmptyMask) { EXPECT_TRUE(connected_components(Mask(6, 6)).empty()); }

TEST(Components, TwoSquares) {
  Mask m = rect(10, 10, 0, 0, 1, 1);
  m |= rect(10, 10, 5, 5, 6, 6);
  const auto comps = connected_components(m);
  ASSERT_EQ(comps.size(), 2u);
  EXPECT_EQ(comps[0].area, 4);
  EXPECT_EQ(comps[1].area, 4);
  EXPECT_EQ(comps[0].first, (PixelPos{0, 0}));
  EXPECT_EQ(comps[0].mask.area(), 4);
}

TEST(Components, PlusSign) {
  Mask m(5, 5);
  for (int i = 0; i < 5; ++i) {
    m.set(2, i);
    m.set(i, 2);
  }
  const auto comps = connected_components(m);
  ASSERT_EQ(comps.size(), 1u);
  EXPECT_EQ(comps[0].area, flood_areas(m)[0]);
  EXPECT_EQ(comps[0].area, 9);
}

TEST(Components, DiagonalTouchIsConnected) {
  Mask m(4, 4);
  m.set(0, 0);
  m.set(1, 1);
  EXPECT_EQ(connected_components(m).size(), 1u);
}

TEST(Components, MatchesFloodFillOracle) {
  std::mt19937 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const Mask m = testutil::random_mask(rng, 23, 17);
    const auto comps = connected_components(m);
    const auto oracle = flood_areas(m);
    ASSERT_EQ(comps.size(), oracle.size());
    Mask uni(23, 17);
    for (std::size_t i = 0; i < comps.size(); ++i) {
      EXPECT_EQ(comps[i].area, oracle[i]);
      EXPECT_EQ(comps[i].mask.area(), comps[i].area);
      uni |= comps[i].mask;
    }
    EXPECT_EQ(uni, m);
  }
}

TEST(Components, MinAreaFilter) {
  Mask m = rect(30, 30, 0, 0, 9, 9);
  m |= rect(30, 30, 20, 20, 20, 24);
  EXPECT_EQ(connected_components(m, 10).size(), 1u);
  EXPECT_EQ(connected_components(m, 5).size(), 2u);
}

TEST(Contour, SinglePixel) {
  Mask m(8, 8);
  m.set(3, 4);
  EXPECT_EQ(trace_contour(m), (Contour{{3, 4}}));
}

TEST(Contour, Square3x3) {
  const Contour expect{{0, 0}, {0, 1}, {0, 2}, {1, 2}, {2, 2}, {2, 1}, {2, 0}, {1, 0}};
  EXPECT_EQ(trace_contour(rect(5, 5, 0, 0, 2, 2)), expect);
}

TEST(Contour, HorizontalBar) {
  const auto c = trace_contour(rect(7, 3, 0, 1, 4, 1));
  std::vector<int> xs;
  for (const auto& p : c) xs.push_back(p.x);
  EXPECT_EQ(xs, (std::vector<int>{0, 1, 2, 3, 4, 3, 2, 1}));
}

TEST(Contour, VisitsEveryBorderPixel) {
  const Mask m = testutil::ellipse(40, 40, 20, 20, 15, 9, 0.4);
  const auto c = trace_contour(m);
  std::set<std::pair<int, int>> on;
  for (const auto& p : c) on.insert({p.x, p.y});
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 40; ++x) {
      if (!m.get(x, y)) continue;
      bool border = false;
      for (auto [dx, dy] : {std::pair{1, 0}, {-1, 0}, {0, 1}, {0, -1}})
        if (!m.contains(x + dx, y + dy) || !m.get(x + dx, y + dy)) border = true;
      if (border) {
        EXPECT_TRUE(on.count({x, y})) << x << "," << y;
      }
    }
}

TEST(Simplify, DropsCollinear) {
  const std::vector<Point2d> pts{{0, 0}, {1, 0}, {2, 0}, {2, 2}, {0, 2}};
  EXPECT_EQ(simplify(pts, 0.5), (std::vector<Point2d>{{0, 0}, {2, 0}, {2, 2}, {0, 2}}));
}

TEST(Simplify, CircleVertexCountDecreases) {
  std::vector<Point2d> circle;
  for (int i = 0; i < 360; ++i) {
    const double a = i * 3.14159265358979 / 180.0;
    circle.push_back({50 * std::cos(a), 50 * std::sin(a)});
  }
  const auto n1 = simplify(circle, 1).size(), n2 = simplify(circle, 2).size(),
             n4 = simplify(circle, 4).size(), n8 = simplify(circle, 8).size();
  EXPECT_GT(n1, n2);
  EXPECT_GT(n2, n4);
  // Every 45 degree arc already sits within 4 px of its chord, so 4 and 8 tie.
  EXPECT_GE(n4, n8);
  EXPECT_EQ(n8, 8u);
}

TEST(Simplify, KeepsAtLeastThree) {
  const std::vector<Point2d> sq{{0, 0}, {10, 0}, {10, 10}, {0, 10}};
  EXPECT_EQ(simplify(sq, 1000).size(), 3u);
}

TEST(Simplify, DroppedPointsWithinEpsilon) {
  std::mt19937 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const Mask m = testutil::random_blob(rng);
    const auto c = trace_contour(connected_components(m)[0].mask);
    std::vector<Point2d> pts;
    for (const auto& p : c) pts.push_back({p.x + 0.5, p.y + 0.5});
    for (double eps : {1.0, 2.0, 4.0}) {
      const auto s = simplify(pts, eps);
      for (const auto& p : pts) EXPECT_LE(closed_polyline_distance(p, s), eps + 1e-9);
    }
  }
}

TEST(Simplify, RejectsBadInput) {
  EXPECT_THROW(simplify({{0, 0}, {1, 1}}, 1.0), Error);
  EXPECT_THROW(simplify({{0, 0}, {1, 1}, {2, 0}}, 0.0), Error);
}

TEST(TraceBoundary, SinglePixel) {
  Mask m(6, 6);
  m.set(3, 4);
  EXPECT_EQ(trace_boundary(m), (std::vector<PixelPos>{{3, 4}, {4, 4}, {4, 5}, {3, 5}}));
}

TEST(TraceBoundary, DiagonalPairStaysOneOutline) {
  Mask m(4, 4);
  m.set(1, 1);
  m.set(2, 2);
  const auto b = trace_boundary(m);
  EXPECT_EQ(b.size(), 8u);
  std::vector<Point2d> v;
  for (const auto& p : b) v.push_back({double(p.x), double(p.y)});
  EXPECT_EQ(polygon_to_mask(v, 4, 4), m);
}

TEST(TraceBoundary, RasterizesBackExactly) {
  std::mt19937 rng(21);
  for (int trial = 0; trial < 40; ++trial) {
    const Mask blob = testutil::random_blob(rng);
    const Mask m = connected_components(blob)[0].mask;
    std::vector<Point2d> v;
    for (const auto& p : trace_boundary(m)) v.push_back({double(p.x), double(p.y)});
    EXPECT_EQ(polygon_to_mask(v, m.width(), m.height()), m) << trial;
  }
  EXPECT_THROW(trace_boundary(Mask(3, 3)), Error);
}

TEST(MaskToPolygons, Empty) { EXPECT_TRUE(mask_to_polygons({{"a", 0}, Mask(5, 5)}, 2.0, 0).empty()); }

TEST(MaskToPolygons, Square20) {
  const Mask m = rect(40, 40, 10, 10, 29, 29);
  const auto polys = mask_to_polygons({{"mouse", 0}, m}, 2.0, 10);
  ASSERT_EQ(polys.size(), 1u);
  EXPECT_GE(polys[0].vertices.size(), 4u);
  EXPECT_LE(polys[0].vertices.size(), 8u);
  EXPECT_EQ(polys[0].label.display(), "mouse_0");
  // Brute-force oracle rasterization.
  Mask back(40, 40);
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 40; ++x)
      if (inside_polygon(polys[0].vertices, x + 0.5, y + 0.5)) back.set(x, y);
  EXPECT_GE(iou(back, m), 0.95);
  EXPECT_GE(iou(polygon_to_mask(polys[0].vertices, 40, 40), m), 0.95);
}

TEST(MaskToPolygons, SmallComponentDropped) {
  Mask m = rect(40, 40, 0, 0, 9, 9);
  m |= rect(40, 40, 30, 30, 34, 30);
  EXPECT_EQ(mask_to_polygons({{"a", 0}, m}, 2.0, 10).size(), 1u);
}

TEST(MaskToPolygons, VertexCountNonIncreasingInEpsilon) {
  std::mt19937 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Mask m = testutil::random_blob(rng);
    std::size_t prev = SIZE_MAX;
    for (double eps : {1.0, 2.0, 4.0, 8.0}) {
      std::size_t n = 0;
      for (const auto& p : mask_to_polygons({{"b", 0}, m}, eps, 0)) n += p.vertices.size();
      EXPECT_LE(n, prev);
      prev = n;
    }
  }
}

TEST(PolygonToMask, Square) {
  const auto m = polygon_to_mask(std::vector<Point2d>{{0, 0}, {10, 0}, {10, 10}, {0, 10}}, 20, 20);
  EXPECT_EQ(m.area(), 100);
  EXPECT_EQ(m, rect(20, 20, 0, 0, 9, 9));
}

TEST(PolygonToMask, DegenerateTriangle) {
  EXPECT_TRUE(polygon_to_mask(std::vector<Point2d>{{3, 3}, {3, 3}, {3, 3}}, 10, 10).empty());
  EXPECT_TRUE(polygon_to_mask(std::vector<Point2d>{{0, 0}, {5, 5}, {9, 9}}, 10, 10).empty());
}

TEST(PolygonToMask, MatchesPointInPolygonOracle) {
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> coord(-3.0, 33.0);
  for (int trial = 0; trial < 200; ++trial) {
    // Star-shaped random polygon around a random center.
    const double cx = coord(rng), cy = coord(rng);
    std::uniform_real_distribution<double> rad(1.0, 15.0);
    const int n = 3 + trial % 9;
    std::vector<Point2d> v;
    for (int i = 0; i < n; ++i) {
      const double a = 2 * 3.14159265358979 * (i + 0.3 * (trial % 3) / 3.0) / n;
      const double r = rad(rng);
      v.push_back({cx + r * std::cos(a) + 0.0137, cy + r * std::sin(a) + 0.0291});
    }
    const Mask m = polygon_to_mask(v, 30, 30);
    for (int y = 0; y < 30; ++y)
      for (int x = 0; x < 30; ++x)
        ASSERT_EQ(m.get(x, y), inside_polygon(v, x + 0.5, y + 0.5)) << trial << " " << x << "," << y;
  }
}

TEST(PolygonToMask, RejectsBadDimensions) {
  EXPECT_THROW(polygon_to_mask(std::vector<Point2d>{{0, 0}, {1, 0}, {1, 1}}, 0, 5), Error);
}

TEST(Roundtrip, IoUAtEpsilon2ForBlobsAtLeast20Wide) {
  std::mt19937 rng(99);
  std::uniform_real_distribution<double> axis(10.0, 40.0), ang(0.0, 3.14159265);
  for (int trial = 0; trial < 200; ++trial) {
    const double rx = axis(rng), ry = axis(rng);
    const int size = static_cast<int>(2 * std::max(rx, ry)) + 8;
    const Mask m = testutil::ellipse(size, size, size / 2.0, size / 2.0, rx, ry, ang(rng));
    const auto back = polygons_to_mask(mask_to_polygons({{"b", 0}, m}, 2.0, 0), size, size);
    EXPECT_GE(iou(back, m), 0.9) << rx << " x " << ry;
  }
}

// Chords cut up to epsilon into each side, so a 10 px wide ellipse loses
// more than a tenth of its area even though it is well above 100 px.
TEST(Roundtrip, ThinBlobFallsBelow90AtEpsilon2) {
  const Mask m = testutil::ellipse(80, 80, 40, 40, 36, 5);
  ASSERT_GE(m.area(), 100);
  const auto back = polygons_to_mask(mask_to_polygons({{"b", 0}, m}, 2.0, 0), 80, 80);
  EXPECT_LT(iou(back, m), 0.9);
  EXPECT_GT(iou(back, m), 0.7);
}

TEST(Measures, Centroid) {
  EXPECT_EQ(centroid(rect(5, 5, 0, 0, 2, 2)), (Point2d{1.0, 1.0}));
  Mask p(10, 10);
  p.set(5, 7);
  EXPECT_EQ(centroid(p), (Point2d{5.0, 7.0}));
  Mask two(4, 4);
  two.set(0, 0);
  two.set(2, 0);
  EXPECT_EQ(centroid(two), (Point2d{1.0, 0.0}));
  EXPECT_THROW(centroid(Mask(3, 3)), Error);
}

TEST(Measures, BBox) {
  Mask m(10, 10);
  m.set(2, 3);
  m.set(5, 9);
  const auto b = bbox(m);
  EXPECT_EQ(b.x1, 2);
  EXPECT_EQ(b.y1, 3);
  EXPECT_EQ(b.x2, 5);
  EXPECT_EQ(b.y2, 9);
  EXPECT_FALSE(try_bbox(Mask(4, 4)).has_value());
}

TEST(Measures, IoU) {
  const Mask a = rect(30, 30, 0, 0, 9, 9);
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  const Mask b = rect(30, 30, 5, 0, 14, 9);
  EXPECT_NEAR(iou(a, b), 50.0 / 150.0, 1e-12);
  EXPECT_THROW(iou(a, Mask(3, 3)), Error);
}

TEST(Measures, TranslateAndScaleBox) {
  const Mask a = rect(20, 20, 0, 0, 3, 3);
  EXPECT_EQ(translate(a, 5, 2), rect(20, 20, 5, 2, 8, 5));
  EXPECT_EQ(translate(a, -2, 0).area(), 8);
  const BBox big = scale_box({8, 8, 11, 11}, 2.0, 20, 20);
  EXPECT_EQ(big.x1, 6);
  EXPECT_EQ(big.x2, 13);
  const BBox clipped = scale_box({0, 0, 3, 3}, 4.0, 10, 10);
  EXPECT_EQ(clipped.x1, 0);
  EXPECT_EQ(clipped.y1, 0);
}
