#pragma once

// Mask <-> polygon conversion and mask measurements.
//
// Contours are traced on the 8-connected outer boundary and start at the
// topmost-then-leftmost pixel, winding counter-clockwise on screen (y down).
// Polygons follow the pixel edges of that boundary (vertices on integer
// corners), so an unsimplified polygon rasterizes back to the same pixels.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "annotrack/core.hpp"

namespace annotrack {

struct PixelPos {
  int x{0}, y{0};
  friend bool operator==(const PixelPos&, const PixelPos&) = default;
};

using Contour = std::vector<PixelPos>;

// Inclusive pixel extremes.
struct BBox {
  int x1{0}, y1{0}, x2{0}, y2{0};

  int width() const { return x2 - x1 + 1; }
  int height() const { return y2 - y1 + 1; }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }
  friend bool operator==(const BBox&, const BBox&) = default;
};

struct Component {
  Mask mask;
  std::int64_t area{0};
  PixelPos first;  // first pixel in raster order
};

namespace detail {

// Eight neighbours, counter-clockwise on screen starting at west.
inline constexpr std::array<PixelPos, 8> kRing = {{
    {-1, 0}, {-1, 1}, {0, 1}, {1, 1}, {1, 0}, {1, -1}, {0, -1}, {-1, -1}}};

inline int ring_index(PixelPos d) {
  for (int i = 0; i < 8; ++i)
    if (kRing[i] == d) return i;
  return -1;
}

inline double segment_distance(const Point2d& p, const Point2d& a, const Point2d& b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = 0.0;
  if (len2 > 0) t = std::clamp(((p.x - a.x) * dx + (p.y - a.y) * dy) / len2, 0.0, 1.0);
  const double ex = a.x + t * dx - p.x, ey = a.y + t * dy - p.y;
  return std::sqrt(ex * ex + ey * ey);
}

inline double squared_distance(const Point2d& a, const Point2d& b) {
  const double dx = a.x - b.x, dy = a.y - b.y;
  return dx * dx + dy * dy;
}

inline double cross(const Point2d& o, const Point2d& a, const Point2d& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Andrew's monotone chain; returns indices into pts.
inline std::vector<std::size_t> convex_hull_indices(const std::vector<Point2d>& pts) {
  std::vector<std::size_t> idx(pts.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (pts[a].x != pts[b].x) return pts[a].x < pts[b].x;
    if (pts[a].y != pts[b].y) return pts[a].y < pts[b].y;
    return a < b;
  });
  if (idx.size() < 3) return idx;
  std::vector<std::size_t> hull(2 * idx.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    while (k >= 2 && cross(pts[hull[k - 2]], pts[hull[k - 1]], pts[idx[i]]) <= 0) --k;
    hull[k++] = idx[i];
  }
  for (std::size_t i = idx.size() - 1, t = k + 1; i > 0; --i) {
    while (k >= t && cross(pts[hull[k - 2]], pts[hull[k - 1]], pts[idx[i - 1]]) <= 0) --k;
    hull[k++] = idx[i - 1];
  }
  hull.resize(k - 1);
  return hull;
}

}  // namespace detail

// 8-connected components, largest first; equal areas ordered by their first
// pixel in raster order. Components smaller than min_area are not returned.
inline std::vector<Component> connected_components(const Mask& mask, std::int64_t min_area = 0) {
  const int w = mask.width(), h = mask.height();
  std::vector<int> label(mask.size(), -1);
  struct Stat {
    std::int64_t area;
    PixelPos first;
  };
  std::vector<Stat> stats;
  std::vector<PixelPos> stack;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (!mask[i] || label[i] >= 0) continue;
      const int id = static_cast<int>(stats.size());
      Stat st{0, {x, y}};
      label[i] = id;
      stack.push_back({x, y});
      while (!stack.empty()) {
        const PixelPos p = stack.back();
        stack.pop_back();
        ++st.area;
        for (const auto& d : detail::kRing) {
          const int nx = p.x + d.x, ny = p.y + d.y;
          if (!mask.contains(nx, ny)) continue;
          const std::size_t j = static_cast<std::size_t>(ny) * w + nx;
          if (mask[j] && label[j] < 0) {
            label[j] = id;
            stack.push_back({nx, ny});
          }
        }
      }
      stats.push_back(st);
    }
  }
  std::vector<int> order;
  for (int id = 0; id < static_cast<int>(stats.size()); ++id)
    if (stats[id].area >= std::max<std::int64_t>(min_area, 1)) order.push_back(id);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return stats[a].area > stats[b].area; });
  std::vector<int> slot(stats.size(), -1);
  std::vector<Component> comps;
  comps.reserve(order.size());
  for (int id : order) {
    slot[id] = static_cast<int>(comps.size());
    comps.push_back({Mask(w, h), stats[id].area, stats[id].first});
  }
  for (std::size_t i = 0; i < label.size(); ++i)
    if (label[i] >= 0 && slot[label[i]] >= 0) comps[slot[label[i]]].mask[i] = 1;
  return comps;
}

// Moore-neighbour border following with Jacob's stopping criterion.
inline Contour trace_contour(const Mask& component) {
  const int w = component.width(), h = component.height();
  std::optional<PixelPos> start;
  for (int y = 0; y < h && !start; ++y)
    for (int x = 0; x < w; ++x)
      if (component.get(x, y)) {
        start = PixelPos{x, y};
        break;
      }
  if (!start) throw Error(ErrorKind::InvalidArgument, "trace_contour: empty component");

  auto fg = [&](PixelPos p) { return component.contains(p.x, p.y) && component.get(p.x, p.y); };
  // Returns (next pixel, last background pixel scanned before it).
  auto step = [&](PixelPos p, PixelPos back) -> std::optional<std::pair<PixelPos, PixelPos>> {
    const int k = detail::ring_index({back.x - p.x, back.y - p.y});
    PixelPos prev = back;
    for (int i = 1; i <= 8; ++i) {
      const auto& d = detail::kRing[(k + i) % 8];
      const PixelPos n{p.x + d.x, p.y + d.y};
      if (fg(n)) return std::pair{n, prev};
      prev = n;
    }
    return std::nullopt;
  };

  Contour contour{*start};
  auto first = step(*start, {start->x - 1, start->y});
  if (!first) return contour;
  const PixelPos second = first->first;
  PixelPos p = first->first, back = first->second;
  const std::size_t limit = 4 * static_cast<std::size_t>(w) * h + 8;
  while (contour.size() < limit) {
    auto nx = step(p, back);
    if (p == *start && nx->first == second) break;
    contour.push_back(p);
    p = nx->first;
    back = nx->second;
  }
  return contour;
}

// Outer boundary of an 8-connected component along pixel edges. Pixel (x, y)
// covers [x, x+1] x [y, y+1]; the walk starts at the top-left corner of the
// first pixel heading east with the component on its right, and diagonal
// contacts are kept inside the outline. That corner has a single foreground
// neighbour, so the walk passes it exactly once.
inline std::vector<PixelPos> trace_boundary(const Mask& component) {
  std::optional<PixelPos> start;
  for (int y = 0; y < component.height() && !start; ++y)
    for (int x = 0; x < component.width(); ++x)
      if (component.get(x, y)) {
        start = PixelPos{x, y};
        break;
      }
  if (!start) throw Error(ErrorKind::InvalidArgument, "trace_boundary: empty component");

  auto fg = [&](int x, int y) { return component.contains(x, y) && component.get(x, y); };
  // Pixel touching corner v on the given side of heading d.
  auto ahead = [&](PixelPos v, PixelPos d, PixelPos side) {
    const int ox = d.x + side.x > 0 ? 0 : -1, oy = d.y + side.y > 0 ? 0 : -1;
    return fg(v.x + ox, v.y + oy);
  };
  const PixelPos origin = *start;
  PixelPos v = origin, d{1, 0};
  std::vector<PixelPos> out;
  const std::size_t limit = 4 * component.size() + 8;
  do {
    out.push_back(v);
    const PixelPos right{-d.y, d.x}, left{d.y, -d.x};
    if (ahead(v, d, left))
      d = left;
    else if (!ahead(v, d, right))
      d = right;
    v = {v.x + d.x, v.y + d.y};
  } while (v != origin && out.size() < limit);
  return out;
}

// Closed-curve Ramer-Douglas-Peucker. The curve is split at its two mutually
// farthest points and each arc is simplified against point-to-segment
// distance, so every dropped point stays within epsilon of the result.
inline std::vector<Point2d> simplify(const std::vector<Point2d>& points, double epsilon) {
  const std::size_t n = points.size();
  if (n < 3) throw Error(ErrorKind::InvalidArgument, "simplify: need at least 3 points");
  if (!(epsilon > 0)) throw Error(ErrorKind::InvalidArgument, "simplify: epsilon must be > 0");

  // Diameter: only hull vertices can be farthest apart.
  auto hull = detail::convex_hull_indices(points);
  std::sort(hull.begin(), hull.end());
  std::size_t ia = 0, ib = 1;
  double best = -1.0;
  for (std::size_t i = 0; i < hull.size(); ++i)
    for (std::size_t j = i + 1; j < hull.size(); ++j) {
      const double d = detail::squared_distance(points[hull[i]], points[hull[j]]);
      if (d > best) {
        best = d;
        ia = hull[i];
        ib = hull[j];
      }
    }
  if (hull.size() < 2) ib = (ia + 1) % n;
  if (ia > ib) std::swap(ia, ib);

  std::vector<bool> keep(n, false);
  keep[ia] = keep[ib] = true;
  // Arcs as (begin, end) offsets along the closed sequence; end may exceed n.
  std::vector<std::pair<std::size_t, std::size_t>> stack{{ia, ib}, {ib, ia + n}};
  while (!stack.empty()) {
    auto [b, e] = stack.back();
    stack.pop_back();
    if (e - b < 2) continue;
    const Point2d& pa = points[b % n];
    const Point2d& pb = points[e % n];
    double dmax = -1.0;
    std::size_t imax = b;
    for (std::size_t i = b + 1; i < e; ++i) {
      const double d = detail::segment_distance(points[i % n], pa, pb);
      if (d > dmax) {
        dmax = d;
        imax = i;
      }
    }
    if (dmax > epsilon) {
      keep[imax % n] = true;
      stack.push_back({imax, e});
      stack.push_back({b, imax});
    }
  }

  if (std::count(keep.begin(), keep.end(), true) < 3) {
    double dmax = -1.0;
    std::size_t imax = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (keep[i]) continue;
      const double d = detail::segment_distance(points[i], points[ia], points[ib]);
      if (d > dmax) {
        dmax = d;
        imax = i;
      }
    }
    if (imax < n) keep[imax] = true;
  }

  std::vector<Point2d> out;
  for (std::size_t i = 0; i < n; ++i)
    if (keep[i]) out.push_back(points[i]);
  return out;
}

inline double signed_area(const std::vector<Point2d>& v) {
  double a = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const auto& p = v[i];
    const auto& q = v[(i + 1) % v.size()];
    a += p.x * q.y - q.x * p.y;
  }
  return 0.5 * a;
}

inline std::vector<Polygon> mask_to_polygons(const InstanceMask& mask, double epsilon,
                                             std::int64_t min_area) {
  if (!(epsilon > 0)) throw Error(ErrorKind::InvalidArgument, "epsilon must be > 0");
  std::vector<Polygon> out;
  for (const auto& comp : connected_components(mask.bits, min_area)) {
    const auto corners = trace_boundary(comp.mask);
    std::vector<Point2d> pts;
    pts.reserve(corners.size());
    for (const auto& p : corners) pts.push_back({double(p.x), double(p.y)});
    out.push_back({mask.label, simplify(pts, epsilon)});
  }
  return out;
}

// Even-odd fill sampling pixel centers; centers lying on an edge count as
// inside. Zero-area polygons rasterize to nothing.
inline Mask polygon_to_mask(const std::vector<Point2d>& vertices, int width, int height) {
  if (width <= 0 || height <= 0)
    throw Error(ErrorKind::InvalidArgument, "polygon_to_mask: dimensions must be positive");
  Mask m(width, height);
  const std::size_t n = vertices.size();
  if (n < 3 || signed_area(vertices) == 0.0) return m;

  constexpr double kTol = 1e-9;
  std::vector<double> xs;
  for (int y = 0; y < height; ++y) {
    const double sy = y + 0.5;
    xs.clear();
    for (std::size_t i = 0; i < n; ++i) {
      const Point2d& a = vertices[i];
      const Point2d& b = vertices[(i + 1) % n];
      if ((a.y <= sy && sy < b.y) || (b.y <= sy && sy < a.y))
        xs.push_back(a.x + (sy - a.y) * (b.x - a.x) / (b.y - a.y));
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      const int x0 = std::max(0, static_cast<int>(std::ceil(xs[k] - 0.5 - kTol)));
      const int x1 = std::min(width - 1, static_cast<int>(std::floor(xs[k + 1] - 0.5 + kTol)));
      for (int x = x0; x <= x1; ++x) m.set(x, y);
    }
  }

  // Boundary pass: centers exactly on an edge.
  for (std::size_t i = 0; i < n; ++i) {
    const Point2d& a = vertices[i];
    const Point2d& b = vertices[(i + 1) % n];
    const int ylo = std::max(0, static_cast<int>(std::ceil(std::min(a.y, b.y) - 0.5 - kTol)));
    const int yhi =
        std::min(height - 1, static_cast<int>(std::floor(std::max(a.y, b.y) - 0.5 + kTol)));
    for (int y = ylo; y <= yhi; ++y) {
      const double sy = y + 0.5;
      if (std::abs(b.y - a.y) < kTol) {
        const int xlo = std::max(0, static_cast<int>(std::ceil(std::min(a.x, b.x) - 0.5 - kTol)));
        const int xhi =
            std::min(width - 1, static_cast<int>(std::floor(std::max(a.x, b.x) - 0.5 + kTol)));
        for (int x = xlo; x <= xhi; ++x) m.set(x, y);
      } else {
        const double x = a.x + (sy - a.y) * (b.x - a.x) / (b.y - a.y);
        const double px = x - 0.5;
        const double rx = std::round(px);
        if (std::abs(px - rx) < kTol && rx >= 0 && rx < width) m.set(static_cast<int>(rx), y);
      }
    }
  }
  return m;
}

inline InstanceMask polygon_to_mask(const Polygon& polygon, int width, int height) {
  return {polygon.label, polygon_to_mask(polygon.vertices, width, height)};
}

// Union of several polygons belonging to one instance.
inline Mask polygons_to_mask(const std::vector<Polygon>& polygons, int width, int height) {
  Mask m(width, height);
  for (const auto& p : polygons) m |= polygon_to_mask(p.vertices, width, height);
  return m;
}

inline std::optional<BBox> try_bbox(const Mask& mask) {
  BBox b{std::numeric_limits<int>::max(), std::numeric_limits<int>::max(), -1, -1};
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      if (mask.get(x, y)) {
        b.x1 = std::min(b.x1, x);
        b.y1 = std::min(b.y1, y);
        b.x2 = std::max(b.x2, x);
        b.y2 = std::max(b.y2, y);
      }
  if (b.x2 < 0) return std::nullopt;
  return b;
}

inline BBox bbox(const Mask& mask) {
  auto b = try_bbox(mask);
  if (!b) throw Error(ErrorKind::InvalidArgument, "bbox: empty mask");
  return *b;
}

// Mean of set-pixel integer coordinates.
inline Point2d centroid(const Mask& mask) {
  double sx = 0, sy = 0;
  std::int64_t n = 0;
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x)
      if (mask.get(x, y)) {
        sx += x;
        sy += y;
        ++n;
      }
  if (n == 0) throw Error(ErrorKind::InvalidArgument, "centroid: empty mask");
  return {sx / static_cast<double>(n), sy / static_cast<double>(n)};
}

inline double iou(const Mask& a, const Mask& b) {
  if (!a.same_shape(b)) throw Error(ErrorKind::InvalidArgument, "iou: mask dimensions differ");
  std::int64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] & b[i];
    uni += a[i] | b[i];
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline Mask translate(const Mask& m, int dx, int dy) {
  Mask out(m.width(), m.height());
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x)
      if (m.get(x, y) && out.contains(x + dx, y + dy)) out.set(x + dx, y + dy);
  return out;
}

// Box scaled about its center, clipped to [0, w) x [0, h).
inline BBox scale_box(const BBox& b, double factor, int width, int height) {
  const double hw = 0.5 * b.width() * factor, hh = 0.5 * b.height() * factor;
  const double cx = b.center_x(), cy = b.center_y();
  return {std::max(0, static_cast<int>(std::floor(cx - hw + 0.5))),
          std::max(0, static_cast<int>(std::floor(cy - hh + 0.5))),
          std::min(width - 1, static_cast<int>(std::ceil(cx + hw - 0.5))),
          std::min(height - 1, static_cast<int>(std::ceil(cy + hh - 0.5)))};
}

}  // namespace annotrack
