#pragma once

// Mask propagation over the memory buffer, plus the recovery paths that run
// when an instance goes missing (local bounding-box recovery and full-frame
// re-detection), text-prompt auto-labelling and point prompting.
//
// The built-in backend is deterministic: a normalized cross-correlation
// template search locates each instance, the reference mask is translated and
// then refined by colour-bounded region growing. The instance set is fixed by
// the permanent memory entry; no new objects are ever created.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "annotrack/core.hpp"
#include "annotrack/flow.hpp"
#include "annotrack/geometry.hpp"
#include "annotrack/memory.hpp"

namespace annotrack {

struct ColorModel {
  double mean_r{0}, mean_g{0}, mean_b{0};
  std::array<std::uint32_t, 512> histogram{};  // 8x8x8 quantized RGB
  std::int64_t samples{0};

  double distance(const std::uint8_t* px) const {
    return color_distance(px[0], px[1], px[2], mean_r, mean_g, mean_b);
  }
  double distance(const ColorModel& o) const {
    return color_distance(mean_r, mean_g, mean_b, o.mean_r, o.mean_g, o.mean_b);
  }
};

inline int histogram_bin(const std::uint8_t* px) {
  return (px[0] >> 5) * 64 + (px[1] >> 5) * 8 + (px[2] >> 5);
}

inline ColorModel build_color_model(const Frame& frame, const Mask& mask) {
  ColorModel m;
  double sr = 0, sg = 0, sb = 0;
  for (int y = 0; y < frame.height; ++y)
    for (int x = 0; x < frame.width; ++x) {
      if (!mask.get(x, y)) continue;
      const auto* p = frame.at(x, y);
      sr += p[0];
      sg += p[1];
      sb += p[2];
      ++m.histogram[histogram_bin(p)];
      ++m.samples;
    }
  if (m.samples > 0) {
    m.mean_r = sr / m.samples;
    m.mean_g = sg / m.samples;
    m.mean_b = sb / m.samples;
  }
  return m;
}

inline std::map<InstanceLabel, ColorModel> build_color_models(const MemoryEntry& permanent) {
  std::map<InstanceLabel, ColorModel> out;
  for (const auto& [label, mask] : permanent.masks)
    out.emplace(label, build_color_model(*permanent.frame, mask));
  return out;
}

enum class TrackStatus { Tracked, Recovered, Absent };
enum class AbsenceCause { None, Missing, LowConfidence };

inline const char* to_string(TrackStatus s) {
  switch (s) {
    case TrackStatus::Tracked: return "tracked";
    case TrackStatus::Recovered: return "recovered";
    case TrackStatus::Absent: return "absent";
  }
  return "unknown";
}

inline const char* to_string(AbsenceCause c) {
  switch (c) {
    case AbsenceCause::None: return "none";
    case AbsenceCause::Missing: return "missing";
    case AbsenceCause::LowConfidence: return "low_confidence";
  }
  return "unknown";
}

struct InstancePrediction {
  Mask mask;
  double confidence{0};
  TrackStatus status{TrackStatus::Absent};
  AbsenceCause cause{AbsenceCause::Missing};

  bool absent() const { return status == TrackStatus::Absent; }
};

using Prediction = std::map<InstanceLabel, InstancePrediction>;

// Pluggable propagation model: (memory, query frame, params) -> prediction.
// Implementations must be deterministic and must only report instances held
// by the permanent memory entry.
class PropagationBackend {
 public:
  virtual ~PropagationBackend() = default;
  virtual Prediction propagate(const MemoryBuffer& buffer, const Frame& query,
                               const AdvancedParams& params) const = 0;
};

namespace detail {

struct MatchResult {
  int dx{0}, dy{0};
  double score{0};
};

// NCC between the reference patch over box and the query patch shifted by
// (dx, dy), sampled every `step` pixels, scaled by the fraction of samples
// that land in frame. Fewer than half the samples in frame counts as no
// match.
inline std::optional<double> ncc_at(const Frame& ref, const Frame& query, const BBox& box, int dx,
                                    int dy, int step) {
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  std::int64_t n = 0, total = 0;
  for (int y = box.y1; y <= box.y2; y += step) {
    const int qy = y + dy;
    for (int x = box.x1; x <= box.x2; x += step) {
      ++total;
      const int qx = x + dx;
      if (qx < 0 || qy < 0 || qx >= query.width || qy >= query.height) continue;
      const auto* a = ref.at(x, y);
      const auto* b = query.at(qx, qy);
      for (int c = 0; c < 3; ++c) {
        const double va = a[c], vb = b[c];
        sa += va;
        sb += vb;
        saa += va * va;
        sbb += vb * vb;
        sab += va * vb;
      }
      n += 3;
    }
  }
  if (n == 0 || 2 * (n / 3) < total) return std::nullopt;
  const double cov = sab - sa * sb / n;
  const double va = saa - sa * sa / n, vb = sbb - sb * sb / n;
  if (va <= 1e-9 || vb <= 1e-9) return 0.0;
  return cov / std::sqrt(va * vb) * (static_cast<double>(n / 3) / static_cast<double>(total));
}

// Coarse search on the even lattice with half-resolution sampling, then a
// full-resolution refinement in a 5x5 window around the coarse optimum.
inline MatchResult template_search(const Frame& ref, const Frame& query, const BBox& box,
                                   int radius) {
  const auto order = search_order(radius);
  MatchResult best{0, 0, -2.0};
  bool found = false;
  for (const auto& c : order) {
    if ((c.dx & 1) || (c.dy & 1)) continue;
    auto s = ncc_at(ref, query, box, c.dx, c.dy, 2);
    if (s && *s > best.score) {
      best = {c.dx, c.dy, *s};
      found = true;
    }
  }
  if (!found) return {0, 0, 0.0};
  const MatchResult coarse = best;
  best.score = -2.0;
  for (const auto& c : search_order(2)) {
    const int dx = coarse.dx + c.dx, dy = coarse.dy + c.dy;
    if (std::abs(dx) > radius || std::abs(dy) > radius) continue;
    auto s = ncc_at(ref, query, box, dx, dy, 1);
    if (s && *s > best.score) best = {dx, dy, *s};
  }
  if (best.score < -1.5) return coarse;
  return best;
}

// 4-connected growth from the seeds over pixels within tau of the model mean,
// restricted to bound.
inline Mask region_grow(const Frame& frame, const Mask& seeds, const ColorModel& model, double tau,
                        const BBox& bound) {
  Mask out(frame.width, frame.height);
  std::vector<PixelPos> stack;
  auto ok = [&](int x, int y) {
    return x >= bound.x1 && x <= bound.x2 && y >= bound.y1 && y <= bound.y2 &&
           model.distance(frame.at(x, y)) <= tau;
  };
  for (int y = bound.y1; y <= bound.y2; ++y)
    for (int x = bound.x1; x <= bound.x2; ++x)
      if (seeds.get(x, y) && !out.get(x, y) && ok(x, y)) {
        out.set(x, y);
        stack.push_back({x, y});
      }
  static constexpr std::array<PixelPos, 4> k4 = {{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};
  while (!stack.empty()) {
    const PixelPos p = stack.back();
    stack.pop_back();
    for (const auto& d : k4) {
      const int nx = p.x + d.x, ny = p.y + d.y;
      if (out.contains(nx, ny) && !out.get(nx, ny) && ok(nx, ny)) {
        out.set(nx, ny);
        stack.push_back({nx, ny});
      }
    }
  }
  return out;
}

inline Mask color_extract(const Frame& frame, const ColorModel& model, double tau,
                          const BBox& box) {
  Mask out(frame.width, frame.height);
  for (int y = box.y1; y <= box.y2; ++y)
    for (int x = box.x1; x <= box.x2; ++x)
      if (model.distance(frame.at(x, y)) <= tau) out.set(x, y);
  return out;
}

inline BBox full_frame(const Frame& f) { return {0, 0, f.width - 1, f.height - 1}; }

}  // namespace detail

class ColorTemplateBackend final : public PropagationBackend {
 public:
  Prediction propagate(const MemoryBuffer& buffer, const Frame& query,
                       const AdvancedParams& params) const override {
    if (!buffer.has_permanent())
      throw Error(ErrorKind::Precondition, "propagate: memory buffer is empty");
    if (query.index <= buffer.latest_index())
      throw Error(ErrorKind::Precondition, "propagate: query frame precedes memory");
    const auto& permanent = buffer.permanent();
    const auto models = build_color_models(permanent);

    Prediction pred;
    std::map<InstanceLabel, Mask> translated;
    std::map<InstanceLabel, double> ncc;
    for (const auto& [label, _] : permanent.masks) {
      const MemoryEntry& ref = buffer.reference_for(label);
      const Mask& ref_mask = ref.masks.at(label);
      const BBox ref_box = bbox(ref_mask);
      const auto match = detail::template_search(*ref.frame, query, ref_box, params.search_radius);
      Mask moved = translate(ref_mask, match.dx, match.dy);
      InstancePrediction ip;
      ip.mask = Mask(query.width, query.height);
      if (auto tb = try_bbox(moved)) {
        const BBox bound = scale_box(*tb, 1.5, query.width, query.height);
        ip.mask = detail::region_grow(query, moved, models.at(label), params.tau_color, bound);
      }
      const double overlap = iou(moved, ip.mask);
      ip.confidence = std::clamp(0.5 * std::max(match.score, 0.0) + 0.5 * overlap, 0.0, 1.0);
      ip.status = TrackStatus::Tracked;
      ip.cause = AbsenceCause::None;
      ncc[label] = match.score;
      translated.emplace(label, std::move(moved));
      pred.emplace(label, std::move(ip));
    }

    resolve_overlaps(query, models, pred);

    for (auto& [label, ip] : pred) {
      if (ip.mask.area() < std::max(params.min_area, 1)) {
        ip.status = TrackStatus::Absent;
        ip.cause = AbsenceCause::Missing;
        ip.mask = Mask(query.width, query.height);
      } else if (ip.confidence < params.conf_threshold) {
        ip.status = TrackStatus::Absent;
        ip.cause = AbsenceCause::LowConfidence;
        ip.mask = Mask(query.width, query.height);
      }
    }
    return pred;
  }

  // Pixels claimed by several instances go to the nearest colour model; ties
  // go to the lower label.
  static void resolve_overlaps(const Frame& frame, const std::map<InstanceLabel, ColorModel>& models,
                               Prediction& pred) {
    std::vector<std::pair<const InstanceLabel*, InstancePrediction*>> items;
    for (auto& [label, ip] : pred) items.push_back({&label, &ip});
    for (std::size_t i = 0; i < frame.width * static_cast<std::size_t>(frame.height); ++i) {
      int claims = 0;
      for (auto& it : items) claims += it.second->mask[i];
      if (claims < 2) continue;
      const std::uint8_t* px = frame.pixels.data() + i * 3;
      InstancePrediction* winner = nullptr;
      double best = std::numeric_limits<double>::infinity();
      for (auto& [label, ip] : items) {
        if (!ip->mask[i]) continue;
        const double d = models.at(*label).distance(px);
        if (d < best) {
          best = d;
          winner = ip;
        }
      }
      for (auto& it : items)
        if (it.second != winner) it.second->mask[i] = 0;
    }
  }
};

struct RecoveryResult {
  Mask mask;
  double confidence{0};
};

// Searches the last known box (doubled about its center) for pixels matching
// the instance colour. The largest component is accepted when its area is
// within [0.25, 4] times the last known area. Pixels in `taken` are excluded.
inline std::optional<RecoveryResult> recover(const Frame& frame, const BBox& last_bbox,
                                             std::int64_t last_area, const ColorModel& model,
                                             const AdvancedParams& params,
                                             const Mask* taken = nullptr) {
  if (!params.recovery_enabled || last_area <= 0) return std::nullopt;
  const BBox box = scale_box(last_bbox, 2.0, frame.width, frame.height);
  Mask cand = detail::color_extract(frame, model, params.tau_color, box);
  if (taken)
    for (std::size_t i = 0; i < cand.size(); ++i)
      if ((*taken)[i]) cand[i] = 0;
  auto comps = connected_components(cand, std::max(params.min_area, 1));
  if (comps.empty()) return std::nullopt;
  const double ratio = static_cast<double>(comps.front().area) / static_cast<double>(last_area);
  if (ratio < 0.25 || ratio > 4.0) return std::nullopt;
  return RecoveryResult{std::move(comps.front().mask), std::min(ratio, 1.0 / ratio)};
}

// What the re-detector needs to know about an absent instance.
struct AbsentInstance {
  InstanceLabel label;
  ColorModel model;
  std::int64_t last_area{0};       // area when last seen
  std::int64_t reference_area{0};  // area in the permanent entry
};

namespace detail {

inline bool in_area_band(std::int64_t area, std::int64_t ref) {
  if (ref <= 0) return false;
  const double r = static_cast<double>(area) / static_cast<double>(ref);
  return r >= 0.25 && r <= 4.0;
}

}  // namespace detail

// Full-frame search for instances that are still absent. Candidates must fall
// in the area band (against either the last seen or the permanent area) and
// overlap no assigned mask by more than IoU 0.3. Instances whose best
// candidate is closest in mean colour claim first; a reclaimed instance keeps
// its original label.
inline void global_redetect(const Frame& frame, const std::vector<AbsentInstance>& absent,
                            Prediction& pred, const AdvancedParams& params) {
  if (absent.empty()) return;
  struct Option {
    std::size_t who;
    Mask mask;
    std::int64_t area;
    double color_dist;
  };
  std::vector<std::vector<Option>> options(absent.size());
  for (std::size_t k = 0; k < absent.size(); ++k) {
    const auto& a = absent[k];
    Mask cand = detail::color_extract(frame, a.model, params.tau_color, detail::full_frame(frame));
    for (auto& comp : connected_components(cand, std::max(params.min_area, 1))) {
      if (!detail::in_area_band(comp.area, a.last_area) &&
          !detail::in_area_band(comp.area, a.reference_area))
        continue;
      const ColorModel cm = build_color_model(frame, comp.mask);
      options[k].push_back({k, std::move(comp.mask), comp.area, a.model.distance(cm)});
    }
  }

  std::vector<bool> done(absent.size(), false);
  for (std::size_t round = 0; round < absent.size(); ++round) {
    // Pick the unresolved instance whose best remaining candidate is nearest
    // in colour; ties go to the lower label.
    std::optional<std::pair<std::size_t, std::size_t>> pick;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < absent.size(); ++k) {
      if (done[k]) continue;
      for (std::size_t j = 0; j < options[k].size(); ++j) {
        const auto& opt = options[k][j];
        bool clash = false;
        for (const auto& [l, ip] : pred)
          if (!ip.absent() && iou(opt.mask, ip.mask) > 0.3) {
            clash = true;
            break;
          }
        if (clash) continue;
        // First admissible option is the largest (components come sorted).
        if (opt.color_dist < best ||
            (opt.color_dist == best && pick && absent[k].label < absent[pick->first].label)) {
          best = opt.color_dist;
          pick = std::pair{k, j};
        }
        break;
      }
    }
    if (!pick) break;
    auto [k, j] = *pick;
    done[k] = true;
    Mask m = options[k][j].mask;
    for (const auto& [l, ip] : pred)
      if (!ip.absent())
        for (std::size_t i = 0; i < m.size(); ++i)
          if (ip.mask[i]) m[i] = 0;
    if (m.area() < std::max(params.min_area, 1)) continue;
    auto& ip = pred[absent[k].label];
    const double ratio =
        static_cast<double>(m.area()) /
        static_cast<double>(std::max<std::int64_t>(absent[k].reference_area, 1));
    ip.mask = std::move(m);
    ip.status = TrackStatus::Recovered;
    ip.cause = AbsenceCause::None;
    ip.confidence = std::min(ratio, 1.0 / ratio);
  }
}

inline Rgb estimate_background(const Frame& frame) {
  const int p = 16;
  std::array<std::uint32_t, 512> hist{};
  std::array<std::array<double, 3>, 512> sums{};
  auto sample = [&](int x0, int y0) {
    for (int y = std::max(0, y0); y < std::min(frame.height, y0 + p); ++y)
      for (int x = std::max(0, x0); x < std::min(frame.width, x0 + p); ++x) {
        const auto* px = frame.at(x, y);
        const int b = histogram_bin(px);
        ++hist[b];
        for (int c = 0; c < 3; ++c) sums[b][c] += px[c];
      }
  };
  sample(0, 0);
  sample(frame.width - p, 0);
  sample(0, frame.height - p);
  sample(frame.width - p, frame.height - p);
  const int mode = static_cast<int>(std::max_element(hist.begin(), hist.end()) - hist.begin());
  const double n = std::max<std::uint32_t>(hist[mode], 1);
  return {static_cast<std::uint8_t>(std::lround(sums[mode][0] / n)),
          static_cast<std::uint8_t>(std::lround(sums[mode][1] / n)),
          static_cast<std::uint8_t>(std::lround(sums[mode][2] / n))};
}

// Every foreground blob becomes an instance "{prompt}_{k}", k following the
// centroids top-to-bottom then left-to-right.
inline LabeledFrame autolabel(const Frame& frame, const std::string& prompt,
                              const AdvancedParams& params) {
  if (prompt.empty()) throw Error(ErrorKind::InvalidArgument, "autolabel: empty prompt");
  const Rgb bg = estimate_background(frame);
  Mask fg(frame.width, frame.height);
  for (int y = 0; y < frame.height; ++y)
    for (int x = 0; x < frame.width; ++x) {
      const auto* px = frame.at(x, y);
      if (color_distance(px[0], px[1], px[2], bg.r, bg.g, bg.b) > params.tau_color) fg.set(x, y);
    }
  auto comps = connected_components(fg, std::max(params.min_area, 1));
  std::vector<std::pair<Point2d, std::size_t>> order;
  for (std::size_t i = 0; i < comps.size(); ++i) order.push_back({centroid(comps[i].mask), i});
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.first.y != b.first.y) return a.first.y < b.first.y;
    return a.first.x < b.first.x;
  });

  LabeledFrame out;
  out.frame_index = frame.index;
  out.source = AnnotationSource::GroundTruth;
  std::set<InstanceLabel> used;
  for (const auto& [c, i] : order) {
    const InstanceLabel label = next_label(prompt, used);
    used.insert(label);
    auto polys = mask_to_polygons({label, comps[i].mask}, params.epsilon, params.min_area);
    if (polys.empty()) continue;
    out.annotations[label].polygons = std::move(polys);
  }
  return out;
}

// Region grown from (x, y) over pixels within tau of the seed colour. The
// returned polygon carries no label.
inline Polygon point_prompt(const Frame& frame, int x, int y, const AdvancedParams& params) {
  if (x < 0 || y < 0 || x >= frame.width || y >= frame.height)
    throw Error(ErrorKind::InvalidArgument, "point_prompt: point outside frame");
  ColorModel seed_model;
  const auto* s = frame.at(x, y);
  seed_model.mean_r = s[0];
  seed_model.mean_g = s[1];
  seed_model.mean_b = s[2];
  Mask seed(frame.width, frame.height);
  seed.set(x, y);
  Mask region = detail::region_grow(frame, seed, seed_model, params.tau_color,
                                    detail::full_frame(frame));
  const std::int64_t area = region.area();
  if (2 * area >= static_cast<std::int64_t>(frame.width) * frame.height)
    throw Error(ErrorKind::Precondition,
                "point_prompt: region too large (covers at least half the frame)");
  auto polys = mask_to_polygons({InstanceLabel{}, region}, params.epsilon, 1);
  if (polys.empty()) throw Error(ErrorKind::Precondition, "point_prompt: region too small");
  return polys.front();
}

}  // namespace annotrack
