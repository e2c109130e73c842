#pragma once

// Synthetic moving-blob videos with exact ground truth, named scenario
// presets, and the tracking evaluator (IoU, identity switches, misses).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "annotrack/core.hpp"
#include "annotrack/geometry.hpp"
#include "annotrack/rle.hpp"
#include "annotrack/video.hpp"

namespace annotrack::synth {

enum class Shape { Ellipse, Rectangle };
// Bounce reflects off the arena walls; Wrap leaves one edge and re-enters at
// the opposite one after travelling `wrap_margin` pixels off screen.
enum class Motion { Free, Bounce, Wrap };

struct BlobSpec {
  std::string name;
  Shape shape{Shape::Ellipse};
  int half_width{10};
  int half_height{10};
  Rgb color;
  int x{0}, y{0};    // center at frame 0
  int vx{0}, vy{0};  // px per frame
  Motion motion{Motion::Bounce};
  int wrap_margin{0};
  bool occludable{true};
  std::optional<BBox> arena;  // bounce region, defaults to the frame
};

struct OccluderSpec {
  BBox box;
  Rgb color;
};

struct SceneSpec {
  std::string name{"scene"};
  int width{320};
  int height{240};
  std::int64_t frame_count{100};
  Fps fps{30, 1};
  std::uint64_t seed{1};
  Rgb background{0, 0, 0};
  double noise_sigma{2.0};
  int texture_amplitude{12};
  std::vector<BlobSpec> blobs;
  std::vector<OccluderSpec> occluders;

  // Throws when ground truth would be ill-posed.
  void validate(double tau_color = 40.0) const {
    auto fail = [](const std::string& m) { throw Error(ErrorKind::InvalidArgument, "scene: " + m); };
    if (width <= 0 || height <= 0 || frame_count <= 0) fail("dimensions and frame count must be positive");
    if (!fps.valid()) fail("fps must be positive");
    std::set<std::string> names;
    auto dist = [](Rgb a, Rgb b) { return color_distance(a.r, a.g, a.b, b.r, b.g, b.b); };
    for (std::size_t i = 0; i < blobs.size(); ++i) {
      const auto& b = blobs[i];
      if (!names.insert(b.name).second) fail("duplicate blob name " + b.name);
      if (b.half_width < 1 || b.half_height < 1) fail("blob " + b.name + " has no extent");
      if (2 * b.half_width + 1 > width || 2 * b.half_height + 1 > height)
        fail("blob " + b.name + " larger than frame");
      if (dist(b.color, background) <= 2 * tau_color) fail("blob " + b.name + " too close to background colour");
      for (const auto& o : occluders)
        if (dist(b.color, o.color) <= 2 * tau_color) fail("blob " + b.name + " too close to an occluder colour");
      for (std::size_t j = 0; j < i; ++j)
        if (blobs[j].color == b.color) fail("blob colours must be distinct");
    }
  }
};

struct SyntheticVideo {
  std::vector<Frame> frames;
  std::vector<std::map<std::string, rle::RleCounts>> truth;  // per frame, per blob (may be empty)
};

namespace detail {

inline int bounce_coord(int p0, int v, std::int64_t t, int lo, int hi) {
  if (hi <= lo) return lo;
  const std::int64_t period = 2 * static_cast<std::int64_t>(hi - lo);
  std::int64_t m = (static_cast<std::int64_t>(p0 - lo) + v * t) % period;
  if (m < 0) m += period;
  if (m > hi - lo) m = period - m;
  return lo + static_cast<int>(m);
}

inline int wrap_coord(int p0, int v, std::int64_t t, int lo, int len) {
  std::int64_t m = (static_cast<std::int64_t>(p0 - lo) + v * t) % len;
  if (m < 0) m += len;
  return lo + static_cast<int>(m);
}

// Fixed per-pixel texture that travels with the blob.
inline int texture(std::uint64_t seed, std::size_t blob, int dx, int dy, int channel, int amplitude) {
  if (amplitude <= 0) return 0;
  std::uint64_t z = seed ^ (0x9e3779b97f4a7c15ULL * (blob + 1));
  z ^= static_cast<std::uint64_t>(dx + 4096) * 0xbf58476d1ce4e5b9ULL;
  z ^= static_cast<std::uint64_t>(dy + 4096) * 0x94d049bb133111ebULL;
  z ^= static_cast<std::uint64_t>(channel + 1) * 0x2545f4914f6cdd1dULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return static_cast<int>(z % static_cast<std::uint64_t>(2 * amplitude + 1)) - amplitude;
}

inline bool inside(const BlobSpec& b, int dx, int dy) {
  if (b.shape == Shape::Rectangle) return std::abs(dx) <= b.half_width && std::abs(dy) <= b.half_height;
  const double u = static_cast<double>(dx) / b.half_width, v = static_cast<double>(dy) / b.half_height;
  return u * u + v * v <= 1.0;
}

// Standard normal samples drawn once; per-pixel noise indexes into it.
inline const std::vector<double>& unit_normal_table() {
  static const std::vector<double> table = [] {
    std::mt19937_64 rng(0x5eedULL);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> v(1 << 16);
    for (auto& x : v) x = n(rng);
    return v;
  }();
  return table;
}

}  // namespace detail

// Blob center at frame t.
inline PixelPos blob_center(const SceneSpec& scene, const BlobSpec& b, std::int64_t t) {
  switch (b.motion) {
    case Motion::Free:
      return {static_cast<int>(b.x + b.vx * t), static_cast<int>(b.y + b.vy * t)};
    case Motion::Bounce: {
      const BBox a = b.arena.value_or(BBox{0, 0, scene.width - 1, scene.height - 1});
      return {detail::bounce_coord(b.x, b.vx, t, a.x1 + b.half_width, a.x2 - b.half_width),
              detail::bounce_coord(b.y, b.vy, t, a.y1 + b.half_height, a.y2 - b.half_height)};
    }
    case Motion::Wrap: {
      const int lox = -b.half_width - b.wrap_margin / 2, loy = -b.half_height - b.wrap_margin / 2;
      return {detail::wrap_coord(b.x, b.vx, t, lox, scene.width + 2 * b.half_width + b.wrap_margin),
              detail::wrap_coord(b.y, b.vy, t, loy, scene.height + 2 * b.half_height + b.wrap_margin)};
    }
  }
  return {b.x, b.y};
}

// Frame t and its ground-truth masks, one per blob.
inline std::pair<Frame, std::map<std::string, Mask>> render(const SceneSpec& scene, std::int64_t t) {
  const int w = scene.width, h = scene.height;
  const auto& gauss = detail::unit_normal_table();
  std::mt19937_64 rng(scene.seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(t));
  auto jitter = [&]() {
    return scene.noise_sigma > 0 ? scene.noise_sigma * gauss[rng() & (gauss.size() - 1)] : 0.0;
  };

  // Owner per pixel: -1 background, blob index, or -2 occluder.
  std::vector<int> owner(static_cast<std::size_t>(w) * h, -1);
  auto paint_blob = [&](std::size_t i) {
    const auto& b = scene.blobs[i];
    const PixelPos c = blob_center(scene, b, t);
    for (int dy = -b.half_height; dy <= b.half_height; ++dy)
      for (int dx = -b.half_width; dx <= b.half_width; ++dx) {
        const int x = c.x + dx, y = c.y + dy;
        if (x < 0 || y < 0 || x >= w || y >= h || !detail::inside(b, dx, dy)) continue;
        owner[static_cast<std::size_t>(y) * w + x] = static_cast<int>(i);
      }
  };
  for (std::size_t i = 0; i < scene.blobs.size(); ++i)
    if (scene.blobs[i].occludable) paint_blob(i);
  for (const auto& o : scene.occluders)
    for (int y = std::max(0, o.box.y1); y <= std::min(h - 1, o.box.y2); ++y)
      for (int x = std::max(0, o.box.x1); x <= std::min(w - 1, o.box.x2); ++x)
        owner[static_cast<std::size_t>(y) * w + x] = -2;
  for (std::size_t i = 0; i < scene.blobs.size(); ++i)
    if (!scene.blobs[i].occludable) paint_blob(i);

  Frame f(t, w, h, scene.fps);
  std::map<std::string, Mask> truth;
  for (const auto& b : scene.blobs) truth.emplace(b.name, Mask(w, h));
  std::vector<PixelPos> centers;
  std::vector<Mask*> masks;
  for (const auto& b : scene.blobs) {
    centers.push_back(blob_center(scene, b, t));
    masks.push_back(&truth.at(b.name));
  }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int who = owner[static_cast<std::size_t>(y) * w + x];
      Rgb base = scene.background;
      std::array<int, 3> tex{0, 0, 0};
      if (who >= 0) {
        const auto& b = scene.blobs[who];
        base = b.color;
        for (int ch = 0; ch < 3; ++ch)
          tex[ch] = detail::texture(scene.seed, who, x - centers[who].x, y - centers[who].y, ch,
                                    scene.texture_amplitude);
        masks[who]->set(x, y);
      } else if (who == -2) {
        for (const auto& o : scene.occluders)
          if (x >= o.box.x1 && x <= o.box.x2 && y >= o.box.y1 && y <= o.box.y2) base = o.color;
      }
      const int rgb[3] = {base.r, base.g, base.b};
      auto* px = f.at(x, y);
      for (int ch = 0; ch < 3; ++ch)
        px[ch] = static_cast<std::uint8_t>(
            std::clamp(static_cast<int>(std::lround(rgb[ch] + tex[ch] + jitter())), 0, 255));
    }
  return {std::move(f), std::move(truth)};
}

inline SyntheticVideo generate(const SceneSpec& scene) {
  scene.validate();
  SyntheticVideo out;
  for (std::int64_t t = 0; t < scene.frame_count; ++t) {
    auto [frame, truth] = render(scene, t);
    out.frames.push_back(std::move(frame));
    out.truth.push_back(rle::encode_all(truth));
  }
  return out;
}

inline std::shared_ptr<InMemoryVideo> to_video(const SceneSpec& scene, SyntheticVideo& synthetic) {
  return std::make_shared<InMemoryVideo>(scene.name, synthetic.frames, scene.fps);
}

// ---------------------------------------------------------------------------
// Presets

inline std::vector<std::string> preset_names() {
  return {"basic", "occlusion", "exit_reenter", "fast_motion", "crowded"};
}

inline SceneSpec preset(const std::string& name) {
  const Rgb red{255, 85, 0}, green{85, 255, 85}, blue{85, 170, 255}, grey{170, 170, 170};
  SceneSpec s;
  s.name = name;
  if (name == "basic") {
    s.frame_count = 300;
    s.seed = 101;
    s.blobs = {
        {"blob_0", Shape::Ellipse, 14, 10, red, 60, 40, 2, 1, Motion::Bounce, 0, true, BBox{0, 0, 319, 79}},
        {"blob_1", Shape::Rectangle, 12, 9, green, 200, 120, -2, 1, Motion::Bounce, 0, true, BBox{0, 80, 319, 159}},
        {"blob_2", Shape::Ellipse, 11, 13, blue, 120, 200, 1, -1, Motion::Bounce, 0, true, BBox{0, 160, 319, 239}},
    };
  } else if (name == "occlusion") {
    // blob_0 passes fully behind the bar at frames 50..54.
    s.frame_count = 200;
    s.seed = 202;
    s.occluders = {{BBox{150, 0, 179, 119}, grey}};
    s.blobs = {
        {"blob_0", Shape::Rectangle, 10, 8, red, 60, 60, 2, 0, Motion::Bounce, 0, true, BBox{0, 0, 319, 119}},
        {"blob_1", Shape::Ellipse, 13, 10, green, 60, 170, 1, 1, Motion::Bounce, 0, true, BBox{0, 120, 149, 239}},
        {"blob_2", Shape::Ellipse, 10, 12, blue, 250, 180, -1, 1, Motion::Bounce, 0, true, BBox{180, 120, 319, 239}},
    };
  } else if (name == "exit_reenter") {
    // blob_0 leaves through the left edge and is back at the right edge
    // about 30 frames later.
    s.frame_count = 200;
    s.seed = 303;
    s.blobs = {
        {"blob_0", Shape::Ellipse, 12, 9, red, 100, 40, -3, 0, Motion::Wrap, 90, true, std::nullopt},
        {"blob_1", Shape::Rectangle, 12, 9, green, 80, 130, 2, 1, Motion::Bounce, 0, true, BBox{0, 90, 319, 164}},
        {"blob_2", Shape::Ellipse, 11, 11, blue, 220, 200, -1, 1, Motion::Bounce, 0, true, BBox{0, 165, 319, 239}},
    };
  } else if (name == "fast_motion") {
    s.frame_count = 150;
    s.seed = 404;
    s.blobs = {
        {"blob_0", Shape::Ellipse, 14, 10, red, 60, 60, 24, 10, Motion::Bounce, 0, true, BBox{0, 0, 159, 239}},
        {"blob_1", Shape::Ellipse, 12, 12, blue, 240, 160, -20, 18, Motion::Bounce, 0, true, BBox{160, 0, 319, 239}},
    };
  } else if (name == "crowded") {
    s.width = 640;
    s.height = 480;
    s.frame_count = 200;
    s.seed = 505;
    std::vector<Rgb> palette;
    const int levels[4] = {0, 85, 170, 255};
    for (int r : levels)
      for (int g : levels)
        for (int b : levels)
          if (r + g + b > 0 && r + g + b < 765) palette.push_back(Rgb{std::uint8_t(r), std::uint8_t(g), std::uint8_t(b)});
    std::mt19937 rng(static_cast<std::uint32_t>(s.seed));
    for (int k = 0; k < 20; ++k) {
      const int col = k % 5, row = k / 5;
      const BBox arena{col * 128, row * 120, col * 128 + 127, row * 120 + 119};
      const Rgb color = palette[(static_cast<std::size_t>(k) * 3 + 1) % palette.size()];
      const int vx = static_cast<int>(rng() % 5) - 2, vy = static_cast<int>(rng() % 5) - 2;
      s.blobs.push_back({"blob_" + std::to_string(k), k % 2 ? Shape::Rectangle : Shape::Ellipse, 12, 9, color,
                         arena.x1 + 64, arena.y1 + 60, vx == 0 ? 1 : vx, vy == 0 ? -1 : vy, Motion::Bounce, 0,
                         true, arena});
    }
  } else {
    throw Error(ErrorKind::InvalidArgument, "unknown preset: " + name);
  }
  return s;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json rgb_json(Rgb c) { return {c.r, c.g, c.b}; }
inline Rgb rgb_from(const nlohmann::json& j) {
  return {j.at(0).get<std::uint8_t>(), j.at(1).get<std::uint8_t>(), j.at(2).get<std::uint8_t>()};
}
inline nlohmann::json box_json(const BBox& b) { return {b.x1, b.y1, b.x2, b.y2}; }
inline BBox box_from(const nlohmann::json& j) {
  return {j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>(), j.at(3).get<int>()};
}

inline nlohmann::json to_json(const SceneSpec& s) {
  nlohmann::json blobs = nlohmann::json::array();
  for (const auto& b : s.blobs) {
    nlohmann::json jb = {{"name", b.name},
                         {"shape", b.shape == Shape::Ellipse ? "ellipse" : "rectangle"},
                         {"size", {b.half_width, b.half_height}},
                         {"color", rgb_json(b.color)},
                         {"position", {b.x, b.y}},
                         {"velocity", {b.vx, b.vy}},
                         {"motion", b.motion == Motion::Free ? "free" : b.motion == Motion::Bounce ? "bounce" : "wrap"},
                         {"wrap_margin", b.wrap_margin},
                         {"occludable", b.occludable}};
    if (b.arena) jb["arena"] = box_json(*b.arena);
    blobs.push_back(std::move(jb));
  }
  nlohmann::json occ = nlohmann::json::array();
  for (const auto& o : s.occluders) occ.push_back({{"box", box_json(o.box)}, {"color", rgb_json(o.color)}});
  return {{"name", s.name},           {"width", s.width},
          {"height", s.height},       {"frame_count", s.frame_count},
          {"fps", {s.fps.num, s.fps.den}}, {"seed", s.seed},
          {"background", rgb_json(s.background)}, {"noise_sigma", s.noise_sigma},
          {"texture_amplitude", s.texture_amplitude}, {"blobs", blobs},
          {"occluders", occ}};
}

inline SceneSpec scene_from_json(const nlohmann::json& j) {
  try {
    SceneSpec s;
    s.name = j.value("name", std::string("scene"));
    s.width = j.at("width").get<int>();
    s.height = j.at("height").get<int>();
    s.frame_count = j.at("frame_count").get<std::int64_t>();
    if (j.contains("fps")) s.fps = {j["fps"].at(0).get<std::int64_t>(), j["fps"].at(1).get<std::int64_t>()};
    s.seed = j.value("seed", std::uint64_t{1});
    if (j.contains("background")) s.background = rgb_from(j["background"]);
    s.noise_sigma = j.value("noise_sigma", 2.0);
    s.texture_amplitude = j.value("texture_amplitude", 12);
    for (const auto& jb : j.value("blobs", nlohmann::json::array())) {
      BlobSpec b;
      b.name = jb.at("name").get<std::string>();
      const auto shape = jb.value("shape", std::string("ellipse"));
      if (shape != "ellipse" && shape != "rectangle") throw Error(ErrorKind::Format, "unknown shape " + shape);
      b.shape = shape == "ellipse" ? Shape::Ellipse : Shape::Rectangle;
      b.half_width = jb.at("size").at(0).get<int>();
      b.half_height = jb.at("size").at(1).get<int>();
      b.color = rgb_from(jb.at("color"));
      b.x = jb.at("position").at(0).get<int>();
      b.y = jb.at("position").at(1).get<int>();
      b.vx = jb.at("velocity").at(0).get<int>();
      b.vy = jb.at("velocity").at(1).get<int>();
      const auto motion = jb.value("motion", std::string("bounce"));
      if (motion == "free") b.motion = Motion::Free;
      else if (motion == "bounce") b.motion = Motion::Bounce;
      else if (motion == "wrap") b.motion = Motion::Wrap;
      else throw Error(ErrorKind::Format, "unknown motion " + motion);
      b.wrap_margin = jb.value("wrap_margin", 0);
      b.occludable = jb.value("occludable", true);
      if (jb.contains("arena")) b.arena = box_from(jb["arena"]);
      s.blobs.push_back(std::move(b));
    }
    for (const auto& jo : j.value("occluders", nlohmann::json::array()))
      s.occluders.push_back({box_from(jo.at("box")), rgb_from(jo.at("color"))});
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Format, std::string("bad scene spec: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Evaluation

using FrameMasks = std::map<std::string, rle::RleCounts>;

struct EvalReport {
  std::map<std::string, double> mean_iou;        // per predicted label
  std::map<std::string, std::string> matched_object;  // label -> first matched object
  std::int64_t identity_switches{0};
  std::int64_t missed_frames{0};
  std::int64_t paused_events{0};
  std::vector<double> worst_iou;  // per frame
};

// Each predicted label is matched per frame to the ground-truth object of
// highest IoU. A switch is counted whenever a label's match (IoU >= threshold)
// differs from its previous such match. Per-label IoU and misses are measured
// against the label's first matched object.
inline EvalReport evaluate(const std::vector<FrameMasks>& predictions,
                           const std::vector<FrameMasks>& truth, double threshold = 0.5) {
  if (predictions.size() != truth.size())
    throw Error(ErrorKind::InvalidArgument, "evaluate: frame counts differ (" +
                                                std::to_string(predictions.size()) + " vs " +
                                                std::to_string(truth.size()) + ")");
  EvalReport rep;
  std::set<std::string> labels;
  for (const auto& f : predictions)
    for (const auto& [l, m] : f)
      if (!rle::empty(m)) labels.insert(l);

  // Decoded non-empty masks of one frame.
  auto decode = [](const FrameMasks& f) {
    std::map<std::string, Mask> out;
    for (const auto& [k, r] : f)
      if (!rle::empty(r)) out.emplace(k, rle::decode_counts(r));
    return out;
  };
  auto find = [](const std::map<std::string, Mask>& f, const std::string& k) -> const Mask* {
    auto it = f.find(k);
    return it != f.end() ? &it->second : nullptr;
  };

  std::map<std::string, std::string> last_match;
  for (std::size_t t = 0; t < predictions.size(); ++t) {
    const auto pred = decode(predictions[t]), gt = decode(truth[t]);
    for (const auto& l : labels) {
      const Mask* p = find(pred, l);
      if (!p) continue;
      std::string best;
      double best_iou = 0.0;
      for (const auto& [g, gm] : gt) {
        const double v = iou(*p, gm);
        if (v > best_iou) {
          best_iou = v;
          best = g;
        }
      }
      if (best.empty() || best_iou < threshold) continue;
      if (!rep.matched_object.count(l)) rep.matched_object[l] = best;
      auto it = last_match.find(l);
      if (it != last_match.end() && it->second != best) ++rep.identity_switches;
      last_match[l] = best;
    }
  }

  rep.worst_iou.assign(predictions.size(), 1.0);
  std::map<std::string, double> sum;
  std::map<std::string, std::int64_t> n;
  for (std::size_t t = 0; t < predictions.size(); ++t) {
    const auto pred = decode(predictions[t]), gt = decode(truth[t]);
    for (const auto& l : labels) {
      auto home = rep.matched_object.find(l);
      const Mask* p = find(pred, l);
      const Mask* g = home == rep.matched_object.end() ? nullptr : find(gt, home->second);
      if (!p && !g) continue;
      if (g && !p) ++rep.missed_frames;
      const double v = (p && g) ? iou(*p, *g) : 0.0;
      sum[l] += v;
      ++n[l];
      rep.worst_iou[t] = std::min(rep.worst_iou[t], v);
    }
  }
  for (const auto& l : labels) rep.mean_iou[l] = n[l] ? sum[l] / static_cast<double>(n[l]) : 0.0;
  return rep;
}

inline nlohmann::json to_json(const EvalReport& r) {
  return {{"mean_iou", r.mean_iou},
          {"matched_object", r.matched_object},
          {"identity_switches", r.identity_switches},
          {"missed_frames", r.missed_frames},
          {"paused_events", r.paused_events},
          {"worst_iou", r.worst_iou}};
}

}  // namespace annotrack::synth
