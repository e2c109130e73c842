#pragma once

// Annotation files: LabelMe-style per-frame JSON, the tracked CSV
// (centroid, motion index, timestamp) and the tracking CSV (bbox, centroid,
// COCO RLE segmentation).

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "annotrack/core.hpp"
#include "annotrack/flow.hpp"
#include "annotrack/geometry.hpp"
#include "annotrack/rle.hpp"
#include "annotrack/video.hpp"

namespace annotrack {

// Immutable export snapshot of a session.
struct FrameResult {
  AnnotationSource source{AnnotationSource::Predicted};
  std::map<InstanceLabel, rle::RleCounts> masks;
};

struct TrackResults {
  std::string video_name;
  Fps fps;
  int width{0};
  int height{0};
  std::map<std::int64_t, FrameResult> frames;
};

namespace io {

inline constexpr const char* kLabelMeVersion = "5.2.1";
inline constexpr const char* kTrackedHeader = "frame_number,instance_name,cx,cy,motion_index,timestamps";
inline constexpr const char* kTrackingHeader =
    "frame_number,x1,y1,x2,y2,cx,cy,instance_name,segmentation";

inline std::string json_filename(const std::string& video_name, std::int64_t frame_index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%09lld.json", static_cast<long long>(frame_index));
  return video_name + buf;
}

inline std::string tracked_csv_name(const std::string& video_name) {
  return video_name + "_tracked.csv";
}
inline std::string tracking_csv_name(const std::string& video_name) {
  return video_name + "_tracking.csv";
}

// Frame index from a "<video>_<digits>.json" name, if present.
inline std::optional<std::int64_t> frame_from_filename(const std::string& filename) {
  auto stem = std::filesystem::path(filename).stem().string();
  const auto pos = stem.rfind('_');
  if (pos == std::string::npos || pos + 1 >= stem.size()) return std::nullopt;
  std::int64_t v = 0;
  for (std::size_t i = pos + 1; i < stem.size(); ++i) {
    if (stem[i] < '0' || stem[i] > '9') return std::nullopt;
    v = v * 10 + (stem[i] - '0');
  }
  return v;
}

// Rounded to the millisecond; "HH:MM:SS" on whole seconds, else
// "HH:MM:SS.mmm".
inline std::string format_timestamp(std::int64_t frame_index, Fps fps) {
  if (!fps.valid()) throw Error(ErrorKind::InvalidArgument, "fps must be positive");
  const std::int64_t num = frame_index * 1000 * fps.den;
  const std::int64_t ms = (2 * num + fps.num) / (2 * fps.num);
  const std::int64_t s = ms / 1000, frac = ms % 1000;
  char buf[48];
  if (frac == 0)
    std::snprintf(buf, sizeof buf, "%02lld:%02lld:%02lld", static_cast<long long>(s / 3600),
                  static_cast<long long>(s / 60 % 60), static_cast<long long>(s % 60));
  else
    std::snprintf(buf, sizeof buf, "%02lld:%02lld:%02lld.%03lld", static_cast<long long>(s / 3600),
                  static_cast<long long>(s / 60 % 60), static_cast<long long>(s % 60),
                  static_cast<long long>(frac));
  return buf;
}

// Three decimals with trailing zeros trimmed, keeping one: 1.099, 0.0, -1.0.
inline std::string format_motion(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  std::string s = buf;
  while (s.size() > 1 && s.back() == '0' && s[s.size() - 2] != '.') s.pop_back();
  if (s == "-0.0") s = "0.0";
  return s;
}

inline std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  std::string s = buf;
  if (s.rfind("-0.", 0) == 0 && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
  return s;
}

inline std::string csv_quote(const std::string& field) {
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

// RFC-4180 record splitter for one line (no embedded newlines).
inline std::vector<std::string> csv_split(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw Error(ErrorKind::Format, "unterminated quoted CSV field");
  fields.push_back(std::move(cur));
  return fields;
}

// ---------------------------------------------------------------------------
// LabelMe JSON

struct LabelMeDocument {
  LabeledFrame frame;
  int image_width{0};
  int image_height{0};
  std::string image_path;
};

inline nlohmann::json to_labelme_json(const LabeledFrame& frame, int image_width,
                                      int image_height, const std::string& image_path = "") {
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& [label, ann] : frame.annotations)
    for (const auto& poly : ann.polygons) {
      nlohmann::json pts = nlohmann::json::array();
      for (const auto& v : poly.vertices) pts.push_back({v.x, v.y});
      shapes.push_back({{"label", label.display()},
                        {"points", std::move(pts)},
                        {"group_id", nullptr},
                        {"shape_type", "polygon"},
                        {"flags", nlohmann::json::object()}});
    }
  return {{"version", kLabelMeVersion},
          {"flags", nlohmann::json::object()},
          {"shapes", std::move(shapes)},
          {"imagePath", image_path},
          {"imageData", nullptr},
          {"imageHeight", image_height},
          {"imageWidth", image_width}};
}

inline LabelMeDocument from_labelme_json(const nlohmann::json& j, std::int64_t frame_index,
                                         AnnotationSource source = AnnotationSource::GroundTruth) {
  LabelMeDocument doc;
  doc.frame.frame_index = frame_index;
  doc.frame.source = source;
  try {
    doc.image_width = j.at("imageWidth").get<int>();
    doc.image_height = j.at("imageHeight").get<int>();
    if (j.contains("imagePath") && j["imagePath"].is_string())
      doc.image_path = j["imagePath"].get<std::string>();
    std::vector<std::string> bad;
    const auto& shapes = j.at("shapes");
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      const auto& s = shapes[i];
      const auto type = s.value("shape_type", std::string("polygon"));
      const auto label_text = s.at("label").get<std::string>();
      if (type != "polygon") {
        bad.push_back("#" + std::to_string(i) + " '" + label_text + "' (" + type + ")");
        continue;
      }
      Polygon poly;
      poly.label = parse_label(label_text);
      for (const auto& p : s.at("points"))
        poly.vertices.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      if (poly.vertices.size() < 3) {
        bad.push_back("#" + std::to_string(i) + " '" + label_text + "' (fewer than 3 points)");
        continue;
      }
      doc.frame.annotations[poly.label].polygons.push_back(std::move(poly));
    }
    if (!bad.empty()) {
      std::string msg = "unsupported shapes:";
      for (const auto& b : bad) msg += " " + b;
      throw Error(ErrorKind::Format, msg);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Format, std::string("malformed LabelMe JSON: ") + e.what());
  }
  return doc;
}

inline void write_labelme(const LabeledFrame& frame, int image_width, int image_height,
                          const std::filesystem::path& path, const std::string& image_path = "") {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << to_labelme_json(frame, image_width, image_height, image_path).dump(2) << "\n";
}

inline LabelMeDocument read_labelme(const std::filesystem::path& path,
                                    std::optional<std::int64_t> frame_index = std::nullopt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Format, "malformed LabelMe JSON " + path.string() + ": " + e.what());
  }
  const auto idx = frame_index ? *frame_index : frame_from_filename(path.filename().string()).value_or(0);
  return from_labelme_json(j, idx);
}

// Per-instance masks of a manual annotation: an explicit mask wins,
// otherwise the union of the rasterized polygons.
inline std::map<InstanceLabel, Mask> annotation_masks(const LabeledFrame& frame, int width,
                                                      int height) {
  std::map<InstanceLabel, Mask> out;
  for (const auto& [label, ann] : frame.annotations) {
    Mask m = ann.mask ? *ann.mask : polygons_to_mask(ann.polygons, width, height);
    if (!m.same_shape(Mask(width, height)))
      throw Error(ErrorKind::InvalidArgument, "annotation mask dimensions differ from video");
    out.emplace(label, std::move(m));
  }
  return out;
}

// Polygons for every non-empty mask at the given epsilon.
inline LabeledFrame to_labeled_frame(std::int64_t index, const FrameResult& fr, double epsilon,
                                     std::int64_t min_area) {
  LabeledFrame out;
  out.frame_index = index;
  out.source = fr.source;
  for (const auto& [label, counts] : fr.masks) {
    if (rle::empty(counts)) continue;
    auto polys = mask_to_polygons({label, rle::decode_counts(counts)}, epsilon, min_area);
    if (polys.empty()) continue;
    out.annotations[label].polygons = std::move(polys);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tracked CSV

struct TrackedRow {
  std::int64_t frame_number{0};
  std::string instance_name;
  double cx{0}, cy{0};
  double motion_index{-1.0};
  std::string timestamp;
};

inline std::string format_tracked_csv(const std::vector<TrackedRow>& rows) {
  std::string out = std::string(kTrackedHeader) + "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.frame_number) + "," + r.instance_name + "," +
           std::to_string(std::lround(r.cx)) + "," + std::to_string(std::lround(r.cy)) + "," +
           format_motion(r.motion_index) + "," + r.timestamp + "\n";
  }
  return out;
}

// One row per (frame, instance) with a non-empty mask; the first exported
// frame carries motion index -1.0.
inline std::vector<TrackedRow> tracked_rows(const TrackResults& results, const VideoSource* video,
                                            int search_radius = 32) {
  std::vector<TrackedRow> rows;
  bool first = true;
  for (const auto& [t, fr] : results.frames) {
    std::map<InstanceLabel, Mask> masks;
    Mask roi(results.width, results.height);
    for (const auto& [label, counts] : fr.masks)
      if (!rle::empty(counts)) {
        auto m = rle::decode_counts(counts);
        roi |= m;
        masks.emplace(label, std::move(m));
      }
    if (masks.empty()) continue;
    std::optional<FlowField> flow;
    if (!first && t > 0 && video)
      flow = dense_flow(*video->frame(t - 1), *video->frame(t), roi, 8, search_radius);
    const std::string ts = format_timestamp(t, results.fps);
    for (const auto& [label, m] : masks) {
      const Point2d c = centroid(m);
      rows.push_back({t, label.display(), c.x, c.y, flow ? motion_index(*flow, m) : -1.0, ts});
    }
    first = false;
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Tracking CSV

struct TrackingRow {
  std::int64_t frame_number{0};
  BBox box;
  double cx{0}, cy{0};
  std::string instance_name;
  rle::RleRecord segmentation;
};

inline std::vector<TrackingRow> tracking_rows(const TrackResults& results) {
  std::vector<TrackingRow> rows;
  for (const auto& [t, fr] : results.frames)
    for (const auto& [label, counts] : fr.masks) {
      if (rle::empty(counts)) continue;
      const Mask m = rle::decode_counts(counts);
      const Point2d c = centroid(m);
      rows.push_back({t, bbox(m), c.x, c.y, label.display(), rle::to_record(counts)});
    }
  return rows;
}

inline std::string format_tracking_csv(const std::vector<TrackingRow>& rows) {
  std::string out = std::string(kTrackingHeader) + "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.frame_number) + "," + format_fixed(r.box.x1, 1) + "," +
           format_fixed(r.box.y1, 1) + "," + format_fixed(r.box.x2, 1) + "," +
           format_fixed(r.box.y2, 1) + "," + format_fixed(r.cx, 2) + "," + format_fixed(r.cy, 2) +
           "," + r.instance_name + "," + csv_quote(rle::format_record(r.segmentation)) + "\n";
  }
  return out;
}

struct TrackingTable {
  std::vector<TrackingRow> rows;
  // frame -> label -> mask, decoded from the segmentation column
  std::map<std::int64_t, std::map<InstanceLabel, rle::RleCounts>> masks;
  int width{0};
  int height{0};
};

inline TrackingTable parse_tracking_csv(std::string_view text) {
  TrackingTable table;
  std::size_t pos = 0;
  auto next_line = [&](std::string& line) {
    if (pos >= text.size()) return false;
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    line = std::string(text.substr(pos, end - pos));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    pos = end + 1;
    return true;
  };
  std::string line;
  if (!next_line(line) || line != kTrackingHeader)
    throw Error(ErrorKind::Format, "tracking CSV header mismatch: expected '" +
                                       std::string(kTrackingHeader) + "'");
  std::size_t lineno = 1;
  while (next_line(line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = csv_split(line);
    if (f.size() != 9)
      throw Error(ErrorKind::Format, "tracking CSV line " + std::to_string(lineno) + ": expected 9 fields");
    TrackingRow r;
    try {
      r.frame_number = std::stoll(f[0]);
      r.box = {static_cast<int>(std::lround(std::stod(f[1]))), static_cast<int>(std::lround(std::stod(f[2]))),
               static_cast<int>(std::lround(std::stod(f[3]))), static_cast<int>(std::lround(std::stod(f[4])))};
      r.cx = std::stod(f[5]);
      r.cy = std::stod(f[6]);
    } catch (const std::exception&) {
      throw Error(ErrorKind::Format, "tracking CSV line " + std::to_string(lineno) + ": bad number");
    }
    r.instance_name = f[7];
    rle::RleCounts m;
    try {
      r.segmentation = rle::parse_record(f[8]);
      m = rle::counts_from_record(r.segmentation);
    } catch (const Error& e) {
      throw Error(ErrorKind::Corrupt, "tracking CSV frame " + f[0] + " instance " + f[7] + ": " + e.what());
    }
    table.width = m.width;
    table.height = m.height;
    table.masks[r.frame_number][parse_label(r.instance_name)] = std::move(m);
    table.rows.push_back(std::move(r));
  }
  return table;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << text;
}

inline void write_tracked_csv(const TrackResults& results, const VideoSource* video,
                              const std::filesystem::path& path, int search_radius = 32) {
  write_text(path, format_tracked_csv(tracked_rows(results, video, search_radius)));
}

inline void write_tracking_csv(const TrackResults& results, const std::filesystem::path& path) {
  write_text(path, format_tracking_csv(tracking_rows(results)));
}

inline TrackingTable read_tracking_csv(const std::filesystem::path& path) {
  return parse_tracking_csv(read_text(path));
}

}  // namespace io
}  // namespace annotrack
