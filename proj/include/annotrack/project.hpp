#pragma once

// On-disk project layout shared by the CLI and the HTTP service.
//
// A session directory holds one LabelMe JSON per stored frame,
// {video}_tracking.csv (the mask store), {video}_tracked.csv and session.json.
// A synthetic scene directory is a PNG-sequence video plus scene.json,
// truth/{video}_tracking.csv and init/{video}_000000000.json.

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "annotrack/annotation_io.hpp"
#include "annotrack/core.hpp"
#include "annotrack/rle.hpp"
#include "annotrack/session.hpp"
#include "annotrack/synth.hpp"
#include "annotrack/video.hpp"

namespace annotrack::project {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// JSON forms

inline nlohmann::json to_json(const AdvancedParams& p) {
  return {{"epsilon", p.epsilon},
          {"mem_every", p.mem_every},
          {"t_max", p.t_max},
          {"auto_pause", p.auto_pause},
          {"recovery_enabled", p.recovery_enabled},
          {"conf_threshold", p.conf_threshold},
          {"min_area", p.min_area},
          {"tau_color", p.tau_color},
          {"search_radius", p.search_radius}};
}

// Fields missing from `j` keep their value from `base`.
inline AdvancedParams params_from_json(const nlohmann::json& j, AdvancedParams base = {}) {
  if (!j.is_object()) throw Error(ErrorKind::InvalidArgument, "params must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "epsilon") base.epsilon = v.get<double>();
      else if (key == "mem_every") base.mem_every = v.get<int>();
      else if (key == "t_max") base.t_max = v.get<int>();
      else if (key == "auto_pause") base.auto_pause = v.get<bool>();
      else if (key == "recovery_enabled") base.recovery_enabled = v.get<bool>();
      else if (key == "conf_threshold") base.conf_threshold = v.get<double>();
      else if (key == "min_area") base.min_area = v.get<int>();
      else if (key == "tau_color") base.tau_color = v.get<double>();
      else if (key == "search_radius") base.search_radius = v.get<int>();
      else throw Error(ErrorKind::InvalidArgument, "unknown parameter: " + key);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, std::string("bad parameter value: ") + e.what());
  }
  base.validate();
  return base;
}

inline nlohmann::json to_json(const SessionEvent& e) {
  nlohmann::json j = {{"seq", e.seq}, {"kind", to_string(e.kind)}, {"frame", e.frame}};
  if (e.kind == EventKind::Paused) {
    j["instance"] = e.instance;
    j["cause"] = to_string(e.cause);
  }
  if (e.kind == EventKind::Failed) j["message"] = e.message;
  return j;
}

inline nlohmann::json to_json(const SessionState& s) {
  nlohmann::json j = {{"status", to_string(s.status)}, {"frame", s.frame}};
  if (s.status == SessionStatus::Paused) j["cause"] = to_string(s.cause);
  return j;
}

inline std::int64_t count_paused(const std::vector<SessionEvent>& events) {
  return std::count_if(events.begin(), events.end(),
                       [](const SessionEvent& e) { return e.kind == EventKind::Paused; });
}

// ---------------------------------------------------------------------------
// Exports

inline std::string tracking_csv(const TrackResults& results) {
  return io::format_tracking_csv(io::tracking_rows(results));
}

inline std::string tracked_csv(const TrackResults& results, const VideoSource& video,
                               int search_radius) {
  return io::format_tracked_csv(io::tracked_rows(results, &video, search_radius));
}

inline std::string labelme_text(const LabeledFrame& frame, int width, int height) {
  return io::to_labelme_json(frame, width, height, frame_file_name(frame.frame_index)).dump(2) + "\n";
}

// Uncompressed zip archive with fixed timestamps.
inline std::string zip_store(const std::vector<std::pair<std::string, std::string>>& entries) {
  std::string out, central;
  auto u16 = [](std::string& s, std::uint32_t v) {
    s.push_back(static_cast<char>(v & 0xff));
    s.push_back(static_cast<char>((v >> 8) & 0xff));
  };
  auto u32 = [&](std::string& s, std::uint32_t v) {
    u16(s, v & 0xffff);
    u16(s, v >> 16);
  };
  constexpr std::uint32_t kDosDate = (0 << 9) | (1 << 5) | 1;  // 1980-01-01
  for (const auto& [name, data] : entries) {
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size())));
    const auto size = static_cast<std::uint32_t>(data.size());
    const auto offset = static_cast<std::uint32_t>(out.size());
    u32(out, 0x04034b50);
    u16(out, 20), u16(out, 0), u16(out, 0), u16(out, 0), u16(out, kDosDate);
    u32(out, crc), u32(out, size), u32(out, size);
    u16(out, static_cast<std::uint32_t>(name.size())), u16(out, 0);
    out += name;
    out += data;
    u32(central, 0x02014b50);
    u16(central, 20), u16(central, 20), u16(central, 0), u16(central, 0), u16(central, 0),
        u16(central, kDosDate);
    u32(central, crc), u32(central, size), u32(central, size);
    u16(central, static_cast<std::uint32_t>(name.size()));
    u16(central, 0), u16(central, 0), u16(central, 0), u16(central, 0);
    u32(central, 0), u32(central, offset);
    central += name;
  }
  const auto cd_offset = static_cast<std::uint32_t>(out.size());
  out += central;
  u32(out, 0x06054b50);
  u16(out, 0), u16(out, 0);
  u16(out, static_cast<std::uint32_t>(entries.size())), u16(out, static_cast<std::uint32_t>(entries.size()));
  u32(out, static_cast<std::uint32_t>(central.size())), u32(out, cd_offset);
  u16(out, 0);
  return out;
}

// LabelMe files of every stored frame, keyed by file name.
inline std::vector<std::pair<std::string, std::string>> labelme_files(const Session& session) {
  std::vector<std::pair<std::string, std::string>> out;
  const auto& v = session.video();
  for (auto i : session.annotated_frames())
    if (auto a = session.annotation(i))
      out.emplace_back(io::json_filename(v.name(), i), labelme_text(*a, v.width(), v.height()));
  return out;
}

enum class ExportFormat { TrackingCsv, TrackedCsv, LabelMeZip };

inline ExportFormat parse_format(const std::string& s) {
  if (s == "tracking_csv") return ExportFormat::TrackingCsv;
  if (s == "tracked_csv") return ExportFormat::TrackedCsv;
  if (s == "labelme_zip") return ExportFormat::LabelMeZip;
  throw Error(ErrorKind::InvalidArgument, "unknown export format: " + s);
}

inline std::string export_file_name(const std::string& video_name, ExportFormat f) {
  switch (f) {
    case ExportFormat::TrackingCsv: return io::tracking_csv_name(video_name);
    case ExportFormat::TrackedCsv: return io::tracked_csv_name(video_name);
    case ExportFormat::LabelMeZip: return video_name + "_labelme.zip";
  }
  return video_name;
}

inline std::string export_bytes(const Session& session, ExportFormat f) {
  switch (f) {
    case ExportFormat::TrackingCsv: return tracking_csv(session.snapshot());
    case ExportFormat::TrackedCsv:
      return tracked_csv(session.snapshot(), session.video(), session.params().search_radius);
    case ExportFormat::LabelMeZip: return zip_store(labelme_files(session));
  }
  return {};
}

// ---------------------------------------------------------------------------
// Session directories

struct SessionRecord {
  std::string video_path;
  std::string video_name;
  std::int64_t frame_count{0};
  AdvancedParams params;
  SessionState state;
  std::int64_t paused_events{0};
  std::vector<std::int64_t> ground_truth, corrected;
};

inline fs::path session_dir(const fs::path& out, const std::string& video_name) { return out / video_name; }

inline void write_session_dir(const Session& session, const std::string& video_path, const fs::path& dir) {
  fs::create_directories(dir);
  const auto& v = session.video();
  for (const auto& [name, text] : labelme_files(session)) io::write_text(dir / name, text);
  const auto results = session.snapshot();
  io::write_text(dir / io::tracking_csv_name(v.name()), tracking_csv(results));
  io::write_text(dir / io::tracked_csv_name(v.name()), tracked_csv(results, v, session.params().search_radius));
  nlohmann::json j = {
      {"video", video_path},
      {"video_name", v.name()},
      {"frame_count", v.frame_count()},
      {"params", to_json(session.params())},
      {"state", to_json(session.state())},
      {"paused_events", count_paused(session.poll_events(0))},
      {"ground_truth", session.annotated_frames(AnnotationSource::GroundTruth)},
      {"corrected", session.annotated_frames(AnnotationSource::Corrected)}};
  io::write_text(dir / "session.json", j.dump(2) + "\n");
}

inline SessionRecord read_session_record(const fs::path& dir) {
  const auto path = dir / "session.json";
  if (!fs::exists(path)) throw Error(ErrorKind::NotFound, "no session.json in " + dir.string());
  try {
    const auto j = nlohmann::json::parse(io::read_text(path));
    SessionRecord r;
    r.video_path = j.at("video").get<std::string>();
    r.video_name = j.at("video_name").get<std::string>();
    r.frame_count = j.at("frame_count").get<std::int64_t>();
    r.params = params_from_json(j.at("params"));
    r.paused_events = j.value("paused_events", std::int64_t{0});
    r.ground_truth = j.value("ground_truth", std::vector<std::int64_t>{});
    r.corrected = j.value("corrected", std::vector<std::int64_t>{});
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Format, "bad session.json in " + dir.string() + ": " + e.what());
  }
}

inline TrackResults results_from_table(const io::TrackingTable& table, const VideoSource& video) {
  TrackResults r{video.name(), video.fps(), video.width(), video.height(), {}};
  for (const auto& [t, masks] : table.masks) {
    for (const auto& [l, m] : masks)
      if (m.width != video.width() || m.height != video.height())
        throw Error(ErrorKind::Format, "tracking CSV mask size differs from the video");
    r.frames[t] = FrameResult{AnnotationSource::Predicted, masks};
  }
  return r;
}

// Re-creates an export from a session directory; bytes match export_bytes
// on the live session.
inline std::string export_from_dir(const fs::path& dir, ExportFormat f) {
  const auto rec = read_session_record(dir);
  if (f == ExportFormat::LabelMeZip) {
    std::vector<std::pair<std::string, std::string>> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      const auto name = e.path().filename().string();
      if (e.path().extension() == ".json" && name != "session.json" && io::frame_from_filename(name))
        files.emplace_back(name, io::read_text(e.path()));
    }
    std::sort(files.begin(), files.end());
    return zip_store(files);
  }
  const auto csv = io::read_text(dir / io::tracking_csv_name(rec.video_name));
  if (f == ExportFormat::TrackingCsv) return csv;
  const auto video = open_video(rec.video_path);
  return tracked_csv(results_from_table(io::parse_tracking_csv(csv), *video), *video,
                     rec.params.search_radius);
}

// ---------------------------------------------------------------------------
// Tracking run (CLI `track`)

struct TrackOutcome {
  SessionState state;
  std::vector<SessionEvent> events;
  fs::path dir;
};

inline TrackOutcome track(const std::string& video_path, const fs::path& init_json,
                          const AdvancedParams& params, const fs::path& out) {
  auto video = open_video(video_path);
  auto doc = io::read_labelme(init_json);
  if (doc.image_width != video->width() || doc.image_height != video->height())
    throw Error(ErrorKind::InvalidArgument, "init annotation size differs from the video");
  const auto start = doc.frame.frame_index;
  Session session(video, params);
  session.set_annotation(start, doc.frame);
  session.start_prediction(start);
  session.wait_until_settled();
  TrackOutcome r{session.state(), session.poll_events(0), session_dir(out, video->name())};
  write_session_dir(session, video_path, r.dir);
  return r;
}

// ---------------------------------------------------------------------------
// Synthetic scenes on disk

inline void write_scene(const synth::SceneSpec& scene, const fs::path& dir, double epsilon = 2.0,
                        int min_area = 10) {
  scene.validate();
  fs::create_directories(dir / "frames");
  fs::create_directories(dir / "truth");
  fs::create_directories(dir / "init");
  nlohmann::json meta = {{"name", scene.name},
                         {"fps", {scene.fps.num, scene.fps.den}},
                         {"width", scene.width},
                         {"height", scene.height},
                         {"frame_count", scene.frame_count}};
  io::write_text(dir / "video.json", meta.dump(2) + "\n");
  io::write_text(dir / "scene.json", synth::to_json(scene).dump(2) + "\n");
  TrackResults truth{scene.name, scene.fps, scene.width, scene.height, {}};
  for (std::int64_t t = 0; t < scene.frame_count; ++t) {
    auto [frame, masks] = synth::render(scene, t);
    png::write_file(dir / "frames" / frame_file_name(t), png::encode(frame));
    FrameResult fr{AnnotationSource::GroundTruth, {}};
    for (const auto& [name, m] : masks) fr.masks.emplace(parse_label(name), rle::encode_counts(m));
    if (t == 0) {
      LabeledFrame init;
      init.frame_index = 0;
      init.source = AnnotationSource::GroundTruth;
      for (const auto& [name, m] : masks) {
        auto polys = mask_to_polygons({parse_label(name), m}, epsilon, min_area);
        if (!polys.empty()) init.annotations[parse_label(name)].polygons = std::move(polys);
      }
      io::write_text(dir / "init" / io::json_filename(scene.name, 0),
                     labelme_text(init, scene.width, scene.height));
    }
    truth.frames.emplace(t, std::move(fr));
  }
  io::write_text(dir / "truth" / io::tracking_csv_name(scene.name), tracking_csv(truth));
}

// ---------------------------------------------------------------------------
// Evaluation inputs

// Per-frame masks from a session directory or a scene directory.
struct MaskSet {
  std::vector<synth::FrameMasks> frames;
  std::int64_t paused_events{0};
};

inline MaskSet load_masks(const fs::path& dir) {
  std::string name;
  std::int64_t frame_count = 0;
  fs::path csv;
  MaskSet set;
  if (fs::exists(dir / "session.json")) {
    const auto rec = read_session_record(dir);
    name = rec.video_name;
    frame_count = rec.frame_count;
    set.paused_events = rec.paused_events;
    csv = dir / io::tracking_csv_name(name);
  } else if (fs::exists(dir / "video.json")) {
    const auto j = nlohmann::json::parse(io::read_text(dir / "video.json"));
    name = j.at("name").get<std::string>();
    frame_count = j.at("frame_count").get<std::int64_t>();
    csv = dir / "truth" / io::tracking_csv_name(name);
  } else {
    throw Error(ErrorKind::NotFound, dir.string() + " is neither a session nor a scene directory");
  }
  const auto table = io::read_tracking_csv(csv);
  set.frames.resize(static_cast<std::size_t>(frame_count));
  for (const auto& [t, masks] : table.masks) {
    if (t < 0 || t >= frame_count) throw Error(ErrorKind::Format, "frame " + std::to_string(t) + " out of range");
    for (const auto& [l, m] : masks) set.frames[static_cast<std::size_t>(t)][l.display()] = m;
  }
  return set;
}

inline synth::EvalReport evaluate_dirs(const fs::path& pred, const fs::path& truth, double threshold = 0.5) {
  const auto p = load_masks(pred);
  const auto g = load_masks(truth);
  auto rep = synth::evaluate(p.frames, g.frames, threshold);
  rep.paused_events = p.paused_events;
  return rep;
}

}  // namespace annotrack::project
