// annotrack command line: synth, autolabel, track, export, eval, convert, serve.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <nlohmann/json.hpp>

#include "annotrack/annotation_io.hpp"
#include "annotrack/geometry.hpp"
#include "annotrack/png.hpp"
#include "annotrack/project.hpp"
#include "annotrack/propagation.hpp"
#include "annotrack/rle.hpp"
#include "annotrack/service.hpp"
#include "annotrack/synth.hpp"
#include "annotrack/video.hpp"

namespace fs = std::filesystem;
using namespace annotrack;

namespace {

constexpr int kExitPaused = 3;

const char* kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::InvalidArgument: return "invalid_argument";
    case ErrorKind::Format: return "format";
    case ErrorKind::Corrupt: return "corrupt";
    case ErrorKind::Precondition: return "precondition";
    case ErrorKind::Busy: return "busy";
    case ErrorKind::NotFound: return "not_found";
    case ErrorKind::Io: return "io";
  }
  return "error";
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::InvalidArgument:
    case ErrorKind::Format: return 2;
    case ErrorKind::NotFound: return 4;
    case ErrorKind::Corrupt: return 5;
    default: return 1;
  }
}

struct ParamFlags {
  std::string file;
  std::optional<double> epsilon, conf, tau;
  std::optional<int> mem_every, t_max, min_area, radius;
  bool no_auto_pause{false};
  bool no_recovery{false};

  void add(CLI::App* app) {
    app->add_option("--params", file, "JSON file with advanced parameters");
    app->add_option("--epsilon", epsilon, "polygon simplification tolerance (px)");
    app->add_option("--mem-every", mem_every, "memorize every r-th frame");
    app->add_option("--t-max", t_max, "working memory capacity");
    app->add_option("--conf-threshold", conf);
    app->add_option("--min-area", min_area);
    app->add_option("--tau-color", tau);
    app->add_option("--search-radius", radius);
    app->add_flag("--no-auto-pause", no_auto_pause);
    app->add_flag("--no-recovery", no_recovery);
  }

  AdvancedParams resolve() const {
    AdvancedParams p;
    if (!file.empty()) p = project::params_from_json(nlohmann::json::parse(io::read_text(file)));
    if (epsilon) p.epsilon = *epsilon;
    if (mem_every) p.mem_every = *mem_every;
    if (t_max) p.t_max = *t_max;
    if (conf) p.conf_threshold = *conf;
    if (min_area) p.min_area = *min_area;
    if (tau) p.tau_color = *tau;
    if (radius) p.search_radius = *radius;
    if (no_auto_pause) p.auto_pause = false;
    if (no_recovery) p.recovery_enabled = false;
    p.validate();
    return p;
  }
};

void write_output(const std::string& path, const std::string& bytes) {
  if (path.empty() || path == "-") {
    std::cout << bytes;
    return;
  }
  io::write_text(path, bytes);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"annotrack: multi-instance video annotation and tracking"};
  app.require_subcommand(1);
  app.fallthrough();
  bool json_mode = false;
  app.add_flag("--json", json_mode, "JSON output; errors as JSON on stderr");

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic scene (video, truth, init annotation)");
  std::string preset, spec_file, synth_out;
  auto* preset_opt = synth_cmd->add_option("--preset", preset, "basic|occlusion|exit_reenter|fast_motion|crowded");
  synth_cmd->add_option("--spec", spec_file, "scene spec JSON")->excludes(preset_opt);
  synth_cmd->add_option("--out", synth_out)->required();

  // autolabel
  auto* auto_cmd = app.add_subcommand("autolabel", "label every foreground blob in one frame");
  std::string auto_video, prompt, auto_out;
  std::int64_t auto_frame = 0;
  ParamFlags auto_params;
  auto_cmd->add_option("--video", auto_video)->required();
  auto_cmd->add_option("--prompt", prompt)->required();
  auto_cmd->add_option("--frame", auto_frame);
  auto_cmd->add_option("--out", auto_out)->required();
  auto_params.add(auto_cmd);

  // track
  auto* track_cmd = app.add_subcommand("track", "predict from an initial annotation until done or paused");
  std::string track_video, init, track_out;
  ParamFlags track_params;
  track_cmd->add_option("--video", track_video)->required();
  track_cmd->add_option("--init", init, "LabelMe JSON; frame index taken from the file name")->required();
  track_cmd->add_option("--out", track_out)->required();
  track_params.add(track_cmd);

  // export
  auto* export_cmd = app.add_subcommand("export", "write an export from a session directory");
  std::string export_session, export_format, export_out;
  export_cmd->add_option("--session", export_session)->required();
  export_cmd->add_option("--format", export_format)
      ->required()
      ->check(CLI::IsMember({"tracking_csv", "tracked_csv", "labelme_zip"}));
  export_cmd->add_option("--out", export_out, "output file (default: inside the session directory)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "score a session directory against scene ground truth");
  std::string eval_pred, eval_truth;
  double threshold = 0.5;
  eval_cmd->add_option("--pred", eval_pred)->required();
  eval_cmd->add_option("--truth", eval_truth)->required();
  eval_cmd->add_option("--threshold", threshold, "IoU needed for a match");

  // convert
  auto* convert_cmd = app.add_subcommand("convert", "format utilities");
  convert_cmd->require_subcommand(1);
  auto* m2p = convert_cmd->add_subcommand("mask2poly", "binary mask PNG to LabelMe polygons");
  std::string m2p_mask, m2p_label = "object", m2p_out;
  double m2p_eps = 2.0;
  int m2p_min_area = 10;
  m2p->add_option("--mask", m2p_mask)->required();
  m2p->add_option("--label", m2p_label);
  m2p->add_option("--epsilon", m2p_eps);
  m2p->add_option("--min-area", m2p_min_area);
  m2p->add_option("--out", m2p_out);
  auto* p2m = convert_cmd->add_subcommand("poly2mask", "LabelMe JSON to one mask PNG per instance");
  std::string p2m_json, p2m_out;
  p2m->add_option("--labelme", p2m_json)->required();
  p2m->add_option("--out", p2m_out, "output directory")->required();
  auto* rt = convert_cmd->add_subcommand("rle-roundtrip", "encode/decode a mask PNG or a tracking CSV");
  std::string rt_mask, rt_csv;
  auto* rt_mask_opt = rt->add_option("--mask", rt_mask);
  rt->add_option("--csv", rt_csv)->excludes(rt_mask_opt);

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "start the HTTP service");
  int port = 8080;
  std::string host = "127.0.0.1", data = ".";
  serve_cmd->add_option("--port", port);
  serve_cmd->add_option("--host", host);
  serve_cmd->add_option("--data", data, "base directory for relative video paths");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth_cmd) {
      if (preset.empty() && spec_file.empty()) throw Error(ErrorKind::InvalidArgument, "need --preset or --spec");
      const auto scene = preset.empty()
                             ? synth::scene_from_json(nlohmann::json::parse(io::read_text(spec_file)))
                             : synth::preset(preset);
      project::write_scene(scene, synth_out);
      std::cout << "wrote " << scene.frame_count << " frames to " << synth_out << "\n";
      return 0;
    }

    if (*auto_cmd) {
      const auto video = open_video(auto_video);
      const auto params = auto_params.resolve();
      const auto labeled = autolabel(*video->frame(auto_frame), prompt, params);
      if (labeled.empty()) throw Error(ErrorKind::Precondition, "no instances found for prompt '" + prompt + "'");
      io::write_text(auto_out, project::labelme_text(labeled, video->width(), video->height()));
      std::cout << labeled.annotations.size() << " instances\n";
      return 0;
    }

    if (*track_cmd) {
      const auto outcome = project::track(track_video, init, track_params.resolve(), track_out);
      std::cout << "session " << outcome.dir.string() << "\n";
      if (outcome.state.status == SessionStatus::Completed) {
        std::cout << "completed through frame " << outcome.state.frame << "\n";
        return 0;
      }
      for (const auto& e : outcome.events)
        if (e.kind == EventKind::Paused)
          std::cout << "paused at frame " << e.frame << " instance " << e.instance << " cause "
                    << to_string(e.cause) << "\n";
        else if (e.kind == EventKind::Failed)
          throw Error(ErrorKind::Io, "prediction failed at frame " + std::to_string(e.frame) + ": " + e.message);
      return outcome.state.status == SessionStatus::Paused ? kExitPaused : 1;
    }

    if (*export_cmd) {
      const auto format = project::parse_format(export_format);
      const auto rec = project::read_session_record(export_session);
      const auto path = export_out.empty()
                            ? (fs::path(export_session) / project::export_file_name(rec.video_name, format)).string()
                            : export_out;
      write_output(path, project::export_from_dir(export_session, format));
      if (path != "-") std::cout << "wrote " << path << "\n";
      return 0;
    }

    if (*eval_cmd) {
      const auto rep = project::evaluate_dirs(eval_pred, eval_truth, threshold);
      if (json_mode) {
        std::cout << synth::to_json(rep).dump(2) << "\n";
      } else {
        for (const auto& [l, v] : rep.mean_iou) std::printf("%-16s mean IoU %.4f\n", l.c_str(), v);
        std::printf("identity switches %lld\nmissed frames %lld\npaused events %lld\n",
                    static_cast<long long>(rep.identity_switches), static_cast<long long>(rep.missed_frames),
                    static_cast<long long>(rep.paused_events));
      }
      return 0;
    }

    if (*m2p) {
      const auto mask = png::decode_mask(png::read_file(m2p_mask));
      const auto label = parse_label(m2p_label);
      LabeledFrame f;
      f.frame_index = io::frame_from_filename(fs::path(m2p_mask).filename().string()).value_or(0);
      auto polys = mask_to_polygons({label, mask}, m2p_eps, m2p_min_area);
      if (!polys.empty()) f.annotations[label].polygons = std::move(polys);
      write_output(m2p_out, project::labelme_text(f, mask.width(), mask.height()));
      return 0;
    }

    if (*p2m) {
      const auto doc = io::read_labelme(p2m_json);
      fs::create_directories(p2m_out);
      for (const auto& [label, m] : io::annotation_masks(doc.frame, doc.image_width, doc.image_height)) {
        const auto path = fs::path(p2m_out) / (label.display() + ".png");
        png::write_file(path, png::encode_mask(m));
        std::cout << path.string() << " area " << m.area() << "\n";
      }
      return 0;
    }

    if (*rt) {
      if (!rt_mask.empty()) {
        const auto mask = png::decode_mask(png::read_file(rt_mask));
        const auto rec = rle::to_record(mask);
        const bool exact = rle::from_record(rle::parse_record(rle::format_record(rec))) == mask;
        std::cout << rle::format_record(rec) << "\n" << (exact ? "roundtrip exact" : "roundtrip MISMATCH") << "\n";
        return exact ? 0 : 5;
      }
      if (!rt_csv.empty()) {
        const auto text = io::read_text(rt_csv);
        const auto table = io::parse_tracking_csv(text);
        const bool exact = io::format_tracking_csv(table.rows) == text;
        std::cout << table.rows.size() << " rows, " << (exact ? "roundtrip exact" : "roundtrip MISMATCH") << "\n";
        return exact ? 0 : 5;
      }
      throw Error(ErrorKind::InvalidArgument, "need --mask or --csv");
    }

    if (*serve_cmd) {
      httplib::Server server;
      service::Service svc(data);
      svc.mount(server);
      std::cout << "listening on " << host << ":" << port << std::endl;
      if (!server.listen(host, port)) throw Error(ErrorKind::Io, "cannot listen on " + host + ":" + std::to_string(port));
      return 0;
    }
  } catch (const Error& e) {
    if (json_mode)
      std::cerr << nlohmann::json{{"error", kind_name(e.kind())}, {"message", e.what()}}.dump() << "\n";
    else
      std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    if (json_mode)
      std::cerr << nlohmann::json{{"error", "internal"}, {"message", e.what()}}.dump() << "\n";
    else
      std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
