#pragma once

// HTTP facade over sessions. Each route maps onto one Session operation;
// errors are JSON bodies {"code": <http status>, "message": ...}.

#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include <nlohmann/json.hpp>

#include "annotrack/annotation_io.hpp"
#include "annotrack/png.hpp"
#include "annotrack/project.hpp"
#include "annotrack/propagation.hpp"
#include "annotrack/session.hpp"
#include "annotrack/synth.hpp"
#include "annotrack/video.hpp"

namespace annotrack::service {

using nlohmann::json;

inline int http_status(ErrorKind k) {
  switch (k) {
    case ErrorKind::InvalidArgument:
    case ErrorKind::Format: return 400;
    case ErrorKind::NotFound: return 404;
    case ErrorKind::Busy: return 409;
    case ErrorKind::Precondition: return 412;
    case ErrorKind::Corrupt: return 422;
    case ErrorKind::Io: return 500;
  }
  return 500;
}

class Service {
 public:
  static constexpr std::chrono::milliseconds kMaxPoll{25000};

  explicit Service(std::filesystem::path data_dir = ".") : data_dir_(std::move(data_dir)) {}

  void mount(httplib::Server& server) {
    server.set_payload_max_length(64 << 20);
    server.Post("/sessions", wrap([this](auto& req, auto& res) { create(req, res); }));
    server.Get("/sessions/:id", wrap([this](auto& req, auto& res) { reply(res, 200, view(req)); }));
    server.Get("/sessions/:id/frames/:n", wrap([this](auto& req, auto& res) { frame(req, res); }));
    server.Get("/sessions/:id/frames/:n/annotations",
               wrap([this](auto& req, auto& res) { get_annotation(req, res); }));
    server.Put("/sessions/:id/frames/:n/annotations",
               wrap([this](auto& req, auto& res) { put_annotation(req, res); }));
    server.Post("/sessions/:id/autolabel", wrap([this](auto& req, auto& res) { autolabel_route(req, res); }));
    server.Post("/sessions/:id/point_prompt", wrap([this](auto& req, auto& res) { point_route(req, res); }));
    server.Post("/sessions/:id/predict", wrap([this](auto& req, auto& res) { predict(req, res); }));
    server.Post("/sessions/:id/stop", wrap([this](auto& req, auto& res) {
      lookup(req).session->stop();
      reply(res, 200, view(req));
    }));
    server.Put("/sessions/:id/params", wrap([this](auto& req, auto& res) { put_params(req, res); }));
    server.Get("/sessions/:id/events", wrap([this](auto& req, auto& res) { events(req, res); }));
    server.Get("/sessions/:id/export", wrap([this](auto& req, auto& res) { export_route(req, res); }));
  }

 private:
  struct Entry {
    std::string id;
    std::string source;
    std::shared_ptr<Session> session;
  };

  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  static void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void fail(httplib::Response& res, int status, const std::string& message) {
    reply(res, status, {{"code", status}, {"message", message}});
  }

  static Handler wrap(Handler h) {
    return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
      try {
        h(req, res);
      } catch (const Error& e) {
        fail(res, http_status(e.kind()), e.what());
      } catch (const json::exception& e) {
        fail(res, 400, std::string("bad JSON: ") + e.what());
      } catch (const std::exception& e) {
        fail(res, 500, e.what());
      }
    };
  }

  static json body_json(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
      return json::parse(req.body);
    } catch (const json::exception& e) {
      throw Error(ErrorKind::InvalidArgument, std::string("request body is not JSON: ") + e.what());
    }
  }

  static std::int64_t int_param(const std::string& text, const char* what) {
    try {
      std::size_t used = 0;
      const auto v = std::stoll(text, &used);
      if (used == text.size()) return v;
    } catch (const std::exception&) {
    }
    throw Error(ErrorKind::InvalidArgument, std::string("bad ") + what + ": " + text);
  }

  Entry lookup(const httplib::Request& req) const {
    std::lock_guard lock(mu_);
    auto it = sessions_.find(req.path_params.at("id"));
    if (it == sessions_.end()) throw Error(ErrorKind::NotFound, "unknown session " + req.path_params.at("id"));
    return it->second;
  }

  json view(const Entry& e) const {
    const auto& s = *e.session;
    const auto& v = s.video();
    const auto last = s.last_predicted();
    return {{"id", e.id},
            {"source", e.source},
            {"video_name", v.name()},
            {"state", project::to_json(s.state())},
            {"frame_count", v.frame_count()},
            {"width", v.width()},
            {"height", v.height()},
            {"fps", {v.fps().num, v.fps().den}},
            {"params", project::to_json(s.params())},
            {"last_predicted", last ? json(*last) : json(nullptr)},
            {"annotations",
             {{"ground_truth", s.annotated_frames(AnnotationSource::GroundTruth)},
              {"corrected", s.annotated_frames(AnnotationSource::Corrected)},
              {"predicted", s.annotated_frames(AnnotationSource::Predicted)}}}};
  }
  json view(const httplib::Request& req) const { return view(lookup(req)); }

  void create(const httplib::Request& req, httplib::Response& res) {
    const auto body = body_json(req);
    std::shared_ptr<VideoSource> video;
    std::string source;
    if (body.contains("source")) {
      source = body.at("source").get<std::string>();
      std::filesystem::path p(source);
      video = open_video(p.is_absolute() ? p : data_dir_ / p);
    } else if (body.contains("scene_spec") || body.contains("preset")) {
      const auto scene = body.contains("scene_spec") ? synth::scene_from_json(body["scene_spec"])
                                                      : synth::preset(body["preset"].get<std::string>());
      auto generated = synth::generate(scene);
      video = synth::to_video(scene, generated);
      source = "scene:" + scene.name;
    } else {
      throw Error(ErrorKind::InvalidArgument, "need 'source', 'scene_spec' or 'preset'");
    }
    const auto params = project::params_from_json(body.value("params", json::object()));
    Entry e{"", source, std::make_shared<Session>(video, params)};
    {
      std::lock_guard lock(mu_);
      e.id = "s" + std::to_string(++next_id_);
      sessions_.emplace(e.id, e);
    }
    reply(res, 201, view(e));
  }

  void frame(const httplib::Request& req, httplib::Response& res) {
    const auto e = lookup(req);
    const auto n = int_param(req.path_params.at("n"), "frame index");
    const auto bytes = png::encode(*e.session->video().frame(n));
    res.status = 200;
    res.set_content(std::string(bytes.begin(), bytes.end()), "image/png");
  }

  static std::string labelme_body(const Session& s, const LabeledFrame& f) {
    return project::labelme_text(f, s.video().width(), s.video().height());
  }

  void get_annotation(const httplib::Request& req, httplib::Response& res) {
    const auto e = lookup(req);
    const auto n = int_param(req.path_params.at("n"), "frame index");
    if (n < 0 || n >= e.session->video().frame_count())
      throw Error(ErrorKind::NotFound, "frame " + std::to_string(n) + " out of range");
    LabeledFrame f;
    f.frame_index = n;
    if (auto a = e.session->annotation(n)) f = *a;
    res.status = 200;
    res.set_content(labelme_body(*e.session, f), "application/json");
  }

  void put_annotation(const httplib::Request& req, httplib::Response& res) {
    const auto e = lookup(req);
    const auto n = int_param(req.path_params.at("n"), "frame index");
    auto doc = io::from_labelme_json(body_json(req), n);
    const auto& v = e.session->video();
    if (doc.image_width != v.width() || doc.image_height != v.height())
      throw Error(ErrorKind::InvalidArgument, "imageWidth/imageHeight differ from the video");
    e.session->set_annotation(n, doc.frame);
    res.status = 200;
    res.set_content(labelme_body(*e.session, *e.session->annotation(n)), "application/json");
  }

  void autolabel_route(const httplib::Request& req, httplib::Response& res) {
    const auto e = lookup(req);
    const auto body = body_json(req);
    const auto n = body.value("frame", std::int64_t{0});
    const auto prompt = body.at("prompt").get<std::string>();
    auto labeled = autolabel(*e.session->video().frame(n), prompt, e.session->params());
    if (labeled.empty()) return fail(res, 422, "no instances found for prompt '" + prompt + "'");
    e.session->set_annotation(n, labeled);
    res.status = 200;
    res.set_content(labelme_body(*e.session, *e.session->annotation(n)), "application/json");
  }

  void point_route(const httplib::Request& req, httplib::Response& res) {
    const auto e = lookup(req);
    const auto body = body_json(req);
    const auto n = body.value("frame", std::int64_t{0});
    auto poly = point_prompt(*e.session->video().frame(n), body.at("x").get<int>(), body.at("y").get<int>(),
                             e.session->params());
    LabeledFrame f;
    f.frame_index = n;
    if (auto a = e.session->annotation(n)) f = *a;
    poly.label = body.contains("label") ? parse_label(body["label"].get<std::string>())
                                        : next_label("object", f.labels());
    f.annotations[poly.label].polygons.push_back(poly);
    e.session->set_annotation(n, f);
    res.status = 200;
    res.set_content(labelme_body(*e.session, *e.session->annotation(n)), "application/json");
  }

  void predict(const httplib::Request& req, httplib::Response& res) {
    const auto e = lookup(req);
    const auto body = body_json(req);
    e.session->start_prediction(body.value("from_frame", std::int64_t{0}));
    reply(res, 202, view(e));
  }

  void put_params(const httplib::Request& req, httplib::Response& res) {
    const auto e = lookup(req);
    if (e.session->state().status == SessionStatus::Predicting)
      throw Error(ErrorKind::Busy, "cannot change parameters while predicting");
    e.session->set_params(project::params_from_json(body_json(req), e.session->params()));
    reply(res, 200, view(e));
  }

  void events(const httplib::Request& req, httplib::Response& res) {
    const auto e = lookup(req);
    const auto since = req.has_param("since") ? int_param(req.get_param_value("since"), "since") : 0;
    if (since < 0) throw Error(ErrorKind::InvalidArgument, "since must be >= 0");
    auto timeout = kMaxPoll;
    if (req.has_param("timeout_ms"))
      timeout = std::clamp(std::chrono::milliseconds(int_param(req.get_param_value("timeout_ms"), "timeout_ms")),
                           std::chrono::milliseconds(0), kMaxPoll);
    json out = json::array();
    for (const auto& ev : e.session->wait_events(static_cast<std::uint64_t>(since), timeout))
      out.push_back(project::to_json(ev));
    reply(res, 200, out);
  }

  void export_route(const httplib::Request& req, httplib::Response& res) {
    const auto e = lookup(req);
    const auto format = project::parse_format(req.has_param("format") ? req.get_param_value("format") : "");
    const auto name = project::export_file_name(e.session->video().name(), format);
    res.status = 200;
    res.set_header("Content-Disposition", "attachment; filename=\"" + name + "\"");
    res.set_content(project::export_bytes(*e.session, format),
                    format == project::ExportFormat::LabelMeZip ? "application/zip" : "text/csv");
  }

  std::filesystem::path data_dir_;
  mutable std::mutex mu_;
  std::map<std::string, Entry> sessions_;
  std::uint64_t next_id_{0};
};

}  // namespace annotrack::service
