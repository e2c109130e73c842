#pragma once

// Human-in-the-loop prediction session.
//
// A session owns the video, the parameters and every stored annotation. One
// worker thread at most runs the prediction loop; commands are serialized and
// observed by the worker between frames. Events are appended to a log with
// monotone sequence numbers.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "annotrack/annotation_io.hpp"
#include "annotrack/core.hpp"
#include "annotrack/geometry.hpp"
#include "annotrack/memory.hpp"
#include "annotrack/propagation.hpp"
#include "annotrack/rle.hpp"
#include "annotrack/video.hpp"

namespace annotrack {

enum class SessionStatus { Idle, Predicting, Paused, Completed };
enum class PauseCause { None, Missing, LowConfidence, UserStop };
enum class EventKind { Progress, Paused, Stopped, Truncated, Completed, Failed };

inline const char* to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::Idle: return "idle";
    case SessionStatus::Predicting: return "predicting";
    case SessionStatus::Paused: return "paused";
    case SessionStatus::Completed: return "completed";
  }
  return "unknown";
}

inline const char* to_string(PauseCause c) {
  switch (c) {
    case PauseCause::None: return "none";
    case PauseCause::Missing: return "missing";
    case PauseCause::LowConfidence: return "low_confidence";
    case PauseCause::UserStop: return "user_stop";
  }
  return "unknown";
}

inline const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::Progress: return "progress";
    case EventKind::Paused: return "paused";
    case EventKind::Stopped: return "stopped";
    case EventKind::Truncated: return "truncated";
    case EventKind::Completed: return "completed";
    case EventKind::Failed: return "failed";
  }
  return "unknown";
}

struct SessionState {
  SessionStatus status{SessionStatus::Idle};
  std::int64_t frame{-1};  // current, paused-at or last frame, by status
  PauseCause cause{PauseCause::None};
};

struct SessionEvent {
  std::uint64_t seq{0};
  EventKind kind{EventKind::Progress};
  std::int64_t frame{-1};
  std::string instance;  // Paused only
  PauseCause cause{PauseCause::None};
  std::string message;  // Failed only
};

// An instance that could not be predicted or recovered.
struct TrackingFailure {
  std::int64_t frame{0};
  InstanceLabel label;
  PauseCause cause{PauseCause::Missing};
};

struct StoredFrame {
  AnnotationSource source{AnnotationSource::Predicted};
  LabeledFrame manual;        // GroundTruth / Corrected only
  Prediction prediction;      // Predicted only; status and confidence, masks dropped
  std::map<InstanceLabel, rle::RleCounts> masks;  // non-empty masks
};

class Session {
 public:
  Session(std::shared_ptr<const VideoSource> video, AdvancedParams params,
          std::shared_ptr<const PropagationBackend> backend = std::make_shared<ColorTemplateBackend>())
      : video_(std::move(video)), backend_(std::move(backend)), params_(params) {
    if (!video_) throw Error(ErrorKind::InvalidArgument, "session needs a video source");
    if (!video_->fps().valid()) throw Error(ErrorKind::Format, "video has no usable fps");
    params_.validate();
  }

  ~Session() { stop(); }

  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  const VideoSource& video() const { return *video_; }

  SessionState state() const {
    std::lock_guard lock(mu_);
    return state_;
  }

  AdvancedParams params() const {
    std::lock_guard lock(mu_);
    return params_;
  }

  std::optional<std::int64_t> last_predicted() const {
    std::lock_guard lock(mu_);
    return last_predicted_locked();
  }

  // Stores a manual annotation and drops every prediction after it.
  void set_annotation(std::int64_t frame_index, LabeledFrame frame) {
    std::lock_guard cmd(cmd_mu_);
    check_range(frame_index);
    if (frame.empty()) throw Error(ErrorKind::InvalidArgument, "annotation has no instances");
    auto masks = io::annotation_masks(frame, video_->width(), video_->height());
    std::erase_if(masks, [](const auto& kv) { return kv.second.empty(); });
    if (masks.empty()) throw Error(ErrorKind::InvalidArgument, "annotation rasterizes to nothing");

    std::lock_guard lock(mu_);
    if (state_.status == SessionStatus::Predicting)
      throw Error(ErrorKind::Busy, "prediction is running; stop it first");
    const bool any_manual = std::any_of(frames_.begin(), frames_.end(),
                                        [](const auto& kv) { return is_manual(kv.second.source); });
    frame.frame_index = frame_index;
    frame.source = any_manual ? AnnotationSource::Corrected : AnnotationSource::GroundTruth;
    truncate_after_locked(frame_index);
    StoredFrame sf;
    sf.source = frame.source;
    sf.manual = std::move(frame);
    sf.masks = rle::encode_all(masks);
    frames_[frame_index] = std::move(sf);
    emit_locked({0, EventKind::Truncated, frame_index + 1, {}, PauseCause::None, {}});
    state_ = {SessionStatus::Idle, frame_index, PauseCause::None};
    state_cv_.notify_all();
  }

  void set_params(const AdvancedParams& params) {
    std::lock_guard cmd(cmd_mu_);
    params.validate();
    std::lock_guard lock(mu_);
    if (state_.status == SessionStatus::Predicting)
      throw Error(ErrorKind::Busy, "cannot change parameters while predicting");
    params_ = params;
  }

  void start_prediction(std::int64_t from_frame) {
    std::lock_guard cmd(cmd_mu_);
    check_range(from_frame);
    {
      std::lock_guard lock(mu_);
      if (state_.status == SessionStatus::Predicting)
        throw Error(ErrorKind::Busy, "prediction already running");
      auto it = frames_.find(from_frame);
      if (it == frames_.end() || !is_manual(it->second.source))
        throw Error(ErrorKind::Precondition,
                    "no ground-truth or corrected annotation at frame " + std::to_string(from_frame));
    }
    if (worker_.joinable()) worker_.join();
    {
      std::lock_guard lock(mu_);
      if (truncate_after_locked(from_frame))
        emit_locked({0, EventKind::Truncated, from_frame + 1, {}, PauseCause::None, {}});
      state_ = {SessionStatus::Predicting, from_frame, PauseCause::None};
      stop_requested_ = false;
      state_cv_.notify_all();
    }
    worker_ = std::thread([this, from_frame] { run(from_frame); });
  }

  // Halts at the next frame boundary. No-op unless predicting.
  void stop() {
    std::lock_guard cmd(cmd_mu_);
    {
      std::lock_guard lock(mu_);
      if (state_.status == SessionStatus::Predicting) stop_requested_ = true;
    }
    if (worker_.joinable()) worker_.join();
  }

  std::vector<SessionEvent> poll_events(std::uint64_t since) const {
    std::lock_guard lock(mu_);
    return events_after_locked(since);
  }

  // Long-poll: returns as soon as events newer than `since` exist.
  std::vector<SessionEvent> wait_events(std::uint64_t since,
                                        std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mu_);
    events_cv_.wait_for(lock, timeout, [&] { return next_seq_ - 1 > since; });
    return events_after_locked(since);
  }

  // Blocks until the worker leaves Predicting; false on timeout.
  bool wait_until_settled(std::chrono::milliseconds timeout = std::chrono::hours(1)) const {
    std::unique_lock lock(mu_);
    return state_cv_.wait_for(lock, timeout,
                              [&] { return state_.status != SessionStatus::Predicting; });
  }

  std::vector<TrackingFailure> failures() const {
    std::lock_guard lock(mu_);
    return failures_;
  }

  std::vector<std::int64_t> annotated_frames(std::optional<AnnotationSource> source = {}) const {
    std::lock_guard lock(mu_);
    std::vector<std::int64_t> out;
    for (const auto& [k, sf] : frames_)
      if (!source || sf.source == *source) out.push_back(k);
    return out;
  }

  std::optional<StoredFrame> stored(std::int64_t frame_index) const {
    std::lock_guard lock(mu_);
    auto it = frames_.find(frame_index);
    if (it == frames_.end()) return std::nullopt;
    return it->second;
  }

  // Manual annotations verbatim; predictions as polygons at the current epsilon.
  std::optional<LabeledFrame> annotation(std::int64_t frame_index) const {
    std::lock_guard lock(mu_);
    auto it = frames_.find(frame_index);
    if (it == frames_.end()) return std::nullopt;
    if (is_manual(it->second.source)) return it->second.manual;
    return io::to_labeled_frame(frame_index, {it->second.source, it->second.masks},
                                params_.epsilon, params_.min_area);
  }

  TrackResults snapshot() const {
    std::lock_guard lock(mu_);
    TrackResults r{video_->name(), video_->fps(), video_->width(), video_->height(), {}};
    for (const auto& [k, sf] : frames_) r.frames.emplace(k, FrameResult{sf.source, sf.masks});
    return r;
  }

 private:
  struct LastSeen {
    BBox box;
    std::int64_t area{0};
  };

  void check_range(std::int64_t frame_index) const {
    if (frame_index < 0 || frame_index >= video_->frame_count())
      throw Error(ErrorKind::NotFound, "frame " + std::to_string(frame_index) + " out of range");
  }

  std::optional<std::int64_t> last_predicted_locked() const {
    for (auto it = frames_.rbegin(); it != frames_.rend(); ++it)
      if (it->second.source == AnnotationSource::Predicted) return it->first;
    return std::nullopt;
  }

  bool truncate_after_locked(std::int64_t frame_index) {
    const auto before = frames_.size();
    std::erase_if(frames_, [&](const auto& kv) {
      return kv.first > frame_index && kv.second.source == AnnotationSource::Predicted;
    });
    return frames_.size() != before;
  }

  void emit_locked(SessionEvent e) {
    e.seq = next_seq_++;
    events_.push_back(std::move(e));
    events_cv_.notify_all();
  }

  std::vector<SessionEvent> events_after_locked(std::uint64_t since) const {
    std::vector<SessionEvent> out;
    if (since >= events_.size()) return out;
    out.assign(events_.begin() + static_cast<std::ptrdiff_t>(since), events_.end());
    return out;
  }

  MemoryEntry make_entry(std::int64_t index, std::shared_ptr<const Frame> frame,
                         const std::map<InstanceLabel, Mask>& masks) const {
    MemoryEntry e{index, std::move(frame), {}};
    for (const auto& [l, m] : masks)
      if (!m.empty()) e.masks.emplace(l, m);
    return e;
  }

  void run(std::int64_t from) {
    try {
      run_loop(from);
    } catch (const std::exception& ex) {
      std::lock_guard lock(mu_);
      emit_locked({0, EventKind::Failed, state_.frame, {}, PauseCause::None, ex.what()});
      state_ = {SessionStatus::Idle, state_.frame, PauseCause::None};
      state_cv_.notify_all();
    }
  }

  void run_loop(std::int64_t from) {
    AdvancedParams params;
    std::map<InstanceLabel, Mask> start_masks;
    {
      std::lock_guard lock(mu_);
      params = params_;
      start_masks = rle::decode_all(frames_.at(from).masks);
    }
    MemoryBuffer memory(params.mem_every, params.t_max);
    std::map<InstanceLabel, LastSeen> last_seen;
    std::map<InstanceLabel, std::int64_t> reference_area;
    std::map<InstanceLabel, ColorModel> models;
    std::int64_t start = from;

    auto reset_memory = [&](std::int64_t index, const std::map<InstanceLabel, Mask>& masks) {
      memory.reset(make_entry(index, video_->frame(index), masks));
      models = build_color_models(memory.permanent());
      reference_area.clear();
      last_seen.clear();
      for (const auto& [l, m] : memory.permanent().masks) {
        reference_area[l] = m.area();
        last_seen[l] = {bbox(m), m.area()};
      }
      start = index;
    };
    reset_memory(from, start_masks);

    const std::int64_t n = video_->frame_count();
    for (std::int64_t t = from + 1; t < n; ++t) {
      std::optional<std::map<InstanceLabel, Mask>> manual;
      {
        std::lock_guard lock(mu_);
        if (stop_requested_) {
          const auto last = last_predicted_locked().value_or(from);
          emit_locked({0, EventKind::Stopped, last, {}, PauseCause::None, {}});
          state_ = {SessionStatus::Paused, last, PauseCause::UserStop};
          state_cv_.notify_all();
          return;
        }
        state_.frame = t;
        auto it = frames_.find(t);
        if (it != frames_.end() && is_manual(it->second.source)) manual = rle::decode_all(it->second.masks);
      }
      if (manual) {
        // A later manual frame governs everything after it.
        reset_memory(t, *manual);
        std::lock_guard lock(mu_);
        emit_locked({0, EventKind::Progress, t, {}, PauseCause::None, {}});
        continue;
      }

      const auto frame = video_->frame(t);
      Prediction pred = backend_->propagate(memory, *frame, params);
      std::vector<TrackingFailure> failed;
      resolve_absent(*frame, pred, models, last_seen, reference_area, params);
      for (const auto& [l, ip] : pred)
        if (ip.absent())
          failed.push_back({t, l,
                            ip.cause == AbsenceCause::LowConfidence ? PauseCause::LowConfidence
                                                                    : PauseCause::Missing});

      std::map<InstanceLabel, Mask> masks;
      for (const auto& [l, ip] : pred)
        if (!ip.absent()) {
          masks.emplace(l, ip.mask);
          last_seen[l] = {bbox(ip.mask), ip.mask.area()};
        }
      if (should_memorize(t, start, params.mem_every)) memory.push(make_entry(t, frame, masks));

      std::lock_guard lock(mu_);
      StoredFrame sf;
      sf.source = AnnotationSource::Predicted;
      sf.masks = rle::encode_all(masks);
      for (auto& [l, ip] : pred) ip.mask = Mask();
      sf.prediction = std::move(pred);
      frames_[t] = std::move(sf);
      emit_locked({0, EventKind::Progress, t, {}, PauseCause::None, {}});
      if (!failed.empty()) {
        failures_.insert(failures_.end(), failed.begin(), failed.end());
        if (params.auto_pause) {
          for (const auto& f : failed)
            emit_locked({0, EventKind::Paused, t, f.label.display(), f.cause, {}});
          state_ = {SessionStatus::Paused, t, failed.front().cause};
          state_cv_.notify_all();
          return;
        }
      }
    }
    std::lock_guard lock(mu_);
    emit_locked({0, EventKind::Completed, n - 1, {}, PauseCause::None, {}});
    state_ = {SessionStatus::Completed, n - 1, PauseCause::None};
    state_cv_.notify_all();
  }

  // Local recovery for each absent instance, then full-frame re-detection.
  static void resolve_absent(const Frame& frame, Prediction& pred,
                             const std::map<InstanceLabel, ColorModel>& models,
                             const std::map<InstanceLabel, LastSeen>& last_seen,
                             const std::map<InstanceLabel, std::int64_t>& reference_area,
                             const AdvancedParams& params) {
    if (!params.recovery_enabled) return;
    Mask taken(frame.width, frame.height);
    for (const auto& [l, ip] : pred)
      if (!ip.absent()) taken |= ip.mask;
    for (auto& [l, ip] : pred) {
      if (!ip.absent()) continue;
      auto seen = last_seen.find(l);
      if (seen == last_seen.end()) continue;
      if (auto r = recover(frame, seen->second.box, seen->second.area, models.at(l), params, &taken)) {
        ip.mask = std::move(r->mask);
        ip.confidence = r->confidence;
        ip.status = TrackStatus::Recovered;
        taken |= ip.mask;
      }
    }
    std::vector<AbsentInstance> absent;
    for (const auto& [l, ip] : pred)
      if (ip.absent()) {
        auto seen = last_seen.find(l);
        absent.push_back({l, models.at(l), seen != last_seen.end() ? seen->second.area : 0,
                          reference_area.at(l)});
      }
    global_redetect(frame, absent, pred, params);
  }

  std::shared_ptr<const VideoSource> video_;
  std::shared_ptr<const PropagationBackend> backend_;

  std::mutex cmd_mu_;  // serializes commands
  mutable std::mutex mu_;
  mutable std::condition_variable events_cv_;
  mutable std::condition_variable state_cv_;
  AdvancedParams params_;
  SessionState state_;
  std::map<std::int64_t, StoredFrame> frames_;
  std::vector<SessionEvent> events_;
  std::uint64_t next_seq_{1};
  std::vector<TrackingFailure> failures_;
  bool stop_requested_{false};
  std::thread worker_;
};

}  // namespace annotrack
