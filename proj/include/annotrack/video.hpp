#pragma once

// Video sources. A video on disk is a directory holding video.json (name,
// fps as [num, den], dimensions, frame count) and frames/frame_NNNNNNNNN.png.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <list>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "annotrack/core.hpp"
#include "annotrack/png.hpp"

namespace annotrack {

class VideoSource {
 public:
  virtual ~VideoSource() = default;
  virtual std::string name() const = 0;
  virtual std::int64_t frame_count() const = 0;
  virtual int width() const = 0;
  virtual int height() const = 0;
  virtual Fps fps() const = 0;
  virtual std::shared_ptr<const Frame> frame(std::int64_t index) const = 0;

 protected:
  void check_index(std::int64_t index) const {
    if (index < 0 || index >= frame_count())
      throw Error(ErrorKind::NotFound, "frame " + std::to_string(index) + " out of range");
  }
};

class InMemoryVideo final : public VideoSource {
 public:
  InMemoryVideo(std::string name, std::vector<Frame> frames, Fps fps) : name_(std::move(name)), fps_(fps) {
    if (frames.empty()) throw Error(ErrorKind::InvalidArgument, "video has no frames");
    if (!fps.valid()) throw Error(ErrorKind::InvalidArgument, "fps must be positive");
    for (auto& f : frames) {
      if (f.width != frames.front().width || f.height != frames.front().height || !f.valid())
        throw Error(ErrorKind::InvalidArgument, "frames must share valid dimensions");
      f.fps = fps;
      frames_.push_back(std::make_shared<const Frame>(std::move(f)));
    }
  }

  std::string name() const override { return name_; }
  std::int64_t frame_count() const override { return static_cast<std::int64_t>(frames_.size()); }
  int width() const override { return frames_.front()->width; }
  int height() const override { return frames_.front()->height; }
  Fps fps() const override { return fps_; }
  std::shared_ptr<const Frame> frame(std::int64_t index) const override {
    check_index(index);
    return frames_[static_cast<std::size_t>(index)];
  }

 private:
  std::string name_;
  Fps fps_;
  std::vector<std::shared_ptr<const Frame>> frames_;
};

inline std::string frame_file_name(std::int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%09lld.png", static_cast<long long>(index));
  return buf;
}

class PngSequenceVideo final : public VideoSource {
 public:
  explicit PngSequenceVideo(std::filesystem::path dir) : dir_(std::move(dir)) {
    const auto meta = dir_ / "video.json";
    std::ifstream in(meta);
    if (!in) throw Error(ErrorKind::NotFound, "cannot open video: " + dir_.string());
    try {
      const auto j = nlohmann::json::parse(in);
      name_ = j.at("name").get<std::string>();
      fps_ = {j.at("fps").at(0).get<std::int64_t>(), j.at("fps").at(1).get<std::int64_t>()};
      width_ = j.at("width").get<int>();
      height_ = j.at("height").get<int>();
      count_ = j.at("frame_count").get<std::int64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::Format, "bad video.json in " + dir_.string() + ": " + e.what());
    }
    if (!fps_.valid() || width_ <= 0 || height_ <= 0 || count_ <= 0)
      throw Error(ErrorKind::Format, "bad video.json in " + dir_.string());
  }

  std::string name() const override { return name_; }
  std::int64_t frame_count() const override { return count_; }
  int width() const override { return width_; }
  int height() const override { return height_; }
  Fps fps() const override { return fps_; }

  std::shared_ptr<const Frame> frame(std::int64_t index) const override {
    check_index(index);
    {
      std::lock_guard lock(mu_);
      for (auto it = cache_.begin(); it != cache_.end(); ++it)
        if (it->first == index) {
          cache_.splice(cache_.begin(), cache_, it);
          return cache_.front().second;
        }
    }
    auto f = std::make_shared<Frame>(
        png::decode(png::read_file(dir_ / "frames" / frame_file_name(index)), index, fps_));
    if (f->width != width_ || f->height != height_)
      throw Error(ErrorKind::Format, "frame " + std::to_string(index) + " has wrong dimensions");
    std::lock_guard lock(mu_);
    cache_.emplace_front(index, f);
    if (cache_.size() > kCacheSize) cache_.pop_back();
    return f;
  }

 private:
  static constexpr std::size_t kCacheSize = 8;

  std::filesystem::path dir_;
  std::string name_;
  Fps fps_;
  int width_{0}, height_{0};
  std::int64_t count_{0};
  mutable std::mutex mu_;
  mutable std::list<std::pair<std::int64_t, std::shared_ptr<const Frame>>> cache_;
};

inline std::shared_ptr<VideoSource> open_video(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw Error(ErrorKind::NotFound, "cannot open video: " + path.string() + " does not exist");
  if (std::filesystem::is_directory(path)) return std::make_shared<PngSequenceVideo>(path);
  throw Error(ErrorKind::Format,
              "cannot open video: " + path.string() +
                  " (only PNG-sequence directories are decodable; convert with ffmpeg first)");
}

inline void write_png_sequence(const VideoSource& video, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "frames");
  nlohmann::json meta = {{"name", video.name()},
                         {"fps", {video.fps().num, video.fps().den}},
                         {"width", video.width()},
                         {"height", video.height()},
                         {"frame_count", video.frame_count()}};
  std::ofstream(dir / "video.json") << meta.dump(2) << "\n";
  for (std::int64_t i = 0; i < video.frame_count(); ++i)
    png::write_file(dir / "frames" / frame_file_name(i), png::encode(*video.frame(i)));
}

}  // namespace annotrack
