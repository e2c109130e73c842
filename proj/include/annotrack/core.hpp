#pragma once

// Shared domain types: frames, masks, polygons, labels and tracking params.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace annotrack {

enum class ErrorKind {
  InvalidArgument,
  Format,
  Corrupt,
  Precondition,
  Busy,
  NotFound,
  Io,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Frames-per-second as an exact fraction (e.g. 125/3).
struct Fps {
  std::int64_t num{30};
  std::int64_t den{1};

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  bool valid() const { return num > 0 && den > 0; }
  friend bool operator==(const Fps&, const Fps&) = default;
};

struct Rgb {
  std::uint8_t r{0}, g{0}, b{0};
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

inline double color_distance(double r0, double g0, double b0,
                             double r1, double g1, double b1) {
  const double dr = r0 - r1, dg = g0 - g1, db = b0 - b1;
  return std::sqrt(dr * dr + dg * dg + db * db);
}

struct Frame {
  std::int64_t index{0};
  int width{0};
  int height{0};
  std::vector<std::uint8_t> pixels;  // row-major RGB
  Fps fps;

  Frame() = default;
  Frame(std::int64_t idx, int w, int h, Fps rate = {})
      : index(idx), width(w), height(h),
        pixels(static_cast<std::size_t>(w) * h * 3, 0), fps(rate) {}

  bool valid() const {
    return width > 0 && height > 0 &&
           pixels.size() == static_cast<std::size_t>(width) * height * 3;
  }

  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  std::uint8_t* at(int x, int y) {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
  Rgb rgb(int x, int y) const {
    const auto* p = at(x, y);
    return {p[0], p[1], p[2]};
  }
  void set(int x, int y, Rgb c) {
    auto* p = at(x, y);
    p[0] = c.r;
    p[1] = c.g;
    p[2] = c.b;
  }
};

// Binary height x width grid, row-major, one byte per pixel (0 or 1).
class Mask {
 public:
  Mask() = default;
  Mask(int width, int height)
      : width_(width), height_(height),
        bits_(static_cast<std::size_t>(std::max(width, 0)) * std::max(height, 0), 0) {}

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return bits_.size(); }

  bool get(int x, int y) const { return bits_[index(x, y)] != 0; }
  void set(int x, int y, bool v = true) { bits_[index(x, y)] = v ? 1 : 0; }
  bool contains(int x, int y) const {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }

  std::uint8_t operator[](std::size_t i) const { return bits_[i]; }
  std::uint8_t& operator[](std::size_t i) { return bits_[i]; }

  const std::vector<std::uint8_t>& data() const { return bits_; }

  std::int64_t area() const {
    std::int64_t n = 0;
    for (auto b : bits_) n += b;
    return n;
  }
  bool empty() const {
    return std::none_of(bits_.begin(), bits_.end(), [](auto b) { return b != 0; });
  }
  bool same_shape(const Mask& o) const { return width_ == o.width_ && height_ == o.height_; }

  Mask& operator|=(const Mask& o) {
    for (std::size_t i = 0; i < bits_.size(); ++i) bits_[i] |= o.bits_[i];
    return *this;
  }

  friend bool operator==(const Mask&, const Mask&) = default;

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * width_ + x;
  }

  int width_{0};
  int height_{0};
  std::vector<std::uint8_t> bits_;
};

// "{class_name}_{ordinal}", or a bare class name when ordinal is absent.
struct InstanceLabel {
  std::string class_name;
  std::optional<std::uint32_t> ordinal;

  std::string display() const {
    return ordinal ? class_name + "_" + std::to_string(*ordinal) : class_name;
  }

  friend bool operator==(const InstanceLabel&, const InstanceLabel&) = default;
  friend auto operator<=>(const InstanceLabel& a, const InstanceLabel& b) {
    if (auto c = a.class_name <=> b.class_name; c != 0) return c;
    return a.ordinal <=> b.ordinal;
  }
};

inline InstanceLabel parse_label(std::string_view text) {
  if (text.empty()) throw Error(ErrorKind::Format, "empty instance label");
  const auto pos = text.rfind('_');
  if (pos != std::string_view::npos && pos > 0 && pos + 1 < text.size()) {
    const auto digits = text.substr(pos + 1);
    if (std::all_of(digits.begin(), digits.end(),
                    [](char c) { return c >= '0' && c <= '9'; })) {
      std::uint32_t value = 0;
      const auto res = std::from_chars(digits.data(), digits.data() + digits.size(), value);
      if (res.ec != std::errc{})
        throw Error(ErrorKind::Format, "label ordinal out of range: " + std::string(text));
      return {std::string(text.substr(0, pos)), value};
    }
  }
  return {std::string(text), std::nullopt};
}

// Smallest ordinal not taken by an existing label of the same class.
inline InstanceLabel next_label(const std::string& class_name,
                                const std::set<InstanceLabel>& existing) {
  if (class_name.empty()) throw Error(ErrorKind::InvalidArgument, "empty class name");
  std::set<std::uint32_t> used;
  for (const auto& l : existing)
    if (l.class_name == class_name && l.ordinal) used.insert(*l.ordinal);
  std::uint32_t k = 0;
  while (used.count(k)) ++k;
  return {class_name, k};
}

struct InstanceMask {
  InstanceLabel label;
  Mask bits;
};

struct Point2d {
  double x{0}, y{0};
  friend bool operator==(const Point2d&, const Point2d&) = default;
};

struct Polygon {
  InstanceLabel label;
  std::vector<Point2d> vertices;
  friend bool operator==(const Polygon&, const Polygon&) = default;
};

enum class AnnotationSource { GroundTruth, Predicted, Corrected };

inline const char* to_string(AnnotationSource s) {
  switch (s) {
    case AnnotationSource::GroundTruth: return "ground_truth";
    case AnnotationSource::Predicted: return "predicted";
    case AnnotationSource::Corrected: return "corrected";
  }
  return "unknown";
}

inline bool is_manual(AnnotationSource s) { return s != AnnotationSource::Predicted; }

struct Annotation {
  std::vector<Polygon> polygons;
  std::optional<Mask> mask;
  friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct LabeledFrame {
  std::int64_t frame_index{0};
  AnnotationSource source{AnnotationSource::GroundTruth};
  std::map<InstanceLabel, Annotation> annotations;

  bool empty() const { return annotations.empty(); }
  std::set<InstanceLabel> labels() const {
    std::set<InstanceLabel> out;
    for (const auto& [l, _] : annotations) out.insert(l);
    return out;
  }
};

struct AdvancedParams {
  double epsilon{2.0};
  int mem_every{1};
  int t_max{5};
  bool auto_pause{true};
  bool recovery_enabled{true};
  double conf_threshold{0.5};
  int min_area{10};
  double tau_color{40.0};
  int search_radius{32};

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorKind::InvalidArgument, m); };
    if (!(epsilon > 0)) fail("epsilon must be > 0");
    if (mem_every < 1) fail("mem_every must be >= 1");
    if (t_max < 1) fail("t_max must be >= 1");
    if (!(conf_threshold > 0 && conf_threshold < 1)) fail("conf_threshold must be in (0, 1)");
    if (min_area < 0) fail("min_area must be >= 0");
    if (!(tau_color >= 0 && tau_color <= 442)) fail("tau_color must be in [0, 442]");
    if (search_radius < 0) fail("search_radius must be >= 0");
  }

  friend bool operator==(const AdvancedParams&, const AdvancedParams&) = default;
};

}  // namespace annotrack
