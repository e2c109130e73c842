#pragma once

// Memory buffer: one permanent entry (the governing manual annotation) plus a
// FIFO of at most t_max working entries captured every mem_every-th frame.

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include "annotrack/core.hpp"

namespace annotrack {

inline bool should_memorize(std::int64_t frame_index, std::int64_t start_index, int mem_every) {
  if (mem_every < 1) throw Error(ErrorKind::InvalidArgument, "mem_every must be >= 1");
  return frame_index > start_index && (frame_index - start_index) % mem_every == 0;
}

struct MemoryEntry {
  std::int64_t frame_index{0};
  std::shared_ptr<const Frame> frame;
  std::map<InstanceLabel, Mask> masks;  // non-empty masks only

  bool contains(const InstanceLabel& l) const { return masks.count(l) != 0; }
};

class MemoryBuffer {
 public:
  MemoryBuffer(int mem_every = 1, int t_max = 5) : mem_every_(mem_every), t_max_(t_max) {
    if (mem_every < 1 || t_max < 1)
      throw Error(ErrorKind::InvalidArgument, "mem_every and t_max must be >= 1");
  }

  // Replaces the permanent entry and clears working memory.
  void reset(MemoryEntry permanent) {
    permanent_ = std::move(permanent);
    working_.clear();
  }

  void push(MemoryEntry entry) {
    const std::int64_t last = !working_.empty() ? working_.back().frame_index
                              : permanent_      ? permanent_->frame_index
                                                : std::int64_t{-1};
    if (entry.frame_index <= last)
      throw Error(ErrorKind::Precondition, "memory push out of order: frame " +
                                               std::to_string(entry.frame_index) +
                                               " after " + std::to_string(last));
    working_.push_back(std::move(entry));
    while (static_cast<int>(working_.size()) > t_max_) working_.pop_front();
  }

  bool has_permanent() const { return permanent_.has_value(); }
  const MemoryEntry& permanent() const {
    if (!permanent_) throw Error(ErrorKind::Precondition, "memory buffer has no permanent entry");
    return *permanent_;
  }
  const std::deque<MemoryEntry>& working() const { return working_; }
  int mem_every() const { return mem_every_; }
  int t_max() const { return t_max_; }

  std::int64_t latest_index() const {
    return !working_.empty() ? working_.back().frame_index : permanent().frame_index;
  }

  // Most recent entry holding the instance, else the permanent entry.
  const MemoryEntry& reference_for(const InstanceLabel& label) const {
    for (auto it = working_.rbegin(); it != working_.rend(); ++it)
      if (it->contains(label)) return *it;
    return permanent();
  }

 private:
  int mem_every_;
  int t_max_;
  std::optional<MemoryEntry> permanent_;
  std::deque<MemoryEntry> working_;
};

}  // namespace annotrack
