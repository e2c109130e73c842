#pragma once

// COCO run-length encoding: column-major runs starting with a run of zeros,
// and the compact ASCII "counts" string used by the COCO mask API.

#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "annotrack/core.hpp"

namespace annotrack::rle {

struct RleCounts {
  int height{0};
  int width{0};
  std::vector<std::uint32_t> counts;
  friend bool operator==(const RleCounts&, const RleCounts&) = default;
};

struct RleRecord {
  int height{0};
  int width{0};
  std::string counts;
  friend bool operator==(const RleRecord&, const RleRecord&) = default;
};

inline RleCounts encode_counts(const Mask& mask) {
  if (mask.width() <= 0 || mask.height() <= 0)
    throw Error(ErrorKind::InvalidArgument, "encode_counts: empty dimensions");
  RleCounts r{mask.height(), mask.width(), {}};
  std::uint8_t current = 0;
  std::uint32_t run = 0;
  for (int x = 0; x < mask.width(); ++x)
    for (int y = 0; y < mask.height(); ++y) {
      const std::uint8_t b = mask.get(x, y) ? 1 : 0;
      if (b != current) {
        r.counts.push_back(run);
        run = 0;
        current = b;
      }
      ++run;
    }
  r.counts.push_back(run);
  return r;
}

inline void check_counts(const RleCounts& rle) {
  const std::uint64_t total =
      std::accumulate(rle.counts.begin(), rle.counts.end(), std::uint64_t{0});
  if (rle.height < 0 || rle.width < 0 ||
      total != static_cast<std::uint64_t>(rle.height) * static_cast<std::uint64_t>(rle.width))
    throw Error(ErrorKind::Corrupt, "corrupt RLE: run lengths sum to " + std::to_string(total) +
                                        ", expected " + std::to_string(rle.height) + "x" +
                                        std::to_string(rle.width));
}

inline Mask decode_counts(const RleCounts& rle) {
  check_counts(rle);
  Mask m(rle.width, rle.height);
  std::uint64_t pos = 0;
  std::uint8_t v = 0;
  for (auto c : rle.counts) {
    if (v)
      for (std::uint64_t i = pos; i < pos + c; ++i)
        m.set(static_cast<int>(i / rle.height), static_cast<int>(i % rle.height));
    pos += c;
    v ^= 1;
  }
  return m;
}

// Each count (minus the count two places back, from the fourth on) is
// written as signed 5-bit groups, low bits first, 0x20 flags continuation,
// and every group is offset by '0'.
inline std::string counts_to_string(const std::vector<std::uint32_t>& counts) {
  std::string s;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    std::int64_t x = counts[i];
    if (i > 2) x -= static_cast<std::int64_t>(counts[i - 2]);
    bool more = true;
    while (more) {
      char c = static_cast<char>(x & 0x1f);
      x >>= 5;
      more = (c & 0x10) ? x != -1 : x != 0;
      if (more) c |= 0x20;
      s.push_back(static_cast<char>(c + 48));
    }
  }
  return s;
}

inline std::vector<std::uint32_t> string_to_counts(std::string_view s) {
  std::vector<std::uint32_t> counts;
  std::size_t p = 0;
  while (p < s.size()) {
    std::int64_t x = 0;
    int k = 0;
    bool more = true;
    while (more) {
      if (p >= s.size())
        throw Error(ErrorKind::Corrupt, "corrupt RLE string: dangling continuation");
      const int c = static_cast<unsigned char>(s[p]) - 48;
      if (c < 0 || c > 63 || k > 12)
        throw Error(ErrorKind::Corrupt, "corrupt RLE string: bad character at " + std::to_string(p));
      x |= static_cast<std::int64_t>(c & 0x1f) << (5 * k);
      more = (c & 0x20) != 0;
      ++p;
      ++k;
      if (!more && (c & 0x10)) x |= -(std::int64_t{1} << (5 * k));
    }
    if (counts.size() > 2) x += counts[counts.size() - 2];
    if (x < 0 || x > 0xffffffffLL)
      throw Error(ErrorKind::Corrupt, "corrupt RLE string: negative run length");
    counts.push_back(static_cast<std::uint32_t>(x));
  }
  return counts;
}

inline std::int64_t area(const RleCounts& rle) {
  std::int64_t a = 0;
  for (std::size_t i = 1; i < rle.counts.size(); i += 2) a += rle.counts[i];
  return a;
}

inline bool empty(const RleCounts& rle) { return area(rle) == 0; }

template <class K>
std::map<K, RleCounts> encode_all(const std::map<K, Mask>& masks) {
  std::map<K, RleCounts> out;
  for (const auto& [k, m] : masks) out.emplace(k, encode_counts(m));
  return out;
}

template <class K>
std::map<K, Mask> decode_all(const std::map<K, RleCounts>& masks) {
  std::map<K, Mask> out;
  for (const auto& [k, r] : masks) out.emplace(k, decode_counts(r));
  return out;
}

inline RleRecord to_record(const RleCounts& c) { return {c.height, c.width, counts_to_string(c.counts)}; }

inline RleCounts counts_from_record(const RleRecord& rec) {
  RleCounts c{rec.height, rec.width, string_to_counts(rec.counts)};
  check_counts(c);
  return c;
}

inline RleRecord to_record(const Mask& mask) {
  const auto c = encode_counts(mask);
  return {c.height, c.width, counts_to_string(c.counts)};
}

inline Mask from_record(const RleRecord& rec) {
  return decode_counts({rec.height, rec.width, string_to_counts(rec.counts)});
}

// {'size': [H, W], 'counts': '<string>'}
inline std::string format_record(const RleRecord& rec) {
  return "{'size': [" + std::to_string(rec.height) + ", " + std::to_string(rec.width) +
         "], 'counts': '" + rec.counts + "'}";
}

inline RleRecord parse_record(std::string_view text) {
  auto fail = [&]() -> RleRecord {
    throw Error(ErrorKind::Format, "malformed RLE record: " + std::string(text.substr(0, 64)));
  };
  const auto sz = text.find("'size'");
  if (sz == std::string_view::npos) return fail();
  const auto lb = text.find('[', sz);
  const auto comma = text.find(',', lb);
  const auto rb = text.find(']', lb);
  if (lb == std::string_view::npos || comma == std::string_view::npos ||
      rb == std::string_view::npos || comma > rb)
    return fail();
  RleRecord rec;
  try {
    rec.height = std::stoi(std::string(text.substr(lb + 1, comma - lb - 1)));
    rec.width = std::stoi(std::string(text.substr(comma + 1, rb - comma - 1)));
  } catch (const std::exception&) {
    return fail();
  }
  const auto ck = text.find("'counts'", rb);
  if (ck == std::string_view::npos) return fail();
  const auto q0 = text.find('\'', ck + 8);
  if (q0 == std::string_view::npos) return fail();
  const auto q1 = text.find('\'', q0 + 1);
  if (q1 == std::string_view::npos) return fail();
  rec.counts = std::string(text.substr(q0 + 1, q1 - q0 - 1));
  return rec;
}

}  // namespace annotrack::rle
