#pragma once

// RGB8 PNG encode/decode (libpng simplified API).

#include <png.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "annotrack/core.hpp"

namespace annotrack::png {

inline std::vector<std::uint8_t> encode(const Frame& frame) {
  if (!frame.valid()) throw Error(ErrorKind::InvalidArgument, "png encode: invalid frame");
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(frame.width);
  image.height = static_cast<png_uint_32>(frame.height);
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, frame.pixels.data(), 0, nullptr))
    throw Error(ErrorKind::Io, std::string("png encode: ") + image.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, frame.pixels.data(), 0, nullptr))
    throw Error(ErrorKind::Io, std::string("png encode: ") + image.message);
  out.resize(size);
  return out;
}

inline Frame decode(const std::vector<std::uint8_t>& bytes, std::int64_t index = 0, Fps fps = {}) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    throw Error(ErrorKind::Format, std::string("png decode: ") + image.message);
  image.format = PNG_FORMAT_RGB;
  Frame f(index, static_cast<int>(image.width), static_cast<int>(image.height), fps);
  if (!png_image_finish_read(&image, nullptr, f.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw Error(ErrorKind::Format, std::string("png decode: ") + image.message);
  }
  return f;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// Masks are stored as 8-bit grey PNGs: 0 or 255.
inline std::vector<std::uint8_t> encode_mask(const Mask& mask) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(mask.width());
  image.height = static_cast<png_uint_32>(mask.height());
  image.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> grey(mask.size());
  for (std::size_t i = 0; i < grey.size(); ++i) grey[i] = mask[i] ? 255 : 0;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, grey.data(), 0, nullptr))
    throw Error(ErrorKind::Io, std::string("png encode: ") + image.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, grey.data(), 0, nullptr))
    throw Error(ErrorKind::Io, std::string("png encode: ") + image.message);
  out.resize(size);
  return out;
}

inline Mask decode_mask(const std::vector<std::uint8_t>& bytes) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    throw Error(ErrorKind::Format, std::string("png decode: ") + image.message);
  image.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> grey(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, grey.data(), 0, nullptr)) {
    png_image_free(&image);
    throw Error(ErrorKind::Format, std::string("png decode: ") + image.message);
  }
  Mask m(static_cast<int>(image.width), static_cast<int>(image.height));
  for (std::size_t i = 0; i < grey.size(); ++i) m[i] = grey[i] >= 128 ? 1 : 0;
  return m;
}

}  // namespace annotrack::png
