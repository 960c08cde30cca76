#pragma once

// Mask file plug-in: 8-bit grayscale PNG and binary PGM (P5).
// A pixel value v maps to probability v / 255.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include <png.h>

#include "salvs/error.hpp"
#include "salvs/saliency.hpp"

namespace salvs {

enum class MaskFormat { Auto, Pgm, Png };

struct Gray8Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
};

namespace detail {

inline bool has_png_signature(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  return bytes.size() >= 8 && std::memcmp(bytes.data(), sig, 8) == 0;
}

inline bool has_pgm_signature(std::span<const std::uint8_t> bytes) {
  return bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5';
}

// Reads one whitespace/comment separated header token.
inline std::string pgm_token(std::span<const std::uint8_t> bytes, std::size_t& at) {
  while (at < bytes.size()) {
    if (bytes[at] == '#') {
      while (at < bytes.size() && bytes[at] != '\n') ++at;
    } else if (std::isspace(bytes[at])) {
      ++at;
    } else {
      break;
    }
  }
  std::string tok;
  while (at < bytes.size() && !std::isspace(bytes[at]) && bytes[at] != '#') {
    tok.push_back(static_cast<char>(bytes[at++]));
  }
  return tok;
}

inline int parse_header_int(const std::string& tok, const char* field) {
  if (tok.empty() || tok.size() > 9 ||
      !std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
    throw Error(ErrorCode::MalformedFile, std::string("PGM header field ") + field + " is not a number");
  }
  return std::stoi(tok);
}

inline Gray8Image decode_pgm(std::span<const std::uint8_t> bytes) {
  std::size_t at = 2;
  const int w = parse_header_int(pgm_token(bytes, at), "width");
  const int h = parse_header_int(pgm_token(bytes, at), "height");
  const int maxval = parse_header_int(pgm_token(bytes, at), "maxval");
  if (w < 1 || h < 1) throw Error(ErrorCode::MalformedFile, "PGM with zero size");
  if (maxval > 255) throw Error(ErrorCode::UnsupportedFormat, "16-bit PGM is not supported");
  if (maxval != 255) throw Error(ErrorCode::UnsupportedFormat, "PGM maxval must be 255");
  if (at >= bytes.size() || !std::isspace(bytes[at])) {
    throw Error(ErrorCode::MalformedFile, "PGM header not terminated");
  }
  ++at;
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (bytes.size() - at < n) throw Error(ErrorCode::MalformedFile, "PGM pixel data truncated");
  Gray8Image img{w, h, {}};
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(at),
                    bytes.begin() + static_cast<std::ptrdiff_t>(at + n));
  return img;
}

inline Gray8Image decode_png(std::span<const std::uint8_t> bytes) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw Error(ErrorCode::MalformedFile, "PNG header: " + msg);
  }
  if (image.format != PNG_FORMAT_GRAY) {
    png_image_free(&image);
    throw Error(ErrorCode::UnsupportedFormat, "only 8-bit grayscale PNG masks are supported");
  }
  Gray8Image img{static_cast<int>(image.width), static_cast<int>(image.height), {}};
  img.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, img.pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw Error(ErrorCode::MalformedFile, "PNG data: " + msg);
  }
  return img;
}

}  // namespace detail

inline Gray8Image decode_gray8(std::span<const std::uint8_t> bytes, MaskFormat format = MaskFormat::Auto) {
  if (format == MaskFormat::Auto) {
    if (detail::has_png_signature(bytes)) {
      format = MaskFormat::Png;
    } else if (detail::has_pgm_signature(bytes)) {
      format = MaskFormat::Pgm;
    } else {
      throw Error(ErrorCode::UnsupportedFormat, "not a PNG or binary PGM file");
    }
  }
  if (format == MaskFormat::Png) {
    if (!detail::has_png_signature(bytes)) throw Error(ErrorCode::MalformedFile, "missing PNG signature");
    return detail::decode_png(bytes);
  }
  if (!detail::has_pgm_signature(bytes)) throw Error(ErrorCode::UnsupportedFormat, "not a binary (P5) PGM");
  return detail::decode_pgm(bytes);
}

inline SaliencyMap to_saliency(const Gray8Image& img) {
  std::vector<double> v(img.pixels.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = img.pixels[i] / 255.0;
  return SaliencyMap(img.width, img.height, std::move(v));
}

/// Probabilities are clamped to [0, 1] and rounded to the nearest level.
inline Gray8Image to_gray8(const SaliencyMap& map) {
  Gray8Image img{map.width(), map.height(), {}};
  img.pixels.reserve(map.size());
  for (double v : map.values()) {
    const double c = std::clamp(v, 0.0, 1.0);
    img.pixels.push_back(static_cast<std::uint8_t>(std::lround(c * 255.0)));
  }
  return img;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline SaliencyMap load_mask(std::span<const std::uint8_t> bytes, MaskFormat format = MaskFormat::Auto) {
  return to_saliency(decode_gray8(bytes, format));
}

inline SaliencyMap load_mask(const std::filesystem::path& path, MaskFormat format = MaskFormat::Auto) {
  const auto bytes = read_file_bytes(path);
  return load_mask(std::span<const std::uint8_t>(bytes), format);
}

inline std::vector<std::uint8_t> encode_pgm(const Gray8Image& img) {
  const std::string header =
      "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

/// `bit_depth` 16 exists so callers can produce files the loader rejects.
inline std::vector<std::uint8_t> encode_png(const Gray8Image& img, int bit_depth = 8) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  std::vector<std::uint16_t> wide;
  const void* buffer = img.pixels.data();
  if (bit_depth == 16) {
    image.format = PNG_FORMAT_LINEAR_Y;
    wide.reserve(img.pixels.size());
    for (auto p : img.pixels) wide.push_back(static_cast<std::uint16_t>(p * 257));
    buffer = wide.data();
  } else {
    image.format = PNG_FORMAT_GRAY;
  }
  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(image, size, 0, buffer, 0, nullptr)) {
    throw Error(ErrorCode::IoError, std::string("PNG encode: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, buffer, 0, nullptr)) {
    throw Error(ErrorCode::IoError, std::string("PNG encode: ") + image.message);
  }
  out.resize(size);
  return out;
}

}  // namespace salvs
