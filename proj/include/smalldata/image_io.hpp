#pragma once

// PGM (P2/P5) and PNG reading/writing for grayscale images.

#include <png.h>

#include <cctype>
#include <fstream>
#include <stdexcept>
#include <string>

#include "smalldata/image.hpp"

namespace smalldata {

namespace detail {

inline std::string pgm_token(std::istream& is) {
  std::string tok;
  char ch;
  while (is.get(ch)) {
    if (ch == '#') {
      std::string skip;
      std::getline(is, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(ch);
  }
  return tok;
}

}  // namespace detail

inline Image read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open image " + path);
  const std::string magic = detail::pgm_token(is);
  if (magic != "P5" && magic != "P2") throw std::runtime_error(path + ": not a PGM file");
  const std::size_t w = std::stoul(detail::pgm_token(is));
  const std::size_t h = std::stoul(detail::pgm_token(is));
  const unsigned maxval = static_cast<unsigned>(std::stoul(detail::pgm_token(is)));
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) throw std::runtime_error(path + ": unsupported PGM header");
  Image img(h, w);
  if (magic == "P5") {
    is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (is.gcount() != static_cast<std::streamsize>(img.pixels.size())) throw std::runtime_error(path + ": truncated PGM");
  } else {
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(std::stoul(detail::pgm_token(is)));
  }
  if (maxval != 255)
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>((p * 255u + maxval / 2) / maxval);
  return img;
}

inline void write_pgm(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write image " + path);
  os << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

inline Image read_png(const std::string& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    throw std::runtime_error(path + ": " + png.message);
  png.format = PNG_FORMAT_GRAY;
  Image img(png.height, png.width);
  if (!png_image_finish_read(&png, nullptr, img.pixels.data(), 0, nullptr)) {
    std::string msg = png.message;
    png_image_free(&png);
    throw std::runtime_error(path + ": " + msg);
  }
  return img;
}

inline void write_png(const std::string& path, const Image& img) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.c_str(), 0, img.pixels.data(), 0, nullptr))
    throw std::runtime_error(path + ": " + png.message);
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// Dispatches on extension: .png, otherwise PGM.
inline Image read_image(const std::string& path) {
  if (ends_with(path, ".png") || ends_with(path, ".PNG")) return read_png(path);
  return read_pgm(path);
}

inline void write_image(const std::string& path, const Image& img) {
  if (ends_with(path, ".png") || ends_with(path, ".PNG")) return write_png(path, img);
  write_pgm(path, img);
}

}  // namespace smalldata
