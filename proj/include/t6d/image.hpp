#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "t6d/errors.hpp"

namespace t6d {

/// Three-channel image, channel-major (C x H x W), values in [0, 1].
struct ImageTensor {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  ImageTensor() = default;
  ImageTensor(int h, int w, double fill = 0.0) : height(h), width(w), data(static_cast<std::size_t>(3) * h * w, fill) {}

  double& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  double at(int c, int y, int x) const { return data[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  bool operator==(const ImageTensor&) const = default;
};

inline std::uint8_t to_byte(double v) {
  const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return static_cast<std::uint8_t>(c * 255.0 + 0.5);
}

/// Binary PPM (P6, maxval 255).
inline void write_ppm(const std::string& path, const ImageTensor& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<char> buf(static_cast<std::size_t>(img.width) * img.height * 3);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c)
        buf[(static_cast<std::size_t>(y) * img.width + x) * 3 + c] = static_cast<char>(to_byte(img.at(c, y, x)));
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed writing " + path);
}

inline ImageTensor read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  auto token = [&]() {
    std::string t;
    char ch;
    while (in.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(ch);
    }
    return t;
  };
  if (token() != "P6") throw ParseError(path, "magic", "expected binary PPM (P6)");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw ParseError(path, "header", "malformed PPM header");
  }
  if (w <= 0 || h <= 0 || maxval != 255) throw ParseError(path, "header", "unsupported PPM dimensions or maxval");
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) throw ParseError(path, "pixels", "truncated pixel data");
  ImageTensor img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = buf[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0;
  return img;
}

}  // namespace t6d
