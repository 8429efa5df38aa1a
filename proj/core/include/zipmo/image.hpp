#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace zipmo {

/// Row-major grayscale image with values in [0, 1].
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<double> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, double fill = 0.0);

  double& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  double at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const GrayImage&) const = default;
};

/// Binary PGM (P5, maxval 255).
void save_pgm(const GrayImage& img, const std::filesystem::path& path);
GrayImage load_pgm(const std::filesystem::path& path);

/// 8-bit grayscale PNG bytes.
std::string encode_png(const GrayImage& img);

}  // namespace zipmo
