#include "zipmo/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "zipmo/errors.hpp"

namespace zipmo {

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return tok;
}

}  // namespace

GrayImage::GrayImage(int w, int h, double fill)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {
  if (w < 1 || h < 1) throw ShapeError("image must be at least 1x1");
}

void save_pgm(const GrayImage& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingFileError("cannot write " + path.string());
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::string row(static_cast<std::size_t>(img.width), '\0');
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) row[x] = static_cast<char>(to_byte(img.at(x, y)));
    out.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
}

GrayImage load_pgm(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingFileError("raster not found: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (next_token(in) != "P5") throw ParseError(path.string() + ": not a binary PGM (P5)");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token(in));
    h = std::stoi(next_token(in));
    maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    throw ParseError(path.string() + ": malformed PGM header");
  }
  if (w < 1 || h < 1 || maxval != 255) throw ParseError(path.string() + ": unsupported PGM");
  GrayImage img(w, h);
  std::string buf(static_cast<std::size_t>(w) * h, '\0');
  in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size()))
    throw ParseError(path.string() + ": truncated PGM payload");
  for (std::size_t i = 0; i < buf.size(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>(buf[i]) / 255.0;
  return img;
}

std::string encode_png(const GrayImage& img) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error("png_create_info_struct failed");
  }
  std::string out;
  std::vector<std::uint8_t> row(static_cast<std::size_t>(img.width));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("PNG encoding failed");
  }
  png_set_write_fn(
      png, &out,
      [](png_structp p, png_bytep data, png_size_t len) {
        auto* dst = static_cast<std::string*>(png_get_io_ptr(p));
        dst->append(reinterpret_cast<const char*>(data), len);
      },
      nullptr);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) row[x] = to_byte(img.at(x, y));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

}  // namespace zipmo
