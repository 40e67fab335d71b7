#include "deformnet/harness/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>
#include <vector>

#include <png.h>

namespace deformnet::harness {

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void write_png(const std::filesystem::path& path, int width, int height, int channels,
               const std::vector<std::uint8_t>& pixels) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!file) throw std::runtime_error("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng failed writing " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, width, height, 8, channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, pixels.data() + static_cast<std::size_t>(y) * width * channels);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png_rgb(const std::filesystem::path& path, const geom::RgbdImage& image) {
  write_png_strip(path, {image});
}

void write_png_depth(const std::filesystem::path& path, const geom::RgbdImage& image, double near,
                     double far) {
  std::vector<std::uint8_t> px;
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      const double d = image.depth(x, y);
      px.push_back(d > 0.0 && std::isfinite(d) ? to_byte(1.0 - (d - near) / (far - near)) : 0);
    }
  }
  write_png(path, image.width(), image.height(), 1, px);
}

void write_png_strip(const std::filesystem::path& path, const std::vector<geom::RgbdImage>& images) {
  if (images.empty()) throw std::invalid_argument("write_png_strip: no images");
  const int h = images[0].height();
  int w = 0;
  for (const auto& img : images) {
    if (img.height() != h) throw std::invalid_argument("write_png_strip: images differ in height");
    w += img.width();
  }
  std::vector<std::uint8_t> px(static_cast<std::size_t>(w) * h * 3);
  int offset = 0;
  for (const auto& img : images) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < img.width(); ++x) {
        const auto c = img.rgb(x, y);
        std::uint8_t* p = px.data() + (static_cast<std::size_t>(y) * w + offset + x) * 3;
        p[0] = to_byte(c.x());
        p[1] = to_byte(c.y());
        p[2] = to_byte(c.z());
      }
    }
    offset += img.width();
  }
  write_png(path, w, h, 3, px);
}

}  // namespace deformnet::harness
