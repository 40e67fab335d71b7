#pragma once

#include <filesystem>

#include "deformnet/geometry/types.hpp"

namespace deformnet::harness {

/// 8-bit RGB PNG of the color channels.
void write_png_rgb(const std::filesystem::path& path, const geom::RgbdImage& image);

/// 8-bit grayscale PNG of depth mapped linearly from [near, far] to
/// [255, 0]; invalid pixels are black.
void write_png_depth(const std::filesystem::path& path, const geom::RgbdImage& image, double near,
                     double far);

/// Several images side by side in one RGB PNG.
void write_png_strip(const std::filesystem::path& path, const std::vector<geom::RgbdImage>& images);

}  // namespace deformnet::harness
