#include "deformnet/geometry/types.hpp"

#include <stdexcept>
#include <string>

namespace deformnet::geom {

void PointCloud::validate() const {
  if (positions.size() != colors.size()) {
    throw std::invalid_argument("PointCloud: " + std::to_string(positions.size()) +
                                " positions but " + std::to_string(colors.size()) + " colors");
  }
  for (std::size_t i = 0; i < colors.size(); ++i) {
    if ((colors[i].array() < 0.0).any() || (colors[i].array() > 1.0).any()) {
      throw std::invalid_argument("PointCloud: color of row " + std::to_string(i) +
                                  " outside [0,1]");
    }
  }
}

PointCloud PointCloud::select(const std::vector<std::size_t>& rows) const {
  PointCloud out;
  out.positions.reserve(rows.size());
  out.colors.reserve(rows.size());
  for (std::size_t r : rows) out.push_back(positions.at(r), colors.at(r));
  return out;
}

RgbdImage::RgbdImage(int width, int height) : width_(width), height_(height) {
  if (width <= 0 || height <= 0) throw std::invalid_argument("RgbdImage: size must be positive");
  data_.assign(pixel_count() * 4, 0.0f);
}

Eigen::Vector3d RgbdImage::rgb(int x, int y) const {
  const std::size_t i = index(x, y);
  return {data_[i], data_[i + 1], data_[i + 2]};
}

void RgbdImage::set_rgb(int x, int y, const Eigen::Vector3d& c) {
  const std::size_t i = index(x, y);
  data_[i] = static_cast<float>(c.x());
  data_[i + 1] = static_cast<float>(c.y());
  data_[i + 2] = static_cast<float>(c.z());
}

}  // namespace deformnet::geom
