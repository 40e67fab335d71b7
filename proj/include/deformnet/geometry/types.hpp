#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Core>

namespace deformnet::geom {

using Points = std::vector<Eigen::Vector3d>;

struct Aabb {
  Eigen::Vector3d lo = Eigen::Vector3d::Zero();
  Eigen::Vector3d hi = Eigen::Vector3d::Zero();

  bool contains(const Eigen::Vector3d& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }
  Eigen::Vector3d center() const { return 0.5 * (lo + hi); }
  Eigen::Vector3d extent() const { return hi - lo; }
  Eigen::Vector3d clamp(const Eigen::Vector3d& p) const { return p.cwiseMax(lo).cwiseMin(hi); }
};

/// Positions in meters with per-point RGB in [0,1]. Row i of both arrays
/// describes the same point.
struct PointCloud {
  Points positions;
  Points colors;

  std::size_t size() const { return positions.size(); }
  bool empty() const { return positions.empty(); }
  void push_back(const Eigen::Vector3d& position, const Eigen::Vector3d& color) {
    positions.push_back(position);
    colors.push_back(color);
  }
  void validate() const;
  PointCloud select(const std::vector<std::size_t>& rows) const;
};

/// One camera's RGB-D frame. Interleaved float channels r, g, b, depth per
/// pixel, rows top to bottom. Depth is camera-space z in meters; 0 or NaN
/// marks an invalid pixel.
class RgbdImage {
 public:
  RgbdImage() = default;
  RgbdImage(int width, int height);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width_) * height_; }

  float depth(int x, int y) const { return data_[index(x, y) + 3]; }
  float& depth(int x, int y) { return data_[index(x, y) + 3]; }
  Eigen::Vector3d rgb(int x, int y) const;
  void set_rgb(int x, int y, const Eigen::Vector3d& c);

  const std::vector<float>& data() const { return data_; }
  std::vector<float>& data() { return data_; }

 private:
  std::size_t index(int x, int y) const {
    return (static_cast<std::size_t>(y) * width_ + x) * 4;
  }
  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
};

}  // namespace deformnet::geom
