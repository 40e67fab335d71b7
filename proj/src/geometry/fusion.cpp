#include "deformnet/geometry/fusion.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace deformnet::geom {

PointCloud fuse_depth_views(const std::vector<RgbdImage>& frames,
                            const std::vector<Camera>& cameras, const Aabb& crop) {
  if (cameras.empty()) throw std::invalid_argument("fuse_depth_views: no cameras");
  if (frames.size() != cameras.size()) {
    throw std::invalid_argument("fuse_depth_views: " + std::to_string(frames.size()) +
                                " frames for " + std::to_string(cameras.size()) + " cameras");
  }
  PointCloud cloud;
  for (std::size_t c = 0; c < cameras.size(); ++c) {
    const Camera& cam = cameras[c];
    const RgbdImage& img = frames[c];
    if (img.width() != cam.width || img.height() != cam.height) {
      throw std::invalid_argument("fuse_depth_views: frame " + std::to_string(c) + " is " +
                                  std::to_string(img.width()) + "x" +
                                  std::to_string(img.height()) + ", camera expects " +
                                  std::to_string(cam.width) + "x" + std::to_string(cam.height));
    }
    for (int y = 0; y < img.height(); ++y) {
      for (int x = 0; x < img.width(); ++x) {
        const double d = img.depth(x, y);
        if (!std::isfinite(d) || d <= 0.0) continue;
        const Eigen::Vector3d p = cam.back_project(x, y, d);
        if (!crop.contains(p)) continue;
        cloud.push_back(p, img.rgb(x, y).cwiseMax(0.0).cwiseMin(1.0));
      }
    }
  }
  return cloud;
}

}  // namespace deformnet::geom
