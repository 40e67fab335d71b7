#pragma once

#include <vector>

#include "deformnet/geometry/camera.hpp"
#include "deformnet/geometry/types.hpp"

namespace deformnet::geom {

/// Back-projects every valid pixel of every view into world space and keeps
/// the points inside `crop`. Throws on zero cameras or on a frame whose size
/// does not match its camera.
PointCloud fuse_depth_views(const std::vector<RgbdImage>& frames,
                            const std::vector<Camera>& cameras, const Aabb& crop);

}  // namespace deformnet::geom
