#include "deformnet/geometry/camera.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace deformnet::geom {

void Camera::validate() const {
  if (width <= 0 || height <= 0) throw std::invalid_argument("camera: resolution must be positive");
  if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("camera: focal lengths must be positive");
  if (!(near > 0.0) || !(near < far)) {
    throw std::invalid_argument("camera: need 0 < near < far, got near=" + std::to_string(near) +
                                " far=" + std::to_string(far));
  }
  const Eigen::Matrix3d r = rotation();
  if ((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-9) {
    throw std::invalid_argument("camera: extrinsic rotation is not orthonormal");
  }
  if (std::abs(r.determinant() - 1.0) > 1e-9) {
    throw std::invalid_argument("camera: extrinsic rotation has determinant != +1");
  }
  const Eigen::RowVector4d last = camera_to_world.row(3);
  if ((last - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 0.0) {
    throw std::invalid_argument("camera: extrinsic bottom row must be [0 0 0 1]");
  }
}

Eigen::Vector3d Camera::world_to_camera(const Eigen::Vector3d& world) const {
  return rotation().transpose() * (world - position());
}

Eigen::Vector3d Camera::camera_to_world_point(const Eigen::Vector3d& cam) const {
  return rotation() * cam + position();
}

Eigen::Vector3d Camera::project(const Eigen::Vector3d& world) const {
  const Eigen::Vector3d c = world_to_camera(world);
  return {fx * c.x() / c.z() + cx, fy * c.y() / c.z() + cy, c.z()};
}

Eigen::Vector3d Camera::back_project(double u, double v, double depth) const {
  const Eigen::Vector3d c((u - cx) / fx * depth, (v - cy) / fy * depth, depth);
  return camera_to_world_point(c);
}

Eigen::Vector3d Camera::ray_direction(double u, double v) const {
  const Eigen::Vector3d c((u - cx) / fx, (v - cy) / fy, 1.0);
  return (rotation() * c).normalized();
}

Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
               const Eigen::Vector3d& up, double fx, double fy, int width, int height,
               double near, double far) {
  const Eigen::Vector3d z = (target - eye).normalized();
  const Eigen::Vector3d x = z.cross(up).normalized();
  const Eigen::Vector3d y = z.cross(x);
  Camera cam;
  cam.fx = fx;
  cam.fy = fy;
  cam.width = width;
  cam.height = height;
  cam.cx = 0.5 * (width - 1);
  cam.cy = 0.5 * (height - 1);
  cam.near = near;
  cam.far = far;
  cam.camera_to_world.setIdentity();
  cam.camera_to_world.block<3, 1>(0, 0) = x;
  cam.camera_to_world.block<3, 1>(0, 1) = y;
  cam.camera_to_world.block<3, 1>(0, 2) = z;
  cam.camera_to_world.block<3, 1>(0, 3) = eye;
  return cam;
}

std::vector<Camera> ring_rig(const RingRigConfig& config) {
  if (config.count < 1) throw std::invalid_argument("ring_rig: need at least one camera");
  std::vector<Camera> cams;
  for (int i = 0; i < config.count; ++i) {
    const double az = config.azimuth_offset + 2.0 * std::numbers::pi * i / config.count;
    const Eigen::Vector3d eye = config.target + Eigen::Vector3d(config.radius * std::cos(az),
                                                                config.radius * std::sin(az),
                                                                config.height);
    cams.push_back(look_at(eye, config.target, Eigen::Vector3d::UnitZ(), config.focal,
                           config.focal, config.width, config.height_px, config.near,
                           config.far));
  }
  return cams;
}

}  // namespace deformnet::geom
