#pragma once

#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace deformnet::geom {

/// Pinhole camera. Convention: right-handed camera frame, +z looks forward,
/// +x right, +y down in the image. Pixel (i, j) has its center at image
/// coordinates (u, v) = (i, j).
struct Camera {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;
  Eigen::Matrix4d camera_to_world = Eigen::Matrix4d::Identity();
  double near = 0.1;
  double far = 0.4;

  // Throws std::invalid_argument when the pose is not a proper rigid
  // transform or the bounds are not 0 < near < far.
  void validate() const;

  Eigen::Matrix3d rotation() const { return camera_to_world.topLeftCorner<3, 3>(); }
  Eigen::Vector3d position() const { return camera_to_world.topRightCorner<3, 1>(); }

  Eigen::Vector3d world_to_camera(const Eigen::Vector3d& world) const;
  Eigen::Vector3d camera_to_world_point(const Eigen::Vector3d& cam) const;

  /// (u, v, z_camera). u, v are meaningless when z <= 0.
  Eigen::Vector3d project(const Eigen::Vector3d& world) const;

  /// Pixel coordinates plus camera-space depth back to world.
  Eigen::Vector3d back_project(double u, double v, double depth) const;

  /// Unit world-space direction through image point (u, v).
  Eigen::Vector3d ray_direction(double u, double v) const;
};

Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
               const Eigen::Vector3d& up, double fx, double fy, int width, int height,
               double near, double far);

struct RingRigConfig {
  int count = 4;
  double radius = 0.25;      // horizontal distance from the target
  double height = 0.2;       // above the target
  double azimuth_offset = 0.785398163397448;  // radians, first camera
  Eigen::Vector3d target = Eigen::Vector3d(0.0, 0.0, 0.01);
  int width = 64;
  int height_px = 64;
  double focal = 96.0;       // pixels, both axes
  double near = 0.1;
  double far = 0.4;
};

/// Cameras evenly spaced on a horizontal circle, all looking at the target.
std::vector<Camera> ring_rig(const RingRigConfig& config);

}  // namespace deformnet::geom
