// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "prtg/error.hpp"

namespace prtg {

/// Pinhole camera. Camera frame: +x right, +y down, +z forward. Continuous pixel
/// coordinates put the centre of pixel (i, j) at (i + 0.5, j + 0.5).
struct Camera {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();  // world -> camera
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
    int width = 1;
    int height = 1;
    double near = 0.01;
    double far = 1000.0;

    void validate() const {
        if (!(fx > 0.0) || !(fy > 0.0)) throw InputError("camera focal lengths must be positive");
        if (!(near > 0.0) || !(near < far)) throw InputError("camera requires 0 < near < far");
        if (width < 1 || height < 1) throw InputError("camera resolution must be positive");
    }

    [[nodiscard]] Eigen::Vector3d to_camera(const Eigen::Vector3d& world) const {
        return rotation * world + translation;
    }
    [[nodiscard]] Eigen::Vector3d center() const { return -rotation.transpose() * translation; }

    /// World-space unit direction through continuous pixel coordinate (u, v).
    [[nodiscard]] Eigen::Vector3d ray_direction(double u, double v) const {
        const Eigen::Vector3d d_cam((u - cx) / fx, (v - cy) / fy, 1.0);
        return (rotation.transpose() * d_cam).normalized();
    }

    [[nodiscard]] Eigen::Matrix4d world_to_camera() const {
        Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
        m.topLeftCorner<3, 3>() = rotation;
        m.topRightCorner<3, 1>() = translation;
        return m;
    }

    /// Camera at `eye` looking at `target`. Falls back to a +y up hint when the
    /// view direction is parallel to `up`.
    [[nodiscard]] static Camera look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target,
                                        Eigen::Vector3d up, int width, int height, double focal) {
        const Eigen::Vector3d forward = (target - eye).normalized();
        if (forward.cross(up).norm() < 1e-6) up = Eigen::Vector3d::UnitY();
        const Eigen::Vector3d right = forward.cross(up).normalized();
        const Eigen::Vector3d down = forward.cross(right);
        Camera cam;
        cam.rotation.row(0) = right.transpose();
        cam.rotation.row(1) = down.transpose();
        cam.rotation.row(2) = forward.transpose();
        cam.translation = -cam.rotation * eye;
        cam.width = width;
        cam.height = height;
        cam.fx = cam.fy = focal;
        cam.cx = width * 0.5;
        cam.cy = height * 0.5;
        return cam;
    }
};

}  // namespace prtg
