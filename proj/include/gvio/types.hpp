#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <stdexcept>

// Frame convention used throughout: R_ab maps b-frame coordinates into the
// a-frame, p_ab is the origin of b expressed in a. Frames: w = local world
// (gravity-aligned z), e = ENU, b = IMU body, b0 = first IMU frame, c = camera.

namespace gvio {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Vec9 = Eigen::Matrix<double, 9, 1>;
using Mat9 = Eigen::Matrix<double, 9, 9>;

/// Gravity in the local world frame (z up, gravity points down).
inline Vec3 gravity_w() { return Vec3(0.0, 0.0, -9.81); }

struct ImuSample {
    double t = 0.0;   // seconds, IMU clock
    Vec3 accel = Vec3::Zero();  // specific force, body frame [m/s^2]
    Vec3 gyro = Vec3::Zero();   // angular rate, body frame [rad/s]
};

/// Per-keyframe navigation state.
struct NavState {
    Mat3 R_wb = Mat3::Identity();  // body-to-world rotation
    Vec3 p = Vec3::Zero();         // position in world [m]
    Vec3 v = Vec3::Zero();         // velocity in world [m/s]
    Vec3 ba = Vec3::Zero();        // accelerometer bias [m/s^2]
    Vec3 bw = Vec3::Zero();        // gyroscope bias [rad/s]
    double t = 0.0;                // seconds, IMU clock
};

/// GPS-IMU extrinsic lever arm and clock offset. The offset convention is
/// t_imu = t_gps + t_d.
struct CalibState {
    Vec3 p_gb = Vec3::Zero();  // GPS antenna position in the IMU frame [m]
    double t_d = 0.0;          // seconds
};

struct GpsMeasurement {
    double t = 0.0;            // seconds, GPS clock
    Vec3 p_enu = Vec3::Zero(); // ENU position [m]
    Mat3 cov = Mat3::Identity();  // position covariance [m^2]
};

struct VisualObservation {
    double t = 0.0;            // seconds, camera/IMU clock
    std::int64_t landmark_id = -1;
    std::int64_t keyframe_id = -1;  // assigned when bound to a window
    Vec2 uv = Vec2::Zero();    // pixel coordinates
    Mat2 cov = Mat2::Identity();  // pixel covariance [px^2]
};

struct Landmark {
    Vec3 x = Vec3::Zero();  // position in world [m]
};

/// Pinhole camera with rigid camera-from-IMU extrinsic.
struct CameraModel {
    double fx = 458.0, fy = 458.0, cx = 376.0, cy = 240.0;
    int width = 752, height = 480;
    Mat3 R_cb = Mat3::Identity();  // camera-from-body rotation
    Vec3 p_cb = Vec3::Zero();      // body origin in camera frame

    Vec3 world_to_camera(const Mat3& R_wb, const Vec3& p_wb, const Vec3& x_w) const {
        return R_cb * (R_wb.transpose() * (x_w - p_wb)) + p_cb;
    }
    Vec2 project(const Vec3& x_c) const {
        return Vec2(fx * x_c.x() / x_c.z() + cx, fy * x_c.y() / x_c.z() + cy);
    }
    bool in_image(const Vec2& uv) const {
        return uv.x() >= 0.0 && uv.x() < width && uv.y() >= 0.0 && uv.y() < height;
    }
};

struct HuberKernel {
    double delta = 1.345;  // threshold on the Mahalanobis norm
};

/// World-to-ENU transform established by the fast initialization, plus the
/// intermediate transforms it was composed from.
struct FrameAlignment {
    Mat3 R_ew = Mat3::Identity();   // ENU-from-world
    Vec3 p_ew = Vec3::Zero();
    Mat3 R_eb0 = Mat3::Identity();  // ENU-from-first-IMU
    Vec3 p_eb0 = Vec3::Zero();
    Mat3 R_wb0 = Mat3::Identity();  // world-from-first-IMU
    Vec3 p_wb0 = Vec3::Zero();
    bool initialized = false;

    Vec3 world_to_enu(const Vec3& p_w) const { return R_ew * p_w + p_ew; }
    Vec3 enu_to_world(const Vec3& p_e) const { return R_ew.transpose() * (p_e - p_ew); }
};

struct NotInitialized : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct BehindCamera : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace gvio
