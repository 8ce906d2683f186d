#pragma once

#include "gvio/preintegration.hpp"
#include "gvio/types.hpp"

namespace gvio {

/// Pixel reprojection residual r = uv_observed - project(landmark in camera),
/// with Jacobians for the observing keyframe pose and the landmark.
struct VisualResidual {
    Vec2 r;
    double depth;                 // landmark depth in the camera frame [m]
    Eigen::Matrix<double, 2, 3> J_phi_i;  // d r / d phi (R <- R Exp(dphi))
    Eigen::Matrix<double, 2, 3> J_p_i;
    Eigen::Matrix<double, 2, 3> J_landmark;
};

/// Throws BehindCamera when the landmark depth is <= 1e-6 m.
VisualResidual visual_residual(const VisualObservation& obs, const NavState& S_i,
                               const Landmark& lm, const CameraModel& cam);

/// Robust Huber evaluation on a whitened residual. Returns the robust cost
/// and the IRLS weight min(1, delta/s) with s the Mahalanobis norm.
struct HuberResult {
    double cost;
    double weight;
    double mahalanobis;
};
HuberResult huber_apply(const Eigen::VectorXd& r, const Eigen::MatrixXd& cov,
                        const HuberKernel& kernel);

/// ENU fix into the local world frame. Throws NotInitialized.
Vec3 gps_to_world(const GpsMeasurement& m, const FrameAlignment& F);

/// alpha = (t_k + t_d - t_i) / (t_{i+1} - t_i). Never clamped; the
/// time-offset Jacobian differentiates through it.
double interpolation_alpha(double t_k, double t_d, double t_i, double t_ip1);

/// One full evaluation of the GPS residual (Eq.-9 style interpolated
/// measurement against the shared preintegration) together with every
/// Jacobian the optimizer needs. All rotation blocks are right-multiplicative
/// manifold perturbations.
struct GpsFactorEval {
    Vec3 r;
    double alpha;
    Mat3 J_p_gb;   // calibration: lever arm
    Vec3 J_t_d;    // calibration: time offset
    Mat3 J_phi_i, J_p_i, J_v_i, J_ba, J_bw, J_phi_j;
    Mat3 noise_transform;  // d r / d p_g^enu, maps GPS covariance to residual space
};

GpsFactorEval evaluate_gps_factor(const NavState& S_i, const NavState& S_j,
                                  const Preintegration& pre,
                                  const GpsMeasurement& m, const CalibState& calib,
                                  const FrameAlignment& F, const Vec3& g);

Vec3 gps_residual(const NavState& S_i, const NavState& S_j,
                  const Preintegration& pre, const GpsMeasurement& m,
                  const CalibState& calib, const FrameAlignment& F, const Vec3& g);

/// d r / d p_g^b = -(1/alpha) Exp(alpha Log(R_i^T R_j)).
Mat3 gps_jacobian_extrinsic(const NavState& S_i, const NavState& S_j,
                            const Preintegration& pre, const GpsMeasurement& m,
                            const CalibState& calib, const FrameAlignment& F,
                            const Vec3& g);

Vec3 gps_jacobian_time_offset(const NavState& S_i, const NavState& S_j,
                              const Preintegration& pre, const GpsMeasurement& m,
                              const CalibState& calib, const FrameAlignment& F,
                              const Vec3& g);

struct GpsStateJacobians {
    Mat3 J_phi_i, J_p_i, J_v_i, J_ba, J_bw, J_phi_j;
};
GpsStateJacobians gps_jacobians_states(const NavState& S_i, const NavState& S_j,
                                       const Preintegration& pre,
                                       const GpsMeasurement& m,
                                       const CalibState& calib,
                                       const FrameAlignment& F, const Vec3& g);

}  // namespace gvio
