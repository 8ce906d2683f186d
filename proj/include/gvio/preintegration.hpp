#pragma once

#include "gvio/types.hpp"

namespace gvio {

/// Continuous-time IMU noise densities.
struct ImuNoiseParams {
    double gyro_noise = 1.6968e-4;   // rad/s/sqrt(Hz)
    double accel_noise = 2.0e-3;     // m/s^2/sqrt(Hz)
    double gyro_bias_rw = 1.9393e-5; // rad/s^2/sqrt(Hz)
    double accel_bias_rw = 3.0e-3;   // m/s^3/sqrt(Hz)
};

/// Accumulates IMU samples between two keyframes into relative rotation,
/// velocity and position terms, with first-order noise covariance and
/// bias-correction Jacobians. Biases are frozen at the linearization point
/// for the whole segment; correct_bias() applies first-order updates.
class Preintegration {
public:
    Preintegration() = default;
    Preintegration(const Vec3& ba_lin, const Vec3& bw_lin,
                   const ImuNoiseParams& noise = {});

    /// Folds one sample covering dt seconds into the accumulated terms
    /// (first-order Euler step, sample taken at the step start).
    /// Throws std::invalid_argument for dt <= 0 or non-finite samples.
    void integrate(const ImuSample& s, double dt);

    /// Second-order alternative: averages the samples bracketing the step.
    void integrate_midpoint(const ImuSample& start, const ImuSample& end, double dt);

    struct Corrected {
        Mat3 delta_R;
        Vec3 delta_v;
        Vec3 delta_p;
    };
    /// First-order bias-corrected terms at a new bias value, without
    /// re-integration.
    Corrected corrected(const Vec3& ba_new, const Vec3& bw_new) const;

    const Mat3& delta_R() const { return delta_R_; }
    const Vec3& delta_v() const { return delta_v_; }
    const Vec3& delta_p() const { return delta_p_; }
    double delta_t() const { return delta_t_; }
    /// 9x9 covariance of (rotation, velocity, position) residual blocks.
    const Mat9& covariance() const { return cov_; }
    const Vec3& ba_lin() const { return ba_lin_; }
    const Vec3& bw_lin() const { return bw_lin_; }

    const Mat3& J_R_bw() const { return J_R_bw_; }
    const Mat3& J_v_bw() const { return J_v_bw_; }
    const Mat3& J_v_ba() const { return J_v_ba_; }
    const Mat3& J_p_bw() const { return J_p_bw_; }
    const Mat3& J_p_ba() const { return J_p_ba_; }

    /// 9x6 Jacobian of (rotation, velocity, position) w.r.t. (bw, ba).
    Eigen::Matrix<double, 9, 6> bias_jacobian() const;

    const ImuNoiseParams& noise() const { return noise_; }

private:
    Mat3 delta_R_ = Mat3::Identity();
    Vec3 delta_v_ = Vec3::Zero();
    Vec3 delta_p_ = Vec3::Zero();
    double delta_t_ = 0.0;
    Mat9 cov_ = Mat9::Zero();

    Vec3 ba_lin_ = Vec3::Zero();
    Vec3 bw_lin_ = Vec3::Zero();
    Mat3 J_R_bw_ = Mat3::Zero();
    Mat3 J_v_bw_ = Mat3::Zero();
    Mat3 J_v_ba_ = Mat3::Zero();
    Mat3 J_p_bw_ = Mat3::Zero();
    Mat3 J_p_ba_ = Mat3::Zero();

    ImuNoiseParams noise_;

    void step(const Vec3& accel, const Vec3& gyro, double dt);
    void propagate_cov_bias(const Vec3& a, const Vec3& w, double dt);
};

/// Inertial residual [r_dR, r_dv, r_dp] between consecutive keyframes, with
/// the preintegrated terms bias-corrected at S_i's biases.
Vec9 inertial_residual(const NavState& S_i, const NavState& S_j,
                       const Preintegration& pre, const Vec3& g);

/// Analytic Jacobian blocks of the inertial residual. Rotation blocks are
/// right-multiplicative manifold perturbations (R <- R Exp(dphi)); positions,
/// velocities and biases are additive.
struct InertialJacobians {
    // w.r.t. S_i
    Mat3 r_dR_phi_i, r_dR_bw;
    Mat3 r_dv_phi_i, r_dv_v_i, r_dv_ba, r_dv_bw;
    Mat3 r_dp_phi_i, r_dp_p_i, r_dp_v_i, r_dp_ba, r_dp_bw;
    // w.r.t. S_j
    Mat3 r_dR_phi_j;
    Mat3 r_dv_v_j;
    Mat3 r_dp_p_j;
};

InertialJacobians inertial_residual_jacobians(const NavState& S_i,
                                              const NavState& S_j,
                                              const Preintegration& pre,
                                              const Vec3& g);

}  // namespace gvio
