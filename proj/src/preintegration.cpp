#include "gvio/preintegration.hpp"

#include "gvio/lie.hpp"

namespace gvio {

Preintegration::Preintegration(const Vec3& ba_lin, const Vec3& bw_lin,
                               const ImuNoiseParams& noise)
    : ba_lin_(ba_lin), bw_lin_(bw_lin), noise_(noise) {}

void Preintegration::integrate(const ImuSample& s, double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("Preintegration::integrate: dt must be > 0");
    if (!s.accel.allFinite() || !s.gyro.allFinite()) {
        throw std::invalid_argument("Preintegration::integrate: non-finite sample");
    }
    step(s.accel, s.gyro, dt);
}

void Preintegration::integrate_midpoint(const ImuSample& start, const ImuSample& end,
                                        double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("Preintegration::integrate_midpoint: dt must be > 0");
    if (!start.accel.allFinite() || !start.gyro.allFinite() ||
        !end.accel.allFinite() || !end.gyro.allFinite()) {
        throw std::invalid_argument("Preintegration::integrate_midpoint: non-finite sample");
    }
    // Rotation with the averaged rate, acceleration averaged across the
    // endpoint frames.
    const Vec3 w = 0.5 * (start.gyro + end.gyro) - bw_lin_;
    const Mat3 R_k = delta_R_;
    const Mat3 R_k1 = R_k * lie::exp_so3(w * dt);
    const Vec3 a_frame =
        0.5 * (R_k * (start.accel - ba_lin_) + R_k1 * (end.accel - ba_lin_));
    const double dt2 = dt * dt;
    delta_p_ += delta_v_ * dt + 0.5 * a_frame * dt2;
    delta_v_ += a_frame * dt;
    propagate_cov_bias(0.5 * (start.accel + end.accel) - ba_lin_, w, dt);
    delta_R_ = lie::normalize_rotation(R_k1);
    delta_t_ += dt;
}

void Preintegration::step(const Vec3& accel, const Vec3& gyro, double dt) {
    const Vec3 a = accel - ba_lin_;
    const Vec3 w = gyro - bw_lin_;
    const Mat3 R_k = delta_R_;  // rotation before this step
    const double dt2 = dt * dt;

    // Terms (old delta_v / delta_R feed position and velocity).
    delta_p_ += delta_v_ * dt + 0.5 * R_k * a * dt2;
    delta_v_ += R_k * a * dt;

    propagate_cov_bias(a, w, dt);
    delta_R_ = lie::normalize_rotation(R_k * lie::exp_so3(w * dt));
    delta_t_ += dt;
}

void Preintegration::propagate_cov_bias(const Vec3& a, const Vec3& w, double dt) {
    const Mat3 R_k = delta_R_;
    const Mat3 a_hat = lie::skew(a);
    const double dt2 = dt * dt;
    const Mat3 dR = lie::exp_so3(w * dt);
    const Mat3 Jr = lie::right_jacobian(w * dt);

    // Bias Jacobians, first order (old J_R_bw feeds the v/p updates).
    J_p_ba_ += J_v_ba_ * dt - 0.5 * R_k * dt2;
    J_p_bw_ += J_v_bw_ * dt - 0.5 * R_k * a_hat * J_R_bw_ * dt2;
    J_v_ba_ += -R_k * dt;
    J_v_bw_ += -R_k * a_hat * J_R_bw_ * dt;
    J_R_bw_ = dR.transpose() * J_R_bw_ - Jr * dt;

    // Covariance, state order (phi, v, p).
    Mat9 A = Mat9::Identity();
    A.block<3, 3>(0, 0) = dR.transpose();
    A.block<3, 3>(3, 0) = -R_k * a_hat * dt;
    A.block<3, 3>(6, 0) = -0.5 * R_k * a_hat * dt2;
    A.block<3, 3>(6, 3) = Mat3::Identity() * dt;

    const double sg2 = noise_.gyro_noise * noise_.gyro_noise / dt;   // discrete gyro var
    const double sa2 = noise_.accel_noise * noise_.accel_noise / dt; // discrete accel var
    Eigen::Matrix<double, 9, 3> Bg = Eigen::Matrix<double, 9, 3>::Zero();
    Bg.block<3, 3>(0, 0) = Jr * dt;
    Eigen::Matrix<double, 9, 3> Ba = Eigen::Matrix<double, 9, 3>::Zero();
    Ba.block<3, 3>(3, 0) = R_k * dt;
    Ba.block<3, 3>(6, 0) = 0.5 * R_k * dt2;

    cov_ = A * cov_ * A.transpose() + sg2 * (Bg * Bg.transpose()) + sa2 * (Ba * Ba.transpose());
}

Preintegration::Corrected Preintegration::corrected(const Vec3& ba_new,
                                                    const Vec3& bw_new) const {
    const Vec3 dba = ba_new - ba_lin_;
    const Vec3 dbw = bw_new - bw_lin_;
    Corrected c;
    c.delta_R = delta_R_ * lie::exp_so3(J_R_bw_ * dbw);
    c.delta_v = delta_v_ + J_v_bw_ * dbw + J_v_ba_ * dba;
    c.delta_p = delta_p_ + J_p_bw_ * dbw + J_p_ba_ * dba;
    return c;
}

Eigen::Matrix<double, 9, 6> Preintegration::bias_jacobian() const {
    Eigen::Matrix<double, 9, 6> J = Eigen::Matrix<double, 9, 6>::Zero();
    J.block<3, 3>(0, 0) = J_R_bw_;
    J.block<3, 3>(3, 0) = J_v_bw_;
    J.block<3, 3>(3, 3) = J_v_ba_;
    J.block<3, 3>(6, 0) = J_p_bw_;
    J.block<3, 3>(6, 3) = J_p_ba_;
    return J;
}

Vec9 inertial_residual(const NavState& S_i, const NavState& S_j,
                       const Preintegration& pre, const Vec3& g) {
    const double dt = pre.delta_t();
    if (!(dt > 0.0)) throw std::invalid_argument("inertial_residual: empty preintegration");
    const auto c = pre.corrected(S_i.ba, S_i.bw);
    const Mat3 Ri_t = S_i.R_wb.transpose();

    Vec9 r;
    r.segment<3>(0) = lie::log_so3(c.delta_R.transpose() * Ri_t * S_j.R_wb);
    r.segment<3>(3) = Ri_t * (S_j.v - S_i.v - g * dt) - c.delta_v;
    r.segment<3>(6) = Ri_t * (S_j.p - S_i.p - S_i.v * dt - 0.5 * g * dt * dt) - c.delta_p;
    return r;
}

InertialJacobians inertial_residual_jacobians(const NavState& S_i,
                                              const NavState& S_j,
                                              const Preintegration& pre,
                                              const Vec3& g) {
    const double dt = pre.delta_t();
    const auto c = pre.corrected(S_i.ba, S_i.bw);
    const Mat3 Ri_t = S_i.R_wb.transpose();

    const Vec3 r_dR = lie::log_so3(c.delta_R.transpose() * Ri_t * S_j.R_wb);
    const Mat3 Jr_inv = lie::right_jacobian_inverse(r_dR);
    const Vec3 dbw = S_i.bw - pre.bw_lin();

    InertialJacobians J;
    J.r_dR_phi_i = -Jr_inv * S_j.R_wb.transpose() * S_i.R_wb;
    J.r_dR_phi_j = Jr_inv;
    J.r_dR_bw = -Jr_inv * lie::exp_so3(r_dR).transpose() *
                lie::right_jacobian(pre.J_R_bw() * dbw) * pre.J_R_bw();

    J.r_dv_phi_i = lie::skew(Ri_t * (S_j.v - S_i.v - g * dt));
    J.r_dv_v_i = -Ri_t;
    J.r_dv_v_j = Ri_t;
    J.r_dv_ba = -pre.J_v_ba();
    J.r_dv_bw = -pre.J_v_bw();

    J.r_dp_phi_i = lie::skew(Ri_t * (S_j.p - S_i.p - S_i.v * dt - 0.5 * g * dt * dt));
    J.r_dp_p_i = -Ri_t;
    J.r_dp_p_j = Ri_t;
    J.r_dp_v_i = -Ri_t * dt;
    J.r_dp_ba = -pre.J_p_ba();
    J.r_dp_bw = -pre.J_p_bw();
    return J;
}

}  // namespace gvio
