#include "gvio/residuals.hpp"

#include <Eigen/Dense>

#include "gvio/lie.hpp"

namespace gvio {

VisualResidual visual_residual(const VisualObservation& obs, const NavState& S_i,
                               const Landmark& lm, const CameraModel& cam) {
    const Vec3 x_b = S_i.R_wb.transpose() * (lm.x - S_i.p);
    const Vec3 x_c = cam.R_cb * x_b + cam.p_cb;
    if (x_c.z() <= 1e-6) {
        throw BehindCamera("visual_residual: landmark depth <= 1e-6 m");
    }

    VisualResidual out;
    out.depth = x_c.z();
    out.r = obs.uv - cam.project(x_c);

    const double iz = 1.0 / x_c.z();
    Eigen::Matrix<double, 2, 3> P;
    P << cam.fx * iz, 0.0, -cam.fx * x_c.x() * iz * iz,
         0.0, cam.fy * iz, -cam.fy * x_c.y() * iz * iz;

    const Mat3 R_cw = cam.R_cb * S_i.R_wb.transpose();
    out.J_landmark = -P * R_cw;
    out.J_p_i = P * R_cw;
    out.J_phi_i = -P * cam.R_cb * lie::skew(x_b);
    return out;
}

HuberResult huber_apply(const Eigen::VectorXd& r, const Eigen::MatrixXd& cov,
                        const HuberKernel& kernel) {
    if (kernel.delta <= 0.0) throw std::invalid_argument("huber_apply: delta must be > 0");
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) {
        throw std::invalid_argument("huber_apply: covariance is not positive definite");
    }
    const double s2 = r.dot(llt.solve(r));
    const double s = std::sqrt(std::max(0.0, s2));

    HuberResult out;
    out.mahalanobis = s;
    if (s <= kernel.delta) {
        out.cost = s2;
        out.weight = 1.0;
    } else {
        out.cost = kernel.delta * (2.0 * s - kernel.delta);
        out.weight = kernel.delta / s;
    }
    return out;
}

Vec3 gps_to_world(const GpsMeasurement& m, const FrameAlignment& F) {
    if (!F.initialized) throw NotInitialized("gps_to_world: frame alignment not initialized");
    return F.enu_to_world(m.p_enu);
}

double interpolation_alpha(double t_k, double t_d, double t_i, double t_ip1) {
    if (!(t_ip1 > t_i)) throw std::invalid_argument("interpolation_alpha: t_{i+1} must be > t_i");
    return (t_k + t_d - t_i) / (t_ip1 - t_i);
}

GpsFactorEval evaluate_gps_factor(const NavState& S_i, const NavState& S_j,
                                  const Preintegration& pre,
                                  const GpsMeasurement& m, const CalibState& calib,
                                  const FrameAlignment& F, const Vec3& g) {
    const double dt = S_j.t - S_i.t;
    const double alpha = interpolation_alpha(m.t, calib.t_d, S_i.t, S_j.t);
    if (std::abs(alpha) < 1e-12) {
        throw std::invalid_argument("evaluate_gps_factor: alpha is zero");
    }
    const double tau = alpha * dt;  // t_k + t_d - t_i
    const double inv_a = 1.0 / alpha;

    const Vec3 p_gw = gps_to_world(m, F);
    const Mat3 Ri_t = S_i.R_wb.transpose();
    const Vec3 theta = lie::log_so3(Ri_t * S_j.R_wb);
    const Mat3 E = lie::exp_so3(alpha * theta);   // R_i^T R_bk
    const Mat3 R_bk = S_i.R_wb * E;
    const Vec3 p_bk = p_gw - R_bk * calib.p_gb;

    const auto c = pre.corrected(S_i.ba, S_i.bw);

    GpsFactorEval out;
    out.alpha = alpha;
    out.r = Ri_t * (inv_a * (p_bk - S_i.p) - S_i.v * dt - 0.5 * g * dt * dt) - c.delta_p;

    // Calibration Jacobians. The interpolation argument Log(R_i^T R_j) is
    // differentiated with its own sign; the left Jacobian leaves the axis
    // invariant so J_l(alpha theta) theta == theta.
    out.J_p_gb = -inv_a * E;
    out.J_t_d = -(dt / (tau * tau)) * (Ri_t * (p_gw - R_bk * calib.p_gb - S_i.p)) +
                (1.0 / tau) * (Ri_t * R_bk * lie::skew(calib.p_gb) *
                               lie::left_jacobian(alpha * theta) * theta);

    // State Jacobians.
    const Mat3 Jr_alpha = lie::right_jacobian(alpha * theta);
    const Mat3 Jr_inv = lie::right_jacobian_inverse(theta);
    const Mat3 lever = lie::skew(calib.p_gb);
    const Vec3 z = inv_a * (p_gw - S_i.p) - S_i.v * dt - 0.5 * g * dt * dt;

    out.J_phi_i = lie::skew(Ri_t * z) -
                  E * lever * Jr_alpha * Jr_inv * lie::exp_so3(theta).transpose();
    out.J_phi_j = E * lever * Jr_alpha * Jr_inv;
    out.J_p_i = -inv_a * Ri_t;
    out.J_v_i = -dt * Ri_t;
    out.J_ba = -pre.J_p_ba();
    out.J_bw = -pre.J_p_bw();

    out.noise_transform = inv_a * Ri_t * F.R_ew.transpose();
    return out;
}

Vec3 gps_residual(const NavState& S_i, const NavState& S_j,
                  const Preintegration& pre, const GpsMeasurement& m,
                  const CalibState& calib, const FrameAlignment& F, const Vec3& g) {
    return evaluate_gps_factor(S_i, S_j, pre, m, calib, F, g).r;
}

Mat3 gps_jacobian_extrinsic(const NavState& S_i, const NavState& S_j,
                            const Preintegration& pre, const GpsMeasurement& m,
                            const CalibState& calib, const FrameAlignment& F,
                            const Vec3& g) {
    return evaluate_gps_factor(S_i, S_j, pre, m, calib, F, g).J_p_gb;
}

Vec3 gps_jacobian_time_offset(const NavState& S_i, const NavState& S_j,
                              const Preintegration& pre, const GpsMeasurement& m,
                              const CalibState& calib, const FrameAlignment& F,
                              const Vec3& g) {
    return evaluate_gps_factor(S_i, S_j, pre, m, calib, F, g).J_t_d;
}

GpsStateJacobians gps_jacobians_states(const NavState& S_i, const NavState& S_j,
                                       const Preintegration& pre,
                                       const GpsMeasurement& m,
                                       const CalibState& calib,
                                       const FrameAlignment& F, const Vec3& g) {
    const auto e = evaluate_gps_factor(S_i, S_j, pre, m, calib, F, g);
    return GpsStateJacobians{e.J_phi_i, e.J_p_i, e.J_v_i, e.J_ba, e.J_bw, e.J_phi_j};
}

}  // namespace gvio
