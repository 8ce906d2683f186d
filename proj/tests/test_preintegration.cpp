#include "gvio/preintegration.hpp"

#include <random>

#include "doctest.h"
#include "gvio/lie.hpp"
#include "oracles.hpp"

using namespace gvio;

namespace {

struct Segment {
    std::vector<ImuSample> samples;
    double dt;
};

Segment random_segment(std::mt19937_64& rng, int n, double dt) {
    Segment seg;
    seg.dt = dt;
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int k = 0; k < n; ++k) {
        ImuSample s;
        s.t = k * dt;
        s.accel = Vec3(2.0 * u(rng), 2.0 * u(rng), 9.0 + u(rng));
        s.gyro = Vec3(0.8 * u(rng), 0.8 * u(rng), 0.8 * u(rng));
        seg.samples.push_back(s);
    }
    return seg;
}

Preintegration integrate_all(const Segment& seg, const Vec3& ba, const Vec3& bw) {
    Preintegration pre(ba, bw);
    for (const auto& s : seg.samples) pre.integrate(s, seg.dt);
    return pre;
}

// Exact discrete propagation of a NavState through the same samples the
// preintegration consumed; the residual identity holds to machine precision.
NavState propagate_euler(const NavState& s0, const Segment& seg, const Vec3& g) {
    NavState s = s0;
    for (const auto& m : seg.samples) {
        const Vec3 a_w = s.R_wb * (m.accel - s.ba) + g;
        s.p += s.v * seg.dt + 0.5 * a_w * seg.dt * seg.dt;
        s.v += a_w * seg.dt;
        s.R_wb = s.R_wb * lie::exp_so3((m.gyro - s.bw) * seg.dt);
        s.t += seg.dt;
    }
    return s;
}

}  // namespace

TEST_CASE("stationary free-fall segment integrates to identity") {
    Preintegration pre(Vec3::Zero(), Vec3::Zero());
    ImuSample s;
    for (int k = 0; k < 100; ++k) pre.integrate(s, 0.01);
    CHECK(pre.delta_R().isApprox(Mat3::Identity(), 1e-14));
    CHECK(pre.delta_v().norm() == 0.0);
    CHECK(pre.delta_p().norm() == 0.0);
    CHECK(pre.delta_t() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("constant-rate rotation matches the closed form") {
    Preintegration pre(Vec3::Zero(), Vec3::Zero());
    ImuSample s;
    s.gyro = Vec3(0, 0, 1);
    const int n = 1000;
    for (int k = 0; k < n; ++k) pre.integrate(s, 1.0 / n);
    CHECK((pre.delta_R() - lie::exp_so3(Vec3(0, 0, 1))).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("constant acceleration kinematics") {
    Preintegration pre(Vec3::Zero(), Vec3::Zero());
    ImuSample s;
    s.accel = Vec3(1, 0, 0);
    const double dt = 1e-4;
    for (int k = 0; k < 10000; ++k) pre.integrate(s, dt);
    CHECK((pre.delta_v() - Vec3(1, 0, 0)).norm() < 1e-3);
    CHECK((pre.delta_p() - Vec3(0.5, 0, 0)).norm() < 1e-3);
}

TEST_CASE("integrate rejects bad input") {
    Preintegration pre(Vec3::Zero(), Vec3::Zero());
    ImuSample s;
    CHECK_THROWS_AS(pre.integrate(s, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(pre.integrate(s, -0.01), std::invalid_argument);
    s.accel = Vec3(std::nan(""), 0, 0);
    CHECK_THROWS_AS(pre.integrate(s, 0.01), std::invalid_argument);
}

TEST_CASE("covariance trace grows monotonically") {
    std::mt19937_64 rng(31);
    const Segment seg = random_segment(rng, 200, 0.005);
    Preintegration pre(Vec3::Zero(), Vec3::Zero());
    double prev = -1.0;
    for (const auto& s : seg.samples) {
        pre.integrate(s, seg.dt);
        const double tr = pre.covariance().trace();
        CHECK(tr >= prev);
        prev = tr;
    }
}

TEST_CASE("correct_bias with zero delta is a no-op") {
    std::mt19937_64 rng(5);
    const Vec3 ba(0.02, -0.01, 0.03), bw(0.001, 0.002, -0.001);
    const Segment seg = random_segment(rng, 100, 0.005);
    const Preintegration pre = integrate_all(seg, ba, bw);
    const auto c = pre.corrected(ba, bw);
    CHECK((c.delta_R - pre.delta_R()).isZero(1e-15));
    CHECK((c.delta_v - pre.delta_v()).norm() == 0.0);
    CHECK((c.delta_p - pre.delta_p()).norm() == 0.0);
}

TEST_CASE("correct_bias matches re-integration oracle on a constant-rate segment") {
    Segment seg;
    seg.dt = 0.001;
    for (int k = 0; k < 1000; ++k) {
        ImuSample s;
        s.t = k * seg.dt;
        s.gyro = Vec3(0.3, -0.2, 0.5);
        s.accel = Vec3(0.5, 1.5, 1.0);
        seg.samples.push_back(s);
    }
    const Preintegration pre = integrate_all(seg, Vec3::Zero(), Vec3::Zero());
    const Vec3 dbw(1e-3, 0, 0);
    const auto c = pre.corrected(Vec3::Zero(), dbw);
    const Preintegration re = integrate_all(seg, Vec3::Zero(), dbw);
    CHECK((c.delta_R - re.delta_R()).cwiseAbs().maxCoeff() < 1e-6);
    CHECK((c.delta_v - re.delta_v()).norm() < 1e-6);
    CHECK((c.delta_p - re.delta_p()).norm() < 1e-6);
}

TEST_CASE("accelerometer bias shift on a non-rotating segment, closed form") {
    Segment seg;
    seg.dt = 0.002;
    for (int k = 0; k < 500; ++k) {
        ImuSample s;
        s.t = k * seg.dt;
        s.accel = Vec3(0.1, 0.2, 9.8);
        seg.samples.push_back(s);
    }
    const Preintegration pre = integrate_all(seg, Vec3::Zero(), Vec3::Zero());
    const double T = pre.delta_t();
    const auto c = pre.corrected(Vec3(0.01, 0, 0), Vec3::Zero());
    const Vec3 expect = -0.5 * 0.01 * T * T * Vec3::UnitX();
    CHECK((c.delta_p - pre.delta_p() - expect).norm() < 1e-9);
}

TEST_CASE("correct_bias first-order error decays quadratically") {
    std::mt19937_64 rng(9);
    const Segment seg = random_segment(rng, 200, 0.005);
    const Preintegration pre = integrate_all(seg, Vec3::Zero(), Vec3::Zero());

    const Vec3 db_full(6e-4, -8e-4, 4e-4);  // |db| ~ 1e-3
    const auto err_at = [&](double scale) {
        const Vec3 dba = scale * db_full, dbw = scale * db_full.reverse();
        const auto c = pre.corrected(dba, dbw);
        const Preintegration re = integrate_all(seg, dba, dbw);
        double e = (c.delta_p - re.delta_p()).norm() + (c.delta_v - re.delta_v()).norm();
        e += lie::log_so3(c.delta_R.transpose() * re.delta_R()).norm();
        return e;
    };
    const double e1 = err_at(1.0);
    const double e2 = err_at(0.5);
    CHECK(e1 < 1e-5);
    const double ratio = e1 / e2;
    CHECK(ratio > 3.5);
    CHECK(ratio < 4.5);
}

TEST_CASE("zero residual for states propagated through the same samples") {
    std::mt19937_64 rng(41);
    const Vec3 g = gravity_w();
    for (int trial = 0; trial < 5; ++trial) {
        const Segment seg = random_segment(rng, 200, 0.005);
        NavState Si;
        Si.R_wb = oracle::random_rotation(rng);
        Si.p = oracle::random_vec(rng, 10.0);
        Si.v = oracle::random_vec(rng, 2.0);
        Si.ba = oracle::random_vec(rng, 0.05);
        Si.bw = oracle::random_vec(rng, 0.01);
        const NavState Sj = propagate_euler(Si, seg, g);
        const Preintegration pre = integrate_all(seg, Si.ba, Si.bw);
        CHECK(inertial_residual(Si, Sj, pre, g).norm() < 1e-9);
    }
}

TEST_CASE("residual responds linearly to state perturbations") {
    std::mt19937_64 rng(43);
    const Vec3 g = gravity_w();
    const Segment seg = random_segment(rng, 100, 0.005);
    NavState Si;
    Si.R_wb = oracle::random_rotation(rng);
    Si.v = Vec3(0.5, -0.2, 0.1);
    const NavState Sj = propagate_euler(Si, seg, g);
    const Preintegration pre = integrate_all(seg, Si.ba, Si.bw);
    const double dt = pre.delta_t();
    const Vec9 r0 = inertial_residual(Si, Sj, pre, g);

    const double eps = 0.01;
    NavState Sj_p = Sj;
    Sj_p.p += Vec3(eps, 0, 0);
    const Vec9 r1 = inertial_residual(Si, Sj_p, pre, g);
    CHECK((r1.segment<3>(6) - r0.segment<3>(6) -
           Si.R_wb.transpose() * Vec3(eps, 0, 0)).norm() < 1e-12);

    NavState Si_v = Si;
    Si_v.v += Vec3(eps, 0, 0);
    const Vec9 r2 = inertial_residual(Si_v, Sj, pre, g);
    CHECK((r2.segment<3>(3) - r0.segment<3>(3) +
           Si.R_wb.transpose() * Vec3(eps, 0, 0)).norm() < 1e-12);
    CHECK((r2.segment<3>(6) - r0.segment<3>(6) +
           Si.R_wb.transpose() * Vec3(eps, 0, 0) * dt).norm() < 1e-12);
}

TEST_CASE("analytic residual jacobians match central differences") {
    std::mt19937_64 rng(47);
    const Vec3 g = gravity_w();
    for (int trial = 0; trial < 10; ++trial) {
        const Segment seg = random_segment(rng, 100, 0.005);
        NavState Si;
        Si.R_wb = oracle::random_rotation(rng);
        Si.p = oracle::random_vec(rng, 5.0);
        Si.v = oracle::random_vec(rng, 2.0);
        Si.ba = oracle::random_vec(rng, 0.05);
        Si.bw = oracle::random_vec(rng, 0.01);
        NavState Sj = propagate_euler(Si, seg, g);
        // Perturb Sj so the residual is not at zero.
        Sj.p += oracle::random_vec(rng, 0.05);
        Sj.v += oracle::random_vec(rng, 0.05);
        Sj.R_wb = Sj.R_wb * lie::exp_so3(oracle::random_vec(rng, 0.02));

        const Preintegration pre = integrate_all(seg, Si.ba, Si.bw);
        const auto J = inertial_residual_jacobians(Si, Sj, pre, g);

        Eigen::MatrixXd Ji = Eigen::MatrixXd::Zero(9, 15);
        Ji.block<3, 3>(0, 0) = J.r_dR_phi_i;
        Ji.block<3, 3>(0, 12) = J.r_dR_bw;
        Ji.block<3, 3>(3, 0) = J.r_dv_phi_i;
        Ji.block<3, 3>(3, 6) = J.r_dv_v_i;
        Ji.block<3, 3>(3, 9) = J.r_dv_ba;
        Ji.block<3, 3>(3, 12) = J.r_dv_bw;
        Ji.block<3, 3>(6, 0) = J.r_dp_phi_i;
        Ji.block<3, 3>(6, 3) = J.r_dp_p_i;
        Ji.block<3, 3>(6, 6) = J.r_dp_v_i;
        Ji.block<3, 3>(6, 9) = J.r_dp_ba;
        Ji.block<3, 3>(6, 12) = J.r_dp_bw;
        Eigen::MatrixXd Jj = Eigen::MatrixXd::Zero(9, 15);
        Jj.block<3, 3>(0, 0) = J.r_dR_phi_j;
        Jj.block<3, 3>(3, 6) = J.r_dv_v_j;
        Jj.block<3, 3>(6, 3) = J.r_dp_p_j;

        const auto fd_i = oracle::fd_jacobian_state(
            [&](const NavState& s) -> Eigen::VectorXd {
                return inertial_residual(s, Sj, pre, g);
            },
            Si);
        const auto fd_j = oracle::fd_jacobian_state(
            [&](const NavState& s) -> Eigen::VectorXd {
                return inertial_residual(Si, s, pre, g);
            },
            Sj);
        CHECK(oracle::jac_rel_error(Ji, fd_i) < 1e-5);
        CHECK(oracle::jac_rel_error(Jj, fd_j) < 1e-5);
    }
}

TEST_CASE("midpoint integration is second order on a smooth signal") {
    // Constant angular acceleration; compare against a fine reference.
    const auto run = [](int n, bool midpoint) {
        const double T = 1.0;
        const double dt = T / n;
        Preintegration pre(Vec3::Zero(), Vec3::Zero());
        const auto gyro_at = [](double t) { return Vec3(0.0, 0.0, 0.5 + 0.8 * t); };
        const auto accel_at = [](double t) { return Vec3(std::sin(2.0 * t), 0.3, 9.8); };
        for (int k = 0; k < n; ++k) {
            const double t = k * dt;
            ImuSample a{t, accel_at(t), gyro_at(t)};
            if (midpoint) {
                ImuSample b{t + dt, accel_at(t + dt), gyro_at(t + dt)};
                pre.integrate_midpoint(a, b, dt);
            } else {
                pre.integrate(a, dt);
            }
        }
        return pre;
    };
    const Preintegration fine = run(200000, true);
    const auto err = [&](const Preintegration& p) {
        return (p.delta_v() - fine.delta_v()).norm() + (p.delta_p() - fine.delta_p()).norm();
    };
    const double e_euler = err(run(500, false));
    const double e_mid = err(run(500, true));
    CHECK(e_mid < 0.05 * e_euler);
}
