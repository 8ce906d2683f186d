#include "gvio/estimator.hpp"

#include <random>

#include "doctest.h"
#include "gvio/lie.hpp"
#include "gvio/simulator.hpp"
#include "oracles.hpp"

using namespace gvio;

namespace {

// A window whose states, preintegrations and measurements are all generated
// by the same discrete propagation, so every residual is zero to rounding.
struct ConsistentWindow {
    FactorGraphWindow w;
    std::vector<NavState> truth;  // discrete truth the window should recover
};

ConsistentWindow make_consistent_window(std::uint64_t seed, int n_kf, bool with_gps,
                                        bool with_vision, double rot_rate = 0.8) {
    std::mt19937_64 rng(seed);
    ConsistentWindow out;
    FactorGraphWindow& w = out.w;

    const double kf_dt = 0.1;
    const int sub = 20;  // IMU samples per keyframe interval
    const double dt = kf_dt / sub;
    const Vec3 g = gravity_w();

    w.calib.p_gb = Vec3(0.21, -0.08, 0.06);
    w.calib.t_d = 0.0;
    w.calib_prior_anchor = w.calib;
    w.frame.R_ew = lie::exp_so3(Vec3(0, 0, 0.7));
    w.frame.p_ew = Vec3(40, -20, 5);
    w.frame.initialized = true;
    w.camera.R_cb << 0, -1, 0, 0, 0, -1, 1, 0, 0;  // forward-looking camera
    w.camera.p_cb = Vec3(0.05, 0.02, -0.01);

    // Moderate declared noise keeps the information matrices within a few
    // orders of magnitude of each other.
    ImuNoiseParams noise;
    noise.gyro_noise = 0.02;
    noise.accel_noise = 0.05;
    noise.gyro_bias_rw = 0.005;
    noise.accel_bias_rw = 0.01;

    NavState s;
    s.R_wb = oracle::random_rotation(rng, 0.5);
    s.p = Vec3(1, 2, 1.5);
    s.v = Vec3(1.2, -0.4, 0.2);
    s.ba = Vec3(0.03, -0.02, 0.01);
    s.bw = Vec3(0.003, 0.002, -0.004);
    s.t = 0.0;
    w.keyframes.push_back(s);

    for (int k = 0; k < n_kf - 1; ++k) {
        Preintegration pre(s.ba, s.bw, noise);
        const Vec3 rate = rot_rate * Vec3(std::sin(0.9 * k + 0.3), std::cos(1.1 * k),
                                          std::sin(0.6 * k + 1.0));
        for (int i = 0; i < sub; ++i) {
            const Vec3 accel_body =
                Vec3(0.8 * std::sin(0.7 * (k * sub + i) * dt), 0.5, 0.3) ;
            ImuSample m;
            m.t = s.t;
            m.gyro = rate + s.bw;
            m.accel = accel_body + s.ba;
            pre.integrate(m, dt);
            const Vec3 a_w = s.R_wb * accel_body + g;
            s.p += s.v * dt + 0.5 * a_w * dt * dt;
            s.v += a_w * dt;
            s.R_wb = s.R_wb * lie::exp_so3(rate * dt);
            s.t += dt;
        }
        w.preints.push_back(std::move(pre));
        w.keyframes.push_back(s);

        if (with_gps) {
            GpsFactor f;
            f.interval = k;
            f.m.t = s.t;  // alpha = 1, zero time offset
            f.m.p_enu = w.frame.world_to_enu(s.p + s.R_wb * w.calib.p_gb);
            f.m.cov = 1e-2 * Mat3::Identity();
            w.gps_factors.push_back(f);
        }
    }

    if (with_vision) {
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        for (int j = 0; j < 25; ++j) {
            // Landmarks ahead of the trajectory mid-point.
            const Vec3 x = w.keyframes[n_kf / 2].p +
                           Vec3(6.0 + 2.0 * u(rng), 4.0 * u(rng), 1.5 * u(rng));
            w.landmarks[j] = Landmark{x};
            for (int k = 0; k < n_kf; ++k) {
                const NavState& kf = w.keyframes[k];
                const Vec3 x_c = w.camera.world_to_camera(kf.R_wb, kf.p, x);
                if (x_c.z() < 0.3) continue;
                const Vec2 uv = w.camera.project(x_c);
                if (!w.camera.in_image(uv)) continue;
                VisualFactor f;
                f.landmark_id = j;
                f.keyframe = k;
                f.uv = uv;
                f.cov = Mat2::Identity();
                w.visual_factors.push_back(f);
            }
        }
        // Keep only landmarks with at least two observations.
        std::map<std::int64_t, int> obs_count;
        for (const auto& f : w.visual_factors) ++obs_count[f.landmark_id];
        std::erase_if(w.visual_factors,
                      [&](const VisualFactor& f) { return obs_count[f.landmark_id] < 2; });
        std::erase_if(w.landmarks,
                      [&](const auto& kv) { return obs_count[kv.first] < 2; });
    }

    out.truth = w.keyframes;
    return out;
}

SolverConfig bare_config() {
    SolverConfig cfg;
    cfg.calib_prior_enabled = false;
    cfg.estimate_extrinsic = false;
    cfg.estimate_time_offset = false;
    return cfg;
}

// Independent finite-difference assembly of the normal equations: every
// Jacobian comes from central differences of the residual functions.
struct FdSystem {
    Eigen::MatrixXd H;
    Eigen::VectorXd b;
};

FdSystem fd_normal_equations(const FactorGraphWindow& w, const SolverConfig& cfg) {
    const int n = w.size();
    const int cb = 15 * n;
    std::vector<std::int64_t> lm_ids;
    for (const auto& [id, lm] : w.landmarks) lm_ids.push_back(id);
    const int dim = cb + 4 + 3 * int(lm_ids.size());
    FdSystem out;
    out.H = Eigen::MatrixXd::Zero(dim, dim);
    out.b = Eigen::VectorXd::Zero(dim);

    const auto fold = [&](const Eigen::MatrixXd& J, const Eigen::MatrixXd& W,
                          const Eigen::VectorXd& r, const std::vector<int>& cols) {
        const Eigen::MatrixXd JtW = J.transpose() * W;
        for (std::size_t a = 0; a < cols.size(); ++a) {
            out.b(cols[a]) -= JtW.row(a).dot(r);
            for (std::size_t b2 = 0; b2 < cols.size(); ++b2) {
                out.H(cols[a], cols[b2]) += JtW.row(a) * J.col(b2);
            }
        }
    };

    // Inertial + bias random walk.
    for (int i = 0; i + 1 < n; ++i) {
        const auto& pre = w.preints[i];
        if (!(pre.delta_t() > 0.0)) continue;
        const NavState Si = w.keyframes[i], Sj = w.keyframes[i + 1];
        Mat9 covr = pre.covariance();
        covr.diagonal().array() += 1e-14 * std::max(1.0, covr.trace());
        const Mat9 W = covr.inverse();
        Eigen::MatrixXd J(9, 30);
        J.leftCols<15>() = oracle::fd_jacobian_state(
            [&](const NavState& s) -> Eigen::VectorXd {
                return inertial_residual(s, Sj, pre, cfg.gravity);
            },
            Si);
        J.rightCols<15>() = oracle::fd_jacobian_state(
            [&](const NavState& s) -> Eigen::VectorXd {
                return inertial_residual(Si, s, pre, cfg.gravity);
            },
            Sj);
        std::vector<int> cols(30);
        for (int c = 0; c < 30; ++c) cols[c] = 15 * i + c;
        fold(J, W, inertial_residual(Si, Sj, pre, cfg.gravity), cols);

        const double dt = pre.delta_t();
        Eigen::Matrix<double, 6, 6> Wrw = Eigen::Matrix<double, 6, 6>::Zero();
        Wrw.block<3, 3>(0, 0) =
            Mat3::Identity() /
            std::max(pre.noise().gyro_bias_rw * pre.noise().gyro_bias_rw * dt, 1e-16);
        Wrw.block<3, 3>(3, 3) =
            Mat3::Identity() /
            std::max(pre.noise().accel_bias_rw * pre.noise().accel_bias_rw * dt, 1e-16);
        Eigen::Matrix<double, 6, 12> Jrw = Eigen::Matrix<double, 6, 12>::Zero();
        Jrw.block<3, 3>(0, 0) = -Mat3::Identity();  // bw_i
        Jrw.block<3, 3>(0, 6) = Mat3::Identity();   // bw_j
        Jrw.block<3, 3>(3, 3) = -Mat3::Identity();  // ba_i
        Jrw.block<3, 3>(3, 9) = Mat3::Identity();   // ba_j
        Eigen::VectorXd r_rw(6);
        r_rw.head<3>() = Sj.bw - Si.bw;
        r_rw.tail<3>() = Sj.ba - Si.ba;
        std::vector<int> cols_rw = {15 * i + 12, 15 * i + 13, 15 * i + 14,
                                    15 * i + 9, 15 * i + 10, 15 * i + 11,
                                    15 * (i + 1) + 12, 15 * (i + 1) + 13, 15 * (i + 1) + 14,
                                    15 * (i + 1) + 9, 15 * (i + 1) + 10, 15 * (i + 1) + 11};
        fold(Jrw, Wrw, r_rw, cols_rw);
    }

    // GPS.
    for (const auto& f : w.gps_factors) {
        const int i = f.interval;
        const NavState Si = w.keyframes[i], Sj = w.keyframes[i + 1];
        const double alpha = interpolation_alpha(f.m.t, w.calib.t_d, Si.t, Sj.t);
        if (alpha <= cfg.alpha_min) continue;
        const auto eval = evaluate_gps_factor(Si, Sj, w.preints[i], f.m, w.calib,
                                              w.frame, cfg.gravity);
        const Mat3 covr = eval.noise_transform * f.m.cov * eval.noise_transform.transpose();
        const Mat3 W = covr.inverse();

        Eigen::MatrixXd J(3, 34);
        J.block<3, 15>(0, 0) = oracle::fd_jacobian_state(
            [&](const NavState& s) -> Eigen::VectorXd {
                return gps_residual(s, Sj, w.preints[i], f.m, w.calib, w.frame, cfg.gravity);
            },
            Si);
        J.block<3, 15>(0, 15) = oracle::fd_jacobian_state(
            [&](const NavState& s) -> Eigen::VectorXd {
                return gps_residual(Si, s, w.preints[i], f.m, w.calib, w.frame, cfg.gravity);
            },
            Sj);
        for (int d = 0; d < 4; ++d) {
            CalibState cp = w.calib, cm = w.calib;
            const double h = d < 3 ? 1e-6 : 1e-7;
            if (d < 3) {
                cp.p_gb(d) += h;
                cm.p_gb(d) -= h;
            } else {
                cp.t_d += h;
                cm.t_d -= h;
            }
            J.col(30 + d) =
                (gps_residual(Si, Sj, w.preints[i], f.m, cp, w.frame, cfg.gravity) -
                 gps_residual(Si, Sj, w.preints[i], f.m, cm, w.frame, cfg.gravity)) /
                (2.0 * h);
        }
        std::vector<int> cols(34);
        for (int c = 0; c < 30; ++c) cols[c] = 15 * i + c;
        for (int c = 0; c < 4; ++c) cols[30 + c] = cb + c;
        fold(J, W, eval.r, cols);
    }

    // Visual with IRLS weights.
    for (const auto& f : w.visual_factors) {
        const NavState S = w.keyframes[f.keyframe];
        const Landmark lm = w.landmarks.at(f.landmark_id);
        VisualObservation obs;
        obs.uv = f.uv;
        const auto vr = visual_residual(obs, S, lm, w.camera);
        const auto hub = huber_apply(vr.r, f.cov, HuberKernel{cfg.huber_delta});
        const Mat2 W = hub.weight * f.cov.inverse();

        Eigen::MatrixXd J(2, 18);
        J.leftCols<15>() = oracle::fd_jacobian_state(
            [&](const NavState& s) -> Eigen::VectorXd {
                return visual_residual(obs, s, lm, w.camera).r;
            },
            S);
        for (int d = 0; d < 3; ++d) {
            Vec3 e = Vec3::Zero();
            e(d) = 1e-6;
            J.col(15 + d) = (visual_residual(obs, S, Landmark{lm.x + e}, w.camera).r -
                             visual_residual(obs, S, Landmark{lm.x - e}, w.camera).r) /
                            2e-6;
        }
        const int li =
            int(std::find(lm_ids.begin(), lm_ids.end(), f.landmark_id) - lm_ids.begin());
        std::vector<int> cols(18);
        for (int c = 0; c < 15; ++c) cols[c] = 15 * f.keyframe + c;
        for (int c = 0; c < 3; ++c) cols[15 + c] = cb + 4 + 3 * li + c;
        fold(J, W, vr.r, cols);
    }
    return out;
}

}  // namespace

TEST_CASE("cost and gradient vanish at the consistent truth") {
    const auto cw = make_consistent_window(1, 5, true, true);
    const auto ne = build_normal_equations(cw.w, bare_config());
    CHECK(ne.cost < 1e-10);
    CHECK(ne.b.norm() < 1e-8);
}

TEST_CASE("normal equations match the finite-difference assembly oracle") {
    auto cw = make_consistent_window(3, 4, true, true);
    std::mt19937_64 rng(5);
    // Perturb so residuals and IRLS weights are non-trivial.
    for (auto& kf : cw.w.keyframes) {
        kf.p += oracle::random_vec(rng, 0.05);
        kf.v += oracle::random_vec(rng, 0.05);
        kf.R_wb = kf.R_wb * lie::exp_so3(oracle::random_vec(rng, 0.02));
        kf.ba += oracle::random_vec(rng, 0.01);
        kf.bw += oracle::random_vec(rng, 0.002);
    }
    for (auto& [id, lm] : cw.w.landmarks) lm.x += oracle::random_vec(rng, 0.05);
    cw.w.calib.p_gb += Vec3(0.1, -0.05, 0.2);
    cw.w.calib.t_d += 0.005;

    SolverConfig cfg = bare_config();
    const auto ne = build_normal_equations(cw.w, cfg);
    const auto fd = fd_normal_equations(cw.w, cfg);
    REQUIRE(ne.H.rows() == fd.H.rows());
    const double h_scale = fd.H.cwiseAbs().maxCoeff();
    CHECK((ne.H - fd.H).cwiseAbs().maxCoeff() / h_scale < 1e-4);
    const double b_scale = std::max(fd.b.cwiseAbs().maxCoeff(), 1.0);
    CHECK((ne.b - fd.b).cwiseAbs().maxCoeff() / b_scale < 1e-4);
}

TEST_CASE("disabling GPS factors reproduces the visual-inertial cost") {
    auto cw = make_consistent_window(7, 5, true, true);
    std::mt19937_64 rng(7);
    for (auto& kf : cw.w.keyframes) kf.p += oracle::random_vec(rng, 0.02);

    const SolverConfig cfg = bare_config();
    const auto full = build_normal_equations(cw.w, cfg);

    auto no_gps = cw.w;
    no_gps.gps_factors.clear();
    const auto vi = build_normal_equations(no_gps, cfg);

    // GPS rows absent: the calibration block is exactly zero.
    const int cbi = 15 * no_gps.size();
    CHECK(vi.H.block<4, 4>(cbi, cbi).cwiseAbs().maxCoeff() == 0.0);
    CHECK(vi.cost <= full.cost);

    // The cost difference is exactly the sum of GPS Mahalanobis terms.
    double gps_cost = 0.0;
    for (const auto& f : cw.w.gps_factors) {
        const auto e = evaluate_gps_factor(cw.w.keyframes[f.interval],
                                           cw.w.keyframes[f.interval + 1],
                                           cw.w.preints[f.interval], f.m, cw.w.calib,
                                           cw.w.frame, cfg.gravity);
        const Mat3 covr = e.noise_transform * f.m.cov * e.noise_transform.transpose();
        gps_cost += e.r.dot(covr.inverse() * e.r);
    }
    CHECK(full.cost - vi.cost == doctest::Approx(gps_cost).epsilon(1e-9));
}

TEST_CASE("solver pulls a perturbed window back to the discrete truth") {
    auto cw = make_consistent_window(11, 6, true, true);
    std::mt19937_64 rng(11);
    for (std::size_t k = 1; k < cw.w.keyframes.size(); ++k) {
        cw.w.keyframes[k].p += 0.01 * oracle::random_vec(rng, 1.0);
        cw.w.keyframes[k].v += 0.01 * oracle::random_vec(rng, 1.0);
    }
    SolverConfig cfg = bare_config();
    const auto report = solve_window(cw.w, cfg);
    CHECK(report.converged);
    CHECK(int(report.iterations.size()) <= 10);
    for (std::size_t k = 0; k < cw.w.keyframes.size(); ++k) {
        CHECK((cw.w.keyframes[k].p - cw.truth[k].p).norm() < 1e-6);
    }

    // Accepted costs are non-increasing.
    double prev = report.initial_cost;
    for (const auto& it : report.iterations) {
        if (it.accepted) {
            CHECK(it.cost <= prev);
            prev = it.cost;
        }
    }
}

TEST_CASE("solver is deterministic") {
    auto a = make_consistent_window(13, 5, true, true);
    auto b = make_consistent_window(13, 5, true, true);
    std::mt19937_64 r1(17), r2(17);
    for (auto& kf : a.w.keyframes) kf.p += 0.01 * oracle::random_vec(r1, 1.0);
    for (auto& kf : b.w.keyframes) kf.p += 0.01 * oracle::random_vec(r2, 1.0);
    const SolverConfig cfg = bare_config();
    const auto ra = solve_window(a.w, cfg);
    const auto rb = solve_window(b.w, cfg);
    REQUIRE(ra.iterations.size() == rb.iterations.size());
    for (std::size_t i = 0; i < ra.iterations.size(); ++i) {
        CHECK(ra.iterations[i].cost == rb.iterations[i].cost);
        CHECK(ra.iterations[i].step_norm == rb.iterations[i].step_norm);
    }
    for (std::size_t k = 0; k < a.w.keyframes.size(); ++k) {
        CHECK(a.w.keyframes[k].p == b.w.keyframes[k].p);
        CHECK(a.w.keyframes[k].R_wb == b.w.keyframes[k].R_wb);
    }
}

namespace {
// Null-space dimension of the state system, calibration rows excluded. The
// raw eigenvalues mix units (rad, m, px), so the matrix is Jacobi-scaled to
// unit diagonal first; exact gauge nulls survive the scaling.
int state_null_count(const FactorGraphWindow& w, const SolverConfig& cfg) {
    const auto ne = build_normal_equations(w, cfg);
    const int cbi = 15 * w.size();
    std::vector<int> keep;
    for (int i = 0; i < ne.H.rows(); ++i) {
        if (i < cbi || i >= cbi + 4) keep.push_back(i);
    }
    Eigen::MatrixXd H(keep.size(), keep.size());
    for (std::size_t a = 0; a < keep.size(); ++a) {
        for (std::size_t b = 0; b < keep.size(); ++b) {
            H(a, b) = ne.H(keep[a], keep[b]);
        }
    }
    Eigen::VectorXd d = H.diagonal().cwiseMax(1e-12).cwiseSqrt().cwiseInverse();
    const Eigen::MatrixXd Hs = d.asDiagonal() * H * d.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Hs);
    // Gauge nulls are exact zeros (~1e-16 after scaling); weakly observable
    // dimensions (short-window accelerometer bias) sit orders of magnitude
    // above this threshold.
    int nulls = 0;
    for (int i = 0; i < es.eigenvalues().size(); ++i) {
        if (es.eigenvalues()(i) < 1e-13 * es.eigenvalues().maxCoeff()) {
            ++nulls;
            if (std::getenv("GVIO_RANK_DEBUG")) {
                int mx = 0;
                es.eigenvectors().col(i).cwiseAbs().maxCoeff(&mx);
                std::printf("null eig %g dominant dim %d (kept idx %d)\n",
                            es.eigenvalues()(i), mx, keep[mx]);
            }
        }
    }
    return nulls;
}
}  // namespace

TEST_CASE("gauge analysis: GPS pins the window, VI-only leaves 4 DoF") {
    // VI-only, no priors: exactly the 4-dimensional translation+yaw gauge.
    auto vi = make_consistent_window(19, 4, false, true);
    SolverConfig cfg = bare_config();
    CHECK(state_null_count(vi.w, cfg) == 4);

    // With a gauge prior on the first keyframe the system is full rank.
    MarginalPrior gauge;
    gauge.anchor_state = vi.w.keyframes[0];
    gauge.anchor_calib = vi.w.calib;
    const Vec3 yaw_dir = vi.w.keyframes[0].R_wb.transpose() * Vec3::UnitZ();
    gauge.L.block<3, 3>(0, 0) = 1e6 * (yaw_dir * yaw_dir.transpose());
    gauge.L.block<3, 3>(3, 3) = 1e6 * Mat3::Identity();
    vi.w.prior = gauge;
    CHECK(state_null_count(vi.w, cfg) == 0);

    // GPS factors alone fully constrain the states (calibration held fixed).
    auto gps = make_consistent_window(23, 4, true, true);
    CHECK(state_null_count(gps.w, cfg) == 0);
}

TEST_CASE("marginalization matches the dense elimination oracle") {
    auto cw = make_consistent_window(29, 4, true, false);
    std::mt19937_64 rng(29);
    for (auto& kf : cw.w.keyframes) kf.p += oracle::random_vec(rng, 0.03);
    // Give the window an existing prior so the path through it is exercised.
    MarginalPrior prior;
    prior.anchor_state = cw.w.keyframes[0];
    prior.anchor_calib = cw.w.calib;
    prior.L.setIdentity();
    prior.L *= 10.0;
    cw.w.prior = prior;

    SolverConfig cfg = bare_config();
    cfg.estimate_extrinsic = true;
    cfg.estimate_time_offset = true;
    cfg.prior_carries_calib = true;  // verify the full Schur complement

    // Oracle: dense FD assembly of the mini problem, explicit Schur.
    FactorGraphWindow mini;
    mini.keyframes = {cw.w.keyframes[0], cw.w.keyframes[1]};
    mini.preints = {cw.w.preints[0]};
    for (const auto& f : cw.w.gps_factors) {
        if (f.interval == 0) mini.gps_factors.push_back(f);
    }
    mini.calib = cw.w.calib;
    mini.frame = cw.w.frame;
    mini.camera = cw.w.camera;
    const auto fd = fd_normal_equations(mini, cfg);
    Eigen::MatrixXd Hm = fd.H;
    Eigen::VectorXd bm = fd.b;
    // Fold the existing prior in (delta = 0 at its anchor, mu = 0).
    Hm.block<15, 15>(0, 0) += prior.L.block<15, 15>(0, 0);
    Hm.block<15, 4>(0, 30) += prior.L.block<15, 4>(0, 15);
    Hm.block<4, 15>(30, 0) += prior.L.block<4, 15>(15, 0);
    Hm.block<4, 4>(30, 30) += prior.L.block<4, 4>(15, 15);

    const Eigen::MatrixXd Haa = Hm.block(0, 0, 15, 15);
    const Eigen::MatrixXd Hab = Hm.block(0, 15, 15, 19);
    const Eigen::MatrixXd Hbb = Hm.block(15, 15, 19, 19);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Haa);
    Eigen::VectorXd inv_eig = es.eigenvalues();
    for (int i = 0; i < inv_eig.size(); ++i) {
        inv_eig(i) = inv_eig(i) > 1e-10 * es.eigenvalues().maxCoeff() ? 1.0 / inv_eig(i) : 0.0;
    }
    const Eigen::MatrixXd Haa_pinv =
        es.eigenvectors() * inv_eig.asDiagonal() * es.eigenvectors().transpose();
    const Eigen::MatrixXd L_expect = Hbb - Hab.transpose() * Haa_pinv * Hab;

    marginalize_oldest(cw.w, cfg);
    REQUIRE(cw.w.prior.has_value());
    const double scale = L_expect.cwiseAbs().maxCoeff();
    CHECK((cw.w.prior->L - L_expect).cwiseAbs().maxCoeff() / scale < 1e-6);
    CHECK(cw.w.size() == 3);
    CHECK(cw.w.preints.size() == 2);
    for (const auto& f : cw.w.gps_factors) CHECK(f.interval >= 0);
}

TEST_CASE("marginalizing a keyframe with no factors leaves zero information") {
    FactorGraphWindow w;
    NavState a, b;
    b.t = 0.1;
    w.keyframes = {a, b};
    w.preints = {Preintegration{}};  // empty: no inertial factor
    const SolverConfig cfg = bare_config();
    marginalize_oldest(w, cfg);
    REQUIRE(w.prior.has_value());
    CHECK(w.prior->L.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("repeated marginalization keeps a noiseless run at truth") {
    auto cw = make_consistent_window(31, 8, true, true);
    SolverConfig cfg = bare_config();
    for (int round = 0; round < 4; ++round) {
        solve_window(cw.w, cfg);
        marginalize_oldest(cw.w, cfg);
    }
    solve_window(cw.w, cfg);
    const int off = int(cw.truth.size()) - cw.w.size();
    for (int k = 0; k < cw.w.size(); ++k) {
        CHECK((cw.w.keyframes[k].p - cw.truth[off + k].p).norm() < 1e-6);
    }
}

TEST_CASE("calibration observability: excited vs straight-line windows") {
    // Rotation-rich: the calibration marginal information is positive definite.
    auto rich = make_consistent_window(37, 6, true, false, 1.5);
    SolverConfig cfg = bare_config();
    cfg.estimate_extrinsic = true;
    cfg.estimate_time_offset = true;
    const Eigen::Matrix4d info_rich = marginal_calib_information(rich.w, cfg);
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> es_rich(info_rich);
    CHECK(es_rich.eigenvalues().minCoeff() > 1e-4 * es_rich.eigenvalues().maxCoeff());

    // Straight constant-velocity run: lever arm unobservable along velocity.
    auto flat = make_consistent_window(41, 6, true, false, 0.0);
    const Eigen::Matrix4d info_flat = marginal_calib_information(flat.w, cfg);
    // Eliminate t_d, then inspect the 3x3 lever-arm block.
    const double s_td = info_flat(3, 3);
    Mat3 lever_info = info_flat.topLeftCorner<3, 3>();
    if (s_td > 1e-12) {
        lever_info -= info_flat.topRightCorner<3, 1>() *
                      info_flat.bottomLeftCorner<1, 3>() / s_td;
    }
    Eigen::SelfAdjointEigenSolver<Mat3> es_flat(lever_info);
    CHECK(es_flat.eigenvalues().minCoeff() <
          1e-6 * std::max(es_flat.eigenvalues().maxCoeff(), 1e-300));

    // The null direction is the (body-frame) velocity direction.
    int min_idx = 0;
    es_flat.eigenvalues().minCoeff(&min_idx);
    const Vec3 null_dir = es_flat.eigenvectors().col(min_idx);
    const Vec3 v_body =
        (flat.w.keyframes[0].R_wb.transpose() * flat.w.keyframes[0].v).normalized();
    CHECK(std::abs(null_dir.dot(v_body)) > 0.99);

    // The solver reports instead of diverging on the degenerate problem.
    SolverConfig run_cfg = cfg;
    run_cfg.calib_prior_enabled = true;
    flat.w.calib_prior_anchor = flat.w.calib;
    const auto report = solve_window(flat.w, run_cfg);
    CHECK(std::isfinite(report.final_cost));
    CHECK(flat.w.calib.p_gb.norm() < 10.0);
}

TEST_CASE("dropout helpers remove the right factors") {
    auto cw = make_consistent_window(43, 6, true, true);
    const auto n_gps = cw.w.gps_factors.size();
    const auto n_vis = cw.w.visual_factors.size();
    const double t0 = cw.w.keyframes[2].t, t1 = cw.w.keyframes[4].t;

    const int removed_gps = process_gps_dropout(cw.w, t0, t1);
    CHECK(removed_gps > 0);
    CHECK(cw.w.gps_factors.size() + removed_gps == n_gps);
    for (const auto& f : cw.w.gps_factors) {
        CHECK((f.m.t < t0 || f.m.t > t1));
    }

    const int removed_vis = process_vision_dropout(cw.w, t0, t1);
    CHECK(removed_vis > 0);
    CHECK(cw.w.visual_factors.size() + removed_vis == n_vis);

    // The remaining problem still solves.
    const auto report = solve_window(cw.w, bare_config());
    CHECK(std::isfinite(report.final_cost));
}
