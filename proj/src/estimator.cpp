#include "gvio/estimator.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "gvio/lie.hpp"

namespace gvio {

namespace {

constexpr int kStateDim = 15;  // [phi, p, v, ba, bw]
constexpr int kCalibDim = 4;   // [p_gb, t_d]

struct LmBlock {
    Mat3 H_ll = Mat3::Zero();
    Vec3 b_l = Vec3::Zero();
    // Jacobian cross blocks against the 6 pose rows (phi, p) of one keyframe.
    std::vector<std::pair<int, Eigen::Matrix<double, 6, 3>>> H_kl;
};

struct Assembly {
    double cost = 0.0;
    int dropped_visual = 0;
    int skipped_gps = 0;
    Eigen::MatrixXd Hpp;  // keyframes + calibration
    Eigen::VectorXd bp;
    std::map<std::int64_t, LmBlock> lm;
    double calib_info_min_diag = 0.0;
};

Mat9 information_from_cov(const Mat9& cov) {
    Mat9 c = cov;
    const double floor = 1e-14 * std::max(1.0, c.trace());
    c.diagonal().array() += floor;
    return c.ldlt().solve(Mat9::Identity());
}

Eigen::Matrix<double, 9, 15> inertial_jac_i(const InertialJacobians& J) {
    Eigen::Matrix<double, 9, 15> Ji = Eigen::Matrix<double, 9, 15>::Zero();
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
    return Ji;
}

Eigen::Matrix<double, 9, 15> inertial_jac_j(const InertialJacobians& J) {
    Eigen::Matrix<double, 9, 15> Jj = Eigen::Matrix<double, 9, 15>::Zero();
    Jj.block<3, 3>(0, 0) = J.r_dR_phi_j;
    Jj.block<3, 3>(3, 6) = J.r_dv_v_j;
    Jj.block<3, 3>(6, 3) = J.r_dp_p_j;
    return Jj;
}

Eigen::Matrix<double, 19, 1> prior_offset(const MarginalPrior& prior,
                                          const NavState& kf, const CalibState& calib) {
    Eigen::Matrix<double, 19, 1> d;
    d.segment<3>(0) = lie::log_so3(prior.anchor_state.R_wb.transpose() * kf.R_wb);
    d.segment<3>(3) = kf.p - prior.anchor_state.p;
    d.segment<3>(6) = kf.v - prior.anchor_state.v;
    d.segment<3>(9) = kf.ba - prior.anchor_state.ba;
    d.segment<3>(12) = kf.bw - prior.anchor_state.bw;
    d.segment<3>(15) = calib.p_gb - prior.anchor_calib.p_gb;
    d(18) = calib.t_d - prior.anchor_calib.t_d;
    return d;
}

Assembly assemble(const FactorGraphWindow& w, const SolverConfig& cfg) {
    const int n = w.size();
    if (n < 2) throw std::invalid_argument("assemble: window needs at least 2 keyframes");
    const int pose_dim = kStateDim * n + kCalibDim;
    const int cb = kStateDim * n;

    Assembly out;
    out.Hpp = Eigen::MatrixXd::Zero(pose_dim, pose_dim);
    out.bp = Eigen::VectorXd::Zero(pose_dim);

    // Inertial + bias random-walk factors, one per consecutive pair. An empty
    // preintegration (no samples) contributes no factor.
    for (int i = 0; i + 1 < n && i < int(w.preints.size()); ++i) {
        const auto& pre = w.preints[i];
        if (!(pre.delta_t() > 0.0)) continue;
        const NavState& Si = w.keyframes[i];
        const NavState& Sj = w.keyframes[i + 1];
        const Vec9 r = inertial_residual(Si, Sj, pre, cfg.gravity);
        const auto Jb = inertial_residual_jacobians(Si, Sj, pre, cfg.gravity);
        const Mat9 W = information_from_cov(pre.covariance());

        Eigen::Matrix<double, 9, 30> J;
        J.block<9, 15>(0, 0) = inertial_jac_i(Jb);
        J.block<9, 15>(0, 15) = inertial_jac_j(Jb);
        out.Hpp.block<30, 30>(kStateDim * i, kStateDim * i) += J.transpose() * W * J;
        out.bp.segment<30>(kStateDim * i) -= J.transpose() * W * r;
        out.cost += r.dot(W * r);

        // Bias random walk between the pair.
        const double dt = pre.delta_t();
        const double wg = 1.0 / std::max(pre.noise().gyro_bias_rw * pre.noise().gyro_bias_rw * dt, 1e-16);
        const double wa = 1.0 / std::max(pre.noise().accel_bias_rw * pre.noise().accel_bias_rw * dt, 1e-16);
        const Vec3 r_bw = Sj.bw - Si.bw;
        const Vec3 r_ba = Sj.ba - Si.ba;
        const int bwi = kStateDim * i + 12, bwj = kStateDim * (i + 1) + 12;
        const int bai = kStateDim * i + 9, baj = kStateDim * (i + 1) + 9;
        for (int k = 0; k < 3; ++k) {
            out.Hpp(bwi + k, bwi + k) += wg;
            out.Hpp(bwj + k, bwj + k) += wg;
            out.Hpp(bwi + k, bwj + k) -= wg;
            out.Hpp(bwj + k, bwi + k) -= wg;
            out.bp(bwi + k) += wg * r_bw(k);
            out.bp(bwj + k) -= wg * r_bw(k);
            out.Hpp(bai + k, bai + k) += wa;
            out.Hpp(baj + k, baj + k) += wa;
            out.Hpp(bai + k, baj + k) -= wa;
            out.Hpp(baj + k, bai + k) -= wa;
            out.bp(bai + k) += wa * r_ba(k);
            out.bp(baj + k) -= wa * r_ba(k);
        }
        out.cost += wg * r_bw.squaredNorm() + wa * r_ba.squaredNorm();
    }

    // GPS factors, plain squared Mahalanobis cost (Eq.-5 form). A measurement
    // whose interpolation factor falls at/below alpha_min (1/alpha blows up)
    // is reassigned to the previous interval; at the window edge it is
    // skipped. Doing this at evaluation time keeps the cost landscape free of
    // one-sided barriers while t_d moves.
    for (const auto& f : w.gps_factors) {
        int i = f.interval;
        double alpha = interpolation_alpha(f.m.t, w.calib.t_d, w.keyframes[i].t,
                                           w.keyframes[i + 1].t);
        while (alpha <= cfg.alpha_min && i > 0) {
            --i;
            alpha = interpolation_alpha(f.m.t, w.calib.t_d, w.keyframes[i].t,
                                        w.keyframes[i + 1].t);
        }
        if (alpha <= cfg.alpha_min) {
            ++out.skipped_gps;
            continue;
        }
        const NavState& Si = w.keyframes[i];
        const NavState& Sj = w.keyframes[i + 1];
        const auto e = evaluate_gps_factor(Si, Sj, w.preints[i], f.m, w.calib, w.frame,
                                           cfg.gravity);
        const Mat3 cov_r = e.noise_transform * f.m.cov * e.noise_transform.transpose();
        const Mat3 W = cov_r.inverse();
        const double chi2 = e.r.dot(W * e.r);
        if (cfg.gps_chi2_gate && chi2 > cfg.gps_chi2_threshold) {
            ++out.skipped_gps;
            continue;
        }

        Eigen::Matrix<double, 3, 15> Ji = Eigen::Matrix<double, 3, 15>::Zero();
        Ji.block<3, 3>(0, 0) = e.J_phi_i;
        Ji.block<3, 3>(0, 3) = e.J_p_i;
        Ji.block<3, 3>(0, 6) = e.J_v_i;
        Ji.block<3, 3>(0, 9) = e.J_ba;
        Ji.block<3, 3>(0, 12) = e.J_bw;
        Eigen::Matrix<double, 3, 15> Jj = Eigen::Matrix<double, 3, 15>::Zero();
        Jj.block<3, 3>(0, 0) = e.J_phi_j;
        Eigen::Matrix<double, 3, 4> Jc;
        Jc.block<3, 3>(0, 0) = e.J_p_gb;
        Jc.col(3) = e.J_t_d;

        const std::array<std::pair<int, Eigen::Matrix<double, 3, Eigen::Dynamic>>, 3> blocks = {
            std::make_pair(kStateDim * i, Eigen::Matrix<double, 3, Eigen::Dynamic>(Ji)),
            std::make_pair(kStateDim * (i + 1), Eigen::Matrix<double, 3, Eigen::Dynamic>(Jj)),
            std::make_pair(cb, Eigen::Matrix<double, 3, Eigen::Dynamic>(Jc))};
        for (const auto& [ra, Ja] : blocks) {
            for (const auto& [rb, Jbk] : blocks) {
                out.Hpp.block(ra, rb, Ja.cols(), Jbk.cols()) += Ja.transpose() * W * Jbk;
            }
            out.bp.segment(ra, Ja.cols()) -= Ja.transpose() * W * e.r;
        }
        out.cost += chi2;
    }

    // Visual factors with IRLS Huber weights.
    const HuberKernel kernel{cfg.huber_delta};
    for (const auto& f : w.visual_factors) {
        const auto lm_it = w.landmarks.find(f.landmark_id);
        if (lm_it == w.landmarks.end()) continue;
        const NavState& S = w.keyframes[f.keyframe];
        VisualObservation obs;
        obs.uv = f.uv;
        VisualResidual vr;
        try {
            vr = visual_residual(obs, S, lm_it->second, w.camera);
        } catch (const BehindCamera&) {
            ++out.dropped_visual;
            continue;
        }
        const auto hub = huber_apply(vr.r, f.cov, kernel);
        const Mat2 W = hub.weight * f.cov.inverse();

        Eigen::Matrix<double, 2, 6> Jp;
        Jp.block<2, 3>(0, 0) = vr.J_phi_i;
        Jp.block<2, 3>(0, 3) = vr.J_p_i;
        const int base = kStateDim * f.keyframe;
        out.Hpp.block<6, 6>(base, base) += Jp.transpose() * W * Jp;
        out.bp.segment<6>(base) -= Jp.transpose() * W * vr.r;

        LmBlock& blk = out.lm[f.landmark_id];
        blk.H_ll += vr.J_landmark.transpose() * W * vr.J_landmark;
        blk.b_l -= vr.J_landmark.transpose() * W * vr.r;
        blk.H_kl.emplace_back(f.keyframe, Jp.transpose() * W * vr.J_landmark);
        out.cost += hub.cost;
    }

    // Marginal / gauge prior on (oldest keyframe + calibration).
    if (w.prior) {
        const auto d = prior_offset(*w.prior, w.keyframes[0], w.calib);
        const Eigen::Matrix<double, 19, 1> rv = d - w.prior->mu;
        const Eigen::Matrix<double, 19, 1> grad = w.prior->L * rv;
        out.cost += rv.dot(grad);
        out.Hpp.block<15, 15>(0, 0) += w.prior->L.block<15, 15>(0, 0);
        out.Hpp.block<15, 4>(0, cb) += w.prior->L.block<15, 4>(0, 15);
        out.Hpp.block<4, 15>(cb, 0) += w.prior->L.block<4, 15>(15, 0);
        out.Hpp.block<4, 4>(cb, cb) += w.prior->L.block<4, 4>(15, 15);
        out.bp.segment<15>(0) -= grad.head<15>();
        out.bp.segment<4>(cb) -= grad.tail<4>();
    }

    out.calib_info_min_diag = out.Hpp.block<4, 4>(cb, cb).diagonal().minCoeff();

    // Calibration prior: accumulated posterior information when the window
    // carries one, otherwise the weak diagonal default.
    if (cfg.calib_prior_enabled) {
        Eigen::Matrix4d info;
        if (w.calib_prior_info) {
            info = *w.calib_prior_info;
        } else {
            const double sp = cfg.calib_prior_sigma_pgb, st = cfg.calib_prior_sigma_td;
            info = Eigen::Vector4d(1.0 / (sp * sp), 1.0 / (sp * sp), 1.0 / (sp * sp),
                                   1.0 / (st * st))
                       .asDiagonal();
        }
        Eigen::Vector4d dc;
        dc.head<3>() = w.calib.p_gb - w.calib_prior_anchor.p_gb;
        dc(3) = w.calib.t_d - w.calib_prior_anchor.t_d;
        const Eigen::Vector4d grad = info * dc;
        out.Hpp.block<4, 4>(cb, cb) += info;
        out.bp.segment<4>(cb) -= grad;
        out.cost += dc.dot(grad);
    }

    return out;
}

void apply_fixed_calib(Eigen::MatrixXd& H, Eigen::VectorXd& b, int cb,
                       const SolverConfig& cfg) {
    std::vector<int> fixed;
    if (!cfg.estimate_extrinsic) fixed.insert(fixed.end(), {cb, cb + 1, cb + 2});
    if (!cfg.estimate_time_offset) fixed.push_back(cb + 3);
    for (int d : fixed) {
        H.row(d).setZero();
        H.col(d).setZero();
        H(d, d) = 1.0;
        b(d) = 0.0;
    }
}

struct ReducedSystem {
    Eigen::MatrixXd H;
    Eigen::VectorXd b;
    std::vector<std::int64_t> lm_order;
    std::vector<Mat3> lm_inv;  // damped landmark block inverses, for back-substitution
};

ReducedSystem reduce(const Assembly& a, double lambda) {
    ReducedSystem out;
    out.H = a.Hpp;
    out.b = a.bp;
    for (const auto& [id, blk] : a.lm) {
        Mat3 Hd = blk.H_ll;
        for (int k = 0; k < 3; ++k) {
            Hd(k, k) += lambda * std::max(blk.H_ll(k, k), 1e-9);
        }
        const Mat3 inv = Hd.inverse();
        out.lm_order.push_back(id);
        out.lm_inv.push_back(inv);
        for (const auto& [k1, H1] : blk.H_kl) {
            out.b.segment<6>(kStateDim * k1) -= H1 * (inv * blk.b_l);
            for (const auto& [k2, H2] : blk.H_kl) {
                out.H.block<6, 6>(kStateDim * k1, kStateDim * k2) -=
                    H1 * inv * H2.transpose();
            }
        }
    }
    return out;
}

void retract_keyframe(NavState& s, const Eigen::Matrix<double, 15, 1>& d) {
    s.R_wb = lie::normalize_rotation(s.R_wb * lie::exp_so3(d.segment<3>(0)));
    s.p += d.segment<3>(3);
    s.v += d.segment<3>(6);
    s.ba += d.segment<3>(9);
    s.bw += d.segment<3>(12);
}

std::string null_space_diag(const Eigen::MatrixXd& H) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
    std::ostringstream os;
    os << "eigenvalues min=" << es.eigenvalues().minCoeff()
       << " max=" << es.eigenvalues().maxCoeff() << "; null-ish directions:";
    const double thresh = 1e-12 * std::max(1.0, es.eigenvalues().maxCoeff());
    for (int i = 0; i < es.eigenvalues().size(); ++i) {
        if (es.eigenvalues()(i) <= thresh) {
            int max_idx = 0;
            es.eigenvectors().col(i).cwiseAbs().maxCoeff(&max_idx);
            os << " [dim " << max_idx << "]";
        }
    }
    return os.str();
}

}  // namespace

double FactorGraphWindow::min_keyframe_interval() const {
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < keyframes.size(); ++i) {
        m = std::min(m, keyframes[i + 1].t - keyframes[i].t);
    }
    return m;
}

NormalEquations build_normal_equations(const FactorGraphWindow& window,
                                       const SolverConfig& cfg) {
    const Assembly a = assemble(window, cfg);
    const int pose_dim = int(a.Hpp.rows());
    const int n_lm = int(a.lm.size());
    const int dim = pose_dim + 3 * n_lm;

    NormalEquations out;
    out.H = Eigen::MatrixXd::Zero(dim, dim);
    out.b = Eigen::VectorXd::Zero(dim);
    out.H.topLeftCorner(pose_dim, pose_dim) = a.Hpp;
    out.b.head(pose_dim) = a.bp;

    int li = 0;
    for (const auto& [id, blk] : a.lm) {
        const int lb = pose_dim + 3 * li;
        out.H.block<3, 3>(lb, lb) = blk.H_ll;
        out.b.segment<3>(lb) = blk.b_l;
        for (const auto& [k, Hkl] : blk.H_kl) {
            out.H.block<6, 3>(kStateDim * k, lb) += Hkl;
            out.H.block<3, 6>(lb, kStateDim * k) += Hkl.transpose();
        }
        out.landmark_order.push_back(id);
        ++li;
    }
    out.cost = a.cost;
    out.dropped_visual = a.dropped_visual;
    out.skipped_gps = a.skipped_gps;
    return out;
}

std::string SolveReport::csv_header() const {
    return "solve,t,iteration,cost,lambda,step_norm,t_d,pgb_x,pgb_y,pgb_z,accepted";
}

std::string SolveReport::csv_rows(double t, int solve_index) const {
    std::ostringstream os;
    os.precision(17);
    for (const auto& it : iterations) {
        os << solve_index << ',' << t << ',' << it.iteration << ',' << it.cost << ','
           << it.lambda << ',' << it.step_norm << ',' << it.t_d << ',' << it.p_gb.x()
           << ',' << it.p_gb.y() << ',' << it.p_gb.z() << ',' << (it.accepted ? 1 : 0)
           << '\n';
    }
    return os.str();
}

SolveReport solve_window(FactorGraphWindow& window, const SolverConfig& cfg) {
    const int n = window.size();
    const int cb = kStateDim * n;
    SolveReport report;

    // Symmetric per-solve trust region for t_d: half the smallest keyframe
    // interval, so a measurement crosses at most one interval boundary per
    // solve (evaluation-time reassignment handles the crossing).
    const double td_ref = window.calib.t_d;
    const double m_td = cfg.td_trust_fraction * window.min_keyframe_interval();
    const double td_lo = td_ref - m_td, td_hi = td_ref + m_td;

    Assembly ref = assemble(window, cfg);
    report.initial_cost = ref.cost;
    report.calib_info_min_diag = ref.calib_info_min_diag;
    double lambda = cfg.lambda_init;

    if (cfg.compute_condition_diagnostics) {
        Eigen::MatrixXd H = reduce(ref, 0.0).H;
        Eigen::VectorXd b_tmp = ref.bp;
        apply_fixed_calib(H, b_tmp, cb, cfg);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
        report.h_min_eig = es.eigenvalues().minCoeff();
        report.h_max_eig = es.eigenvalues().maxCoeff();
    }

    int accepted = 0;
    int attempt = 0;
    const int max_attempts = cfg.max_iterations * 20;
    while (accepted < cfg.max_iterations && attempt < max_attempts) {
        ++attempt;
        ReducedSystem sys = reduce(ref, lambda);
        Eigen::VectorXd b = sys.b;
        apply_fixed_calib(sys.H, b, cb, cfg);
        Eigen::MatrixXd Hd = sys.H;
        const double max_diag = std::max(Hd.diagonal().maxCoeff(), 1.0);
        for (int d = 0; d < Hd.rows(); ++d) {
            Hd(d, d) += lambda * std::max(Hd(d, d), 1e-9 * max_diag);
        }

        Eigen::LDLT<Eigen::MatrixXd> ldlt(Hd);
        bool factorized = ldlt.info() == Eigen::Success;
        Eigen::VectorXd delta;
        if (factorized) {
            delta = ldlt.solve(b);
            factorized = delta.allFinite();
        }
        if (!factorized) {
            if (lambda >= cfg.lambda_max) {
                throw SingularSystem("solve_window: normal equations singular",
                                     null_space_diag(sys.H));
            }
            lambda *= cfg.lambda_factor;
            continue;
        }

        // Clamp t_d to the per-solve trust region.
        bool clamped = false;
        double new_td = window.calib.t_d + delta(cb + 3);
        if (new_td < td_lo || new_td > td_hi) {
            clamped = true;
            new_td = std::clamp(new_td, td_lo, td_hi);
            delta(cb + 3) = new_td - window.calib.t_d;
        }

        // Candidate state.
        FactorGraphWindow cand = window;
        for (int k = 0; k < n; ++k) {
            retract_keyframe(cand.keyframes[k], delta.segment<15>(kStateDim * k));
        }
        cand.calib.p_gb += delta.segment<3>(cb);
        cand.calib.t_d += delta(cb + 3);
        double step_sq = delta.squaredNorm();
        int li = 0;
        for (const auto& id : sys.lm_order) {
            const LmBlock& blk = ref.lm.at(id);
            Vec3 rhs = blk.b_l;
            for (const auto& [k, Hkl] : blk.H_kl) {
                rhs -= Hkl.transpose() * delta.segment<6>(kStateDim * k);
            }
            const Vec3 dl = sys.lm_inv[li] * rhs;
            cand.landmarks.at(id).x += dl;
            step_sq += dl.squaredNorm();
            ++li;
        }
        const double step_norm = std::sqrt(step_sq);

        Assembly trial = assemble(cand, cfg);
        const bool valid = std::isfinite(trial.cost) &&
                           trial.skipped_gps <= ref.skipped_gps &&
                           trial.dropped_visual <= ref.dropped_visual;
        const bool accept = valid && trial.cost < ref.cost;

        IterationStats st;
        st.iteration = attempt - 1;
        st.lambda = lambda;
        st.step_norm = step_norm;
        st.accepted = accept;
        if (accept) {
            ++accepted;
            const double drop = ref.cost - trial.cost;
            window = std::move(cand);
            if (clamped) ++report.td_clamp_events;
            ref = std::move(trial);
            lambda = std::max(lambda / cfg.lambda_factor, 1e-12);
            st.cost = ref.cost;
            st.t_d = window.calib.t_d;
            st.p_gb = window.calib.p_gb;
            report.iterations.push_back(st);
            if (drop <= cfg.cost_rel_tol * std::max(1.0, ref.cost) ||
                step_norm <= cfg.step_tol) {
                report.converged = true;
                break;
            }
        } else {
            st.cost = ref.cost;
            st.t_d = window.calib.t_d;
            st.p_gb = window.calib.p_gb;
            report.iterations.push_back(st);
            lambda *= cfg.lambda_factor;
            if (lambda > cfg.lambda_max) {
                report.no_progress = true;
                break;
            }
        }
    }

    report.final_cost = ref.cost;
    report.dropped_visual = ref.dropped_visual;
    report.skipped_gps = ref.skipped_gps;

    if (cfg.compute_calib_evidence && !window.gps_factors.empty()) {
        FactorGraphWindow bare = window;
        bare.prior.reset();
        SolverConfig bare_cfg = cfg;
        bare_cfg.calib_prior_enabled = false;
        const Assembly a = assemble(bare, bare_cfg);
        const Eigen::MatrixXd H = reduce(a, 1e-9).H;
        const Eigen::MatrixXd Hxx = H.topLeftCorner(cb, cb);
        const Eigen::MatrixXd Hxc = H.topRightCorner(cb, 4);
        Eigen::Matrix4d L = H.bottomRightCorner(4, 4) -
                            Hxc.transpose() * psd_pseudo_inverse(Hxx) * Hxc;
        report.calib_evidence_info = 0.5 * (L + L.transpose());
        report.calib_evidence_value.head<3>() = window.calib.p_gb;
        report.calib_evidence_value(3) = window.calib.t_d;
    }
    return report;
}

void marginalize_oldest(FactorGraphWindow& window, const SolverConfig& cfg) {
    if (window.size() < 2) {
        throw std::invalid_argument("marginalize_oldest: need at least 2 keyframes");
    }

    // Mini-problem over [kf0, kf1, calib] containing exactly the factors that
    // disappear with kf0. Visual observations from kf0 are discarded, not
    // marginalized, to keep the prior off the landmarks.
    FactorGraphWindow mini;
    mini.keyframes = {window.keyframes[0], window.keyframes[1]};
    mini.preints = {window.preints[0]};
    for (const auto& f : window.gps_factors) {
        if (f.interval == 0) mini.gps_factors.push_back(f);
    }
    mini.calib = window.calib;
    mini.calib_prior_anchor = window.calib_prior_anchor;
    mini.frame = window.frame;
    mini.camera = window.camera;
    mini.prior = window.prior;

    SolverConfig mini_cfg = cfg;
    mini_cfg.calib_prior_enabled = false;  // re-added per solve, never marginalized
    const NormalEquations ne = build_normal_equations(mini, mini_cfg);

    // Order in ne: kf0 [0,15), kf1 [15,30), calib [30,34).
    const Eigen::MatrixXd Haa = ne.H.block(0, 0, 15, 15);
    const Eigen::MatrixXd Hab = ne.H.block(0, 15, 15, 19);
    const Eigen::MatrixXd Hbb = ne.H.block(15, 15, 19, 19);
    const Eigen::VectorXd ga = -ne.b.head(15);
    const Eigen::VectorXd gb = -ne.b.tail(19);

    const Eigen::MatrixXd Haa_inv = psd_pseudo_inverse(Haa);
    Eigen::MatrixXd L = Hbb - Hab.transpose() * Haa_inv * Hab;
    L = 0.5 * (L + L.transpose());
    const Eigen::VectorXd ghat = gb - Hab.transpose() * Haa_inv * ga;

    MarginalPrior prior;
    prior.anchor_state = window.keyframes[1];
    prior.anchor_calib = window.calib;
    prior.L = L;
    prior.mu = -psd_pseudo_inverse(L) * ghat;
    if (!cfg.prior_carries_calib) {
        prior.L.block<19, 4>(0, 15).setZero();
        prior.L.block<4, 19>(15, 0).setZero();
        prior.mu.tail<4>().setZero();
    }
    window.prior = prior;

    // Shrink the window.
    window.keyframes.erase(window.keyframes.begin());
    window.preints.erase(window.preints.begin());
    std::erase_if(window.gps_factors, [](const GpsFactor& f) { return f.interval == 0; });
    for (auto& f : window.gps_factors) --f.interval;
    std::erase_if(window.visual_factors, [](const VisualFactor& f) { return f.keyframe == 0; });
    for (auto& f : window.visual_factors) --f.keyframe;

    std::set<std::int64_t> observed;
    for (const auto& f : window.visual_factors) observed.insert(f.landmark_id);
    std::erase_if(window.landmarks,
                  [&](const auto& kv) { return !observed.contains(kv.first); });
}

int process_gps_dropout(FactorGraphWindow& window, double t0, double t1) {
    const auto n0 = window.gps_factors.size();
    std::erase_if(window.gps_factors,
                  [&](const GpsFactor& f) { return f.m.t >= t0 && f.m.t <= t1; });
    return int(n0 - window.gps_factors.size());
}

int process_vision_dropout(FactorGraphWindow& window, double t0, double t1) {
    const auto n0 = window.visual_factors.size();
    std::erase_if(window.visual_factors, [&](const VisualFactor& f) {
        const double t = window.keyframes[f.keyframe].t;
        return t >= t0 && t <= t1;
    });
    std::set<std::int64_t> observed;
    for (const auto& f : window.visual_factors) observed.insert(f.landmark_id);
    std::erase_if(window.landmarks,
                  [&](const auto& kv) { return !observed.contains(kv.first); });
    return int(n0 - window.visual_factors.size());
}

Eigen::Matrix4d marginal_calib_information(const FactorGraphWindow& window,
                                           const SolverConfig& cfg) {
    FactorGraphWindow w = window;
    w.prior.reset();
    SolverConfig c = cfg;
    c.calib_prior_enabled = false;
    const NormalEquations ne = build_normal_equations(w, c);

    const int cb = kStateDim * w.size();
    const int dim = int(ne.H.rows());
    std::vector<int> calib_idx = {cb, cb + 1, cb + 2, cb + 3};
    std::vector<int> other;
    other.reserve(dim - 4);
    for (int i = 0; i < dim; ++i) {
        if (i < cb || i >= cb + 4) other.push_back(i);
    }

    Eigen::Matrix4d Hcc;
    Eigen::MatrixXd Hcx(4, other.size()), Hxx(other.size(), other.size());
    for (int a = 0; a < 4; ++a) {
        for (int b2 = 0; b2 < 4; ++b2) Hcc(a, b2) = ne.H(calib_idx[a], calib_idx[b2]);
        for (std::size_t b2 = 0; b2 < other.size(); ++b2) {
            Hcx(a, b2) = ne.H(calib_idx[a], other[b2]);
        }
    }
    for (std::size_t a = 0; a < other.size(); ++a) {
        for (std::size_t b2 = 0; b2 < other.size(); ++b2) {
            Hxx(a, b2) = ne.H(other[a], other[b2]);
        }
    }
    Eigen::Matrix4d out = Hcc - Hcx * psd_pseudo_inverse(Hxx) * Hcx.transpose();
    return 0.5 * (out + out.transpose());
}

Eigen::MatrixXd psd_pseudo_inverse(const Eigen::MatrixXd& m, double rel_tol) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    const double thresh = rel_tol * std::max(es.eigenvalues().cwiseAbs().maxCoeff(), 1e-300);
    Eigen::VectorXd inv = es.eigenvalues();
    for (int i = 0; i < inv.size(); ++i) {
        inv(i) = inv(i) > thresh ? 1.0 / inv(i) : 0.0;
    }
    return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace gvio
