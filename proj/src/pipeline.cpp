#include "gvio/pipeline.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <map>
#include <sstream>

#include "gvio/lie.hpp"
#include "gvio/residuals.hpp"

namespace gvio {

namespace {

struct PendingObs {
    std::int64_t kf_global;
    Vec2 uv;
    Mat2 cov;
};

Vec3 camera_center(const NavState& s, const CameraModel& cam) {
    return s.p - s.R_wb * (cam.R_cb.transpose() * cam.p_cb);
}

Vec3 pixel_ray_world(const NavState& s, const CameraModel& cam, const Vec2& uv) {
    const Vec3 d_c((uv.x() - cam.cx) / cam.fx, (uv.y() - cam.cy) / cam.fy, 1.0);
    return (s.R_wb * (cam.R_cb.transpose() * d_c)).normalized();
}

/// Linear midpoint triangulation from the current pose estimates. Returns
/// false when the geometry is too weak or the point lands behind a camera.
bool triangulate(const std::vector<PendingObs>& obs, const FactorGraphWindow& w,
                 std::int64_t first_kf_global, const CameraModel& cam, Vec3* out) {
    Mat3 A = Mat3::Zero();
    Vec3 b = Vec3::Zero();
    int used = 0;
    for (const auto& o : obs) {
        const int k = int(o.kf_global - first_kf_global);
        if (k < 0 || k >= int(w.keyframes.size())) continue;
        const NavState& s = w.keyframes[k];
        const Vec3 c = camera_center(s, cam);
        const Vec3 d = pixel_ray_world(s, cam, o.uv);
        const Mat3 P = Mat3::Identity() - d * d.transpose();
        A += P;
        b += P * c;
        ++used;
    }
    if (used < 2) return false;
    Eigen::SelfAdjointEigenSolver<Mat3> es(A);
    if (es.eigenvalues().minCoeff() < 1e-4 * es.eigenvalues().maxCoeff()) return false;
    const Vec3 x = A.ldlt().solve(b);
    if (!x.allFinite()) return false;
    for (const auto& o : obs) {
        const int k = int(o.kf_global - first_kf_global);
        if (k < 0 || k >= int(w.keyframes.size())) continue;
        const NavState& s = w.keyframes[k];
        if (cam.world_to_camera(s.R_wb, s.p, x).z() < 0.2) return false;
    }
    *out = x;
    return true;
}

NavState predict(const NavState& from, const Preintegration& pre, const Vec3& g) {
    const auto c = pre.corrected(from.ba, from.bw);
    const double dt = pre.delta_t();
    NavState out = from;
    out.R_wb = lie::normalize_rotation(from.R_wb * c.delta_R);
    out.v = from.v + g * dt + from.R_wb * c.delta_v;
    out.p = from.p + from.v * dt + 0.5 * g * dt * dt + from.R_wb * c.delta_p;
    out.t = from.t + dt;
    return out;
}

}  // namespace

PipelineResult run_fusion(const sim::SimulatedDataset& ds, const PipelineConfig& cfg) {
    PipelineResult res;
    const Vec3 g = cfg.solver.gravity;
    const double kf_dt = cfg.keyframe_interval;
    const double t_end = ds.imu.empty() ? 0.0 : ds.imu.back().t;

    // --- Stage 0: reference frame ---------------------------------------
    FrameAlignment frame;
    if (!cfg.use_gps) {
        frame.initialized = true;  // unused; keeps the window type complete
        res.initialized = true;
    } else if (cfg.use_truth_frame) {
        frame = ds.truth_frame;
        res.initialized = true;
    } else {
        FastInitConfig icfg = cfg.init;
        icfg.p_gb_guess = cfg.calib_init.p_gb;
        FastInitializer init(icfg);
        const NavState& s0 = ds.truth.front();
        std::size_t gi = 0;
        double t = 0.0;
        for (; t <= t_end + 1e-9; t += kf_dt) {
            while (gi < ds.gps.size() && ds.gps[gi].t <= t) init.add_gps_fix(ds.gps[gi++]);
            const NavState& s = ds.truth_at(t);
            init.add_vio_pose(s0.R_wb.transpose() * s.R_wb,
                              s0.R_wb.transpose() * (s.p - s0.p), s.t);
            if (t + 1e-9 >= cfg.init_duration) {
                init.gravity_ready(s0.R_wb, s0.p);
                if (init.initialized()) break;
            }
        }
        res.init_report = init.report();
        if (!init.initialized()) return res;  // res.initialized stays false
        frame = init.alignment();
        res.initialized = true;
    }
    res.frame = frame;

    // --- Fusion window ----------------------------------------------------
    SolverConfig scfg = cfg.solver;
    if (cfg.calib_fixed) {
        scfg.estimate_extrinsic = false;
        scfg.estimate_time_offset = false;
    }

    FactorGraphWindow w;
    w.frame = frame;
    w.camera = ds.rig.camera;
    w.calib = cfg.calib_init;
    w.calib_prior_anchor = cfg.calib_init;

    // Running calibration posterior (information form), seeded by the weak
    // prior around the initial guess. Windows see it as their calibration
    // prior; measurement evidence from disjoint windows is fused back in.
    const auto inv2 = [](double s) { return 1.0 / (s * s); };
    Eigen::Matrix4d calib_post_info =
        Eigen::Vector4d(inv2(scfg.calib_prior_sigma_pgb), inv2(scfg.calib_prior_sigma_pgb),
                        inv2(scfg.calib_prior_sigma_pgb), inv2(scfg.calib_prior_sigma_td))
            .asDiagonal();
    Eigen::Vector4d calib_post_mean;
    calib_post_mean.head<3>() = cfg.calib_init.p_gb;
    calib_post_mean(3) = cfg.calib_init.t_d;
    w.calib_prior_info = calib_post_info;

    const double t_start = std::min(cfg.init_duration, t_end);
    NavState first = ds.truth_at(t_start);
    first.ba.setZero();
    first.bw.setZero();
    w.keyframes.push_back(first);
    const std::int64_t first_global = 0;
    std::int64_t window_offset = first_global;  // global id of keyframes[0]

    MarginalPrior prior;
    prior.anchor_state = first;
    prior.anchor_calib = w.calib;
    prior.L.block<3, 3>(0, 0) = inv2(cfg.prior_rot_sigma) * Mat3::Identity();
    prior.L.block<3, 3>(3, 3) = inv2(cfg.prior_pos_sigma) * Mat3::Identity();
    prior.L.block<3, 3>(6, 6) = inv2(cfg.prior_vel_sigma) * Mat3::Identity();
    prior.L.block<3, 3>(9, 9) = inv2(cfg.prior_ba_sigma) * Mat3::Identity();
    prior.L.block<3, 3>(12, 12) = inv2(cfg.prior_bw_sigma) * Mat3::Identity();
    w.prior = prior;

    std::map<std::int64_t, std::vector<PendingObs>> pending;
    std::size_t imu_i = 0, gps_i = 0, vis_i = 0;
    while (imu_i < ds.imu.size() && ds.imu[imu_i].t < t_start - 1e-12) ++imu_i;
    while (vis_i < ds.vis.size() && ds.vis[vis_i].t < t_start - 1e-12) ++vis_i;
    while (gps_i < ds.gps.size() && ds.gps[gps_i].t + w.calib.t_d <= t_start + 1e-12) ++gps_i;

    std::ostringstream iter_csv;
    bool wrote_header = false;
    std::int64_t next_global = 1;

    const double imu_dt = 1.0 / ds.rig.imu_rate;
    for (double t_j = t_start + kf_dt; t_j <= t_end + 1e-9; t_j += kf_dt) {
        // Preintegrate the segment and predict the next keyframe.
        const NavState& last = w.keyframes.back();
        Preintegration pre(last.ba, last.bw, ds.rig.imu_noise);
        while (imu_i < ds.imu.size() && ds.imu[imu_i].t < t_j - 1e-12) {
            pre.integrate(ds.imu[imu_i], imu_dt);
            ++imu_i;
        }
        if (!(pre.delta_t() > 0.0)) break;
        NavState next = predict(last, pre, g);
        next.t = t_j;
        w.preints.push_back(std::move(pre));
        w.keyframes.push_back(next);
        const std::int64_t j_global = next_global++;
        const int j_local = int(j_global - window_offset);

        // Bind GPS fixes whose (estimated) IMU time falls inside the window.
        if (cfg.use_gps) {
            while (gps_i < ds.gps.size() &&
                   ds.gps[gps_i].t + w.calib.t_d <= t_j + 1e-12) {
                const GpsMeasurement& m = ds.gps[gps_i];
                const double t_imu = m.t + w.calib.t_d;
                int interval = -1;
                for (int k = int(w.keyframes.size()) - 2; k >= 0; --k) {
                    if (t_imu > w.keyframes[k].t + 1e-12) {
                        interval = k;
                        break;
                    }
                }
                if (interval >= 0) {
                    const double alpha =
                        interpolation_alpha(m.t, w.calib.t_d, w.keyframes[interval].t,
                                            w.keyframes[interval + 1].t);
                    if (alpha > scfg.alpha_min) {
                        w.gps_factors.push_back({m, interval});
                    } else if (interval > 0) {
                        w.gps_factors.push_back({m, interval - 1});
                    }
                    // at/before the window start with no previous interval: dropped
                }
                ++gps_i;
            }
        }

        // Visual observations at this keyframe.
        if (cfg.use_vision) {
            while (vis_i < ds.vis.size() && ds.vis[vis_i].t < t_j + 1e-9) {
                const VisualObservation& o = ds.vis[vis_i];
                if (std::abs(o.t - t_j) < 1e-6) {
                    if (w.landmarks.contains(o.landmark_id)) {
                        w.visual_factors.push_back({o.landmark_id, j_local, o.uv, o.cov});
                    } else {
                        pending[o.landmark_id].push_back({j_global, o.uv, o.cov});
                    }
                }
                ++vis_i;
            }

            // Triangulate pendings that have enough baseline.
            for (auto it = pending.begin(); it != pending.end();) {
                auto& obs = it->second;
                std::erase_if(obs, [&](const PendingObs& p) {
                    return p.kf_global < window_offset;
                });
                double baseline = 0.0;
                for (std::size_t a = 0; a + 1 < obs.size(); ++a) {
                    const int ka = int(obs[a].kf_global - window_offset);
                    const int kb = int(obs.back().kf_global - window_offset);
                    if (ka < 0 || kb < 0) continue;
                    baseline = std::max(
                        baseline, (camera_center(w.keyframes[ka], w.camera) -
                                   camera_center(w.keyframes[kb], w.camera))
                                      .norm());
                }
                Vec3 x;
                if (obs.size() >= 2 && baseline >= cfg.min_triangulation_baseline &&
                    triangulate(obs, w, window_offset, w.camera, &x)) {
                    w.landmarks[it->first] = Landmark{x};
                    for (const auto& p : obs) {
                        w.visual_factors.push_back(
                            {it->first, int(p.kf_global - window_offset), p.uv, p.cov});
                    }
                    it = pending.erase(it);
                } else {
                    ++it;
                }
            }
        }

        if (w.gps_factors.empty() && w.visual_factors.empty()) res.degraded = true;

        SolverConfig solve_cfg = scfg;
        const bool calib_active = t_j >= t_start + cfg.calib_warmup && !cfg.calib_fixed;
        if (!calib_active) {
            solve_cfg.estimate_extrinsic = false;
            solve_cfg.estimate_time_offset = false;
        }
        // Calibration evidence is collected from disjoint windows only.
        const bool collect_evidence = calib_active && cfg.use_gps &&
                                      (res.total_solves % cfg.window_size == 0) &&
                                      w.size() >= cfg.window_size;
        solve_cfg.compute_calib_evidence = collect_evidence;
        const SolveReport report = solve_window(w, solve_cfg);
        ++res.total_solves;
        res.td_clamp_events += report.td_clamp_events;
        res.dropped_visual += report.dropped_visual;
        res.skipped_gps += report.skipped_gps;
        if (cfg.record_iterations) {
            if (!wrote_header) {
                iter_csv << report.csv_header() << '\n';
                wrote_header = true;
            }
            iter_csv << report.csv_rows(t_j, res.total_solves - 1);
        }
        res.calib_trace.push_back({t_j, w.calib.p_gb, w.calib.t_d});

        if (collect_evidence && report.calib_evidence_info.allFinite()) {
            const Eigen::Matrix4d info_new = calib_post_info + report.calib_evidence_info;
            const Eigen::Vector4d rhs = calib_post_info * calib_post_mean +
                                        report.calib_evidence_info *
                                            report.calib_evidence_value;
            const Eigen::Vector4d mean_new = psd_pseudo_inverse(info_new) * rhs;
            if (mean_new.allFinite()) {
                calib_post_info = info_new;
                calib_post_mean = mean_new;
                w.calib_prior_anchor.p_gb = calib_post_mean.head<3>();
                w.calib_prior_anchor.t_d = calib_post_mean(3);
                w.calib_prior_info = calib_post_info;
            }
        }

        // Re-bind GPS factors after calibration updates; drop the ones that
        // now point before the window.
        if (cfg.use_gps && cfg.rebind_gps && !cfg.calib_fixed && scfg.estimate_time_offset) {
            std::erase_if(w.gps_factors, [&](GpsFactor& f) {
                const double t_imu = f.m.t + w.calib.t_d;
                if (t_imu <= w.keyframes.front().t + 1e-12) return true;
                int interval = -1;
                for (int k = int(w.keyframes.size()) - 2; k >= 0; --k) {
                    if (t_imu > w.keyframes[k].t + 1e-12) {
                        interval = k;
                        break;
                    }
                }
                if (interval < 0) return true;
                interval = std::min(interval, int(w.keyframes.size()) - 2);
                const double alpha =
                    interpolation_alpha(f.m.t, w.calib.t_d, w.keyframes[interval].t,
                                        w.keyframes[interval + 1].t);
                if (alpha <= scfg.alpha_min) {
                    if (interval == 0) return true;
                    --interval;
                }
                f.interval = interval;
                return false;
            });
        }

        while (w.size() > cfg.window_size) {
            const NavState& out = w.keyframes.front();
            res.trajectory.samples.push_back({out.t, out.R_wb, out.p});
            marginalize_oldest(w, scfg);
            ++window_offset;
        }
    }

    for (const auto& kf : w.keyframes) {
        res.trajectory.samples.push_back({kf.t, kf.R_wb, kf.p});
    }
    res.final_calib = w.calib;
    res.iterations_csv = iter_csv.str();
    return res;
}

}  // namespace gvio
