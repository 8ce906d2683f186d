#include "gvio/simulator.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <random>

#include "gvio/lie.hpp"

namespace gvio::sim {

namespace {

std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t stream) {
    return seed * 0x9E3779B97F4A7C15ULL + 0xBF58476D1CE4E5B9ULL * (stream + 1);
}

Mat3 euler_zyx(double roll, double pitch, double yaw) {
    return (Eigen::AngleAxisd(yaw, Vec3::UnitZ()) *
            Eigen::AngleAxisd(pitch, Vec3::UnitY()) *
            Eigen::AngleAxisd(roll, Vec3::UnitX()))
        .toRotationMatrix();
}

Vec3 body_rates_from_euler(double roll, double pitch, double droll, double dpitch,
                           double dyaw) {
    const double sr = std::sin(roll), cr = std::cos(roll);
    const double sp = std::sin(pitch), cp = std::cos(pitch);
    return Vec3(droll - dyaw * sp,
                dpitch * cr + dyaw * cp * sr,
                -dpitch * sr + dyaw * cp * cr);
}

}  // namespace

TrajectorySpec TrajectorySpec::circle(double radius, double rate, double duration,
                                      std::uint64_t seed) {
    TrajectorySpec s;
    s.shape = Shape::Circle;
    s.radius = radius;
    s.angular_rate = rate;
    s.duration = duration;
    s.seed = seed;
    return s;
}

TrajectorySpec TrajectorySpec::straight(const Vec3& velocity, double duration,
                                        std::uint64_t seed) {
    TrajectorySpec s;
    s.shape = Shape::Straight;
    s.velocity = velocity;
    s.duration = duration;
    s.seed = seed;
    s.roll_amp = s.pitch_amp = s.yaw_amp = 0.0;
    return s;
}

TrajectorySpec TrajectorySpec::sinusoid3d(double duration, std::uint64_t seed) {
    TrajectorySpec s;
    s.shape = Shape::Sinusoid3d;
    s.duration = duration;
    s.seed = seed;
    s.roll_amp = 0.3;
    s.pitch_amp = 0.25;
    return s;
}

TrajectorySpec TrajectorySpec::lemniscate(double radius, double rate, double duration,
                                          std::uint64_t seed) {
    TrajectorySpec s;
    s.shape = Shape::Lemniscate;
    s.radius = radius;
    s.angular_rate = rate;
    s.duration = duration;
    s.seed = seed;
    return s;
}

KinematicState eval_trajectory(const TrajectorySpec& spec, double t) {
    KinematicState k;
    double yaw = 0.0, dyaw = 0.0;

    switch (spec.shape) {
        case Shape::Circle: {
            const double r = spec.radius, w = spec.angular_rate;
            const double c = std::cos(w * t), s = std::sin(w * t);
            k.p = Vec3(r * c, r * s, spec.height);
            k.v = Vec3(-r * w * s, r * w * c, 0.0);
            k.a = Vec3(-r * w * w * c, -r * w * w * s, 0.0);
            yaw = w * t + 1.5707963267948966;
            dyaw = w;
            break;
        }
        case Shape::Straight: {
            k.p = spec.start + spec.velocity * t;
            k.v = spec.velocity;
            k.a = Vec3::Zero();
            break;
        }
        case Shape::Lemniscate: {
            const double r = spec.radius, w = spec.angular_rate;
            k.p = Vec3(r * std::sin(w * t), 0.5 * r * std::sin(2.0 * w * t), spec.height);
            k.v = Vec3(r * w * std::cos(w * t), r * w * std::cos(2.0 * w * t), 0.0);
            k.a = Vec3(-r * w * w * std::sin(w * t), -2.0 * r * w * w * std::sin(2.0 * w * t), 0.0);
            yaw = std::atan2(k.v.y(), k.v.x());
            dyaw = (k.v.x() * k.a.y() - k.v.y() * k.a.x()) / (k.v.x() * k.v.x() + k.v.y() * k.v.y());
            break;
        }
        case Shape::Sinusoid3d: {
            for (int i = 0; i < 3; ++i) {
                const double w = spec.pos_freq(i), ph = spec.pos_phase(i), A = spec.pos_amp(i);
                k.p(i) = A * std::sin(w * t + ph);
                k.v(i) = A * w * std::cos(w * t + ph);
                k.a(i) = -A * w * w * std::sin(w * t + ph);
            }
            yaw = spec.yaw_amp * std::sin(spec.yaw_freq * t);
            dyaw = spec.yaw_amp * spec.yaw_freq * std::cos(spec.yaw_freq * t);
            break;
        }
    }

    const double roll = spec.roll_amp * std::sin(spec.roll_freq * t);
    const double droll = spec.roll_amp * spec.roll_freq * std::cos(spec.roll_freq * t);
    const double pitch = spec.pitch_amp * std::sin(spec.pitch_freq * t);
    const double dpitch = spec.pitch_amp * spec.pitch_freq * std::cos(spec.pitch_freq * t);

    k.R_wb = euler_zyx(roll, pitch, yaw);
    k.omega_body = body_rates_from_euler(roll, pitch, droll, dpitch, dyaw);
    return k;
}

SensorRig SensorRig::noiseless() {
    SensorRig r;
    r.imu_noise_enabled = false;
    r.bias_random_walk = false;
    r.gps_sigma = 0.0;
    r.pixel_sigma = 0.0;
    return r;
}

const NavState& SimulatedDataset::truth_at(double t) const {
    if (truth.empty()) throw std::invalid_argument("SimulatedDataset::truth_at: empty truth");
    auto it = std::lower_bound(truth.begin(), truth.end(), t,
                               [](const NavState& s, double v) { return s.t < v; });
    if (it == truth.end()) return truth.back();
    if (it != truth.begin() && (t - (it - 1)->t) < (it->t - t)) --it;
    return *it;
}

SimulatedDataset generate(const TrajectorySpec& spec, const SensorRig& rig) {
    if (!(spec.duration > 0.0)) throw std::invalid_argument("generate: duration must be > 0");
    if (!(rig.imu_rate > 0.0) || !(rig.gps_rate > 0.0) || !(rig.cam_rate > 0.0)) {
        throw std::invalid_argument("generate: sensor rates must be > 0");
    }
    if (spec.shape == Shape::Circle && !(spec.radius > 0.0 && spec.angular_rate != 0.0)) {
        throw std::invalid_argument("generate: circle needs radius > 0 and nonzero rate");
    }

    SimulatedDataset ds;
    ds.spec = spec;
    ds.rig = rig;
    ds.truth_calib = rig.calib_true;

    std::mt19937_64 imu_rng(sub_seed(spec.seed, 0));
    std::mt19937_64 bias_rng(sub_seed(spec.seed, 1));
    std::mt19937_64 gps_rng(sub_seed(spec.seed, 2));
    std::mt19937_64 pix_rng(sub_seed(spec.seed, 3));
    std::mt19937_64 lm_rng(sub_seed(spec.seed, 4));
    std::normal_distribution<double> randn(0.0, 1.0);

    const Vec3 g = gravity_w();
    const double dt = 1.0 / rig.imu_rate;
    const int n_imu = int(std::llround(spec.duration * rig.imu_rate));

    Vec3 ba = rig.accel_bias0;
    Vec3 bw = rig.gyro_bias0;
    const double sg = rig.imu_noise.gyro_noise / std::sqrt(dt);
    const double sa = rig.imu_noise.accel_noise / std::sqrt(dt);
    const double rg = rig.imu_noise.gyro_bias_rw * std::sqrt(dt);
    const double ra = rig.imu_noise.accel_bias_rw * std::sqrt(dt);

    ds.truth.reserve(n_imu + 1);
    ds.imu.reserve(n_imu + 1);
    for (int i = 0; i <= n_imu; ++i) {
        const double t = i * dt;
        const KinematicState k = eval_trajectory(spec, t);

        NavState s;
        s.t = t;
        s.R_wb = k.R_wb;
        s.p = k.p;
        s.v = k.v;
        s.ba = ba;
        s.bw = bw;
        ds.truth.push_back(s);

        ImuSample m;
        m.t = t;
        m.accel = k.R_wb.transpose() * (k.a - g) + ba;
        m.gyro = k.omega_body + bw;
        if (rig.imu_noise_enabled) {
            m.accel += sa * Vec3(randn(imu_rng), randn(imu_rng), randn(imu_rng));
            m.gyro += sg * Vec3(randn(imu_rng), randn(imu_rng), randn(imu_rng));
        }
        ds.imu.push_back(m);

        if (rig.imu_noise_enabled && rig.bias_random_walk) {
            ba += ra * Vec3(randn(bias_rng), randn(bias_rng), randn(bias_rng));
            bw += rg * Vec3(randn(bias_rng), randn(bias_rng), randn(bias_rng));
        }
    }

    // Frame-alignment truth, anchored at the first IMU pose.
    ds.truth_frame.R_ew = rig.R_ew_true;
    ds.truth_frame.p_ew = rig.p_ew_true;
    ds.truth_frame.R_wb0 = ds.truth.front().R_wb;
    ds.truth_frame.p_wb0 = ds.truth.front().p;
    ds.truth_frame.R_eb0 = rig.R_ew_true * ds.truth_frame.R_wb0;
    ds.truth_frame.p_eb0 = rig.R_ew_true * ds.truth_frame.p_wb0 + rig.p_ew_true;
    ds.truth_frame.initialized = true;

    // GPS stream on the GPS clock (t_gps = t_imu - t_d).
    const double gps_cov_floor = 1e-4;  // declared sigma floor so weights stay finite
    const double gdt = 1.0 / rig.gps_rate;
    const int n_gps = int(std::llround(spec.duration * rig.gps_rate));
    for (int i = 0; i <= n_gps; ++i) {
        const double t = i * gdt;
        const KinematicState k = eval_trajectory(spec, t);
        const Vec3 antenna_w = k.p + k.R_wb * rig.calib_true.p_gb;
        GpsMeasurement m;
        m.t = t - rig.calib_true.t_d;
        m.p_enu = rig.R_ew_true * antenna_w + rig.p_ew_true;
        if (rig.gps_sigma > 0.0) {
            m.p_enu += rig.gps_sigma * Vec3(randn(gps_rng), randn(gps_rng), randn(gps_rng));
        }
        const double sigma = std::max(rig.gps_sigma, gps_cov_floor);
        m.cov = sigma * sigma * Mat3::Identity();
        ds.gps.push_back(m);
    }

    // Landmarks on a cylinder-like shell around the trajectory.
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    ds.landmarks.reserve(rig.landmark_count);
    for (int i = 0; i < rig.landmark_count; ++i) {
        const double ts = unif(lm_rng) * spec.duration;
        const KinematicState k = eval_trajectory(spec, ts);
        const double az = unif(lm_rng) * 2.0 * 3.14159265358979323846;
        const double uz = (unif(lm_rng) - 0.5);
        Vec3 dir(std::cos(az), std::sin(az), uz);
        dir.normalize();
        const double range = rig.landmark_range_min +
                             unif(lm_rng) * (rig.landmark_range_max - rig.landmark_range_min);
        ds.landmarks.emplace_back(std::int64_t(i), k.p + range * dir);
    }

    // Pixel observations of visible landmarks at camera rate.
    const double pix_cov_floor = 1e-3;
    const double cdt = 1.0 / rig.cam_rate;
    const int n_cam = int(std::llround(spec.duration * rig.cam_rate));
    for (int i = 0; i <= n_cam; ++i) {
        const double t = i * cdt;
        const KinematicState k = eval_trajectory(spec, t);
        for (const auto& [id, x] : ds.landmarks) {
            if ((x - k.p).norm() > rig.max_view_range) continue;
            const Vec3 x_c = rig.camera.world_to_camera(k.R_wb, k.p, x);
            if (x_c.z() < 0.1) continue;
            Vec2 uv = rig.camera.project(x_c);
            if (!rig.camera.in_image(uv)) continue;
            if (rig.pixel_sigma > 0.0) {
                uv += rig.pixel_sigma * Vec2(randn(pix_rng), randn(pix_rng));
            }
            VisualObservation o;
            o.t = t;
            o.landmark_id = id;
            o.uv = uv;
            const double ps = std::max(rig.pixel_sigma, pix_cov_floor);
            o.cov = ps * ps * Mat2::Identity();
            ds.vis.push_back(o);
        }
    }

    return ds;
}

void inject_failures(SimulatedDataset& ds, std::span<const FailureWindow> windows) {
    for (const auto& w : windows) {
        if (w.t_start > w.t_end) throw std::invalid_argument("inject_failures: t_start > t_end");
        const auto inside = [&](double t) { return t >= w.t_start && t <= w.t_end; };
        if (w.modality == FailureWindow::Modality::Gps) {
            std::erase_if(ds.gps, [&](const GpsMeasurement& m) { return inside(m.t); });
        } else {
            std::erase_if(ds.vis, [&](const VisualObservation& o) { return inside(o.t); });
        }
        ds.failures.push_back(w);
    }
}

std::vector<GpsMeasurement> euroc_mocap_to_gps(std::span<const NavState> truth,
                                               double sigma, double rate,
                                               std::uint64_t seed) {
    if (truth.empty()) throw std::invalid_argument("euroc_mocap_to_gps: empty stream");
    if (!(rate > 0.0)) throw std::invalid_argument("euroc_mocap_to_gps: rate must be > 0");

    std::mt19937_64 rng(sub_seed(seed, 7));
    std::normal_distribution<double> randn(0.0, 1.0);
    const double step = 1.0 / rate;
    const double sigma_decl = std::max(sigma, 1e-4);

    std::vector<GpsMeasurement> out;
    double next_t = truth.front().t;
    for (const auto& s : truth) {
        if (s.t + 1e-12 < next_t) continue;
        GpsMeasurement m;
        m.t = s.t;
        m.p_enu = s.p;
        if (sigma > 0.0) m.p_enu += sigma * Vec3(randn(rng), randn(rng), randn(rng));
        m.cov = sigma_decl * sigma_decl * Mat3::Identity();
        out.push_back(m);
        next_t = s.t + step;
    }
    return out;
}

}  // namespace gvio::sim
