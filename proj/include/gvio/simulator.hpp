#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gvio/preintegration.hpp"
#include "gvio/types.hpp"

namespace gvio {
namespace sim {

enum class Shape { Circle, Lemniscate, Straight, Sinusoid3d };

/// Analytic trajectory description. Positions, velocities, accelerations and
/// body rates all come from closed-form derivatives, so simulated data can
/// serve as an exact oracle.
struct TrajectorySpec {
    Shape shape = Shape::Circle;
    double duration = 60.0;  // seconds
    std::uint64_t seed = 1;

    // circle / lemniscate
    double radius = 5.0;       // m (lemniscate half-width)
    double angular_rate = 0.2; // rad/s
    double height = 1.5;       // m

    // straight
    Vec3 start = Vec3::Zero();
    Vec3 velocity = Vec3(1.5, 0.0, 0.0);

    // sinusoid-3d (per-axis position sinusoids)
    Vec3 pos_amp = Vec3(8.0, 6.0, 2.0);
    Vec3 pos_freq = Vec3(0.25, 0.31, 0.43);  // rad/s
    Vec3 pos_phase = Vec3(0.0, 1.0471975511965976, 0.5235987755982988);

    // attitude excitation (roll/pitch sinusoids; yaw is shape-specific:
    // tangent-following for circle/lemniscate, sinusoidal for sinusoid-3d,
    // constant for straight)
    double roll_amp = 0.0, roll_freq = 0.5, pitch_amp = 0.0, pitch_freq = 0.37;
    double yaw_amp = 0.6, yaw_freq = 0.29;

    static TrajectorySpec circle(double radius, double rate, double duration,
                                 std::uint64_t seed);
    static TrajectorySpec straight(const Vec3& velocity, double duration,
                                   std::uint64_t seed);
    static TrajectorySpec sinusoid3d(double duration, std::uint64_t seed);
    static TrajectorySpec lemniscate(double radius, double rate, double duration,
                                     std::uint64_t seed);
};

/// Exact kinematic state of the body at one instant.
struct KinematicState {
    Vec3 p, v, a;
    Mat3 R_wb;
    Vec3 omega_body;
};

KinematicState eval_trajectory(const TrajectorySpec& spec, double t);

struct SensorRig {
    double imu_rate = 200.0;  // Hz
    double gps_rate = 5.0;    // Hz
    double cam_rate = 20.0;   // Hz

    CalibState calib_true;    // lever arm + time offset ground truth
    ImuNoiseParams imu_noise; // continuous densities, zeroed for noiseless runs
    bool imu_noise_enabled = true;
    Vec3 accel_bias0 = Vec3::Zero();
    Vec3 gyro_bias0 = Vec3::Zero();
    bool bias_random_walk = true;

    double gps_sigma = 0.20;  // m, isotropic
    double pixel_sigma = 1.0; // px

    CameraModel camera;
    int landmark_count = 200;
    double landmark_range_min = 3.0;
    double landmark_range_max = 15.0;
    double max_view_range = 30.0;

    // Ground-truth world-to-ENU transform (the quantity fast init recovers).
    Mat3 R_ew_true = Mat3::Identity();
    Vec3 p_ew_true = Vec3::Zero();

    static SensorRig noiseless();
};

struct FailureWindow {
    enum class Modality { Gps, Vision };
    Modality modality;
    double t_start;
    double t_end;
};

struct SimulatedDataset {
    TrajectorySpec spec;
    SensorRig rig;
    std::vector<NavState> truth;          // at IMU rate, includes true biases
    std::vector<ImuSample> imu;
    std::vector<GpsMeasurement> gps;      // timestamps on the GPS clock
    std::vector<VisualObservation> vis;
    std::vector<std::pair<std::int64_t, Vec3>> landmarks;
    FrameAlignment truth_frame;
    CalibState truth_calib;
    std::vector<FailureWindow> failures;

    const NavState& truth_at(double t) const;  // nearest truth sample
};

/// Deterministic synthesis of the full sensor suite from the analytic
/// trajectory. GPS timestamps are shifted by -t_d so the estimator must add
/// the offset back (t_imu = t_gps + t_d).
SimulatedDataset generate(const TrajectorySpec& spec, const SensorRig& rig);

/// Removes measurements of the given modality inside each window. Truth is
/// unchanged.
void inject_failures(SimulatedDataset& ds, std::span<const FailureWindow> windows);

/// EuRoC protocol: downsampled ground-truth positions plus i.i.d. Gaussian
/// noise standing in for GPS (identity frame, zero lever arm and offset).
std::vector<GpsMeasurement> euroc_mocap_to_gps(std::span<const NavState> truth,
                                               double sigma, double rate,
                                               std::uint64_t seed);

}  // namespace sim
}  // namespace gvio
