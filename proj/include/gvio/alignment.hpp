#pragma once

#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gvio/types.hpp"

namespace gvio {

struct NoBracketing : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DegenerateAlignment : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// One correspondence for the trajectory alignment: the antenna position in
/// the first-IMU frame paired with the time-interpolated ENU fix.
struct AlignmentPair {
    Vec3 p_g_b0;   // antenna in the first-IMU frame
    Vec3 p_g_enu;  // interpolated GPS fix
    Mat3 cov_enu = Mat3::Identity();
};

/// p_g^{b0} = R_{b0 b_i} p_g^b + p_{b0 b_i}.
Vec3 lever_arm_transform(const Mat3& R_b0_bi, const Vec3& p_b0_bi, const Vec3& p_gb);

/// Linear interpolation of the ENU position (and covariance) at time t from
/// the bracketing fixes. Throws NoBracketing outside the fix span or when the
/// bracketing gap exceeds max_gap.
Vec3 interpolate_gps_to(double t, std::span<const GpsMeasurement> fixes,
                        double max_gap = 1.0, Mat3* cov_out = nullptr);

struct UmeyamaResult {
    Mat3 R;       // maps first-IMU coordinates into ENU
    Vec3 t;
    double rmse;
    double scale_diag;  // diagnostic estimate; the transform itself is rigid
};

/// Closed-form rigid alignment minimizing sum |p_enu - R p_b0 - t|^2 over the
/// pairs (scale fixed to 1). Throws DegenerateAlignment for < 3 pairs or a
/// collinear point set.
UmeyamaResult umeyama_align(std::span<const AlignmentPair> pairs);

/// Eq.-8 composition: world-to-ENU from first-IMU-to-ENU and
/// first-IMU-to-world.
std::pair<Mat3, Vec3> compose_world_enu(const Mat3& R_eb0, const Vec3& p_eb0,
                                        const Mat3& R_wb0, const Vec3& p_wb0);

struct InitReport {
    int pairs_used = 0;
    int fixes_consumed = 0;
    double rmse = -1.0;
    double data_time_span = 0.0;  // seconds of data between first pose and completion
    bool completed = false;
    FrameAlignment alignment;
    std::string text() const;
    std::string csv_header() const;
    std::string csv_row() const;
};

struct FastInitConfig {
    double max_gap = 1.0;          // GPS interpolation bracket gap [s]
    std::size_t min_pairs = 5;
    double rmse_gate_sigma = 3.0;  // gate: rmse < sigma_gps * this
    // Absolute gate floor [m]. A poor lever-arm guess leaves structured pair
    // error of order |guess error| * attitude spread that no amount of data
    // removes; raise the floor to initialize anyway (the estimator's state
    // gauge absorbs the resulting yaw/translation error, and the calibration
    // recovers the lever arm online).
    double rmse_gate_floor = 0.0;
    Vec3 p_gb_guess = Vec3::Zero();
};

/// Two-stage fast initialization. Stage 1 pairs lever-arm-compensated VIO
/// positions with interpolated GPS fixes and keeps a continuously re-solved
/// alignment; stage 2 composes the world-to-ENU transform the moment the
/// gravity_ready event delivers the refined first-IMU-to-world pose. The
/// event may arrive from another thread.
class FastInitializer {
public:
    explicit FastInitializer(const FastInitConfig& cfg = {});

    /// Keyframe pose of the IMU relative to the first IMU frame (stage 1
    /// input, e.g. from stereo VIO). At most one pair is formed per pose.
    void add_vio_pose(const Mat3& R_b0_bi, const Vec3& p_b0_bi, double t);

    /// GPS fix stream, GPS clock.
    void add_gps_fix(const GpsMeasurement& m);

    /// Stage-2 trigger carrying the refined first-IMU-to-world pose.
    void gravity_ready(const Mat3& R_wb0, const Vec3& p_wb0);

    bool initialized() const;
    FrameAlignment alignment() const;
    InitReport report() const;
    std::size_t pair_count() const;

private:
    struct PendingPose {
        Mat3 R;
        Vec3 p;
        double t;
    };

    FastInitConfig cfg_;
    mutable std::mutex mutex_;
    std::vector<GpsMeasurement> fixes_;
    std::vector<PendingPose> pending_;
    std::vector<AlignmentPair> pairs_;
    std::optional<UmeyamaResult> stage1_;
    std::optional<std::pair<Mat3, Vec3>> gravity_pose_;
    FrameAlignment alignment_;
    InitReport report_;
    double first_pose_time_ = -1.0;
    double last_data_time_ = 0.0;

    void try_form_pairs_locked();
    void try_finalize_locked();
    bool stage1_gate_ok_locked() const;
};

}  // namespace gvio
