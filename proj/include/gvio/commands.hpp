#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gvio/types.hpp"

namespace gvio {

/// Exit codes shared by every subcommand.
enum ExitCode : int {
    kOk = 0,
    kConfigError = 2,
    kDataError = 3,
    kEstimationError = 4,
};

/// One flat bag of options; each subcommand reads the slice it needs.
struct RunConfig {
    std::string out;
    std::uint64_t seed = 1;

    // simulate
    std::string shape = "circle";
    double duration = 60.0;
    double radius = 5.0;
    double angular_rate = 0.2;
    double speed = 1.5;
    double imu_rate = 200.0;
    double gps_rate = 5.0;
    double cam_rate = 20.0;
    double gps_sigma = 0.20;
    double pixel_sigma = 1.0;
    int landmark_count = 200;
    bool noiseless = false;
    std::vector<double> lever_arm_true = {0.0, 0.0, 0.0};
    double time_offset_true = 0.0;
    double frame_yaw = 0.0;
    std::vector<double> frame_offset = {0.0, 0.0, 0.0};
    std::vector<double> accel_bias = {0.0, 0.0, 0.0};
    std::vector<double> gyro_bias = {0.0, 0.0, 0.0};
    std::string gps_dropout;     // "A:B" seconds
    std::string vision_dropout;  // "A:B" seconds

    // fuse
    std::string dataset;
    bool no_gps = false;
    bool no_vision = false;
    bool calib_fixed = false;
    bool use_truth_frame = false;
    std::vector<double> init_extrinsic = {0.0, 0.0, 0.0};
    double init_time_offset = 0.0;
    int window_size = 10;
    double keyframe_interval = 0.1;
    double init_duration = 15.0;
    double init_gate_floor = 0.0;

    // eval
    std::string est;
    std::string ref;
    std::string alignment = "rigid";

    // ingest-euroc
    std::string euroc;

    // calib-study
    int study_seeds = 5;
    double study_duration = 120.0;
    double study_gps_sigma = 0.02;
};

int cmd_simulate(const RunConfig& cfg);
int cmd_fuse(const RunConfig& cfg);
int cmd_eval(const RunConfig& cfg);
int cmd_ingest_euroc(const RunConfig& cfg);
int cmd_calib_study(const RunConfig& cfg);

}  // namespace gvio
