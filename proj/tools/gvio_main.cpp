#include <CLI11.hpp>

#include "gvio/commands.hpp"

namespace {

void add_common(CLI::App* app, gvio::RunConfig& cfg) {
    app->set_config("--config")->transform(CLI::FileOnDefaultPath(""));
    app->add_option("--seed", cfg.seed, "RNG seed");
    app->add_option("--out", cfg.out, "output directory");
}

void add_sim_options(CLI::App* app, gvio::RunConfig& cfg) {
    app->add_option("--shape", cfg.shape, "circle|lemniscate|straight|sinusoid3d");
    app->add_option("--duration", cfg.duration, "seconds");
    app->add_option("--radius", cfg.radius, "m");
    app->add_option("--angular-rate", cfg.angular_rate, "rad/s");
    app->add_option("--speed", cfg.speed, "m/s (straight)");
    app->add_option("--imu-rate", cfg.imu_rate, "Hz");
    app->add_option("--gps-rate", cfg.gps_rate, "Hz");
    app->add_option("--cam-rate", cfg.cam_rate, "Hz");
    app->add_option("--gps-sigma", cfg.gps_sigma, "m");
    app->add_option("--pixel-sigma", cfg.pixel_sigma, "px");
    app->add_option("--landmarks", cfg.landmark_count, "landmark count");
    app->add_flag("--noiseless", cfg.noiseless, "disable every noise source");
    app->add_option("--lever-arm", cfg.lever_arm_true, "true GPS-IMU lever arm x,y,z [m]")
        ->expected(3);
    app->add_option("--time-offset", cfg.time_offset_true, "true GPS-IMU offset [s]");
    app->add_option("--frame-yaw", cfg.frame_yaw, "true world-to-ENU yaw [rad]");
    app->add_option("--frame-offset", cfg.frame_offset, "true world-to-ENU offset [m]")
        ->expected(3);
    app->add_option("--accel-bias", cfg.accel_bias, "initial accel bias [m/s^2]")
        ->expected(3);
    app->add_option("--gyro-bias", cfg.gyro_bias, "initial gyro bias [rad/s]")->expected(3);
    app->add_option("--gps-dropout", cfg.gps_dropout, "A:B window [s]");
    app->add_option("--vision-dropout", cfg.vision_dropout, "A:B window [s]");
}

void add_fuse_options(CLI::App* app, gvio::RunConfig& cfg) {
    app->add_option("--dataset", cfg.dataset, "dataset directory")->required();
    app->add_flag("--no-gps", cfg.no_gps, "disable GPS factors");
    app->add_flag("--no-vision", cfg.no_vision, "disable visual factors");
    app->add_flag("--calib-fixed", cfg.calib_fixed, "freeze lever arm and time offset");
    app->add_flag("--use-truth-frame", cfg.use_truth_frame,
                  "bypass fast init with the dataset frame truth");
    app->add_option("--init-extrinsic", cfg.init_extrinsic, "initial lever arm x,y,z [m]")
        ->expected(3);
    app->add_option("--init-time-offset", cfg.init_time_offset, "initial t_d [s]");
    app->add_option("--window-size", cfg.window_size, "keyframes per window");
    app->add_option("--keyframe-interval", cfg.keyframe_interval, "s");
    app->add_option("--init-duration", cfg.init_duration,
                    "data span handed to fast init [s]");
    app->add_option("--init-gate-floor", cfg.init_gate_floor,
                    "absolute rmse gate floor for fast init [m]");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tightly coupled GPS-visual-inertial odometry toolkit"};
    app.require_subcommand(1);
    gvio::RunConfig cfg;

    auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset");
    add_common(sim, cfg);
    add_sim_options(sim, cfg);

    auto* fuse = app.add_subcommand("fuse", "run the fusion back end on a dataset");
    add_common(fuse, cfg);
    add_fuse_options(fuse, cfg);

    auto* eval = app.add_subcommand("eval", "trajectory metrics");
    add_common(eval, cfg);
    eval->add_option("--est", cfg.est, "estimated trajectory (TUM)")->required();
    eval->add_option("--ref", cfg.ref, "reference trajectory (TUM)")->required();
    eval->add_option("--alignment", cfg.alignment, "rigid|none");

    auto* ingest = app.add_subcommand("ingest-euroc", "convert a EuRoC ASL sequence");
    add_common(ingest, cfg);
    ingest->add_option("--euroc", cfg.euroc, "EuRoC sequence directory")->required();
    ingest->add_option("--gps-sigma", cfg.gps_sigma, "synthesized GPS noise [m]");
    ingest->add_option("--gps-rate", cfg.gps_rate, "synthesized GPS rate [Hz]");

    auto* study = app.add_subcommand("calib-study",
                                     "online-calibration convergence sweep");
    add_common(study, cfg);
    study->add_option("--seeds", cfg.study_seeds, "number of seeds");
    study->add_option("--duration", cfg.study_duration, "seconds per run");
    study->add_option("--gps-sigma", cfg.study_gps_sigma, "m");
    study->add_option("--init-time-offset", cfg.init_time_offset, "initial t_d [s]");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : gvio::kConfigError;
    }

    if (sim->parsed()) return gvio::cmd_simulate(cfg);
    if (fuse->parsed()) return gvio::cmd_fuse(cfg);
    if (eval->parsed()) return gvio::cmd_eval(cfg);
    if (ingest->parsed()) return gvio::cmd_ingest_euroc(cfg);
    if (study->parsed()) return gvio::cmd_calib_study(cfg);
    return gvio::kConfigError;
}
