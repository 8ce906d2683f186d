#pragma once

#include <Eigen/Core>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gvio/preintegration.hpp"
#include "gvio/residuals.hpp"
#include "gvio/types.hpp"

namespace gvio {

struct SingularSystem : std::runtime_error {
    explicit SingularSystem(const std::string& what, std::string diagnostic = {})
        : std::runtime_error(what), null_space_diagnostic(std::move(diagnostic)) {}
    std::string null_space_diagnostic;
};

struct SolverConfig {
    int max_iterations = 20;
    double cost_rel_tol = 1e-8;
    double step_tol = 1e-10;
    double lambda_init = 1e-4;
    double lambda_factor = 10.0;
    double lambda_max = 1e10;
    double huber_delta = 1.345;      // visual residuals only
    bool estimate_extrinsic = true;
    bool estimate_time_offset = true;
    double alpha_min = 0.01;          // GPS factors below this are reassigned/skipped
    bool gps_chi2_gate = false;       // optional 3-DoF 95% gate, off to match plain Eq.-5 weighting
    double gps_chi2_threshold = 7.815;
    // Per-solve trust region on t_d, as a fraction of the smallest keyframe
    // interval. Half the interval is the hard ceiling (one binding boundary
    // per solve); the tighter default keeps the weakly observable
    // time-offset direction from wandering faster than the prior chain can
    // accumulate evidence. Across solves t_d travels freely.
    double td_trust_fraction = 0.1;
    // Weak prior regularizing the calibration until it is well excited.
    bool calib_prior_enabled = true;
    double calib_prior_sigma_pgb = 1.0;  // m
    double calib_prior_sigma_td = 2.0;   // s
    // Whether marginalization folds calibration cross-information into the
    // chained prior. The pipeline keeps it out and accumulates calibration
    // evidence explicitly instead (re-linearization of the chained prior
    // otherwise lets the weakly observable calibration directions drift).
    bool prior_carries_calib = false;
    // Compute the measurement-only marginal calibration information of the
    // window after the solve (report.calib_evidence_*).
    bool compute_calib_evidence = false;
    bool compute_condition_diagnostics = false;
    Vec3 gravity = Vec3(0.0, 0.0, -9.81);
};

/// GPS measurement bound to one keyframe interval (interval i joins
/// keyframes i and i+1).
struct GpsFactor {
    GpsMeasurement m;
    int interval = 0;
};

struct VisualFactor {
    std::int64_t landmark_id = -1;
    int keyframe = 0;
    Vec2 uv = Vec2::Zero();
    Mat2 cov = Mat2::Identity();
};

/// Gaussian prior on (oldest keyframe [15] + calibration [4]) left behind by
/// marginalization, or a hand-set prior pinning gauge/initial state. The
/// quadratic is (delta - mu)^T L (delta - mu) with delta the manifold offset
/// from the anchor, ordered [phi, p, v, ba, bw, p_gb, t_d].
struct MarginalPrior {
    NavState anchor_state;
    CalibState anchor_calib;
    Eigen::Matrix<double, 19, 19> L = Eigen::Matrix<double, 19, 19>::Zero();
    Eigen::Matrix<double, 19, 1> mu = Eigen::Matrix<double, 19, 1>::Zero();
};

struct FactorGraphWindow {
    std::vector<NavState> keyframes;
    std::vector<Preintegration> preints;  // one per consecutive pair
    std::vector<GpsFactor> gps_factors;
    std::vector<VisualFactor> visual_factors;
    std::map<std::int64_t, Landmark> landmarks;
    CameraModel camera;
    CalibState calib;
    CalibState calib_prior_anchor;  // prior center (initial guess or accumulated posterior)
    // Prior information on [p_gb, t_d]; unset falls back to the diagonal
    // built from the SolverConfig sigmas.
    std::optional<Eigen::Matrix4d> calib_prior_info;
    FrameAlignment frame;
    std::optional<MarginalPrior> prior;  // attached to keyframes[0]

    int size() const { return int(keyframes.size()); }
    double min_keyframe_interval() const;
};

struct NormalEquations {
    Eigen::MatrixXd H;  // keyframes (15 each), calibration (4), landmarks (3 each)
    Eigen::VectorXd b;  // -J^T W r
    double cost = 0.0;
    int dropped_visual = 0;  // behind-camera factors skipped this evaluation
    int skipped_gps = 0;     // alpha <= alpha_min factors skipped
    std::vector<std::int64_t> landmark_order;
};

/// Dense Gauss-Newton normal equations over every state in the window,
/// landmarks included. Intended for tests and diagnostics; the solver uses a
/// landmark-Schur-complemented assembly internally.
NormalEquations build_normal_equations(const FactorGraphWindow& window,
                                       const SolverConfig& cfg);

struct IterationStats {
    int iteration = 0;
    double cost = 0.0;
    double lambda = 0.0;
    double step_norm = 0.0;
    double t_d = 0.0;
    Vec3 p_gb = Vec3::Zero();
    bool accepted = false;
};

struct SolveReport {
    std::vector<IterationStats> iterations;
    bool converged = false;
    bool no_progress = false;
    double initial_cost = 0.0;
    double final_cost = 0.0;
    int td_clamp_events = 0;
    int dropped_visual = 0;
    int skipped_gps = 0;
    // Smallest diagonal of the calibration block before the prior was added.
    double calib_info_min_diag = 0.0;
    // Measurement-only calibration evidence of this window (priors stripped),
    // filled when compute_calib_evidence is set: information matrix and the
    // calibration value it refers to.
    Eigen::Matrix4d calib_evidence_info = Eigen::Matrix4d::Zero();
    Eigen::Vector4d calib_evidence_value = Eigen::Vector4d::Zero();
    // Filled when compute_condition_diagnostics is set.
    double h_min_eig = 0.0;
    double h_max_eig = 0.0;
    std::string csv_header() const;
    std::string csv_rows(double t, int solve_index) const;
};

/// Damped (Levenberg-Marquardt) minimization of the joint cost over the
/// window states, with manifold retraction and first-order bias refresh via
/// the stored preintegration Jacobians. Throws SingularSystem only when the
/// damped system cannot be factorized at maximum damping.
SolveReport solve_window(FactorGraphWindow& window, const SolverConfig& cfg);

/// Drops the oldest keyframe: its exclusive landmarks are erased, its visual
/// factors discarded, and the factors joining it to the next keyframe are
/// Schur-complemented into a prior on (new oldest keyframe + calibration).
void marginalize_oldest(FactorGraphWindow& window, const SolverConfig& cfg);

/// Dropout handling: excludes factors of one modality whose measurement falls
/// inside [t0, t1] (GPS times are on the GPS clock; visual factors go by
/// their keyframe time). Returns the number of factors removed.
int process_gps_dropout(FactorGraphWindow& window, double t0, double t1);
int process_vision_dropout(FactorGraphWindow& window, double t0, double t1);

/// Marginal information of the calibration block (p_gb, t_d) after
/// eliminating all other states from the measurement-only system (priors and
/// the weak calibration prior excluded). Rank-revealing pseudo-inverse.
Eigen::Matrix4d marginal_calib_information(const FactorGraphWindow& window,
                                           const SolverConfig& cfg);

/// Helper shared with tests: rank-revealing pseudo-inverse of a symmetric
/// PSD matrix (eigenvalues below rel_tol * max are treated as zero).
Eigen::MatrixXd psd_pseudo_inverse(const Eigen::MatrixXd& m, double rel_tol = 1e-10);

}  // namespace gvio
