#pragma once

#include <span>
#include <string>
#include <vector>

#include "gvio/types.hpp"

namespace gvio {

struct InsufficientOverlap : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrajectorySample {
    double t;
    Mat3 R;
    Vec3 p;
};

struct TrajectoryEstimate {
    std::vector<TrajectorySample> samples;  // strictly increasing t
    std::string frame = "world";
};

enum class AteAlignment { None, Rigid };

/// RMS absolute trajectory error of positions after nearest-neighbor temporal
/// association (gate max_gap) and optional rigid Umeyama alignment of est
/// onto ref. Throws InsufficientOverlap below 3 associated pairs.
double ate_rmse(const TrajectoryEstimate& est, const TrajectoryEstimate& ref,
                AteAlignment alignment, double max_gap = 0.02);

/// One entry of a calibration estimate trace.
struct CalibTraceSample {
    double t;
    Eigen::VectorXd value;
};

struct CalibTraceMetrics {
    Eigen::VectorXd final_error;     // est - truth at the last sample
    double convergence_time;         // first entry into the tolerance box it never leaves; inf if never
    int monotonicity_violations;     // error-norm increases between consecutive samples
};

/// truth and per-component tolerance must match the trace dimension.
CalibTraceMetrics calibration_trace_metrics(std::span<const CalibTraceSample> trace,
                                            const Eigen::VectorXd& truth,
                                            const Eigen::VectorXd& tolerance);

}  // namespace gvio
