#include "gvio/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gvio/alignment.hpp"

namespace gvio {

double ate_rmse(const TrajectoryEstimate& est, const TrajectoryEstimate& ref,
                AteAlignment alignment, double max_gap) {
    // Nearest-neighbor association on timestamps.
    std::vector<std::pair<Vec3, Vec3>> assoc;  // (est, ref)
    assoc.reserve(est.samples.size());
    for (const auto& s : est.samples) {
        auto it = std::lower_bound(ref.samples.begin(), ref.samples.end(), s.t,
                                   [](const TrajectorySample& r, double v) { return r.t < v; });
        const TrajectorySample* best = nullptr;
        if (it != ref.samples.end()) best = &*it;
        if (it != ref.samples.begin()) {
            const TrajectorySample* lo = &*(it - 1);
            if (!best || std::abs(lo->t - s.t) < std::abs(best->t - s.t)) best = lo;
        }
        if (best && std::abs(best->t - s.t) <= max_gap) assoc.emplace_back(s.p, best->p);
    }
    if (assoc.size() < 3) {
        throw InsufficientOverlap("ate_rmse: fewer than 3 temporally associated pairs");
    }

    Mat3 R = Mat3::Identity();
    Vec3 t = Vec3::Zero();
    if (alignment == AteAlignment::Rigid) {
        std::vector<AlignmentPair> pairs(assoc.size());
        for (std::size_t i = 0; i < assoc.size(); ++i) {
            pairs[i].p_g_b0 = assoc[i].first;
            pairs[i].p_g_enu = assoc[i].second;
        }
        const auto u = umeyama_align(pairs);
        R = u.R;
        t = u.t;
    }

    double se = 0.0;
    for (const auto& [pe, pr] : assoc) se += (R * pe + t - pr).squaredNorm();
    return std::sqrt(se / double(assoc.size()));
}

CalibTraceMetrics calibration_trace_metrics(std::span<const CalibTraceSample> trace,
                                            const Eigen::VectorXd& truth,
                                            const Eigen::VectorXd& tolerance) {
    if (trace.empty()) throw std::invalid_argument("calibration_trace_metrics: empty trace");

    CalibTraceMetrics out;
    out.final_error = trace.back().value - truth;
    out.monotonicity_violations = 0;

    double prev_norm = -1.0;
    for (const auto& s : trace) {
        const double n = (s.value - truth).norm();
        if (prev_norm >= 0.0 && n > prev_norm + 1e-15) ++out.monotonicity_violations;
        prev_norm = n;
    }

    // First time the trace enters the per-component tolerance box and never
    // leaves it again.
    out.convergence_time = std::numeric_limits<double>::infinity();
    for (auto it = trace.rbegin(); it != trace.rend(); ++it) {
        const Eigen::VectorXd err = (it->value - truth).cwiseAbs();
        if ((err.array() <= tolerance.array()).all()) {
            out.convergence_time = it->t;
        } else {
            break;
        }
    }
    return out;
}

}  // namespace gvio
