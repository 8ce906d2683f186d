#include "gvio/alignment.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "gvio/lie.hpp"

namespace gvio {

Vec3 lever_arm_transform(const Mat3& R_b0_bi, const Vec3& p_b0_bi, const Vec3& p_gb) {
    return R_b0_bi * p_gb + p_b0_bi;
}

Vec3 interpolate_gps_to(double t, std::span<const GpsMeasurement> fixes,
                        double max_gap, Mat3* cov_out) {
    if (fixes.empty()) throw NoBracketing("interpolate_gps_to: no fixes");
    auto upper = std::lower_bound(fixes.begin(), fixes.end(), t,
                                  [](const GpsMeasurement& m, double v) { return m.t < v; });
    if (upper == fixes.end()) throw NoBracketing("interpolate_gps_to: t after last fix");
    if (upper->t == t) {
        if (cov_out) *cov_out = upper->cov;
        return upper->p_enu;
    }
    if (upper == fixes.begin()) throw NoBracketing("interpolate_gps_to: t before first fix");
    const GpsMeasurement& hi = *upper;
    const GpsMeasurement& lo = *(upper - 1);
    if (hi.t - lo.t > max_gap) throw NoBracketing("interpolate_gps_to: bracketing gap exceeded");
    const double a = (t - lo.t) / (hi.t - lo.t);
    if (cov_out) *cov_out = (1.0 - a) * lo.cov + a * hi.cov;
    return (1.0 - a) * lo.p_enu + a * hi.p_enu;
}

UmeyamaResult umeyama_align(std::span<const AlignmentPair> pairs) {
    const std::size_t n = pairs.size();
    if (n < 3) throw DegenerateAlignment("umeyama_align: need at least 3 pairs");

    Vec3 mu_s = Vec3::Zero(), mu_d = Vec3::Zero();
    for (const auto& p : pairs) {
        mu_s += p.p_g_b0;
        mu_d += p.p_g_enu;
    }
    mu_s /= double(n);
    mu_d /= double(n);

    Mat3 C = Mat3::Zero();
    double var_s = 0.0;
    for (const auto& p : pairs) {
        const Vec3 s = p.p_g_b0 - mu_s;
        const Vec3 d = p.p_g_enu - mu_d;
        C += d * s.transpose();
        var_s += s.squaredNorm();
    }
    C /= double(n);
    var_s /= double(n);

    Eigen::JacobiSVD<Mat3> svd(C, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec3 sv = svd.singularValues();
    // Collinear source points leave the rotation about the line unobservable.
    if (sv(1) <= 1e-6 * sv(0)) {
        throw DegenerateAlignment("umeyama_align: pair point set is collinear");
    }
    Mat3 S = Mat3::Identity();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) S(2, 2) = -1.0;

    UmeyamaResult out;
    out.R = svd.matrixU() * S * svd.matrixV().transpose();
    out.t = mu_d - out.R * mu_s;
    out.scale_diag = var_s > 0.0 ? (sv.dot(S.diagonal())) / var_s : 1.0;

    double se = 0.0;
    for (const auto& p : pairs) se += (p.p_g_enu - out.R * p.p_g_b0 - out.t).squaredNorm();
    out.rmse = std::sqrt(se / double(n));
    return out;
}

std::pair<Mat3, Vec3> compose_world_enu(const Mat3& R_eb0, const Vec3& p_eb0,
                                        const Mat3& R_wb0, const Vec3& p_wb0) {
    const Mat3 R_ew = R_eb0 * R_wb0.transpose();
    const Vec3 p_ew = -R_ew * p_wb0 + p_eb0;
    return {R_ew, p_ew};
}

std::string InitReport::text() const {
    std::ostringstream os;
    os << "fast initialization " << (completed ? "completed" : "incomplete") << "\n"
       << "  pairs used:      " << pairs_used << "\n"
       << "  fixes consumed:  " << fixes_consumed << "\n"
       << "  alignment rmse:  " << rmse << " m\n"
       << "  data time span:  " << data_time_span << " s\n";
    if (completed) {
        const Vec3 rpy = alignment.R_ew.eulerAngles(2, 1, 0);
        os << "  R_ew yaw/pitch/roll [rad]: " << rpy.transpose() << "\n"
           << "  p_ew [m]: " << alignment.p_ew.transpose() << "\n";
    }
    return os.str();
}

std::string InitReport::csv_header() const {
    return "completed,pairs_used,fixes_consumed,rmse,data_time_span,"
           "rew00,rew01,rew02,rew10,rew11,rew12,rew20,rew21,rew22,pew_x,pew_y,pew_z";
}

std::string InitReport::csv_row() const {
    std::ostringstream os;
    os.precision(17);
    os << (completed ? 1 : 0) << ',' << pairs_used << ',' << fixes_consumed << ','
       << rmse << ',' << data_time_span;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) os << ',' << alignment.R_ew(r, c);
    for (int k = 0; k < 3; ++k) os << ',' << alignment.p_ew(k);
    return os.str();
}

FastInitializer::FastInitializer(const FastInitConfig& cfg) : cfg_(cfg) {}

void FastInitializer::add_vio_pose(const Mat3& R_b0_bi, const Vec3& p_b0_bi, double t) {
    std::lock_guard lock(mutex_);
    if (alignment_.initialized) return;
    if (first_pose_time_ < 0.0) first_pose_time_ = t;
    last_data_time_ = std::max(last_data_time_, t);
    pending_.push_back({R_b0_bi, p_b0_bi, t});
    try_form_pairs_locked();
    try_finalize_locked();
}

void FastInitializer::add_gps_fix(const GpsMeasurement& m) {
    std::lock_guard lock(mutex_);
    if (alignment_.initialized) return;
    fixes_.push_back(m);
    ++report_.fixes_consumed;
    last_data_time_ = std::max(last_data_time_, m.t);
    try_form_pairs_locked();
    try_finalize_locked();
}

void FastInitializer::gravity_ready(const Mat3& R_wb0, const Vec3& p_wb0) {
    std::lock_guard lock(mutex_);
    gravity_pose_ = {R_wb0, p_wb0};
    try_finalize_locked();
}

bool FastInitializer::initialized() const {
    std::lock_guard lock(mutex_);
    return alignment_.initialized;
}

FrameAlignment FastInitializer::alignment() const {
    std::lock_guard lock(mutex_);
    if (!alignment_.initialized) {
        throw NotInitialized("FastInitializer::alignment: not initialized");
    }
    return alignment_;
}

InitReport FastInitializer::report() const {
    std::lock_guard lock(mutex_);
    InitReport r = report_;
    r.pairs_used = int(pairs_.size());
    if (stage1_) r.rmse = stage1_->rmse;
    r.completed = alignment_.initialized;
    r.alignment = alignment_;
    if (first_pose_time_ >= 0.0) r.data_time_span = last_data_time_ - first_pose_time_;
    return r;
}

std::size_t FastInitializer::pair_count() const {
    std::lock_guard lock(mutex_);
    return pairs_.size();
}

void FastInitializer::try_form_pairs_locked() {
    auto it = pending_.begin();
    while (it != pending_.end()) {
        Mat3 cov;
        try {
            const Vec3 p_enu = interpolate_gps_to(it->t, fixes_, cfg_.max_gap, &cov);
            pairs_.push_back({lever_arm_transform(it->R, it->p, cfg_.p_gb_guess), p_enu, cov});
            it = pending_.erase(it);
        } catch (const NoBracketing&) {
            if (!fixes_.empty() && it->t < fixes_.front().t) {
                it = pending_.erase(it);  // never bracketable, pair skipped
            } else {
                ++it;  // waiting for a later fix
            }
        }
    }
    if (pairs_.size() >= cfg_.min_pairs) {
        try {
            stage1_ = umeyama_align(pairs_);
        } catch (const DegenerateAlignment&) {
            stage1_.reset();  // keep collecting
        }
    }
}

bool FastInitializer::stage1_gate_ok_locked() const {
    if (!stage1_ || pairs_.size() < cfg_.min_pairs) return false;
    double sigma = 0.0;
    for (const auto& p : pairs_) sigma += std::sqrt(p.cov_enu.trace() / 3.0);
    sigma /= double(pairs_.size());
    // Noise-free data gates on a tiny absolute floor instead.
    const double gate =
        std::max({cfg_.rmse_gate_sigma * sigma, cfg_.rmse_gate_floor, 1e-9});
    return stage1_->rmse < gate;
}

void FastInitializer::try_finalize_locked() {
    if (alignment_.initialized || !gravity_pose_ || !stage1_gate_ok_locked()) return;
    const auto& [R_wb0, p_wb0] = *gravity_pose_;
    auto [R_ew, p_ew] = compose_world_enu(stage1_->R, stage1_->t, R_wb0, p_wb0);

    // Both z axes are gravity-aligned, so any tilt in the composed rotation is
    // estimation error (a poor lever-arm guess induces it). Keep the yaw
    // component only and fold the correction back into the stored stage-1
    // rotation so the composition identity stays exact.
    const double yaw = std::atan2(R_ew(1, 0), R_ew(0, 0));
    R_ew = lie::exp_so3(Vec3(0.0, 0.0, yaw));
    p_ew = -R_ew * p_wb0 + stage1_->t;

    alignment_.R_eb0 = R_ew * R_wb0;
    alignment_.p_eb0 = stage1_->t;
    alignment_.R_wb0 = R_wb0;
    alignment_.p_wb0 = p_wb0;
    alignment_.R_ew = R_ew;
    alignment_.p_ew = p_ew;
    alignment_.initialized = true;
    report_.completed = true;
}

}  // namespace gvio
