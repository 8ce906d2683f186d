#include "gvio/lie.hpp"

#include <Eigen/Dense>
#include <cmath>

namespace gvio::lie {

namespace {
constexpr double kExpTaylorThresh = 1e-8;
constexpr double kJacTaylorThresh = 1e-6;
constexpr double kPi = 3.14159265358979323846;

void require_finite(const Eigen::Vector3d& v, const char* what) {
    if (!v.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite input");
}
}  // namespace

Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
    Eigen::Matrix3d m;
    m << 0.0, -v.z(), v.y(),
         v.z(), 0.0, -v.x(),
        -v.y(), v.x(), 0.0;
    return m;
}

Eigen::Matrix3d exp_so3(const Eigen::Vector3d& omega) {
    require_finite(omega, "exp_so3");
    const double angle = omega.norm();
    const Eigen::Matrix3d W = skew(omega);
    if (angle < kExpTaylorThresh) {
        return Eigen::Matrix3d::Identity() + W + 0.5 * W * W;
    }
    const double s = std::sin(angle) / angle;
    const double c = (1.0 - std::cos(angle)) / (angle * angle);
    return Eigen::Matrix3d::Identity() + s * W + c * W * W;
}

Eigen::Vector3d log_so3(const Eigen::Matrix3d& R) {
    if (!R.allFinite()) throw std::invalid_argument("log_so3: non-finite input");
    if (!is_rotation(R, 1e-6)) throw std::invalid_argument("log_so3: input is not orthonormal");

    const Eigen::Vector3d vex(0.5 * (R(2, 1) - R(1, 2)),
                              0.5 * (R(0, 2) - R(2, 0)),
                              0.5 * (R(1, 0) - R(0, 1)));
    const double s = vex.norm();                           // |sin(angle)|
    const double c = 0.5 * (R.trace() - 1.0);              // cos(angle)
    const double angle = std::atan2(s, c);

    if (angle < 1e-7) {
        // theta/sin(theta) ~ 1 + theta^2/6
        return vex * (1.0 + angle * angle / 6.0);
    }
    if (angle < kPi - 1e-5) {
        return vex * (angle / s);
    }

    // Near pi: sin(angle) ~ 0, recover the axis from the symmetric part.
    // R = cos*I + sin*[n]x + (1-cos)*n n^T, so R_ii = cos + (1-cos) n_i^2.
    const double one_minus_c = 1.0 - c;
    int a = 0;
    if (R(1, 1) > R(0, 0)) a = 1;
    if (R(2, 2) > R(a, a)) a = 2;
    Eigen::Vector3d n;
    n[a] = std::sqrt(std::max(0.0, (R(a, a) - c) / one_minus_c));
    const int b = (a + 1) % 3, d = (a + 2) % 3;
    n[b] = 0.5 * (R(a, b) + R(b, a)) / (one_minus_c * n[a]);
    n[d] = 0.5 * (R(a, d) + R(d, a)) / (one_minus_c * n[a]);
    n.normalize();
    // Fix the sign so that sin(angle) >= 0 (canonical angle in [0, pi]).
    if (n.dot(vex) < 0.0) n = -n;
    return angle * n;
}

Eigen::Matrix3d left_jacobian(const Eigen::Vector3d& theta) {
    require_finite(theta, "left_jacobian");
    const double angle = theta.norm();
    const Eigen::Matrix3d W = skew(theta);
    if (angle < kJacTaylorThresh) {
        return Eigen::Matrix3d::Identity() + 0.5 * W + (1.0 / 6.0) * W * W;
    }
    const double a2 = angle * angle;
    const double c1 = (1.0 - std::cos(angle)) / a2;
    const double c2 = (angle - std::sin(angle)) / (a2 * angle);
    return Eigen::Matrix3d::Identity() + c1 * W + c2 * W * W;
}

Eigen::Matrix3d right_jacobian(const Eigen::Vector3d& theta) {
    return left_jacobian(-theta);
}

Eigen::Matrix3d right_jacobian_inverse(const Eigen::Vector3d& theta) {
    require_finite(theta, "right_jacobian_inverse");
    const double angle = theta.norm();
    const Eigen::Matrix3d W = skew(theta);
    if (angle < kJacTaylorThresh) {
        return Eigen::Matrix3d::Identity() + 0.5 * W + (1.0 / 12.0) * W * W;
    }
    const double a2 = angle * angle;
    const double s = std::sin(angle);
    double c2;
    if (std::abs(s) < 1e-9) {
        c2 = 1.0 / a2;  // (1+cos)/(2 angle sin) -> 0 as angle -> pi
    } else {
        c2 = 1.0 / a2 - (1.0 + std::cos(angle)) / (2.0 * angle * s);
    }
    return Eigen::Matrix3d::Identity() + 0.5 * W + c2 * W * W;
}

Eigen::Matrix3d interp_rotation(const Eigen::Matrix3d& R_i,
                                const Eigen::Matrix3d& R_j, double alpha) {
    if (!std::isfinite(alpha)) throw std::invalid_argument("interp_rotation: non-finite alpha");
    const Eigen::Vector3d rel = log_so3(R_i.transpose() * R_j);
    if (rel.norm() > kPi - 1e-6) {
        throw DegenerateInterpolation("interp_rotation: relative angle within 1e-6 of pi");
    }
    return R_i * exp_so3(alpha * rel);
}

bool is_rotation(const Eigen::Matrix3d& R, double tol) {
    const Eigen::Matrix3d e = R * R.transpose() - Eigen::Matrix3d::Identity();
    if (e.cwiseAbs().maxCoeff() > tol) return false;
    return std::abs(R.determinant() - 1.0) <= tol;
}

Eigen::Matrix3d normalize_rotation(const Eigen::Matrix3d& R) {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(R, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d out = svd.matrixU() * svd.matrixV().transpose();
    if (out.determinant() < 0.0) {
        Eigen::Matrix3d flip = Eigen::Matrix3d::Identity();
        flip(2, 2) = -1.0;
        out = svd.matrixU() * flip * svd.matrixV().transpose();
    }
    return out;
}

}  // namespace gvio::lie
