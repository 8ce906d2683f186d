#pragma once

#include <Eigen/Core>
#include <stdexcept>

namespace gvio {

/// Geodesic interpolation is ambiguous when the relative rotation is within
/// tolerance of a half turn.
struct DegenerateInterpolation : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace lie {

/// Skew-symmetric (cross-product) matrix: skew(v) * w == v x w.
Eigen::Matrix3d skew(const Eigen::Vector3d& v);

/// Exponential map of SO(3) (Rodrigues). Second-order Taylor below 1e-8 rad.
Eigen::Matrix3d exp_so3(const Eigen::Vector3d& omega);

/// Logarithm map of SO(3). Returns the canonical rotation vector with
/// magnitude in [0, pi]. Angles near pi use axis extraction from the
/// largest diagonal element. Throws std::invalid_argument if R is not
/// orthonormal within tolerance.
Eigen::Vector3d log_so3(const Eigen::Matrix3d& R);

/// Left Jacobian of SO(3). Taylor expansion below 1e-6 rad.
Eigen::Matrix3d left_jacobian(const Eigen::Vector3d& theta);

/// Right Jacobian: J_r(theta) = J_l(-theta).
Eigen::Matrix3d right_jacobian(const Eigen::Vector3d& theta);

/// Inverse of the right Jacobian.
Eigen::Matrix3d right_jacobian_inverse(const Eigen::Vector3d& theta);

/// Geodesic interpolation R_i * Exp(alpha * Log(R_i^T R_j)). alpha is not
/// clamped; values outside [0, 1] extrapolate along the geodesic. Throws
/// DegenerateInterpolation when the relative angle is within 1e-6 of pi.
Eigen::Matrix3d interp_rotation(const Eigen::Matrix3d& R_i,
                                const Eigen::Matrix3d& R_j, double alpha);

/// True if R * R^T == I and det(R) == 1 within tol.
bool is_rotation(const Eigen::Matrix3d& R, double tol = 1e-9);

/// Nearest orthonormal matrix (SVD projection).
Eigen::Matrix3d normalize_rotation(const Eigen::Matrix3d& R);

}  // namespace lie
}  // namespace gvio
