#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace magcath {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Rigid transform (rotation + translation), used for base poses and
// introducer entry poses.
struct RigidTransform {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
    Vec3 apply_vector(const Vec3& v) const { return rotation * v; }

    static RigidTransform identity() { return {}; }
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct SimulationError : std::runtime_error {
    explicit SimulationError(const std::string& what) : std::runtime_error(what) {}
};

// Raised when a deformation gradient inverts or state goes non-finite.
struct BlowUpError : SimulationError {
    BlowUpError(const std::string& what, long step_index)
        : SimulationError(what), step(step_index) {}
    long step;
};

inline double lame_lambda(double shear_modulus, double poisson_ratio) {
    return 2.0 * shear_modulus * poisson_ratio / (1.0 - 2.0 * poisson_ratio);
}

inline double youngs_modulus(double shear_modulus, double poisson_ratio) {
    return 2.0 * shear_modulus * (1.0 + poisson_ratio);
}

}  // namespace magcath
