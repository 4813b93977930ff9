#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "magcath/core.hpp"

namespace magcath {

// Geometry and material of a segmented magnetic catheter. The clamped base
// sits at the origin of base_pose, the axis along base_pose's +z.
struct CatheterSpec {
    double length_m = 0.040;
    double diameter_m = 0.004;
    int segment_count = 5;
    double remanent_magnitude_A_per_m = 1.0e5;
    double density_kg_m3 = 1100.0;
    double shear_modulus_Pa = 100e3;
    double poisson_ratio = 0.45;
    RigidTransform base_pose;

    void validate() const {
        if (length_m <= 0 || diameter_m <= 0)
            throw ConfigError("catheter dimensions must be positive");
        if (length_m <= diameter_m)
            throw ConfigError("catheter length must exceed its diameter");
        if (segment_count < 1)
            throw ConfigError("segment_count must be >= 1");
        if (poisson_ratio < 0.0 || poisson_ratio >= 0.5)
            throw ConfigError("poisson_ratio must lie in [0, 0.5)");
        if (shear_modulus_Pa <= 0 || density_kg_m3 <= 0)
            throw ConfigError("material constants must be positive");
    }

    double segment_length() const { return length_m / segment_count; }
    double cross_section_area() const {
        const double r = 0.5 * diameter_m;
        return M_PI * r * r;
    }
    double volume() const { return cross_section_area() * length_m; }
};

// Per-segment magnetization directions, given in the catheter's undeformed
// body frame (z along the axis). Magnitude comes from CatheterSpec::remanent_magnitude_A_per_m.
struct MagnetizationProfile {
    std::vector<Vec3> directions;

    void validate(const CatheterSpec& spec) const {
        if (static_cast<int>(directions.size()) != spec.segment_count)
            throw ConfigError("magnetization profile has " +
                              std::to_string(directions.size()) + " entries, spec has " +
                              std::to_string(spec.segment_count) + " segments");
        for (const Vec3& m : directions)
            if (std::abs(m.norm() - 1.0) > 1e-9)
                throw ConfigError("magnetization directions must be unit vectors");
    }
};

// Homogeneous applied field in Tesla, with an optional norm bound.
struct AppliedField {
    Vec3 b_tesla = Vec3::Zero();
    double max_norm_tesla = -1.0;  // < 0: unbounded

    void validate() const {
        if (max_norm_tesla >= 0.0 && b_tesla.norm() > max_norm_tesla + 1e-12)
            throw ConfigError("applied field exceeds its norm bound");
    }
};

// Ordered 3D polyline in meters.
struct Polyline3 {
    std::vector<Vec3> points;

    double arc_length() const {
        double s = 0.0;
        for (size_t i = 1; i < points.size(); ++i) s += (points[i] - points[i - 1]).norm();
        return s;
    }

    void validate() const {
        if (points.size() < 2) throw ConfigError("polyline needs at least 2 points");
        for (size_t i = 1; i < points.size(); ++i)
            if ((points[i] - points[i - 1]).norm() <= 0.0)
                throw ConfigError("polyline has coincident consecutive points");
    }
};

// One MPM particle. Reference coordinates (ref_axial) are kept so segment
// assignment and centerline binning stay exact under deformation.
struct Particle {
    Vec3 x = Vec3::Zero();           // deformed position, m
    Vec3 v = Vec3::Zero();           // velocity, m/s
    Mat3 F = Mat3::Identity();       // deformation gradient
    Mat3 C = Mat3::Zero();           // APIC affine velocity matrix, 1/s
    double V0 = 0.0;                 // reference volume, m^3
    double mass = 0.0;               // kg
    Vec3 M_r = Vec3::Zero();         // reference magnetization, A/m
    int segment = 0;
    double ref_axial = 0.0;          // axial coordinate in the body frame, m
};

struct ParticleCloud {
    std::vector<Particle> particles;
    CatheterSpec spec;

    double total_mass() const {
        double m = 0.0;
        for (const Particle& p : particles) m += p.mass;
        return m;
    }
};

// Fills the catheter cylinder with particles on a jittered regular lattice
// (lattice pitch chosen so each grid cell holds particles_per_cell points,
// jitter uniform in +-0.25 lattice cells, seeded). Every particle gets the
// same reference volume V0 = cylinder volume / count.
inline ParticleCloud discretize(const CatheterSpec& spec, int particles_per_cell,
                                double grid_spacing_m, std::uint64_t seed = 0) {
    spec.validate();
    if (particles_per_cell < 4)
        throw ConfigError("particles_per_cell must be >= 4");
    if (grid_spacing_m > spec.diameter_m / 3.0 + 1e-15)
        throw ConfigError("grid spacing must be <= diameter/3");

    const double radius = 0.5 * spec.diameter_m;
    const double pitch = grid_spacing_m / std::cbrt(static_cast<double>(particles_per_cell));

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> jitter(-0.25 * pitch, 0.25 * pitch);

    ParticleCloud cloud;
    cloud.spec = spec;

    const int nr = static_cast<int>(std::ceil(2.0 * radius / pitch));
    const int nz = static_cast<int>(std::ceil(spec.length_m / pitch));
    for (int iz = 0; iz < nz; ++iz) {
        for (int iy = 0; iy < nr; ++iy) {
            for (int ix = 0; ix < nr; ++ix) {
                Vec3 local(-radius + (ix + 0.5) * pitch + jitter(rng),
                           -radius + (iy + 0.5) * pitch + jitter(rng),
                           (iz + 0.5) * pitch + jitter(rng));
                if (local.x() * local.x() + local.y() * local.y() > radius * radius) continue;
                if (local.z() < 0.0 || local.z() > spec.length_m) continue;
                Particle p;
                p.ref_axial = local.z();
                p.segment = std::clamp(
                    static_cast<int>(std::floor(spec.segment_count * local.z() / spec.length_m)),
                    0, spec.segment_count - 1);
                p.x = spec.base_pose.apply(local);
                cloud.particles.push_back(p);
            }
        }
    }

    if (cloud.particles.empty())
        throw ConfigError("discretization produced zero particles");

    const double v0 = spec.volume() / static_cast<double>(cloud.particles.size());
    for (Particle& p : cloud.particles) {
        p.V0 = v0;
        p.mass = v0 * spec.density_kg_m3;
    }
    return cloud;
}

// Stamps per-particle reference magnetization from the segment profile,
// rotated into the world frame by base_pose.
inline ParticleCloud assign_magnetization(ParticleCloud cloud, const MagnetizationProfile& profile,
                                          const CatheterSpec& spec) {
    profile.validate(spec);
    for (Particle& p : cloud.particles)
        p.M_r = spec.base_pose.apply_vector(spec.remanent_magnitude_A_per_m *
                                            profile.directions[p.segment]);
    return cloud;
}

// Piecewise-constant magnetization over arbitrary axial intervals; used by
// insertion staging where segment boundaries do not align with the exposed
// sub-catheter. breakpoints has size directions.size()+1, starting at 0.
struct PiecewiseMagnetization {
    std::vector<double> breakpoints;
    std::vector<Vec3> directions;

    const Vec3& direction_at(double z) const {
        for (size_t i = 0; i + 1 < breakpoints.size(); ++i)
            if (z < breakpoints[i + 1] || i + 2 == breakpoints.size()) return directions[i];
        return directions.back();
    }
};

inline ParticleCloud assign_magnetization(ParticleCloud cloud, const PiecewiseMagnetization& profile,
                                          const CatheterSpec& spec) {
    if (profile.directions.empty() || profile.breakpoints.size() != profile.directions.size() + 1)
        throw ConfigError("piecewise magnetization is malformed");
    for (Particle& p : cloud.particles)
        p.M_r = spec.base_pose.apply_vector(spec.remanent_magnitude_A_per_m *
                                            profile.direction_at(p.ref_axial));
    return cloud;
}

// Resamples a polyline to `count` points equally spaced in arc length.
// Endpoints are preserved exactly.
inline Polyline3 resample_polyline(const Polyline3& line, int count) {
    line.validate();
    if (count < 2) throw ConfigError("resample count must be >= 2");

    std::vector<double> cum(line.points.size(), 0.0);
    for (size_t i = 1; i < line.points.size(); ++i)
        cum[i] = cum[i - 1] + (line.points[i] - line.points[i - 1]).norm();
    const double total = cum.back();
    if (total <= 0.0) throw ConfigError("cannot resample a zero-length polyline");

    Polyline3 out;
    out.points.reserve(count);
    size_t seg = 0;
    for (int k = 0; k < count; ++k) {
        if (k == 0) {
            out.points.push_back(line.points.front());
            continue;
        }
        if (k == count - 1) {
            out.points.push_back(line.points.back());
            continue;
        }
        const double target = total * k / (count - 1);
        while (seg + 2 < cum.size() && cum[seg + 1] < target) ++seg;
        const double t = (target - cum[seg]) / (cum[seg + 1] - cum[seg]);
        out.points.push_back(line.points[seg] + t * (line.points[seg + 1] - line.points[seg]));
    }
    return out;
}

}  // namespace magcath
