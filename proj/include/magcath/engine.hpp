#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "magcath/catheter.hpp"
#include "magcath/core.hpp"

namespace magcath {

// Axis-aligned uniform background grid. Nodes are cleared lazily via an
// epoch stamp, so per-step cost scales with the touched nodes only.
class BackgroundGrid {
  public:
    BackgroundGrid(const Vec3& origin, const Eigen::Vector3i& dims, double spacing)
        : origin_(origin), dims_(dims), h_(spacing) {
        const size_t n = static_cast<size_t>(dims.x()) * dims.y() * dims.z();
        mass_.assign(n, 0.0);
        momentum_.assign(3 * n, 0.0);
        clamped_.assign(n, 0);
        stamp_.assign(n, 0);
    }

    // Domain centered on the catheter base, large enough to hold any
    // deformed configuration (reach sphere of radius L) plus margin.
    static BackgroundGrid for_catheter(const CatheterSpec& spec, double spacing) {
        const double reach = spec.length_m + 0.5 * spec.diameter_m + 4.0 * spacing;
        const Vec3 base = spec.base_pose.translation;
        const Vec3 origin = base - Vec3::Constant(reach);
        const int n = static_cast<int>(std::ceil(2.0 * reach / spacing)) + 1;
        return BackgroundGrid(origin, Eigen::Vector3i(n, n, n), spacing);
    }

    double spacing() const { return h_; }
    const Vec3& origin() const { return origin_; }
    const Eigen::Vector3i& dims() const { return dims_; }

    size_t index(int i, int j, int k) const {
        return (static_cast<size_t>(k) * dims_.y() + j) * dims_.x() + i;
    }
    Vec3 node_position(int i, int j, int k) const {
        return origin_ + h_ * Vec3(i, j, k);
    }

    void begin_step() {
        ++epoch_;
        active_.clear();
    }

    // Activates (and zeroes) a node for the current step.
    double* touch(size_t idx) {
        if (stamp_[idx] != epoch_) {
            stamp_[idx] = epoch_;
            mass_[idx] = 0.0;
            momentum_[3 * idx] = momentum_[3 * idx + 1] = momentum_[3 * idx + 2] = 0.0;
            active_.push_back(idx);
        }
        return &momentum_[3 * idx];
    }

    bool is_active(size_t idx) const { return stamp_[idx] == epoch_; }
    double& mass(size_t idx) { return mass_[idx]; }
    double mass(size_t idx) const { return mass_[idx]; }
    const double* momentum(size_t idx) const { return &momentum_[3 * idx]; }
    double* momentum(size_t idx) { return &momentum_[3 * idx]; }
    const std::vector<size_t>& active_nodes() const { return active_; }

    void set_clamped(size_t idx, bool on) { clamped_[idx] = on ? 1 : 0; }
    bool is_clamped(size_t idx) const { return clamped_[idx] != 0; }

    double total_mass() const {
        double m = 0.0;
        for (size_t idx : active_) m += mass_[idx];
        return m;
    }
    Vec3 total_momentum() const {
        Vec3 p = Vec3::Zero();
        for (size_t idx : active_) p += Vec3(momentum_[3 * idx], momentum_[3 * idx + 1], momentum_[3 * idx + 2]);
        return p;
    }

  private:
    Vec3 origin_;
    Eigen::Vector3i dims_;
    double h_;
    std::vector<double> mass_;
    std::vector<double> momentum_;  // momentum during p2g, velocity after grid_update
    std::vector<std::uint8_t> clamped_;
    std::vector<std::uint32_t> stamp_;
    std::vector<size_t> active_;
    std::uint32_t epoch_ = 0;
};

// Cylindrical Dirichlet region around the base cross-section. Nodes with
// local axial coordinate in [-depth, front] and lateral distance within
// radius get zero velocity, anchoring the cantilever root. The front margin
// of half a grid cell leaves an axis-aligned catheter unchanged (the next
// node plane sits a full cell in) but guarantees that an arbitrarily rotated
// base still clamps nodes threading the root cross-section; with nodes only
// behind the base, a rotated root is held too weakly and can pivot.
struct ClampRegion {
    Vec3 center = Vec3::Zero();    // base cross-section center, world frame
    Vec3 axis = Vec3::UnitZ();     // outward catheter axis, unit
    double radius = 0.0;           // lateral semi-axis
    double depth = 0.0;            // axial extent behind the base
    double front = 0.0;            // axial extent past the base, into the material

    static ClampRegion for_catheter(const CatheterSpec& spec, double grid_spacing) {
        ClampRegion c;
        c.center = spec.base_pose.translation;
        c.axis = spec.base_pose.apply_vector(Vec3::UnitZ());
        c.radius = 0.5 * spec.diameter_m + grid_spacing;
        c.depth = grid_spacing;
        c.front = 0.5 * grid_spacing;
        return c;
    }

    bool contains(const Vec3& p) const {
        const Vec3 d = p - center;
        const double za = d.dot(axis);
        if (za > front + 1e-12 || za < -depth) return false;
        return (d - za * axis).squaredNorm() <= radius * radius + 1e-12;
    }
};

struct SimConfig {
    double grid_spacing = 0.0;         // m; <= 0: diameter/4
    double dt = 0.0;                   // <= 0: auto from CFL
    double cfl_safety = 0.3;
    double damping_coefficient = -1.0; // 1/s; < 0: auto (near-critical for the first bending mode)
    double settle_tolerance = 1e-4;    // m/s, max particle speed
    int settle_window = 10;            // consecutive steps below tolerance
    long max_settle_steps = 400000;
    Vec3 gravity = Vec3::Zero();
    double mass_epsilon = 1e-20;       // kg, nodal division guard

    void validate() const {
        if (settle_tolerance <= 0) throw ConfigError("settle_tolerance must be > 0");
        if (cfl_safety <= 0 || cfl_safety > 1) throw ConfigError("cfl_safety must be in (0,1]");
        if (settle_window < 1) throw ConfigError("settle_window must be >= 1");
    }
};

// Neo-Hookean first Piola-Kirchhoff stress:
//   P = mu (F - F^-T) + lambda ln(det F) F^-T
inline Mat3 elastic_stress(const Mat3& F, double mu, double lambda) {
    const double J = F.determinant();
    if (!(J > 0.0)) throw SimulationError("deformation gradient inverted (det F <= 0)");
    const Mat3 FinvT = F.inverse().transpose();
    return mu * (F - FinvT) + lambda * std::log(J) * FinvT;
}

// Ideal hard-magnetic stress from the potential density -(F M_r) . B:
//   P_m = -B (x) M_r
inline Mat3 magnetic_stress(const AppliedField& field, const Vec3& M_r) {
    return -field.b_tesla * M_r.transpose();
}

// CFL time step from the dilatational wave speed.
inline double stable_dt(double grid_spacing, const CatheterSpec& spec, double safety) {
    if (safety <= 0 || safety > 1) throw ConfigError("CFL safety must be in (0,1]");
    const double lambda = lame_lambda(spec.shear_modulus_Pa, spec.poisson_ratio);
    const double c = std::sqrt((lambda + 2.0 * spec.shear_modulus_Pa) / spec.density_kg_m3);
    return safety * grid_spacing / c;
}

// Near-critical damping estimate from the first cantilever bending mode,
// 2 * omega_1 with omega_1 = 3.516 (D / 4 L^2) sqrt(E / rho).
inline double auto_damping(const CatheterSpec& spec) {
    const double E = youngs_modulus(spec.shear_modulus_Pa, spec.poisson_ratio);
    const double omega1 = 3.516 * spec.diameter_m /
                          (4.0 * spec.length_m * spec.length_m) *
                          std::sqrt(E / spec.density_kg_m3);
    return 2.0 * omega1;
}

namespace detail {

// Quadratic B-spline weights for fx = x/h - base in [0.5, 1.5) per axis.
inline void bspline_weights(const Vec3& fx, double wx[3], double wy[3], double wz[3]) {
    for (int a = 0; a < 3; ++a) {
        const double f = fx[a];
        double* w = a == 0 ? wx : (a == 1 ? wy : wz);
        w[0] = 0.5 * (1.5 - f) * (1.5 - f);
        w[1] = 0.75 - (f - 1.0) * (f - 1.0);
        w[2] = 0.5 * (f - 0.5) * (f - 0.5);
    }
}

}  // namespace detail

// Scatters mass, APIC momentum, and the fused MLS-MPM stress force to the
// 3x3x3 stencil around each particle. Gravity enters as a nodal force.
inline void p2g(const std::vector<Particle>& particles, BackgroundGrid& grid, double dt,
                const AppliedField& field, double mu, double lambda,
                const Vec3& gravity = Vec3::Zero()) {
    const double h = grid.spacing();
    const double inv_h = 1.0 / h;
    const double d_inv = 4.0 * inv_h * inv_h;  // inverse APIC inertia, quadratic splines
    const Eigen::Vector3i dims = grid.dims();

    for (const Particle& p : particles) {
        const Vec3 xg = (p.x - grid.origin()) * inv_h;
        const int bi = static_cast<int>(std::floor(xg.x() - 0.5));
        const int bj = static_cast<int>(std::floor(xg.y() - 0.5));
        const int bk = static_cast<int>(std::floor(xg.z() - 0.5));
        if (bi < 0 || bj < 0 || bk < 0 || bi + 2 >= dims.x() || bj + 2 >= dims.y() ||
            bk + 2 >= dims.z())
            throw SimulationError("particle left the grid interior");

        double wx[3], wy[3], wz[3];
        detail::bspline_weights(Vec3(xg.x() - bi, xg.y() - bj, xg.z() - bk), wx, wy, wz);

        const Mat3 P = elastic_stress(p.F, mu, lambda) + magnetic_stress(field, p.M_r);
        // Fused MLS-MPM force term; acts on the momentum scatter via dpos.
        const Mat3 A = -d_inv * dt * p.V0 * P * p.F.transpose() + p.mass * p.C;
        const Vec3 mv = p.mass * (p.v + dt * gravity);
        const double a00 = A(0, 0), a01 = A(0, 1), a02 = A(0, 2);
        const double a10 = A(1, 0), a11 = A(1, 1), a12 = A(1, 2);
        const double a20 = A(2, 0), a21 = A(2, 1), a22 = A(2, 2);

        // Node offsets relative to the particle, in meters.
        const double dpx0 = grid.origin().x() + bi * h - p.x.x();
        const double dpy0 = grid.origin().y() + bj * h - p.x.y();
        const double dpz0 = grid.origin().z() + bk * h - p.x.z();

        for (int k = 0; k < 3; ++k) {
            const double dpz = dpz0 + k * h;
            for (int j = 0; j < 3; ++j) {
                const double wjk = wy[j] * wz[k];
                const double dpy = dpy0 + j * h;
                const size_t row = grid.index(bi, bj + j, bk + k);
                // Hoist the j,k-dependent part of A * dpos.
                const double cx = a01 * dpy + a02 * dpz + mv.x();
                const double cy = a11 * dpy + a12 * dpz + mv.y();
                const double cz = a21 * dpy + a22 * dpz + mv.z();
                for (int i = 0; i < 3; ++i) {
                    const double w = wx[i] * wjk;
                    const double dpx = dpx0 + i * h;
                    double* mom = grid.touch(row + i);
                    mom[0] += w * (cx + a00 * dpx);
                    mom[1] += w * (cy + a10 * dpx);
                    mom[2] += w * (cz + a20 * dpx);
                    grid.mass(row + i) += w * p.mass;
                }
            }
        }
    }
}

// Momentum -> velocity on active nodes, linear damping, Dirichlet clamps.
inline void grid_update(BackgroundGrid& grid, double dt, const SimConfig& config) {
    const double damp = std::max(0.0, 1.0 - config.damping_coefficient * dt);
    for (size_t idx : grid.active_nodes()) {
        double* mom = grid.momentum(idx);
        if (grid.is_clamped(idx)) {
            mom[0] = mom[1] = mom[2] = 0.0;
            continue;
        }
        const double m = grid.mass(idx);
        if (m > config.mass_epsilon) {
            const double s = damp / m;
            mom[0] *= s;
            mom[1] *= s;
            mom[2] *= s;
        } else {
            mom[0] = mom[1] = mom[2] = 0.0;
        }
    }
}

// Gathers velocities and affine matrices back to particles and advects them.
// Returns the max particle speed (settle criterion comes for free).
inline double g2p(BackgroundGrid& grid, std::vector<Particle>& particles, double dt) {
    const double h = grid.spacing();
    const double inv_h = 1.0 / h;
    const double d_inv = 4.0 * inv_h * inv_h;
    double max_speed2 = 0.0;

    for (Particle& p : particles) {
        const Vec3 xg = (p.x - grid.origin()) * inv_h;
        const int bi = static_cast<int>(std::floor(xg.x() - 0.5));
        const int bj = static_cast<int>(std::floor(xg.y() - 0.5));
        const int bk = static_cast<int>(std::floor(xg.z() - 0.5));

        double wx[3], wy[3], wz[3];
        detail::bspline_weights(Vec3(xg.x() - bi, xg.y() - bj, xg.z() - bk), wx, wy, wz);

        const double dpx0 = grid.origin().x() + bi * h - p.x.x();
        const double dpy0 = grid.origin().y() + bj * h - p.x.y();
        const double dpz0 = grid.origin().z() + bk * h - p.x.z();

        double vx = 0, vy = 0, vz = 0;
        double c00 = 0, c01 = 0, c02 = 0, c10 = 0, c11 = 0, c12 = 0, c20 = 0, c21 = 0, c22 = 0;
        for (int k = 0; k < 3; ++k) {
            const double dpz = dpz0 + k * h;
            for (int j = 0; j < 3; ++j) {
                const double wjk = wy[j] * wz[k];
                const double dpy = dpy0 + j * h;
                const size_t row = grid.index(bi, bj + j, bk + k);
                for (int i = 0; i < 3; ++i) {
                    const size_t idx = row + i;
                    if (!grid.is_active(idx)) continue;
                    const double w = wx[i] * wjk;
                    const double dpx = dpx0 + i * h;
                    const double* gv = grid.momentum(idx);
                    const double ux = w * gv[0], uy = w * gv[1], uz = w * gv[2];
                    vx += ux;
                    vy += uy;
                    vz += uz;
                    c00 += ux * dpx;
                    c01 += ux * dpy;
                    c02 += ux * dpz;
                    c10 += uy * dpx;
                    c11 += uy * dpy;
                    c12 += uy * dpz;
                    c20 += uz * dpx;
                    c21 += uz * dpy;
                    c22 += uz * dpz;
                }
            }
        }
        p.v = Vec3(vx, vy, vz);
        Mat3 C;
        C << c00, c01, c02, c10, c11, c12, c20, c21, c22;
        C *= d_inv;
        p.C = C;
        p.x += dt * p.v;
        p.F = (Mat3::Identity() + dt * C) * p.F;
        if (!(p.F.determinant() > 0.0) || !(p.x.squaredNorm() < 1e6))
            throw SimulationError("deformation gradient inverted or state diverged during g2p");
        max_speed2 = std::max(max_speed2, p.v.squaredNorm());
    }
    return std::sqrt(max_speed2);
}

struct EquilibriumState {
    std::vector<Particle> particles;
    long steps = 0;
    double residual_speed = 0.0;
    bool converged = false;
    std::vector<double> kinetic_energy_history;  // sampled every window
    double dt = 0.0;
};

// Dynamic relaxation: damped explicit stepping until the max particle speed
// stays below tolerance for settle_window consecutive steps.
inline EquilibriumState settle(const ParticleCloud& cloud, const AppliedField& field,
                               const SimConfig& config_in, const ClampRegion& clamp) {
    SimConfig config = config_in;
    config.validate();
    field.validate();
    const CatheterSpec& spec = cloud.spec;

    const double h = config.grid_spacing > 0.0 ? config.grid_spacing : spec.diameter_m / 4.0;
    if (config.dt <= 0.0) config.dt = stable_dt(h, spec, config.cfl_safety);
    if (config.damping_coefficient < 0.0) config.damping_coefficient = auto_damping(spec);

    const double mu = spec.shear_modulus_Pa;
    const double lambda = lame_lambda(mu, spec.poisson_ratio);

    BackgroundGrid grid = BackgroundGrid::for_catheter(spec, h);

    EquilibriumState out;
    out.particles = cloud.particles;
    out.dt = config.dt;

    // Clamp flags are static for a run; mark nodes in the region's bounding box.
    {
        const double r = (clamp.radius + clamp.depth + h) / h;  // cells
        const Eigen::Vector3i dims = grid.dims();
        const auto clamp_lo = [&](double c) {
            return std::max(0, static_cast<int>(std::floor(c - r)));
        };
        const Vec3 cg = (clamp.center - grid.origin()) / h;
        const int i0 = clamp_lo(cg.x()), j0 = clamp_lo(cg.y()), k0 = clamp_lo(cg.z());
        const int i1 = std::min(dims.x() - 1, static_cast<int>(std::ceil(cg.x() + r)));
        const int j1 = std::min(dims.y() - 1, static_cast<int>(std::ceil(cg.y() + r)));
        const int k1 = std::min(dims.z() - 1, static_cast<int>(std::ceil(cg.z() + r)));
        for (int k = k0; k <= k1; ++k)
            for (int j = j0; j <= j1; ++j)
                for (int i = i0; i <= i1; ++i) {
                    const size_t idx = grid.index(i, j, k);
                    grid.set_clamped(idx, clamp.contains(grid.node_position(i, j, k)));
                }
    }

    int below_count = 0;
    double ke_accum = 0.0;
    const int ke_window = 100;

    for (long step = 0; step < config.max_settle_steps; ++step) {
        grid.begin_step();
        try {
            p2g(out.particles, grid, config.dt, field, mu, lambda, config.gravity);
            grid_update(grid, config.dt, config);
            out.residual_speed = g2p(grid, out.particles, config.dt);
        } catch (const SimulationError& e) {
            throw BlowUpError(e.what(), step);
        }
        out.steps = step + 1;

        double ke = 0.0;
        for (const Particle& p : out.particles) ke += 0.5 * p.mass * p.v.squaredNorm();
        ke_accum += ke;
        if ((step + 1) % ke_window == 0) {
            out.kinetic_energy_history.push_back(ke_accum / ke_window);
            ke_accum = 0.0;
        }

        if (out.residual_speed < config.settle_tolerance) {
            if (++below_count >= config.settle_window) {
                out.converged = true;
                return out;
            }
        } else {
            below_count = 0;
        }
    }
    out.converged = false;
    return out;
}

}  // namespace magcath
