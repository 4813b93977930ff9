#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "magcath/engine.hpp"
#include "magcath/shape.hpp"

using namespace magcath;

namespace {

// Quadratic B-spline evaluated from its piecewise definition; independent
// of the engine's factored weight code.
double bspline_1d(double r) {
    const double a = std::abs(r);
    if (a < 0.5) return 0.75 - a * a;
    if (a < 1.5) return 0.5 * (1.5 - a) * (1.5 - a);
    return 0.0;
}

CatheterSpec small_spec(int segments = 1) {
    CatheterSpec spec;
    spec.length_m = 0.016;
    spec.diameter_m = 0.004;
    spec.segment_count = segments;
    spec.poisson_ratio = 0.3;
    return spec;
}

SimConfig fast_sim() {
    SimConfig sim;
    sim.grid_spacing = 0.001;
    sim.cfl_safety = 0.7;
    sim.settle_tolerance = 1e-3;
    return sim;
}

Mat3 random_rotation(std::mt19937_64& rng) {
    std::normal_distribution<double> n;
    Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
    q.normalize();
    return q.toRotationMatrix();
}

}  // namespace

TEST_CASE("elastic_stress: stress-free reference") {
    CHECK(elastic_stress(Mat3::Identity(), 1e5, 9e5).norm() == doctest::Approx(0.0));
}

TEST_CASE("elastic_stress: small-strain limit matches linear elasticity") {
    const double mu = 1e5, nu = 0.45, lambda = lame_lambda(mu, nu);
    const double eps = 1e-6;
    Mat3 F = Mat3::Identity();
    F(0, 0) += eps;
    const Mat3 P = elastic_stress(F, mu, lambda);
    // Linear elasticity for strain diag(eps,0,0): sigma_11 = (lambda+2mu) eps,
    // sigma_22 = sigma_33 = lambda eps.
    CHECK(std::abs(P(0, 0) - (lambda + 2 * mu) * eps) / ((lambda + 2 * mu) * eps) < 1e-3);
    CHECK(std::abs(P(1, 1) - lambda * eps) / (lambda * eps) < 1e-3);
    CHECK(std::abs(P(2, 2) - lambda * eps) / (lambda * eps) < 1e-3);
}

TEST_CASE("elastic_stress: frame indifference under random rotations") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n;
    for (int trial = 0; trial < 20; ++trial) {
        Mat3 F = Mat3::Identity();
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) F(i, j) += 0.1 * n(rng);
        if (F.determinant() <= 0.1) continue;
        const Mat3 R = random_rotation(rng);
        const Mat3 lhs = elastic_stress(R * F, 1e5, 9e5);
        const Mat3 rhs = R * elastic_stress(F, 1e5, 9e5);
        CHECK((lhs - rhs).norm() / rhs.norm() < 1e-10);
    }
}

TEST_CASE("elastic_stress: inverted deformation gradient is a hard failure") {
    Mat3 F = Mat3::Identity();
    F(0, 0) = -1.0;
    CHECK_THROWS_AS(elastic_stress(F, 1e5, 9e5), SimulationError);
}

TEST_CASE("magnetic_stress: zero field gives zero stress") {
    CHECK(magnetic_stress(AppliedField{}, Vec3(1e5, 0, 0)).norm() == doctest::Approx(0.0));
}

TEST_CASE("magnetic_stress: outer product entry") {
    const AppliedField field{Vec3(0, 0, 0.01), -1.0};
    const Mat3 P = magnetic_stress(field, Vec3(1e5, 0, 0));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(P(i, j) == doctest::Approx(i == 2 && j == 0 ? -1000.0 : 0.0));
}

TEST_CASE("magnetic_stress: body couple vanishes for aligned field") {
    const Vec3 M(2e4, -3e4, 5e4);
    Mat3 F = Mat3::Identity() * 1.1;
    const Vec3 B = 0.01 * (F * M).normalized();
    CHECK((F * M).cross(B).norm() < 1e-9);
}

TEST_CASE("stable_dt: scaling laws and frozen value") {
    const CatheterSpec spec;  // defaults: mu=100kPa, nu=0.45, rho=1100
    CHECK(stable_dt(0.002, spec, 0.3) == doctest::Approx(2 * stable_dt(0.001, spec, 0.3)));
    CatheterSpec stiff = spec;
    stiff.shear_modulus_Pa *= 4;
    CHECK(stable_dt(0.001, stiff, 0.3) == doctest::Approx(0.5 * stable_dt(0.001, spec, 0.3)));
    // mu=100 kPa, nu=0.45, rho=1100, h=1 mm, safety=0.3:
    // lambda = 9e5, c = sqrt(1.1e6/1100) = 31.62 m/s, dt = 9.487e-6 s.
    CHECK(stable_dt(0.001, spec, 0.3) == doctest::Approx(9.4868e-6).epsilon(1e-4));
    CHECK_THROWS_AS(stable_dt(0.001, spec, 1.5), ConfigError);
}

TEST_CASE("bspline weights: partition of unity over random positions") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.5, 1.5);
    for (int trial = 0; trial < 2000; ++trial) {
        double wx[3], wy[3], wz[3];
        const Vec3 fx(u(rng), u(rng), u(rng));
        detail::bspline_weights(fx, wx, wy, wz);
        double sum = 0.0;
        for (int k = 0; k < 3; ++k)
            for (int j = 0; j < 3; ++j)
                for (int i = 0; i < 3; ++i) sum += wx[i] * wy[j] * wz[k];
        CHECK(std::abs(sum - 1.0) <= 1e-12);
        // Agreement with the piecewise definition.
        for (int i = 0; i < 3; ++i) CHECK(wx[i] == doctest::Approx(bspline_1d(fx.x() - i)));
    }
}

TEST_CASE("p2g: conserves mass and APIC momentum") {
    const CatheterSpec spec = small_spec();
    ParticleCloud cloud = discretize(spec, 4, 0.001, 8);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n;
    for (Particle& p : cloud.particles) {
        p.v = Vec3(n(rng), n(rng), n(rng)) * 0.01;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) p.C(i, j) = n(rng);
    }
    BackgroundGrid grid = BackgroundGrid::for_catheter(spec, 0.001);
    grid.begin_step();
    // Zero stress: F = I and no field.
    p2g(cloud.particles, grid, 1e-6, AppliedField{}, 0.0, 0.0);

    CHECK(std::abs(grid.total_mass() - cloud.total_mass()) / cloud.total_mass() < 1e-12);
    Vec3 expected = Vec3::Zero();
    for (const Particle& p : cloud.particles) expected += p.mass * p.v;
    // APIC affine contributions sum to zero over the stencil (first moment).
    CHECK((grid.total_momentum() - expected).norm() / expected.norm() < 1e-10);
}

TEST_CASE("p2g: nodal momenta match a brute-force scatter oracle") {
    const double h = 0.001;
    BackgroundGrid grid(Vec3(-0.005, -0.005, -0.005), Eigen::Vector3i(12, 12, 12), h);

    std::vector<Particle> two(2);
    two[0].x = Vec3(0.0003, -0.0011, 0.0007);
    two[0].v = Vec3(0.01, -0.02, 0.03);
    two[0].C << 1, 2, 0, -1, 0.5, 0, 0, 0, -2;
    two[0].mass = 1e-6;
    two[0].V0 = 1e-9;
    two[1].x = Vec3(-0.0004, 0.0009, -0.0002);
    two[1].v = Vec3(-0.005, 0.001, 0.0);
    two[1].C << 0, -3, 1, 2, 0, 0, 0.5, 0, 1;
    two[1].mass = 2e-6;
    two[1].V0 = 2e-9;

    grid.begin_step();
    p2g(two, grid, 1e-6, AppliedField{}, 0.0, 0.0);  // F = I, zero stress

    // Straight-line oracle over every node-particle pair.
    const Eigen::Vector3i dims = grid.dims();
    for (int k = 0; k < dims.z(); ++k)
        for (int j = 0; j < dims.y(); ++j)
            for (int i = 0; i < dims.x(); ++i) {
                Vec3 mom = Vec3::Zero();
                double mass = 0.0;
                for (const Particle& p : two) {
                    const Vec3 node = grid.node_position(i, j, k);
                    const Vec3 d = (node - p.x) / h;
                    const double w = bspline_1d(d.x()) * bspline_1d(d.y()) * bspline_1d(d.z());
                    mass += w * p.mass;
                    mom += w * p.mass * (p.v + p.C * (node - p.x));
                }
                const size_t idx = grid.index(i, j, k);
                const double gm = grid.is_active(idx) ? grid.mass(idx) : 0.0;
                const Vec3 gp = grid.is_active(idx)
                                    ? Vec3(grid.momentum(idx)[0], grid.momentum(idx)[1],
                                           grid.momentum(idx)[2])
                                    : Vec3::Zero();
                CHECK(std::abs(gm - mass) < 1e-12 * two[0].mass);
                CHECK((gp - mom).norm() < 1e-12 * (two[0].mass * 0.1));
            }
}

TEST_CASE("p2g: particle outside the interior margin is an error") {
    BackgroundGrid grid(Vec3::Zero(), Eigen::Vector3i(8, 8, 8), 0.001);
    std::vector<Particle> one(1);
    one[0].x = Vec3(0.0001, 0.004, 0.004);  // in the outermost cell layer
    one[0].mass = 1e-6;
    one[0].V0 = 1e-9;
    grid.begin_step();
    CHECK_THROWS_AS(p2g(one, grid, 1e-6, AppliedField{}, 0.0, 0.0), SimulationError);
}

namespace {

// Builds a grid with an active block of nodes carrying a prescribed
// velocity field; returns particles placed well inside the block.
struct FieldFixture {
    FieldFixture(const std::function<Vec3(const Vec3&)>& velocity_field)
        : grid(Vec3::Zero(), Eigen::Vector3i(10, 10, 10), 0.001) {
        grid.begin_step();
        for (int k = 0; k < 10; ++k)
            for (int j = 0; j < 10; ++j)
                for (int i = 0; i < 10; ++i) {
                    const size_t idx = grid.index(i, j, k);
                    double* mom = grid.touch(idx);
                    const Vec3 v = velocity_field(grid.node_position(i, j, k));
                    mom[0] = v.x();
                    mom[1] = v.y();
                    mom[2] = v.z();
                    grid.mass(idx) = 1.0;
                }
        std::mt19937_64 rng(17);
        std::uniform_real_distribution<double> u(0.0035, 0.0065);
        particles.resize(20);
        for (Particle& p : particles) {
            p.x = Vec3(u(rng), u(rng), u(rng));
            p.mass = 1e-6;
            p.V0 = 1e-9;
        }
    }
    BackgroundGrid grid;
    std::vector<Particle> particles;
};

}  // namespace

TEST_CASE("g2p: constant nodal field is reproduced exactly") {
    const Vec3 u(0.01, -0.02, 0.005);
    FieldFixture fix([&](const Vec3&) { return u; });
    g2p(fix.grid, fix.particles, 0.0);
    for (const Particle& p : fix.particles) {
        CHECK((p.v - u).norm() < 1e-12);
        CHECK(p.C.norm() < 1e-9);
    }
}

TEST_CASE("g2p: linear nodal field reproduces its gradient in C") {
    Mat3 G;
    G << 0.1, 0.3, -0.2, 0.0, -0.5, 0.25, 0.4, 0.1, 0.0;
    FieldFixture fix([&](const Vec3& x) { return Vec3(G * x); });
    g2p(fix.grid, fix.particles, 0.0);
    for (const Particle& p : fix.particles) {
        CHECK((p.v - G * p.x).norm() < 1e-10);
        CHECK((p.C - G).norm() < 1e-10);
    }
}

TEST_CASE("g2p: rigid rotation field keeps det F near 1") {
    const double omega = 2.0;  // rad/s about z
    const Vec3 center(0.005, 0.005, 0.005);
    FieldFixture fix([&](const Vec3& x) { return Vec3(omega * Vec3::UnitZ().cross(x - center)); });
    const double dt = 1e-3;
    g2p(fix.grid, fix.particles, dt);
    // One explicit step of a rotation: F = I + dt W, the exact update is
    // the matrix exponential expm(dt W); both have det = 1 + O(dt^2).
    for (const Particle& p : fix.particles) {
        CHECK(std::abs(p.F.determinant() - 1.0) < 10 * omega * omega * dt * dt);
        const Mat3 exact = Eigen::AngleAxisd(omega * dt, Vec3::UnitZ()).toRotationMatrix();
        CHECK((p.F - exact).norm() < 10 * omega * omega * dt * dt);
    }
}

TEST_CASE("grid_update: damping factor and clamps") {
    BackgroundGrid grid(Vec3::Zero(), Eigen::Vector3i(4, 4, 4), 0.001);
    grid.begin_step();
    const size_t a = grid.index(1, 1, 1), b = grid.index(2, 2, 2);
    double* ma = grid.touch(a);
    ma[0] = 2.0;
    grid.mass(a) = 1.0;
    double* mb = grid.touch(b);
    mb[1] = 4.0;
    grid.mass(b) = 2.0;
    grid.set_clamped(b, true);

    SimConfig cfg;
    SUBCASE("no damping leaves velocities untouched") {
        cfg.damping_coefficient = 0.0;
        grid_update(grid, 0.1, cfg);
        CHECK(grid.momentum(a)[0] == doctest::Approx(2.0));  // velocity = mom/mass
        CHECK(grid.momentum(b)[1] == doctest::Approx(0.0));  // clamped
    }
    SUBCASE("damping*dt = 0.5 halves free-node speeds") {
        cfg.damping_coefficient = 5.0;
        grid_update(grid, 0.1, cfg);
        CHECK(grid.momentum(a)[0] == doctest::Approx(1.0));
        CHECK(grid.momentum(b)[1] == doctest::Approx(0.0));
    }
}

TEST_CASE("full step: zero-stress free flight conserves momentum") {
    const CatheterSpec spec = small_spec();
    ParticleCloud cloud = discretize(spec, 4, 0.001, 21);
    std::mt19937_64 rng(6);
    std::normal_distribution<double> n;
    for (Particle& p : cloud.particles) p.v = 0.01 * Vec3(n(rng), n(rng), n(rng));

    Vec3 before = Vec3::Zero();
    for (const Particle& p : cloud.particles) before += p.mass * p.v;

    BackgroundGrid grid = BackgroundGrid::for_catheter(spec, 0.001);
    SimConfig cfg;
    cfg.damping_coefficient = 0.0;
    const double dt = 1e-5;
    for (int step = 0; step < 3; ++step) {
        grid.begin_step();
        p2g(cloud.particles, grid, dt, AppliedField{}, 0.0, 0.0);
        grid_update(grid, dt, cfg);
        g2p(grid, cloud.particles, dt);
        Vec3 after = Vec3::Zero();
        for (const Particle& p : cloud.particles) after += p.mass * p.v;
        CHECK((after - before).norm() / before.norm() < 1e-10);
    }
}

TEST_CASE("settle: no loads keeps the catheter in place") {
    const CatheterSpec spec = small_spec();
    ParticleCloud cloud = discretize(spec, 4, 0.001, 12);
    MagnetizationProfile profile{{Vec3::UnitZ()}};
    cloud = assign_magnetization(cloud, profile, spec);
    const std::vector<Particle> initial = cloud.particles;

    const EquilibriumState state =
        settle(cloud, AppliedField{}, fast_sim(), ClampRegion::for_catheter(spec, 0.001));
    CHECK(state.converged);
    double acc = 0.0;
    for (size_t i = 0; i < state.particles.size(); ++i)
        acc += (state.particles[i].x - initial[i].x).squaredNorm();
    const double rms = std::sqrt(acc / state.particles.size());
    CHECK(rms < 0.01 * spec.diameter_m);
}

TEST_CASE("settle: axial field on axial magnetization stays straight") {
    const CatheterSpec spec = small_spec();
    ParticleCloud cloud = discretize(spec, 4, 0.001, 12);
    cloud = assign_magnetization(cloud, MagnetizationProfile{{Vec3::UnitZ()}}, spec);

    const AppliedField field{Vec3(0, 0, 0.005), -1.0};
    const EquilibriumState state =
        settle(cloud, field, fast_sim(), ClampRegion::for_catheter(spec, 0.001));
    CHECK(state.converged);
    const Centerline line = extract_centerline(state, spec, 8);
    for (const Vec3& p : line.samples.points)
        CHECK(std::sqrt(p.x() * p.x() + p.y() * p.y()) < 0.02 * spec.length_m);
}

TEST_CASE("settle: deterministic and energy-decaying") {
    const CatheterSpec spec = small_spec();
    ParticleCloud cloud = discretize(spec, 4, 0.001, 12);
    cloud = assign_magnetization(cloud, MagnetizationProfile{{Vec3::UnitZ()}}, spec);
    const AppliedField field{Vec3(0.002, 0, 0), -1.0};
    const ClampRegion clamp = ClampRegion::for_catheter(spec, 0.001);

    const EquilibriumState a = settle(cloud, field, fast_sim(), clamp);
    const EquilibriumState b = settle(cloud, field, fast_sim(), clamp);
    REQUIRE(a.particles.size() == b.particles.size());
    for (size_t i = 0; i < a.particles.size(); ++i) CHECK(a.particles[i].x == b.particles[i].x);

    REQUIRE(a.kinetic_energy_history.size() >= 2);
    CHECK(a.kinetic_energy_history.back() < a.kinetic_energy_history.front());
}

TEST_CASE("settle: non-convergence is reported, state still returned") {
    const CatheterSpec spec = small_spec();
    ParticleCloud cloud = discretize(spec, 4, 0.001, 12);
    cloud = assign_magnetization(cloud, MagnetizationProfile{{Vec3::UnitZ()}}, spec);
    SimConfig sim = fast_sim();
    sim.max_settle_steps = 5;
    const EquilibriumState state = settle(cloud, AppliedField{Vec3(0.005, 0, 0), -1.0}, sim,
                                          ClampRegion::for_catheter(spec, 0.001));
    CHECK(!state.converged);
    CHECK(state.steps == 5);
    CHECK(state.particles.size() == cloud.particles.size());
}

TEST_CASE("settle: frame equivariance under grid-aligned rotations") {
    const CatheterSpec spec = small_spec();
    const AppliedField field{Vec3(0.002, 0, 0), -1.0};
    SimConfig sim = fast_sim();
    sim.settle_tolerance = 3e-4;

    ParticleCloud cloud = discretize(spec, 4, 0.001, 12);
    cloud = assign_magnetization(cloud, MagnetizationProfile{{Vec3::UnitZ()}}, spec);
    const EquilibriumState base =
        settle(cloud, field, sim, ClampRegion::for_catheter(spec, 0.001));
    const Centerline base_line = extract_centerline(base, spec, 8);

    // 90-degree rotation about y preserves the axis-aligned grid stencil.
    const Mat3 R = Eigen::AngleAxisd(M_PI / 2, Vec3::UnitY()).toRotationMatrix();
    CatheterSpec rotated = spec;
    rotated.base_pose.rotation = R * spec.base_pose.rotation;
    ParticleCloud rcloud = discretize(rotated, 4, 0.001, 12);
    rcloud = assign_magnetization(rcloud, MagnetizationProfile{{Vec3::UnitZ()}}, rotated);
    const AppliedField rfield{R * field.b_tesla, -1.0};
    const EquilibriumState rot =
        settle(rcloud, rfield, sim, ClampRegion::for_catheter(rotated, 0.001));
    const Centerline rot_line = extract_centerline(rot, rotated, 8);

    for (size_t i = 0; i < base_line.samples.points.size(); ++i)
        CHECK((rot_line.samples.points[i] - R * base_line.samples.points[i]).norm() < 1e-6);
}
