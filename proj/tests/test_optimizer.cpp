#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "magcath/optimizer.hpp"

using namespace magcath;

TEST_CASE("direction_from_angles: canonical angles") {
    CHECK((direction_from_angles(0.0, 0.0) - Vec3::UnitZ()).norm() < 1e-15);
    CHECK((direction_from_angles(M_PI / 2, 0.0) - Vec3::UnitX()).norm() < 1e-15);
    CHECK((direction_from_angles(M_PI / 2, M_PI / 2) - Vec3::UnitY()).norm() < 1e-15);
    for (double theta : {0.3, 1.2, 2.9})
        for (double phi : {-2.0, 0.7})
            CHECK(direction_from_angles(theta, phi).norm() == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("project_to_ball: interior points unchanged, exterior scaled to the surface") {
    const Vec3 inside(0.001, 0.002, -0.001);
    CHECK((project_to_ball(inside, 0.010) - inside).norm() == 0.0);
    const Vec3 outside(0.03, 0.0, 0.04);  // norm 0.05
    const Vec3 p = project_to_ball(outside, 0.010);
    CHECK(p.norm() == doctest::Approx(0.010).epsilon(1e-12));
    CHECK((p.normalized() - outside.normalized()).norm() < 1e-12);
    CHECK((project_to_ball(outside, -1.0) - outside).norm() == 0.0);  // unbounded
}

TEST_CASE("decode: angles to unit directions, fields onto the feasible ball") {
    DesignVector v;
    v.angles = {{M_PI / 2, 0.0}, {0.0, 1.234}};
    v.fields_tesla = {Vec3(0.02, 0.0, 0.0), Vec3(0.001, 0.002, 0.0)};
    const auto [profile, fields] = decode(v, 0.010);
    REQUIRE(profile.directions.size() == 2);
    CHECK((profile.directions[0] - Vec3::UnitX()).norm() < 1e-15);
    CHECK((profile.directions[1] - Vec3::UnitZ()).norm() < 1e-15);
    REQUIRE(fields.size() == 2);
    CHECK(fields[0].b_tesla.norm() == doctest::Approx(0.010).epsilon(1e-12));
    CHECK((fields[1].b_tesla - Vec3(0.001, 0.002, 0.0)).norm() == 0.0);
    for (const AppliedField& f : fields) CHECK_NOTHROW(f.validate());
}

TEST_CASE("pack/unpack round trip") {
    DesignVector v;
    v.angles = {{0.1, -0.2}, {1.5, 2.5}, {3.0, -3.0}};
    v.fields_tesla = {Vec3(1e-3, -2e-3, 3e-3)};
    const DesignVector w = DesignVector::unpack(v.pack(), 3, 1);
    CHECK(v.pack() == w.pack());
    CHECK(v.dimension() == 9);
}

namespace {

// Synthetic objective: distance of decoded directions and fields from a
// fixed optimum, in mm-like units. Cheap, smooth, and deterministic.
double synthetic_error(const MagnetizationProfile& profile, const std::vector<AppliedField>& fields,
                       const std::vector<Vec3>& m_star, const std::vector<Vec3>& b_star) {
    double e = 0.0;
    for (size_t s = 0; s < m_star.size(); ++s)
        e += 10.0 * (profile.directions[s] - m_star[s]).squaredNorm();
    for (size_t f = 0; f < b_star.size(); ++f)
        e += 1e6 * (fields[f].b_tesla - b_star[f]).squaredNorm();
    return e;
}

}  // namespace

TEST_CASE("optimize: converges on a smooth synthetic objective") {
    const std::vector<Vec3> m_star = {Vec3(1, 1, 1).normalized(), Vec3::UnitY()};
    const std::vector<Vec3> b_star = {Vec3(0.002, -0.004, 0.006)};
    OptimizerConfig config;
    config.population = 10;
    config.max_iterations = 150;
    config.target_error_mm = 1e-4;
    config.rng_seed = 7;
    const OptResult r = optimize(
        [&](const MagnetizationProfile& p, const std::vector<AppliedField>& f) {
            return synthetic_error(p, f, m_star, b_star);
        },
        2, 1, config);
    CHECK(r.status == OptStatus::Converged);
    CHECK(r.best_error_mm < 1e-4);
    const auto [profile, fields] = decode(r.best, config.b_max_tesla);
    CHECK((profile.directions[0] - m_star[0]).norm() < 0.01);
    CHECK((fields[0].b_tesla - b_star[0]).norm() < 1e-4);
}

TEST_CASE("optimize: neutral init starts at the undeformed reference design") {
    // Objective minimized exactly at axial magnetization and zero field, with
    // a steep landscape elsewhere: a neutral start samples near the optimum
    // from generation zero, a random start almost surely does not.
    const auto objective = [](const MagnetizationProfile& p,
                              const std::vector<AppliedField>& f) {
        double e = 0.0;
        for (const Vec3& m : p.directions) e += 100.0 * (m - Vec3::UnitZ()).squaredNorm();
        for (const AppliedField& b : f) e += 1e6 * b.b_tesla.squaredNorm();
        return e;
    };
    OptimizerConfig config;
    config.population = 8;
    config.max_iterations = 1;
    config.target_error_mm = 1e-12;
    config.sigma0 = 0.01;
    config.field_scale = 1e-4;
    config.rng_seed = 5;
    config.init = InitMode::Neutral;
    const OptResult neutral = optimize(objective, 3, 2, config);
    config.init = InitMode::Random;
    const OptResult random_start = optimize(objective, 3, 2, config);
    CHECK(neutral.best_error_mm < 0.1);
    CHECK(neutral.best_error_mm < random_start.best_error_mm);
    // both callbacks observed: progress hook fires once per generation
    int calls = 0;
    config.on_iteration = [&](const TraceRecord&) { ++calls; };
    config.max_iterations = 3;
    optimize(objective, 3, 2, config);
    CHECK(calls == 3);
}

TEST_CASE("optimize: trace is elitist-monotone and bookkeeping is consistent") {
    OptimizerConfig config;
    config.population = 8;
    config.max_iterations = 40;
    config.target_error_mm = 1e-12;  // never reached: exercises the full budget
    config.rng_seed = 3;
    const OptResult r = optimize(
        [&](const MagnetizationProfile& p, const std::vector<AppliedField>&) {
            return 1.0 + (p.directions[0] - Vec3::UnitX()).squaredNorm();
        },
        1, 0, config);
    CHECK(r.status == OptStatus::IterationBudget);
    REQUIRE(r.trace.size() == 40);
    for (size_t i = 0; i < r.trace.size(); ++i) {
        if (i > 0) CHECK(r.trace[i].best_mm <= r.trace[i - 1].best_mm);
        CHECK(r.trace[i].iteration == static_cast<int>(i));
        CHECK(r.trace[i].evaluations == static_cast<long>(8 * (i + 1)));
        CHECK(r.trace[i].best_mm <= r.trace[i].mean_mm + 1e-12);
    }
    CHECK(r.trace.back().best_mm == doctest::Approx(r.best_error_mm));
}

TEST_CASE("optimize: identical seeds give identical runs, different seeds differ") {
    const auto run = [](std::uint64_t seed) {
        OptimizerConfig config;
        config.population = 8;
        config.max_iterations = 15;
        config.target_error_mm = 1e-12;
        config.rng_seed = seed;
        return optimize(
            [](const MagnetizationProfile& p, const std::vector<AppliedField>&) {
                return (p.directions[0] - Vec3(1, 2, 2).normalized()).squaredNorm();
            },
            1, 0, config);
    };
    const OptResult a = run(11), b = run(11), c = run(12);
    REQUIRE(a.trace.size() == b.trace.size());
    for (size_t i = 0; i < a.trace.size(); ++i) {
        CHECK(a.trace[i].best_mm == b.trace[i].best_mm);
        CHECK(a.trace[i].mean_mm == b.trace[i].mean_mm);
        CHECK(a.trace[i].best.pack() == b.trace[i].best.pack());
    }
    bool any_diff = false;
    for (size_t i = 0; i < std::min(a.trace.size(), c.trace.size()); ++i)
        any_diff = any_diff || a.trace[i].mean_mm != c.trace[i].mean_mm;
    CHECK(any_diff);
}

TEST_CASE("optimize: decoded fields always respect the ball constraint") {
    OptimizerConfig config;
    config.population = 8;
    config.max_iterations = 10;
    config.target_error_mm = 1e-12;
    config.rng_seed = 5;
    config.b_max_tesla = 0.010;
    double max_seen = 0.0;
    optimize(
        [&](const MagnetizationProfile&, const std::vector<AppliedField>& fields) {
            double e = 0.0;
            for (const AppliedField& f : fields) {
                max_seen = std::max(max_seen, f.b_tesla.norm());
                // Push outward so projection actually engages.
                e += (f.b_tesla - Vec3(0.05, 0.05, 0.05)).squaredNorm();
            }
            return e;
        },
        1, 2, config);
    CHECK(max_seen <= 0.010 + 1e-12);
    CHECK(max_seen > 0.009);  // the pull outward saturates the bound
}

TEST_CASE("optimize: five all-penalty generations abort as a diagnostic failure") {
    OptimizerConfig config;
    config.population = 6;
    config.max_iterations = 100;
    config.rng_seed = 2;
    const OptResult r = optimize(
        [&](const MagnetizationProfile&, const std::vector<AppliedField>&) {
            return config.penalty_mm;  // every candidate "blows up"
        },
        1, 0, config);
    CHECK(r.status == OptStatus::DiagnosticFailure);
    CHECK(r.trace.size() == 5);
}

TEST_CASE("optimize: rejects invalid configurations") {
    OptimizerConfig config;
    config.population = 2;
    CHECK_THROWS_AS(optimize([](const MagnetizationProfile&,
                                const std::vector<AppliedField>&) { return 0.0; },
                             1, 0, config),
                    ConfigError);
}

TEST_CASE("optimize_static: recovers a known single-segment design (inverse crime)") {
    CatheterSpec spec;
    spec.length_m = 0.016;
    spec.diameter_m = 0.004;
    spec.segment_count = 1;
    spec.poisson_ratio = 0.3;

    DesignProblem problem;
    problem.spec = spec;
    problem.sim.grid_spacing = 0.001;
    problem.sim.cfl_safety = 0.7;
    problem.sim.settle_tolerance = 1e-3;
    problem.centerline_samples = 8;

    // Ground truth: a tilted magnetization under a fixed transverse field.
    const MagnetizationProfile truth{{Vec3(1, 0, 1).normalized()}};
    const AppliedField field{Vec3(0.004, 0, 0), -1.0};
    {
        ParticleCloud cloud = discretize(spec, 4, 0.001, problem.discretization_seed);
        cloud = assign_magnetization(std::move(cloud), truth, spec);
        const EquilibriumState state =
            settle(cloud, field, problem.sim, ClampRegion::for_catheter(spec, 0.001));
        problem.target = extract_centerline(state, spec, 8).samples;
    }

    OptimizerConfig config;
    config.population = 8;
    config.max_iterations = 60;
    config.target_error_mm = 0.3;
    config.rng_seed = 4;
    const OptResult r = optimize_static(problem, FieldMode::Fixed, field, config);
    CHECK(r.status == OptStatus::Converged);
    CHECK(r.best_error_mm < 0.3);
}

TEST_CASE("optimize_insertion: requires a schedule") {
    DesignProblem problem;
    problem.spec.segment_count = 1;
    CHECK_THROWS_AS(optimize_insertion(problem, OptimizerConfig{}), ConfigError);
}
